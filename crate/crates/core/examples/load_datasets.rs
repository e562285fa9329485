//! Loads a CIFAR-10 batch file or an MNIST directory given on the command
//! line, or otherwise a tiny in-memory CIFAR record.
use attn_distill::data::{load_cifar10_dir, load_mnist_dir, parse_cifar10, DatasetIndex};
use attn_distill::Result;

fn describe(name: &str, d: &DatasetIndex) {
    let counts: Vec<usize> = d.per_class.iter().map(Vec::len).collect();
    println!("{name}: {} images {:?}, per class {counts:?}", d.len(), &d.images.shape()[1..]);
    println!("  channel mean {:?} std {:?}", d.stats.mean, d.stats.std);
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args.as_slice() {
        [kind, dir] if kind == "cifar10" => {
            let (train, test) = load_cifar10_dir(dir)?;
            describe("train", &train);
            describe("test", &test);
        }
        [kind, dir] if kind == "mnist" => {
            let (train, test) = load_mnist_dir(dir, Some(32))?;
            describe("train", &train);
            describe("test", &test);
        }
        _ => {
            let mut record = vec![6u8];
            record.extend((0..3072).map(|i| (i % 256) as u8));
            let (pixels, labels) = parse_cifar10(&record)?;
            println!("one synthetic record: label {}, {} pixels, first {:?}", labels[0], pixels.len(), &pixels[..4]);
            println!("usage: load_datasets (cifar10|mnist) <dir>");
        }
    }
    Ok(())
}
