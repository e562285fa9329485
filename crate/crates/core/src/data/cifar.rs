//! CIFAR-10 binary format: records of one label byte followed by 3072 pixel
//! bytes, channel-planar (R, G, B), each plane row-major 32x32.

use std::fs;
use std::path::{Path, PathBuf};

use super::{ChannelStats, DatasetIndex};
use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_PIXELS;
pub const CIFAR_LABEL_COUNT: usize = 10;

/// Decodes records into `[0,1]` pixels and labels.
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Vec<f32>, Vec<usize>)> {
    if bytes.is_empty() {
        return Err(Error::Parse { offset: 0, msg: "empty CIFAR-10 file".into() });
    }
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        let complete = bytes.len() / CIFAR_RECORD_BYTES;
        return Err(Error::Parse {
            offset: (complete * CIFAR_RECORD_BYTES) as u64,
            msg: format!(
                "truncated record {complete}: {} of {CIFAR_RECORD_BYTES} bytes",
                bytes.len() % CIFAR_RECORD_BYTES
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_LABEL_COUNT {
            return Err(Error::Parse {
                offset: (r * CIFAR_RECORD_BYTES) as u64,
                msg: format!("record {r}: label {label} > 9"),
            });
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((pixels, labels))
}

fn index(pixels: Vec<f32>, labels: Vec<usize>, stats: Option<&ChannelStats>) -> Result<DatasetIndex> {
    let n = labels.len();
    DatasetIndex::from_pixels(pixels, [n, 3, CIFAR_SIDE, CIFAR_SIDE], labels, CIFAR_LABEL_COUNT, stats)
}

fn read_all(files: &[PathBuf]) -> Result<(Vec<f32>, Vec<usize>)> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let (p, l) = parse_cifar10(&fs::read(f)?)?;
        pixels.extend(p);
        labels.extend(l);
    }
    Ok((pixels, labels))
}

fn train_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("data_batch_") && n.ends_with(".bin"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no data_batch_*.bin files in {}", dir.display())));
    }
    Ok(files)
}

/// Loads one batch file, or every `data_batch_*.bin` in a directory,
/// standardised by its own per-channel statistics.
pub fn load_cifar10(path: impl AsRef<Path>) -> Result<DatasetIndex> {
    let path = path.as_ref();
    let files = if path.is_dir() { train_files(path)? } else { vec![path.to_path_buf()] };
    let (pixels, labels) = read_all(&files)?;
    index(pixels, labels, None)
}

/// Train split (`data_batch_*.bin`) and test split (`test_batch.bin`), the
/// latter standardised with the train statistics.
pub fn load_cifar10_dir(dir: impl AsRef<Path>) -> Result<(DatasetIndex, DatasetIndex)> {
    let dir = dir.as_ref();
    let (pixels, labels) = read_all(&train_files(dir)?)?;
    let train = index(pixels, labels, None)?;
    let (pixels, labels) = read_all(&[dir.join("test_batch.bin")])?;
    let test = index(pixels, labels, Some(&train.stats))?;
    Ok((train, test))
}
