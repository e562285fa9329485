//! Prints the normalised spatial attention maps of one toy image at every
//! encoder block.
use attn_distill::data::{gen_toy, ToySpec};
use attn_distill::encoder::{encode, sample_params, EncoderConfig};
use attn_distill::losses::{attention_pool, DEFAULT_POWER};
use attn_distill::Result;

fn main() -> Result<()> {
    let toy = gen_toy(&ToySpec::default())?;
    let image = toy.train.gather(&[0])?;
    let params = sample_params::<f32>(&EncoderConfig::for_input(3, 8, 4), 0)?;
    let (mut g, _, trace) = encode(&params, &image, false)?;
    for (layer, &f) in trace.features.iter().enumerate() {
        let a = attention_pool(&mut g, f, DEFAULT_POWER)?;
        let shape = g.shape(a).to_vec();
        let map = g.value(a).data();
        let norm = map.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-8);
        println!("block {} ({}x{}):", layer + 1, shape[1], shape[2]);
        for row in map.chunks(shape[2]) {
            let cells: Vec<String> = row.iter().map(|v| format!("{:5.3}", v / norm)).collect();
            println!("  {}", cells.join(" "));
        }
    }
    Ok(())
}
