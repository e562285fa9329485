//! Compares random and k-center selection by their coverage radius.
use attn_distill::coreset::k_center;
use attn_distill::data::{gen_toy, ToySpec};
use attn_distill::distill::{init_synthetic, InitStrategy};
use attn_distill::Result;

fn radius(pool: &[f32], picked: &[f32], dim: usize) -> f32 {
    pool.chunks(dim)
        .map(|p| {
            picked
                .chunks(dim)
                .map(|c| p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f32>())
                .fold(f32::INFINITY, f32::min)
        })
        .fold(0.0, f32::max)
        .sqrt()
}

fn main() -> Result<()> {
    let toy = gen_toy(&ToySpec::default())?;
    let data = &toy.train;
    let dim = data.image_len();
    let pool = data.gather(&data.per_class[0])?;
    let picks = k_center(pool.data(), dim, 5);
    println!("k-center picks within class 0: {picks:?}");
    for strategy in [InitStrategy::Random, InitStrategy::KCenter] {
        let set = init_synthetic(data, 5, strategy, 0)?;
        let class0 = set.class_images(0)?;
        println!("{:>8}: coverage radius {:.3}", strategy.to_string(), radius(pool.data(), class0.data(), dim));
    }
    Ok(())
}
