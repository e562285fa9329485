//! Trains fresh classifiers on a small set and reports test accuracy.
use attn_distill::augment::AugmentSpec;
use attn_distill::data::{gen_toy, ToySpec};
use attn_distill::distill::InitStrategy;
use attn_distill::eval::{coreset_baseline, evaluate_synthetic, EvalConfig};
use attn_distill::Result;

fn main() -> Result<()> {
    let toy = gen_toy(&ToySpec::default())?;
    let set = coreset_baseline(&toy.train, 5, InitStrategy::Random, 0)?;
    let cfg = EvalConfig { num_models: 3, epochs: 100, augment: AugmentSpec::none(), ..EvalConfig::default() };
    let report = evaluate_synthetic(&set, &toy.test, &cfg)?;
    println!("per model: {:?}", report.accuracies);
    println!("accuracy {} %", report.summary());
    Ok(())
}
