//! Checks the analytic image gradient of the matching objective against
//! central differences, in 64-bit arithmetic.
use attn_distill::encoder::{sample_params, EncoderConfig};
use attn_distill::losses::{matching_objective, ClassSummary, MatchSpec};
use attn_distill::{Graph, Result, Tensor};

fn objective(real: &Tensor<f64>, syn: &[f64], params: &attn_distill::encoder::EncoderParams<f64>) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let r = g.constant(real.clone());
    let s = g.param(Tensor::new(vec![1, 3, 8, 8], syn.to_vec())?);
    let (tr, ts) = (params.forward(&mut g, r)?, params.forward(&mut g, s)?);
    let spec = MatchSpec::full(3);
    let real_sum = ClassSummary::from_trace(&mut g, &tr, spec.p)?;
    let syn_sum = ClassSummary::from_trace(&mut g, &ts, spec.p)?;
    let obj = matching_objective(&mut g, &[real_sum], &[syn_sum], &spec)?;
    g.backward(obj.root)?;
    Ok((g.value(obj.root).item(), g.grad_or_zeros(s)))
}

fn main() -> Result<()> {
    let params = sample_params::<f64>(&EncoderConfig::for_input(3, 8, 1).with_width(8), 3)?;
    let real = Tensor::from_fn([4, 3, 8, 8], |i| ((i * 37 % 101) as f64 / 50.0) - 1.0);
    let syn: Vec<f64> = (0..192).map(|i| ((i * 13 % 29) as f64 / 14.0) - 1.0).collect();
    let (loss, analytic) = objective(&real, &syn, &params)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..syn.len() {
        let mut probe = syn.clone();
        probe[i] += h;
        let up = objective(&real, &probe, &params)?.0;
        probe[i] -= 2.0 * h;
        let down = objective(&real, &probe, &params)?.0;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-3 * scale));
    }
    println!("loss {loss:.6e}, worst relative gradient error over {} pixels: {worst:.2e}", syn.len());
    Ok(())
}
