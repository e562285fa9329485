//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run alone with `cargo test --release --test acceptance`. A single
//! criterion can be selected by number, e.g. `-- 5`.

mod common;

use std::time::{Duration, Instant};

use attn_distill::augment::AugmentSpec;
use attn_distill::data::{gen_toy, load_cifar10, parse_cifar10, parse_idx_images, parse_idx_labels, ToyDataset, ToySpec};
use attn_distill::distill::*;
use attn_distill::encoder::{sample_params, EncoderConfig};
use attn_distill::eval::{coreset_baseline, evaluate_synthetic, EvalConfig};
use attn_distill::io::*;
use attn_distill::losses::*;
use attn_distill::{Graph, Tensor};
use common::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant) -> Outcome {
    let took = start.elapsed();
    check(took < limit, format!("{:.1}s (limit {}s)", took.as_secs_f64(), limit.as_secs()))
}

fn both(a: Outcome, b: Outcome) -> Outcome {
    match (a, b) {
        (Ok(x), Ok(y)) => Ok(format!("{x}; {y}")),
        (Ok(x), Err(y)) | (Err(x), Ok(y)) | (Err(x), Err(y)) => Err(format!("{x}; {y}")),
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Full objective on two classes for one synthetic image each.
fn full_loss<T: attn_distill::Real>(
    params: &attn_distill::encoder::EncoderParams<T>,
    real: &[Tensor<T>],
    syn: &[T],
    spec: &MatchSpec,
) -> (f64, Vec<f64>) {
    let mut g = Graph::<T>::new();
    let leaf = g.param(Tensor::new(vec![real.len(), 3, 8, 8], syn.to_vec()).unwrap());
    let mut rs = Vec::new();
    let mut ss = Vec::new();
    for (k, r) in real.iter().enumerate() {
        let rv = g.constant(r.clone());
        let tr = params.forward(&mut g, rv).unwrap();
        rs.push(ClassSummary::from_trace(&mut g, &tr, spec.p).unwrap());
        let sv = g.slice_rows(leaf, k, 1).unwrap();
        let ts = params.forward(&mut g, sv).unwrap();
        ss.push(ClassSummary::from_trace(&mut g, &ts, spec.p).unwrap());
    }
    let obj = matching_objective(&mut g, &rs, &ss, spec).unwrap();
    g.backward(obj.root).unwrap();
    let grad = g.grad_or_zeros(leaf).iter().map(|v| v.to_f64().unwrap()).collect();
    (g.value(obj.root).item().to_f64().unwrap(), grad)
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let cfg = EncoderConfig::for_input(3, 8, 2).with_width(8).with_depth(3);
    let mut rng = XorShift(41);
    let real64: Vec<Tensor<f64>> = (0..2).map(|_| Tensor::new(vec![4, 3, 8, 8], rng.vec(4 * 192)).unwrap()).collect();
    let syn64 = rng.vec(2 * 192);
    let spec = MatchSpec::full(3);
    let p64 = sample_params::<f64>(&cfg, 7).map_err(err)?;
    let (_, analytic64) = full_loss(&p64, &real64, &syn64, &spec);
    let numeric = central_differences(&syn64, 1e-5, |s| full_loss(&p64, &real64, s, &spec).0);
    let e64 = grad_rel_err(&analytic64, &numeric);

    let p32 = p64.cast::<f32>();
    let real32: Vec<Tensor<f32>> = real64.iter().map(|t| t.cast()).collect();
    let syn32: Vec<f32> = syn64.iter().map(|&v| v as f32).collect();
    let (_, analytic32) = full_loss(&p32, &real32, &syn32, &spec);
    // The 32-bit build is judged against differences taken in 64 bits.
    let e32 = grad_rel_err(&analytic32, &numeric);
    both(
        check(e64 < 1e-6 && e32 < 1e-3, format!("{} pixels, rel err f64 {e64:.2e} f32 {e32:.2e}", syn64.len())),
        within(Duration::from_secs(60), start),
    )
}

fn toy() -> ToyDataset {
    gen_toy(&ToySpec::default()).unwrap()
}

fn c2_zero_loss() -> Outcome {
    let data = toy();
    let x = data.train.gather(&data.train.per_class[0][..16]).map_err(err)?;
    let cfg = EncoderConfig::for_input(3, 8, 4);
    let spec = MatchSpec::full(cfg.depth);
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let params = sample_params::<f32>(&cfg, seed).map_err(err)?;
        let mut g = Graph::new();
        let (a, b) = (g.constant(x.clone()), g.constant(x.clone()));
        let (ta, tb) = (params.forward(&mut g, a).map_err(err)?, params.forward(&mut g, b).map_err(err)?);
        let r = ClassSummary::from_trace(&mut g, &ta, spec.p).map_err(err)?;
        let s = ClassSummary::from_trace(&mut g, &tb, spec.p).map_err(err)?;
        let o = matching_objective(&mut g, &[r], &[s], &spec).map_err(err)?;
        worst = (worst.0.max(o.breakdown.l_sam), worst.1.max(o.breakdown.l_mmd));
    }
    check(worst.0 < 1e-6 && worst.1 < 1e-6, format!("20 encoders, max l_sam {:.1e} l_mmd {:.1e}", worst.0, worst.1))
}

fn sam_term(real: &Tensor<f64>, syn: &Tensor<f64>, cr: f64, cs: f64, p: f64) -> f64 {
    let mut g = Graph::<f64>::new();
    let (r, s) = (g.constant(real.clone()), g.constant(syn.clone()));
    let (r, s) = (g.scale(r, cr), g.scale(s, cs));
    let ar = attention_summary(&mut g, r, p).unwrap();
    let as_ = attention_summary(&mut g, s, p).unwrap();
    let t = sam_layer_term(&mut g, ar, as_).unwrap();
    g.value(t).item()
}

fn c3_scale_invariance() -> Outcome {
    let data = toy();
    let cfg = EncoderConfig::for_input(3, 8, 4);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for seed in 0..5u64 {
        let params = sample_params::<f64>(&cfg, seed).map_err(err)?;
        let real = data.train.gather(&data.train.per_class[0][..8]).map_err(err)?.cast::<f64>();
        let syn = data.train.gather(&data.train.per_class[0][8..10]).map_err(err)?.cast::<f64>();
        let mut g = Graph::new();
        let (a, b) = (g.constant(real), g.constant(syn));
        let (ta, tb) = (params.forward(&mut g, a).map_err(err)?, params.forward(&mut g, b).map_err(err)?);
        for layer in 0..cfg.depth {
            let fr = g.value(ta.features[layer]).clone();
            let fs = g.value(tb.features[layer]).clone();
            let base = sam_term(&fr, &fs, 1.0, 1.0, DEFAULT_POWER);
            for c in [0.1, 7.3] {
                for (cr, cs) in [(c, 1.0), (1.0, c), (c, c)] {
                    worst = worst.max((sam_term(&fr, &fs, cr, cs, DEFAULT_POWER) - base).abs());
                    cases += 1;
                }
            }
        }
    }
    check(worst < 1e-6, format!("{cases} scalings, max change {worst:.2e}"))
}

fn c4_oracles() -> Outcome {
    let mut rng = XorShift(2024);
    let mut worst = [0.0f64; 4];
    for _ in 0..200 {
        let n = 1 + rng.below(2);
        let c = 1 + rng.below(4);
        let h = 2 + rng.below(7);
        let w = 2 + rng.below(7);
        let co = 1 + rng.below(4);
        let xs = [n, c, h, w];
        let x = rng.vec(xs.iter().product());
        let ws = [co, c, 3, 3];
        let wt = rng.vec(ws.iter().product());
        let b = rng.vec(co);
        let d = c * h * w;
        let k = 1 + rng.below(4);
        let lw = rng.vec(k * d);
        let lb = rng.vec(k);
        let p = 2.0 + 2.0 * (rng.next() + 1.0) / 2.0;

        let mut g = Graph::<f64>::new();
        let xv = g.constant(Tensor::new(xs.to_vec(), x.clone()).unwrap());
        let wv = g.constant(Tensor::new(ws.to_vec(), wt.clone()).unwrap());
        let bv = g.constant(Tensor::new(vec![co], b.clone()).unwrap());
        let conv = g.conv2d(xv, wv, bv, 1).map_err(err)?;
        let pool = g.avgpool(xv).map_err(err)?;
        let flat = g.flatten(xv);
        let lwv = g.constant(Tensor::new(vec![k, d], lw.clone()).unwrap());
        let lbv = g.constant(Tensor::new(vec![k], lb.clone()).unwrap());
        let lin = g.linear(flat, lwv, lbv).map_err(err)?;
        let att = g.attention_pool(xv, p).map_err(err)?;

        let errs = [
            max_rel_err(g.value(conv).data(), &naive_conv2d(&x, xs, &wt, ws, &b, 1).0, 1e-12),
            max_rel_err(g.value(pool).data(), &naive_avgpool(&x, xs).0, 1e-12),
            max_rel_err(g.value(lin).data(), &naive_linear(&x, n, d, &lw, k, &lb), 1e-12),
            max_rel_err(g.value(att).data(), &naive_attention_pool(&x, xs, p), 1e-12),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    let m = worst.iter().cloned().fold(0.0, f64::max);
    check(
        m < 1e-6,
        format!(
            "200 shapes, max rel err conv {:.1e} pool {:.1e} linear {:.1e} attention {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn progress_config() -> DistillConfig {
    DistillConfig {
        iterations: 500,
        augment: AugmentSpec::none(),
        ..DistillConfig::for_dataset(1, 8)
    }
}

/// Mean total loss over a fixed panel of encoder draws, disjoint from training.
fn panel_loss(cfg: &DistillConfig, data: &attn_distill::data::DatasetIndex, set: &SyntheticSet) -> f64 {
    let d = Distiller::new(cfg.clone(), data, set.clone()).unwrap();
    (0..20).map(|i| d.measure(1_000_000 + i).unwrap().total).sum::<f64>() / 20.0
}

fn c5_progress() -> Outcome {
    let start = Instant::now();
    let data = toy().train;
    let cfg = progress_config();
    cfg.validate().map_err(err)?;
    let init = init_synthetic(&data, 1, cfg.init, cfg.seed).map_err(err)?;
    let before = panel_loss(&cfg, &data, &init);
    let mut log = Vec::new();
    let out = run_from(&cfg, &data, init.clone(), &mut log).map_err(err)?;
    let after = panel_loss(&cfg, &data, &out);
    let ratio = after / before;
    let progress = check(
        ratio <= 0.5,
        format!(
            "panel loss {before:.3e} -> {after:.3e} (ratio {ratio:.3}); step loss {:.3e} -> {:.3e}",
            log[0].breakdown.total,
            log[log.len() - 1].breakdown.total
        ),
    );
    let short = DistillConfig { iterations: 50, ..cfg };
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    let a = run_from(&short, &data, init.clone(), &mut la).map_err(err)?;
    let b = run_from(&short, &data, init, &mut lb).map_err(err)?;
    let bits = |s: &SyntheticSet| s.images.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let same = la == lb && la[..] == log[..50] && bits(&a) == bits(&b);
    both(both(progress, check(same, format!("rerun identical: {same}"))), within(Duration::from_secs(120), start))
}

/// The relational benchmark: ten images per class condensed from a pool of
/// 256 noisy images per class. The objective is a mean over thousands of
/// components, so image gradients are tiny and need a large step size.
struct Benchmark {
    data: ToyDataset,
    distill: DistillConfig,
    eval: EvalConfig,
}

fn benchmark() -> Benchmark {
    let data = gen_toy(&ToySpec { noise_std: BENCH_NOISE, train_per_class: BENCH_TRAIN, ..Default::default() }).unwrap();
    let distill = DistillConfig {
        iterations: BENCH_ITERATIONS,
        lr_images: BENCH_LR,
        augment: AugmentSpec::none(),
        ..DistillConfig::for_dataset(10, 8)
    };
    let eval = EvalConfig { augment: AugmentSpec::none(), ..EvalConfig::default() };
    Benchmark { data, distill, eval }
}

const BENCH_NOISE: f64 = 0.6;
const BENCH_TRAIN: usize = 256;
const BENCH_ITERATIONS: usize = 400;
const BENCH_LR: f64 = 1000.0;

fn accuracy(b: &Benchmark, set: &SyntheticSet) -> Result<f64, String> {
    Ok(100.0 * evaluate_synthetic(set, &b.data.test, &b.eval).map_err(err)?.mean)
}

fn c6_relational(b: &Benchmark) -> (Outcome, Option<f64>) {
    let start = Instant::now();
    let run = || -> Result<(f64, f64, f64), String> {
        let random = coreset_baseline(&b.data.train, 10, InitStrategy::Random, b.distill.seed).map_err(err)?;
        let noise = init_synthetic(&b.data.train, 10, InitStrategy::Noise, b.distill.seed).map_err(err)?;
        let distilled = run_distillation(&b.distill, &b.data.train, &mut ()).map_err(err)?;
        Ok((accuracy(b, &random)?, accuracy(b, &noise)?, accuracy(b, &distilled)?))
    };
    match run() {
        Err(e) => (Err(e), None),
        Ok((random, noise, distilled)) => {
            let margins = check(
                distilled >= random + 3.0 && distilled >= noise + 10.0,
                format!("distilled {distilled:.2}% vs random coreset {random:.2}% (need +3) and noise {noise:.2}% (need +10)"),
            );
            (both(margins, within(Duration::from_secs(600), start)), Some(distilled))
        }
    }
}

fn c7_ablation(b: &Benchmark, joint: Option<f64>) -> Outcome {
    let joint = match joint {
        Some(j) => j,
        None => accuracy(b, &run_distillation(&b.distill, &b.data.train, &mut ()).map_err(err)?)?,
    };
    let variant = |use_sam: bool, use_mmd: bool| -> Result<f64, String> {
        let cfg = DistillConfig { use_sam, use_mmd, ..b.distill.clone() };
        accuracy(b, &run_distillation(&cfg, &b.data.train, &mut ()).map_err(err)?)
    };
    let sam_only = variant(true, false)?;
    let mmd_only = variant(false, true)?;
    check(
        joint >= sam_only - 1.0 && joint >= mmd_only - 1.0,
        format!("joint {joint:.2}% vs attention only {sam_only:.2}% and mean only {mmd_only:.2}% (allowed -1)"),
    )
}

fn c8_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let spec = ToySpec { num_classes: 2, train_per_class: 8, ..Default::default() };
    let data = gen_toy(&spec).map_err(err)?;
    let cfg = DistillConfig { iterations: 3, width: 8, real_batch_per_class: 4, ..DistillConfig::for_dataset(2, 8) };
    let file = |log: &mut Vec<StepRecord>| -> Result<Vec<u8>, String> {
        let set = run_distillation(&cfg, &data.train, log).map_err(err)?;
        let mut m = RunManifest::new(cfg.seed, DatasetIdentity::toy(spec.clone()), data.stats().clone());
        m.distill = Some(cfg.clone());
        SyntheticSetFile::new(set, m).to_bytes().map_err(err)
    };
    let mut log = Vec::new();
    let a = file(&mut log)?;
    let b = file(&mut Vec::new())?;
    let identical = a == b;

    let back = SyntheticSetFile::from_bytes(&a).map_err(err)?;
    let dds_ok = back.to_bytes().map_err(err)? == a && SyntheticSetFile::from_bytes(&a[..a.len() - 1]).is_err();

    let csv = dir.path().join("m.csv");
    let mut w = MetricsWriter::create(&csv).map_err(err)?;
    for r in &log {
        w.record(r).map_err(err)?;
    }
    w.finish().map_err(err)?;
    let rows = read_metrics(&csv).map_err(err)?;
    let csv_ok = rows == log.iter().map(MetricsRow::from).collect::<Vec<_>>();

    let cifar = dir.path().join("data_batch_1.bin");
    std::fs::write(&cifar, cifar_fixture()).map_err(err)?;
    let d = load_cifar10(&cifar).map_err(err)?;
    let raw: Vec<f64> = cifar_fixture()
        .chunks(3073)
        .flat_map(|r| r[1..].iter().map(|&b| b as f64 / 255.0).collect::<Vec<_>>())
        .collect();
    let stats = channel_stats(&raw, 3, 1024);
    let cifar_exact = d.labels == [3, 7]
        && d.images.data().iter().zip(&raw).enumerate().all(|(i, (&got, &x))| {
            let (m, s) = stats[(i / 1024) % 3];
            (got as f64 - (x - m) / s).abs() < 1e-5
        });
    let mut bad = cifar_fixture();
    bad[0] = 10;
    let cifar_rejects = parse_cifar10(&bad).is_err() && parse_cifar10(&cifar_fixture()[..4000]).is_err();

    let pixels: Vec<u8> = (0..16).map(|i| (i * 17) as u8).collect();
    let img = idx_images(1, 4, 4, &pixels);
    let mnist_exact = matches!(parse_idx_images(&img), Ok((1, 4, 4, body)) if body == &pixels[..])
        && parse_idx_labels(&idx_labels(&[5])).map_err(err)? == [5];
    let mut wrong = img.clone();
    wrong[3] = 0x01;
    let mnist_rejects = parse_idx_images(&wrong).is_err() && parse_idx_images(&img[..img.len() - 1]).is_err();

    let all = [identical, dds_ok, csv_ok, cifar_exact, cifar_rejects, mnist_exact, mnist_rejects];
    check(
        all.iter().all(|&x| x),
        format!(
            "bit-identical {identical}, dds {dds_ok}, csv {csv_ok}, cifar {cifar_exact}/{cifar_rejects}, mnist {mnist_exact}/{mnist_rejects}"
        ),
    )
}

fn c9_hyperparameters() -> Outcome {
    let mut m = RunManifest::new(0, DatasetIdentity::toy(ToySpec::default()), attn_distill::data::ChannelStats::identity(3));
    m.distill = Some(DistillConfig::default());
    m.eval = Some(EvalConfig::default());
    let v: serde_json::Value = serde_json::from_str(&m.to_json().map_err(err)?).map_err(err)?;
    let table = [
        ("/distill/lambda", "0.01"),
        ("/distill/p", "4.0"),
        ("/distill/lr_images", "1.0"),
        ("/distill/image_momentum", "0.5"),
        ("/distill/real_batch_per_class", "256"),
        ("/eval/lr", "0.01"),
        ("/eval/momentum", "0.9"),
        ("/eval/weight_decay", "0.0005"),
        ("/eval/lr_decay", "0.5"),
        ("/eval/lr_step_epochs", "15"),
    ];
    let wrong: Vec<String> = table
        .iter()
        .filter_map(|(path, want)| {
            let got = v.pointer(path).map(|x| x.to_string()).unwrap_or_default();
            (got != *want).then(|| format!("{path} = {got:?}, want {want}"))
        })
        .collect();
    check(wrong.is_empty(), if wrong.is_empty() { format!("{} values match", table.len()) } else { wrong.join(", ") })
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS {n} {name}: {d}"),
            Err(d) => println!("FAIL {n} {name}: {d}"),
        }
        failed += outcome.is_err() as usize;
    };
    let simple: [(usize, &str, fn() -> Outcome); 5] = [
        (1, "gradient correctness", c1_gradients),
        (2, "zero-loss identities", c2_zero_loss),
        (3, "attention scale invariance", c3_scale_invariance),
        (4, "kernel oracles", c4_oracles),
        (5, "optimisation progress", c5_progress),
    ];
    for (n, name, f) in simple {
        if wanted(n) {
            report(n, name, f());
        }
    }
    if wanted(6) || wanted(7) {
        let b = benchmark();
        let mut joint = None;
        if wanted(6) {
            let (outcome, acc) = c6_relational(&b);
            joint = acc;
            report(6, "distilled beats coreset and noise", outcome);
        }
        if wanted(7) {
            report(7, "joint loss non-inferior to single losses", c7_ablation(&b, joint));
        }
    }
    if wanted(8) {
        report(8, "determinism and round trips", c8_round_trips());
    }
    if wanted(9) {
        report(9, "default hyperparameters", c9_hyperparameters());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
