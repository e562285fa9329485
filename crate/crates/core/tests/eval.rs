use attn_distill::augment::AugmentSpec;
use attn_distill::data::{gen_toy, DatasetIndex, ToySpec};
use attn_distill::distill::{init_synthetic, InitStrategy, SyntheticSet};
use attn_distill::encoder::sample_params;
use attn_distill::eval::*;

fn toy() -> attn_distill::data::ToyDataset {
    gen_toy(&ToySpec { num_classes: 2, train_per_class: 10, test_per_class: 10, noise_std: 0.1, ..Default::default() }).unwrap()
}

fn quick(epochs: usize) -> EvalConfig {
    EvalConfig { num_models: 2, epochs, width: 16, augment: AugmentSpec::none(), ..Default::default() }
}

fn as_set(d: &DatasetIndex) -> SyntheticSet {
    let order: Vec<usize> = d.per_class.iter().flatten().copied().collect();
    SyntheticSet::new(d.gather(&order).unwrap(), d.num_classes, d.per_class[0].len()).unwrap()
}

#[test]
fn separable_toy_is_fit_within_fifty_epochs() {
    let t = toy();
    let set = as_set(&t.train);
    let model = train_classifier(&set, &quick(50), 3).unwrap();
    let logits = predict(&model, &set.images, 64).unwrap();
    assert_eq!(accuracy_from_logits(&logits, 2, &set.labels), 1.0);
}

#[test]
fn zero_lr_keeps_initial_weights() {
    let t = toy();
    let set = as_set(&t.train);
    let cfg = EvalConfig { lr: 0.0, weight_decay: 0.0, ..quick(3) };
    let trained = train_classifier(&set, &cfg, 5).unwrap();
    let enc = cfg.encoder_config(3, 8, 2);
    let fresh = sample_params::<f32>(&enc, 5).unwrap();
    assert_eq!(trained.classifier_weight.data(), fresh.classifier_weight.data());
    assert_eq!(trained.blocks[0].weight.data(), fresh.blocks[0].weight.data());
    assert_eq!(test_accuracy(&trained, &t.test).unwrap(), test_accuracy(&fresh, &t.test).unwrap());
}

#[test]
fn training_is_deterministic_per_seed() {
    let set = as_set(&toy().train);
    let cfg = EvalConfig { augment: AugmentSpec::default(), ..quick(4) };
    let a = train_classifier(&set, &cfg, 9).unwrap();
    let b = train_classifier(&set, &cfg, 9).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, train_classifier(&set, &cfg, 10).unwrap());
}

#[test]
fn single_model_reports_zero_std() {
    let t = toy();
    let cfg = EvalConfig { num_models: 1, ..quick(2) };
    let r = evaluate_synthetic(&as_set(&t.train), &t.test, &cfg).unwrap();
    assert_eq!(r.accuracies.len(), 1);
    assert_eq!(r.std, 0.0);
}

#[test]
fn repeated_seeds_repeat_accuracies() {
    let t = toy();
    let r = evaluate_with_seeds(&as_set(&t.train), &t.test, &quick(2), &[4, 4, 4]).unwrap();
    assert!(r.accuracies.iter().all(|&a| a == r.accuracies[0]));
    assert_eq!(r.std, 0.0);
}

#[test]
fn report_statistics_are_recomputable() {
    let t = toy();
    let r = evaluate_synthetic(&as_set(&t.train), &t.test, &EvalConfig { num_models: 3, ..quick(2) }).unwrap();
    let (m, s) = mean_std(&r.accuracies);
    assert_eq!((r.mean, r.std), (m, s));
    assert!(r.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
    let json: serde_json::Value = serde_json::to_value(&r).unwrap();
    for key in ["accuracies", "mean", "std", "config"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}

#[test]
fn accuracy_ignores_test_order() {
    let t = toy();
    let model = train_classifier(&as_set(&t.train), &quick(5), 1).unwrap();
    let mut order: Vec<usize> = (0..t.test.len()).collect();
    order.reverse();
    order.rotate_left(7);
    let shuffled = DatasetIndex::from_normalized(
        t.test.gather(&order).unwrap(),
        order.iter().map(|&i| t.test.labels[i]).collect(),
        2,
        t.test.stats.clone(),
    )
    .unwrap();
    assert_eq!(test_accuracy(&model, &t.test).unwrap(), test_accuracy(&model, &shuffled).unwrap());
}

#[test]
fn accuracy_fixture() {
    let logits = [2.0, 1.0, 0.0, 3.0, 5.0, 1.0, 1.0, 0.5];
    assert_eq!(accuracy_from_logits(&logits, 2, &[0, 1, 0, 1]), 0.75);
    assert_eq!(accuracy_from_logits(&logits[..4], 2, &[0, 1]), 1.0);
}

#[test]
fn coreset_baseline_wraps_selection() {
    let t = toy();
    let a = coreset_baseline(&t.train, 3, InitStrategy::Random, 2).unwrap();
    assert_eq!(a, init_synthetic(&t.train, 3, InitStrategy::Random, 2).unwrap());
    assert_eq!(a.labels, vec![0, 0, 0, 1, 1, 1]);
    let k = coreset_baseline(&t.train, 3, InitStrategy::KCenter, 0).unwrap();
    assert_eq!(k, coreset_baseline(&t.train, 3, InitStrategy::KCenter, 0).unwrap());
    assert!(coreset_baseline(&t.train, 3, InitStrategy::Noise, 0).is_err());
    assert!(coreset_baseline(&t.train, 11, InitStrategy::Random, 0).is_err());
}

#[test]
fn scheduler_halves_every_fifteen_epochs() {
    let s = EvalConfig::default().schedule();
    assert_eq!(s.rate_at(14), 0.01);
    assert_eq!(s.rate_at(15), 0.005);
    assert_eq!(s.rate_at(30), 0.0025);
}
