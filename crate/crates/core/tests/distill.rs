use attn_distill::augment::AugmentSpec;
use attn_distill::data::{gen_toy, DatasetIndex, ToySpec};
use attn_distill::distill::*;
use attn_distill::Error;

fn toy(classes: usize) -> DatasetIndex {
    gen_toy(&ToySpec { num_classes: classes, train_per_class: 16, ..Default::default() })
        .unwrap()
        .train
}

fn quick(ipc: usize, iterations: usize) -> DistillConfig {
    DistillConfig {
        iterations,
        width: 8,
        real_batch_per_class: 8,
        ..DistillConfig::for_dataset(ipc, 8)
    }
}

#[test]
fn zero_iterations_return_the_initialisation() {
    let data = toy(2);
    let cfg = quick(2, 0);
    let mut log = Vec::new();
    let out = run_distillation(&cfg, &data, &mut log).unwrap();
    assert_eq!(out, init_synthetic(&data, 2, cfg.init, cfg.seed).unwrap());
    assert!(log.is_empty());
}

#[test]
fn one_iteration_equals_one_step() {
    let data = toy(2);
    let cfg = quick(2, 1);
    let init = init_synthetic(&data, 2, cfg.init, cfg.seed).unwrap();
    let mut state = Distiller::new(cfg.clone(), &data, init.clone()).unwrap();
    let rec = distill_step(&mut state, 0).unwrap();
    let mut log = Vec::new();
    let out = run_from(&cfg, &data, init, &mut log).unwrap();
    assert_eq!(out.images.data(), state.synthetic().images.data());
    assert_eq!(log, vec![rec]);
}

#[test]
fn sink_receives_every_iteration_in_order() {
    let data = toy(3);
    let mut seen = Vec::new();
    run_distillation(&quick(1, 7), &data, &mut FnSink(|r: &StepRecord| seen.push(r.iteration))).unwrap();
    assert_eq!(seen, (0..7).collect::<Vec<_>>());
}

#[test]
fn same_seed_same_losses_and_images() {
    let data = toy(2);
    let cfg = quick(2, 5);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let sa = run_distillation(&cfg, &data, &mut a).unwrap();
    let sb = run_distillation(&cfg, &data, &mut b).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa.images.data(), sb.images.data());
}

#[test]
fn labels_never_change() {
    let data = toy(3);
    let init = init_synthetic(&data, 2, InitStrategy::Random, 0).unwrap();
    let mut state = Distiller::new(quick(2, 0), &data, init.clone()).unwrap();
    for i in 0..4 {
        state.step(i).unwrap();
        assert_eq!(state.synthetic().labels, init.labels);
    }
}

#[test]
fn one_step_changes_some_pixel() {
    let data = toy(2);
    let init = init_synthetic(&data, 1, InitStrategy::Random, 0).unwrap();
    let mut state = Distiller::new(quick(1, 1), &data, init.clone()).unwrap();
    state.step(0).unwrap();
    assert!(state.synthetic().images.data().iter().zip(init.images.data()).any(|(a, b)| a != b));
}

#[test]
fn recorded_draws_are_the_shared_draws() {
    let data = toy(2);
    let init = init_synthetic(&data, 2, InitStrategy::Random, 0).unwrap();
    let mut state = Distiller::new(quick(2, 0), &data, init).unwrap();
    let (_, planned) = state.plan(3);
    let rec = state.step(3).unwrap();
    assert_eq!(rec.draws, planned);
    assert!(rec.draws.iter().any(|d| !d.is_identity()));
}

#[test]
fn kcenter_init_uses_distinct_class_members() {
    let data = toy(2);
    let set = init_synthetic(&data, 4, InitStrategy::KCenter, 0).unwrap();
    for k in 0..2 {
        let rows: Vec<&[f32]> = (0..4).map(|j| &set.images.data()[(k * 4 + j) * 192..][..192]).collect();
        for (j, r) in rows.iter().enumerate() {
            assert!(data.per_class[k].iter().any(|&i| data.image(i) == *r));
            assert!(rows[..j].iter().all(|o| o != r));
        }
    }
}

#[test]
fn noise_init_is_seeded() {
    let data = toy(2);
    let a = init_synthetic(&data, 3, InitStrategy::Noise, 4).unwrap();
    assert_eq!(a, init_synthetic(&data, 3, InitStrategy::Noise, 4).unwrap());
    assert_ne!(a, init_synthetic(&data, 3, InitStrategy::Noise, 5).unwrap());
}

#[test]
fn invalid_configuration_is_rejected() {
    let data = toy(2);
    let init = init_synthetic(&data, 1, InitStrategy::Random, 0).unwrap();
    for cfg in [
        DistillConfig { lr_images: -1.0, ..quick(1, 1) },
        DistillConfig { real_batch_per_class: 0, ..quick(1, 1) },
        DistillConfig { p: 0.5, ..quick(1, 1) },
    ] {
        assert!(matches!(Distiller::new(cfg, &data, init.clone()), Err(Error::Config(_))));
    }
    let bad_layers = DistillConfig { layers: Some(vec![3]), ..quick(1, 1) };
    let mut state = Distiller::new(bad_layers, &data, init).unwrap();
    assert!(matches!(state.step(0), Err(Error::Config(_))));
}

#[test]
fn two_class_toy_halves_the_loss() {
    let data = gen_toy(&ToySpec { num_classes: 2, ..Default::default() }).unwrap().train;
    let cfg = DistillConfig {
        iterations: 500,
        width: 8,
        augment: AugmentSpec::none(),
        ..DistillConfig::for_dataset(1, 8)
    };
    let init = init_synthetic(&data, 1, cfg.init, cfg.seed).unwrap();
    let panel = |set: &SyntheticSet| {
        let d = Distiller::new(cfg.clone(), &data, set.clone()).unwrap();
        (0..20).map(|i| d.measure(1_000_000 + i).unwrap().total).sum::<f64>() / 20.0
    };
    let before = panel(&init);
    let after = panel(&run_from(&cfg, &data, init, &mut ()).unwrap());
    assert!(after < 0.5 * before, "{after} vs {before}");
}
