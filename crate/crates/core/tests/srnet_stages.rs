use std::collections::BTreeSet;

use pat_recon::field::{GridSpec, ScalarField2D};
use pat_recon::phantom::{self, PhantomSample};
use pat_recon::sim::{sensor_layout, simulate_forward, SimConfig};
use pat_recon::srnet::{self, Mode, SRNetParams, StageInput, StageWeights, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_problem(n_samples: usize) -> (Vec<PhantomSample>, SimConfig) {
    let grid = GridSpec::square(32, 1e-4).unwrap();
    let sim = SimConfig::for_speed(grid, phantom::C_MAX, 200, 0.3, 6).unwrap();
    let sensors = sensor_layout(&grid);
    let samples = (0..n_samples)
        .map(|i| {
            let mut s = phantom::generate_phantom(grid, phantom::sample_seed(31, i), &BTreeSet::new()).unwrap();
            s.g = Some(simulate_forward(&s.medium().unwrap(), &s.p0, &sensors, &sim).unwrap());
            s
        })
        .collect();
    (samples, sim)
}

/// Weights with non-trivial running statistics, as after training.
fn trained_looking(seed: u64) -> SRNetParams {
    let mut p = SRNetParams::init(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [h0, h1] = &mut p.heads;
    for bn in [&mut p.fuse_bn, &mut h0.bn, &mut h1.bn] {
        bn.running_mean.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        bn.running_var.iter_mut().for_each(|v| *v = rng.gen_range(0.5..2.0));
    }
    p
}

fn random_inputs(n: usize, seed: u64) -> Vec<StageInput> {
    let grid = GridSpec::square(10, 1e-4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = |lo: f64, hi: f64| ScalarField2D::from_fn(grid, |_, _| rng.gen_range(lo..hi)).unwrap();
    (0..n)
        .map(|_| StageInput {
            p0: field(0.0, 1.0),
            neg_grad: field(-1.0, 1.0),
            c: field(1.4, 1.8),
        })
        .collect()
}

#[test]
fn inference_does_not_depend_on_batch_composition() {
    let params = trained_looking(4);
    let inputs = random_inputs(4, 9);
    let together = srnet::srnet_forward(&inputs, &params, Mode::Infer).unwrap();
    for (i, input) in inputs.iter().enumerate() {
        let alone = srnet::srnet_forward(std::slice::from_ref(input), &params, Mode::Infer).unwrap();
        assert_eq!(alone[0], together[i], "sample {i}");
    }
    let reversed: Vec<StageInput> = inputs.iter().rev().cloned().collect();
    let back = srnet::srnet_forward(&reversed, &params, Mode::Infer).unwrap();
    assert_eq!(back[0], together[3]);
}

#[test]
fn stage_zero_starts_from_the_background() {
    let (samples, sim) = small_problem(3);
    let data = srnet::stage_inputs(&samples, &StageWeights::new(1000.0), &sim).unwrap();
    for s in &data.inputs {
        assert!(s.p0.values().iter().all(|&v| v == 0.0));
        assert!(s.c.values().iter().all(|&v| v == phantom::BACKGROUND.1));
        assert!(s.neg_grad.norm() > 0.0);
    }
    for (t, s) in data.targets.iter().zip(&samples) {
        assert_eq!(t.0, s.p0);
        assert_eq!(t.1, s.c);
    }
}

#[test]
fn later_stage_inputs_follow_the_frozen_prior() {
    let (samples, sim) = small_problem(3);
    let stage1 = |seed| {
        let mut prior = StageWeights::new(1000.0);
        prior.stages.push(trained_looking(seed));
        srnet::stage_inputs(&samples, &prior, &sim).unwrap()
    };
    let (a, again, b) = (stage1(1), stage1(1), stage1(2));
    assert_eq!(a.inputs, again.inputs);
    assert_ne!(a.inputs[0].p0, b.inputs[0].p0);
    assert_ne!(a.inputs[0].neg_grad, b.inputs[0].neg_grad);
}

#[test]
fn training_needs_the_prior_stages() {
    let (samples, sim) = small_problem(2);
    let cfg = TrainConfig {
        epochs: 1,
        c_scale: 1000.0,
        ..Default::default()
    };
    let prior = StageWeights::new(1000.0);
    assert!(srnet::train_stage(1, &samples, &prior, &cfg, &sim, 0).is_err());
    let (params, report) = srnet::train_stage(0, &samples, &prior, &cfg, &sim, 0).unwrap();
    assert_eq!(report.steps, 1);
    assert_ne!(params.fingerprint(), SRNetParams::init(0).fingerprint());
}

#[test]
fn training_loss_falls_for_most_seeds() {
    let (samples, sim) = small_problem(16);
    let data = srnet::stage_inputs(&samples, &StageWeights::new(1000.0), &sim).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 4,
        c_scale: 1000.0,
        ..Default::default()
    };
    let falling = (0..10u64)
        .filter(|&seed| {
            let (_, r) = srnet::train_stage_on(&data, &cfg, seed).unwrap();
            assert_eq!(r.steps, 20);
            r.epoch_losses[4] < r.epoch_losses[0]
        })
        .count();
    assert!(falling >= 9, "loss fell for only {falling} of 10 seeds");
}
