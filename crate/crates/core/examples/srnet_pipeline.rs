//! Stage-wise SR-Net training on a tiny dataset and the unrolled
//! reconstruction on held-out samples, with per-stage errors.
//!
//! cargo run --release --example srnet_pipeline -- [epochs]

use std::collections::BTreeSet;

use pat_recon::field::{GridSpec, ScalarField2D};
use pat_recon::metrics::{compute_mae, MetricsRecord};
use pat_recon::phantom::{generate_phantom, sample_seed, PhantomSample, C_MAX};
use pat_recon::sim::{sensor_layout, simulate_forward, SimConfig};
use pat_recon::srnet::{self, StageWeights, TrainConfig};

fn samples(grid: GridSpec, config: &SimConfig, range: std::ops::Range<usize>) -> pat_recon::Result<Vec<PhantomSample>> {
    let sensors = sensor_layout(&grid);
    range
        .map(|i| {
            let mut s = generate_phantom(grid, sample_seed(5, i), &BTreeSet::new())?;
            s.g = Some(simulate_forward(&s.medium()?, &s.p0, &sensors, config)?);
            Ok(s)
        })
        .collect()
}

fn main() -> pat_recon::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let grid = GridSpec::square(32, 1e-4)?;
    let config = SimConfig::for_speed(grid, C_MAX, 326, 0.3, 10)?;
    let train = samples(grid, &config, 0..48)?;
    let test = samples(grid, &config, 48..56)?;

    let cfg = TrainConfig {
        epochs,
        ..Default::default()
    };
    let mut weights = StageWeights::new(cfg.c_scale);
    for k in 0..2 {
        let (params, report) = srnet::train_stage(k, &train, &weights, &cfg, &config, 100 + k as u64)?;
        println!("stage {k}: epoch losses {:.4?}", report.epoch_losses);
        weights.stages.push(params);
    }

    let sensors = sensor_layout(&grid);
    let mut record = MetricsRecord::default();
    for (i, s) in test.iter().enumerate() {
        let r = srnet::reconstruct_dl(s.g.as_ref().unwrap(), &weights, &config, &sensors)?;
        record.push(i.to_string(), "initial", compute_mae(&ScalarField2D::zeros(grid), &s.p0)?, compute_mae(&ScalarField2D::constant(grid, 1500.0), &s.c)?);
        for (k, (p, c)) in r.iterates.iter().enumerate() {
            record.push(i.to_string(), (k + 1).to_string(), compute_mae(p, &s.p0)?, compute_mae(c, &s.c)?);
        }
    }
    for t in record.summary() {
        println!(
            "{:>8}: MAE p0 {:.4} ± {:.4}, MAE c {:.1} ± {:.1} m/s",
            t.iter, t.mean_p0, t.std_p0, t.mean_c, t.std_c
        );
    }
    Ok(())
}
