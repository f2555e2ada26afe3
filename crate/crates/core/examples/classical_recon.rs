//! Joint reconstruction of `p0` and `c` by proximal gradient with total
//! variation, from data simulated on a random phantom.
//!
//! cargo run --example classical_recon -- [iterations]

use std::collections::BTreeSet;

use pat_recon::classical::{reconstruct_classical, ReconConfig};
use pat_recon::field::{GridSpec, ScalarField2D};
use pat_recon::metrics::compute_mae;
use pat_recon::phantom::{generate_phantom, BACKGROUND, C_MAX};
use pat_recon::sim::{sensor_layout, simulate_forward, SimConfig};

fn main() -> pat_recon::Result<()> {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let grid = GridSpec::square(32, 1e-4)?;
    let config = SimConfig::for_speed(grid, C_MAX, 326, 0.3, 10)?;
    let sensors = sensor_layout(&grid);
    let truth = generate_phantom(grid, 11, &BTreeSet::new())?;
    let g = simulate_forward(&truth.medium()?, &truth.p0, &sensors, &config)?;

    let cfg = ReconConfig {
        beta: 1e-3,
        max_outer: iters,
        ..Default::default()
    };
    let c0 = ScalarField2D::constant(grid, BACKGROUND.1);
    let out = reconstruct_classical(&g, &ScalarField2D::zeros(grid), &c0, &cfg, &config, &sensors)?;
    println!("iter  fidelity      objective     alpha_p     alpha_c");
    for r in &out.trace.rows {
        println!(
            "{:>4}  {:.5e}  {:.5e}  {:.3e}  {:.3e}",
            r.iteration, r.fidelity, r.objective, r.alpha_p, r.alpha_c
        );
    }
    println!("stopped: {:?}", out.stop);
    println!(
        "MAE p0 {:.4} (zero guess {:.4}), MAE c {:.1} m/s (background guess {:.1})",
        compute_mae(&out.p0, &truth.p0)?,
        compute_mae(&ScalarField2D::zeros(grid), &truth.p0)?,
        compute_mae(&out.c, &truth.c)?,
        compute_mae(&c0, &truth.c)?
    );
    Ok(())
}
