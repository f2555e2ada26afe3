//! Built-in numerical checks behind `pat-recon selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::adjoint::{self, ForwardOperator};
use crate::error::Result;
use crate::field::{GridSpec, Medium, ScalarField2D};
use crate::sim::{self, sensor_layout, SensorData, SimConfig};
use crate::srnet;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

fn random_field(grid: GridSpec, lo: f64, hi: f64, rng: &mut ChaCha20Rng) -> Result<ScalarField2D> {
    ScalarField2D::from_fn(grid, |_, _| rng.gen_range(lo..hi))
}

fn random_operator(n: usize, steps: usize, rng: &mut ChaCha20Rng) -> Result<ForwardOperator> {
    let grid = GridSpec::square(n, sim::DEFAULT_DX)?;
    let c = random_field(grid, 1480.0, 2200.0, rng)?;
    let config = SimConfig::for_speed(grid, 2400.0, steps, sim::DEFAULT_CFL, 4)?;
    ForwardOperator::new(Medium::with_unit_density(c)?, sensor_layout(&grid), config)
}

/// Transpose identity `⟨Hx, y⟩ = ⟨x, Hᵀy⟩` on a heterogeneous medium,
/// then central differences of `F` against both gradients.
pub fn adjoint_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let op = random_operator(16, 60, &mut rng)?;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x = random_field(op.config().grid, -1.0, 1.0, &mut rng)?;
        let hx = adjoint::apply_forward(&op, &x)?;
        let (ns, nt) = hx.shape();
        let y = SensorData::new(ns, nt, (0..ns * nt).map(|_| rng.gen_range(-1.0..1.0)).collect(), hx.dt())?;
        let hty = adjoint::apply_adjoint(&op, &y)?;
        let rel = (hx.dot(&y) - x.dot(&hty)).abs() / (hx.norm() * y.norm());
        worst = worst.max(rel);
    }
    let mut checks = vec![Check::new(
        "adjoint dot test (16x16, 60 steps, 10 pairs)",
        worst <= 1e-10,
        format!("max relative discrepancy {worst:.2e} (limit 1e-10)"),
    )];

    let op = random_operator(12, 60, &mut rng)?;
    let grid = op.config().grid;
    let truth = random_field(grid, 0.0, 1.0, &mut rng)?;
    let g = adjoint::apply_forward(&op, &truth)?;
    let p0 = random_field(grid, 0.0, 1.0, &mut rng)?;
    let (_, grads) = adjoint::fidelity_and_gradients(&op, &p0, &g, &Default::default())?;
    let mut worst_p: f64 = 0.0;
    let mut worst_c: f64 = 0.0;
    for _ in 0..5 {
        let k = rng.gen_range(0..grid.len());
        let h = 1e-6;
        let bump = |f: &ScalarField2D, d: f64| -> Result<ScalarField2D> {
            let mut v = f.values().to_vec();
            v[k] += d;
            ScalarField2D::new(grid, v)
        };
        let fp = adjoint::data_fidelity(&op, &bump(&p0, h)?, &g)?;
        let fm = adjoint::data_fidelity(&op, &bump(&p0, -h)?, &g)?;
        let fd = (fp - fm) / (2.0 * h);
        worst_p = worst_p.max((fd - grads.grad_p0.values()[k]).abs() / grads.grad_p0.values()[k].abs());

        let h = 1e-3;
        let c = op.medium().c();
        let at = |d: f64| -> Result<f64> {
            let shifted = op.with_medium(Medium::with_unit_density(bump(c, d)?)?)?;
            adjoint::data_fidelity(&shifted, &p0, &g)
        };
        let fd = (at(h)? - at(-h)?) / (2.0 * h);
        worst_c = worst_c.max((fd - grads.grad_c.values()[k]).abs() / grads.grad_c.values()[k].abs());
    }
    checks.push(Check::new(
        "grad_p0 vs central differences (12x12, 5 pixels)",
        worst_p <= 1e-5,
        format!("max relative error {worst_p:.2e} (limit 1e-5)"),
    ));
    checks.push(Check::new(
        "grad_c vs central differences (12x12, 5 cells)",
        worst_c <= 1e-4,
        format!("max relative error {worst_c:.2e} (limit 1e-4)"),
    ));
    Ok(checks)
}

/// Reverse-mode SR-Net gradients against central differences.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<Check>> {
    let (params, x, y) = srnet::random_problem(seed, 2, 8);
    let r = srnet::finite_difference_check(&params, &x, &y, 1e-3, 240, 1e-6, 1e-8, seed)?;
    Ok(vec![Check::new(
        "SR-Net backward vs central differences (8x8, 240 parameters)",
        r.passes(1e-3, 200),
        format!(
            "{} compared, max relative error {:.2e} (limit 1e-3); {} below 1e-8, {} kink crossings",
            r.checked, r.max_rel_error, r.below_threshold, r.kinks
        ),
    )])
}

/// Energy conservation with reflecting walls and decay inside the
/// absorbing collar.
pub fn energy_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let grid = GridSpec::square(24, sim::DEFAULT_DX)?;
    let c = random_field(grid, 1480.0, 2000.0, &mut rng)?;
    let medium = Medium::with_unit_density(c)?;
    let p0 = ScalarField2D::from_fn(grid, |j, i| {
        let (dx, dy) = (i as f64 - 11.5, j as f64 - 11.5);
        (-(dx * dx + dy * dy) / 8.0).exp()
    })?;
    let sensors = sensor_layout(&grid);

    let closed = SimConfig::for_speed(grid, medium.c_max(), 201, sim::DEFAULT_CFL, 0)?;
    let e = sim::energy_history(&medium, &p0, &sensors, &closed)?;
    let drift = e.iter().map(|v| (v - e[0]).abs()).fold(0.0, f64::max) / e[0];

    let open = SimConfig::for_speed(grid, medium.c_max(), 201, sim::DEFAULT_CFL, 10)?;
    let e = sim::energy_history(&medium, &p0, &sensors, &open)?;
    let rise = e.windows(2).map(|w| (w[1] - w[0]) / e[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![
        Check::new(
            "energy drift without absorbing layer (200 steps)",
            drift <= 1e-3,
            format!("max relative drift {drift:.2e} (limit 1e-3)"),
        ),
        Check::new(
            "energy never rises with absorbing layer",
            rise <= 1e-9,
            format!(
                "largest per-step rise {rise:.2e} of E0 (limit 1e-9); final/initial {:.3e}",
                e[e.len() - 1] / e[0]
            ),
        ),
    ])
}
