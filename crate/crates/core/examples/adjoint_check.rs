//! Check the discrete adjoint on a heterogeneous medium: the transpose
//! identity, then both gradients against central differences.

use pat_recon::adjoint::{self, ForwardOperator};
use pat_recon::field::{GridSpec, Medium, ScalarField2D};
use pat_recon::sim::{sensor_layout, SensorData, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pat_recon::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = GridSpec::square(16, 1e-4)?;
    let c = ScalarField2D::from_fn(grid, |_, _| rng.gen_range(1480.0..2600.0))?;
    let config = SimConfig::for_speed(grid, 3198.0, 80, 0.3, 6)?;
    let op = ForwardOperator::new(Medium::with_unit_density(c.clone())?, sensor_layout(&grid), config)?;

    let x = ScalarField2D::from_fn(grid, |_, _| rng.gen_range(-1.0..1.0))?;
    let hx = adjoint::apply_forward(&op, &x)?;
    let (ns, nt) = hx.shape();
    let y = SensorData::new(ns, nt, (0..ns * nt).map(|_| rng.gen_range(-1.0..1.0)).collect(), hx.dt())?;
    let hty = adjoint::apply_adjoint(&op, &y)?;
    println!("<Hx, y>  = {:.15e}", hx.dot(&y));
    println!("<x, H'y> = {:.15e}", x.dot(&hty));

    let g = adjoint::apply_forward(&op, &ScalarField2D::from_fn(grid, |_, _| rng.gen_range(0.0..1.0))?)?;
    let g = SensorData::new(ns, nt, g.samples().iter().map(|v| v * 1.1).collect(), g.dt())?;
    let p0 = ScalarField2D::from_fn(grid, |_, _| rng.gen_range(0.0..1.0))?;
    let (f, grads) = adjoint::fidelity_and_gradients(&op, &p0, &g, &Default::default())?;
    println!("F = {f:.6e}");
    for k in [17, 100, 200] {
        let bump = |field: &ScalarField2D, d: f64| {
            let mut v = field.values().to_vec();
            v[k] += d;
            ScalarField2D::new(grid, v)
        };
        // F is quadratic in p0, so a wide central difference is exact
        let h = 1e-2;
        let fd = (adjoint::data_fidelity(&op, &bump(&p0, h)?, &g)? - adjoint::data_fidelity(&op, &bump(&p0, -h)?, &g)?)
            / (2.0 * h);
        println!("pixel {k:>3}: dF/dp0 adjoint {:+.8e}  fd {fd:+.8e}", grads.grad_p0.values()[k]);
        let h = 1e-3;
        let at = |d: f64| -> pat_recon::Result<f64> {
            adjoint::data_fidelity(&op.with_medium(Medium::with_unit_density(bump(&c, d)?)?)?, &p0, &g)
        };
        let fd = (at(h)? - at(-h)?) / (2.0 * h);
        println!("pixel {k:>3}: dF/dc  adjoint {:+.8e}  fd {fd:+.8e}", grads.grad_c.values()[k]);
    }
    Ok(())
}
