//! Propagate a smooth pulse through water and watch it reach the sensor
//! ring: peak arrival time versus straight-line travel time.

use pat_recon::field::{GridSpec, Medium, ScalarField2D};
use pat_recon::sim::{sensor_layout, simulate_forward, SimConfig};

fn main() -> pat_recon::Result<()> {
    let grid = GridSpec::square(64, 1e-4)?;
    let sensors = sensor_layout(&grid);
    let water = Medium::uniform(grid, 1500.0)?;
    let config = SimConfig::for_speed(grid, 3198.0, 652, 0.3, 10)?;
    let p0 = ScalarField2D::from_fn(grid, |j, i| {
        let (dy, dx) = (j as f64 - 31.0, i as f64 - 31.0);
        (-(dx * dx + dy * dy) / 4.5).exp()
    })?;
    let data = simulate_forward(&water, &p0, &sensors, &config)?;
    println!("{} sensors x {} samples, dt = {:.4e} s", data.n_sensors(), data.n_steps(), config.dt);

    for target in [(0, 31), (0, 0), (31, 63)] {
        let s = sensors.positions().iter().position(|&p| p == target).unwrap();
        let trace = data.trace(s);
        let (peak, _) = trace
            .iter()
            .enumerate()
            .skip(50)
            .fold((0, f64::MIN), |b, (n, &v)| if v > b.1 { (n, v) } else { b });
        let dist = (((target.0 as f64 - 31.0).powi(2) + (target.1 as f64 - 31.0).powi(2)).sqrt()) * grid.dx();
        println!(
            "sensor {target:?}: peak at sample {peak}, travel time {:.1} samples",
            dist / 1500.0 / config.dt
        );
    }
    Ok(())
}
