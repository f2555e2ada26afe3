use pat_recon::field::{GridSpec, Medium, ScalarField2D};
use pat_recon::sim::{self, sensor_layout, simulate_forward, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(n: usize) -> GridSpec {
    GridSpec::square(n, 1e-4).unwrap()
}

fn random_field(g: GridSpec, rng: &mut ChaCha8Rng) -> ScalarField2D {
    ScalarField2D::from_fn(g, |_, _| rng.gen_range(-1.0..1.0)).unwrap()
}

fn gaussian(g: GridSpec, row: f64, col: f64, sigma: f64) -> ScalarField2D {
    ScalarField2D::from_fn(g, |j, i| {
        let (dy, dx) = (j as f64 - row, i as f64 - col);
        (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    })
    .unwrap()
}

#[test]
fn time_step_examples() {
    let g = grid(8);
    let m = Medium::uniform(g, 3198.0).unwrap();
    let cfg = sim::make_sim_config(g, &m, 652, 0.3, 10).unwrap();
    assert!((cfg.dt - 0.3 * 1e-4 / 3198.0).abs() < 1e-24);
    assert!((cfg.dt - 9.3808e-9).abs() < 1e-12);
    assert!((cfg.duration() - 651.0 * cfg.dt).abs() < 1e-20);
    let m = Medium::uniform(g, 1500.0).unwrap();
    let cfg = sim::make_sim_config(g, &m, 10, 0.5, 0).unwrap();
    assert!((cfg.dt - 1e-4 / 3000.0).abs() < 1e-22);
    assert!(sim::make_sim_config(g, &m, 10, 1.0, 0).is_err());
}

#[test]
fn full_size_record_shape_and_detector_count() {
    let g = grid(64);
    let sensors = sensor_layout(&g);
    assert_eq!(sensors.len(), 252);
    let m = Medium::uniform(g, 1500.0).unwrap();
    let cfg = SimConfig::for_speed(g, 3198.0, 652, 0.3, 10).unwrap();
    let data = simulate_forward(&m, &ScalarField2D::zeros(g), &sensors, &cfg).unwrap();
    assert_eq!(data.shape(), (252, 652));
    assert!(data.samples().iter().all(|&v| v == 0.0));
}

#[test]
fn linear_in_initial_pressure() {
    let g = grid(20);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let c = ScalarField2D::from_fn(g, |_, _| rng.gen_range(1480.0..3198.0)).unwrap();
    let m = Medium::with_unit_density(c).unwrap();
    let cfg = sim::make_sim_config(g, &m, 120, 0.3, 6).unwrap();
    let s = sensor_layout(&g);
    let (x, y) = (random_field(g, &mut rng), random_field(g, &mut rng));
    let (a, b) = (1.7, -0.35);
    let combo = ScalarField2D::from_fn(g, |j, i| a * x.at(j, i) + b * y.at(j, i)).unwrap();
    let lhs = simulate_forward(&m, &combo, &s, &cfg).unwrap();
    let hx = simulate_forward(&m, &x, &s, &cfg).unwrap();
    let hy = simulate_forward(&m, &y, &s, &cfg).unwrap();
    let rhs: Vec<f64> = hx.samples().iter().zip(hy.samples()).map(|(u, v)| a * u + b * v).collect();
    let diff: f64 = lhs.samples().iter().zip(&rhs).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    let scale = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(diff <= 1e-12 * scale, "relative deviation {}", diff / scale);
}

#[test]
fn reruns_are_bit_identical() {
    let g = grid(16);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = Medium::uniform(g, 1700.0).unwrap();
    let cfg = sim::make_sim_config(g, &m, 50, 0.3, 4).unwrap();
    let p0 = random_field(g, &mut rng);
    let a = simulate_forward(&m, &p0, &sensor_layout(&g), &cfg).unwrap();
    let b = simulate_forward(&m, &p0, &sensor_layout(&g), &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn energy_is_conserved_between_reflecting_walls() {
    let g = grid(24);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = ScalarField2D::from_fn(g, |_, _| rng.gen_range(1480.0..2500.0)).unwrap();
    let rho = ScalarField2D::from_fn(g, |_, _| rng.gen_range(0.8..1.2)).unwrap();
    let m = Medium::new(c, rho).unwrap();
    let cfg = sim::make_sim_config(g, &m, 201, 0.3, 0).unwrap();
    let e = sim::energy_history(&m, &random_field(g, &mut rng), &sensor_layout(&g), &cfg).unwrap();
    let drift = e.iter().map(|v| (v - e[0]).abs()).fold(0.0, f64::max) / e[0];
    assert!(drift <= 1e-3, "relative drift {drift:e}");
}

#[test]
fn absorbing_layer_only_removes_energy() {
    let g = grid(24);
    let m = Medium::uniform(g, 1500.0).unwrap();
    let cfg = sim::make_sim_config(g, &m, 400, 0.3, 10).unwrap();
    let e = sim::energy_history(&m, &gaussian(g, 11.5, 11.5, 2.0), &sensor_layout(&g), &cfg).unwrap();
    for (n, w) in e.windows(2).enumerate() {
        assert!(w[1] - w[0] <= 1e-9 * e[0], "energy rose at step {n}: {} -> {}", w[0], w[1]);
    }
    // by the end almost everything has left through the collar
    assert!(e[e.len() - 1] < 1e-2 * e[0]);
}

/// A smooth pulse centred at pixel (31, 31) reaches the top-edge sensor
/// above it after 31 cells of travel; its trace peaks at the travel time.
#[test]
fn smooth_pulse_peaks_at_the_travel_time() {
    let g = grid(64);
    let sensors = sensor_layout(&g);
    let m = Medium::uniform(g, 1500.0).unwrap();
    let cfg = SimConfig::for_speed(g, 3198.0, 300, 0.3, 10).unwrap();
    let data = simulate_forward(&m, &gaussian(g, 31.0, 31.0, 1.5), &sensors, &cfg).unwrap();
    let s = sensors.positions().iter().position(|&p| p == (0, 31)).unwrap();
    let trace = data.trace(s);
    // skip the first samples, where the pulse's own tail sits on the sensor
    let (peak, _) = trace
        .iter()
        .enumerate()
        .skip(50)
        .fold((0, f64::MIN), |best, (n, &v)| if v > best.1 { (n, v) } else { best });
    let expected = 31.0 * 1e-4 / 1500.0 / cfg.dt;
    assert!((peak as f64 - expected).abs() <= 5.0, "peak at {peak}, travel time {expected:.1} samples");
}
