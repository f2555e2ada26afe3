//! Time-domain acoustic solver with boundary detectors.

mod config;
pub(crate) mod propagator;
mod sensors;

pub use config::{
    make_sim_config, parse_key_values, SimConfig, DEFAULT_CFL, DEFAULT_DX, DEFAULT_PML_CELLS,
    DEFAULT_STEPS, PML_ALPHA_NORM,
};
pub use sensors::{sensor_layout, SensorArray, SensorData};

use crate::error::{Error, Result};
use crate::field::{GridSpec, Medium, ScalarField2D};
use propagator::{Propagator, Stepper};

/// Snapshot of the full computational grid (collar included) at an integer
/// step `t`.
///
/// The leapfrog keeps velocities at half steps, so a state carries the two
/// velocity fields bracketing `t`: `ux`/`uy` at `t - dt/2` and
/// `ux_next`/`uy_next` at `t + dt/2`. States built with [`WaveState::new`]
/// use one velocity for both.
#[derive(Debug, Clone)]
pub struct WaveState {
    pub p: ScalarField2D,
    /// x-velocity on `(nx + 1) × ny` faces, row-major
    pub ux: Vec<f64>,
    /// y-velocity on `nx × (ny + 1)` faces, row-major
    pub uy: Vec<f64>,
    pub ux_next: Vec<f64>,
    pub uy_next: Vec<f64>,
    pub t_index: usize,
}

impl WaveState {
    pub fn new(p: ScalarField2D, ux: Vec<f64>, uy: Vec<f64>, t_index: usize) -> Result<Self> {
        Self::staggered(p, ux.clone(), uy.clone(), ux, uy, t_index)
    }

    pub fn staggered(
        p: ScalarField2D,
        ux: Vec<f64>,
        uy: Vec<f64>,
        ux_next: Vec<f64>,
        uy_next: Vec<f64>,
        t_index: usize,
    ) -> Result<Self> {
        let g = *p.grid();
        let nux = (g.nx() + 1) * g.ny();
        let nuy = g.nx() * (g.ny() + 1);
        if ux.len() != nux || ux_next.len() != nux || uy.len() != nuy || uy_next.len() != nuy {
            return Err(Error::ShapeMismatch("staggered velocity shapes".into()));
        }
        if ux.iter().chain(&uy).chain(&ux_next).chain(&uy_next).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite velocity".into()));
        }
        Ok(Self {
            p,
            ux,
            uy,
            ux_next,
            uy_next,
            t_index,
        })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let nux = (grid.nx() + 1) * grid.ny();
        let nuy = grid.nx() * (grid.ny() + 1);
        Self {
            p: ScalarField2D::zeros(grid),
            ux: vec![0.0; nux],
            uy: vec![0.0; nuy],
            ux_next: vec![0.0; nux],
            uy_next: vec![0.0; nuy],
            t_index: 0,
        }
    }

    /// Multiply every component by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let sc = |v: &[f64]| v.iter().map(|x| s * x).collect::<Vec<_>>();
        Self::staggered(
            self.p.map(|v| s * v)?,
            sc(&self.ux),
            sc(&self.uy),
            sc(&self.ux_next),
            sc(&self.uy_next),
            self.t_index,
        )
    }
}

/// Acoustic energy `½ Σ p²/(ρc²) dx² + ½ Σ ρ_face u² dx²`, where `u²` is
/// the product of the two bracketing half-step velocities. Without an
/// absorbing collar this quantity is conserved by the leapfrog to round-off.
///
/// `medium` must live on the same grid as the state; face densities are the
/// mean of the two adjacent cells (the adjacent cell on the outer wall).
pub fn discrete_energy(state: &WaveState, medium: &Medium) -> Result<f64> {
    state.p.check_same_grid(medium.c(), "energy state/medium")?;
    let g = state.p.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let area = g.dx() * g.dx();
    let c = medium.c().values();
    let rho = medium.rho().values();
    let potential: f64 = state
        .p
        .values()
        .iter()
        .zip(c.iter().zip(rho))
        .map(|(p, (c, r))| p * p / (r * c * c))
        .sum();
    let mut kinetic = 0.0;
    for j in 0..ny {
        for i in 0..=nx {
            let r = match i {
                0 => rho[j * nx],
                _ if i == nx => rho[j * nx + nx - 1],
                _ => 0.5 * (rho[j * nx + i] + rho[j * nx + i - 1]),
            };
            let f = j * (nx + 1) + i;
            kinetic += r * state.ux[f] * state.ux_next[f];
        }
    }
    for j in 0..=ny {
        for i in 0..nx {
            let r = match j {
                0 => rho[i],
                _ if j == ny => rho[(ny - 1) * nx + i],
                _ => 0.5 * (rho[j * nx + i] + rho[(j - 1) * nx + i]),
            };
            let f = j * nx + i;
            kinetic += r * state.uy[f] * state.uy_next[f];
        }
    }
    Ok(0.5 * (potential + kinetic) * area)
}

fn check_inputs(medium: &Medium, p0: &ScalarField2D, sensors: &SensorArray) -> Result<()> {
    p0.check_same_grid(medium.c(), "initial pressure vs medium")?;
    if !sensors.fits(medium.grid()) {
        return Err(Error::ShapeMismatch("sensor array was built for another grid".into()));
    }
    Ok(())
}

pub(crate) fn record(prop: &Propagator, p0: &[f64]) -> Vec<f64> {
    let n_steps = prop.n_steps;
    let n_sensors = prop.sensor_cells.len();
    let mut out = vec![0.0; n_sensors * n_steps];
    let mut st = Stepper::new(prop, p0);
    for n in 0..n_steps {
        if n > 0 {
            st.advance(None);
        }
        for (s, &cell) in prop.sensor_cells.iter().enumerate() {
            out[s * n_steps + n] = st.pressure_at(cell);
        }
    }
    out
}

/// Measurement map for a fixed medium: pressure at each detector for
/// `n_steps` samples, the first at `t = 0`.
pub fn simulate_forward(
    medium: &Medium,
    p0: &ScalarField2D,
    sensors: &SensorArray,
    config: &SimConfig,
) -> Result<SensorData> {
    check_inputs(medium, p0, sensors)?;
    let prop = Propagator::new(medium, sensors, config)?;
    let samples = record(&prop, p0.values());
    SensorData::new(sensors.len(), config.n_steps, samples, config.dt)
}

/// Run the solver for `n_steps - 1` steps, calling `observe` with the full
/// state at every integer step (including step 0). Returns the medium on the
/// full grid, for use with [`discrete_energy`].
pub fn simulate_with_observer(
    medium: &Medium,
    p0: &ScalarField2D,
    sensors: &SensorArray,
    config: &SimConfig,
    mut observe: impl FnMut(&WaveState),
) -> Result<Medium> {
    check_inputs(medium, p0, sensors)?;
    let prop = Propagator::new(medium, sensors, config)?;
    let full = propagator::padded_medium(&prop, config.grid.dx())?;
    let mut st = Stepper::new(&prop, p0.values());
    for n in 0..config.n_steps {
        if n > 0 {
            st.advance(None);
        }
        let (ux, uy, ux_next, uy_next) = st.bracketing_velocities();
        let p = ScalarField2D::new(*full.grid(), st.pressure())?;
        observe(&WaveState::staggered(p, ux, uy, ux_next, uy_next, n)?);
    }
    Ok(full)
}

/// [`discrete_energy`] of the full (collar-included) state at every
/// integer step.
pub fn energy_history(
    medium: &Medium,
    p0: &ScalarField2D,
    sensors: &SensorArray,
    config: &SimConfig,
) -> Result<Vec<f64>> {
    check_inputs(medium, p0, sensors)?;
    let prop = Propagator::new(medium, sensors, config)?;
    let full = propagator::padded_medium(&prop, config.grid.dx())?;
    let mut st = Stepper::new(&prop, p0.values());
    let mut out = Vec::with_capacity(config.n_steps);
    for n in 0..config.n_steps {
        if n > 0 {
            st.advance(None);
        }
        let (ux, uy, ux_next, uy_next) = st.bracketing_velocities();
        let p = ScalarField2D::new(*full.grid(), st.pressure())?;
        out.push(discrete_energy(&WaveState::staggered(p, ux, uy, ux_next, uy_next, n)?, &full)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::square(n, DEFAULT_DX).unwrap()
    }

    #[test]
    fn zero_initial_pressure_is_silent() {
        let g = grid(16);
        let m = Medium::uniform(g, 1500.0).unwrap();
        let cfg = make_sim_config(g, &m, 40, 0.3, 4).unwrap();
        let d = simulate_forward(&m, &ScalarField2D::zeros(g), &sensor_layout(&g), &cfg).unwrap();
        assert!(d.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn column_zero_is_initial_pressure() {
        let g = grid(8);
        let m = Medium::uniform(g, 1500.0).unwrap();
        let cfg = make_sim_config(g, &m, 5, 0.3, 2).unwrap();
        let p0 = ScalarField2D::from_fn(g, |j, i| (j * 8 + i) as f64).unwrap();
        let s = sensor_layout(&g);
        let d = simulate_forward(&m, &p0, &s, &cfg).unwrap();
        for (k, &(r, c)) in s.positions().iter().enumerate() {
            assert_eq!(d.trace(k)[0], p0.at(r, c));
        }
    }

    #[test]
    fn output_shape() {
        let g = grid(12);
        let m = Medium::uniform(g, 1500.0).unwrap();
        let cfg = make_sim_config(g, &m, 17, 0.3, 3).unwrap();
        let d = simulate_forward(&m, &ScalarField2D::zeros(g), &sensor_layout(&g), &cfg).unwrap();
        assert_eq!(d.shape(), (44, 17));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let m = Medium::uniform(grid(8), 1500.0).unwrap();
        let cfg = make_sim_config(grid(8), &m, 5, 0.3, 0).unwrap();
        let p0 = ScalarField2D::zeros(grid(9));
        assert!(simulate_forward(&m, &p0, &sensor_layout(&grid(8)), &cfg).is_err());
        let p0 = ScalarField2D::zeros(grid(8));
        assert!(simulate_forward(&m, &p0, &sensor_layout(&grid(9)), &cfg).is_err());
    }

    #[test]
    fn energy_of_simple_states() {
        let g = grid(4);
        let m = Medium::uniform(g, 1500.0).unwrap();
        assert_eq!(discrete_energy(&WaveState::zeros(g), &m).unwrap(), 0.0);
        let mut s = WaveState::zeros(g);
        s.p = ScalarField2D::constant(g, 1.0);
        let e = discrete_energy(&s, &m).unwrap();
        let expected = 16.0 / (1500.0 * 1500.0) * 1e-8 / 2.0;
        assert!((e - expected).abs() <= 1e-15 * expected);
        assert!((expected - 3.556e-14).abs() < 1e-17);
        s.ux[3] = 0.25;
        s.uy[7] = -0.5;
        let e1 = discrete_energy(&s, &m).unwrap();
        let e3 = discrete_energy(&s.scaled(3.0).unwrap(), &m).unwrap();
        assert!((e3 - 9.0 * e1).abs() <= 1e-14 * e3);
    }
}
