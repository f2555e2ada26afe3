//! Least-squares data fidelity `F(p0, c) = ½‖g − H(c) p0‖²` and its exact
//! discrete gradients.
//!
//! Gradients are obtained by reverse-mode differentiation of the leapfrog
//! solver itself (discretize-then-optimize), so they agree with finite
//! differences of [`data_fidelity`] to round-off.

use crate::error::{Error, Result};
use crate::field::{Medium, ScalarField2D};
use crate::sim::propagator::{Propagator, Stepper};
use crate::sim::{self, SensorArray, SensorData, SimConfig};

/// Default cap on the stored forward history used by `grad_c` (2 GiB).
pub const DEFAULT_HISTORY_BUDGET: usize = 2 << 30;

/// Controls the forward-history storage of the sound-speed gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradientOptions {
    /// Store only every `k`-th solver state and recompute the steps in
    /// between during the reverse sweep. `None` keeps the full history.
    pub checkpoint_every: Option<usize>,
    /// Largest history allocation allowed, in bytes.
    pub history_budget: usize,
}

impl Default for GradientOptions {
    fn default() -> Self {
        Self {
            checkpoint_every: None,
            history_budget: DEFAULT_HISTORY_BUDGET,
        }
    }
}

/// `H(c)`: the measurement map for one fixed medium.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    medium: Medium,
    sensors: SensorArray,
    config: SimConfig,
    prop: Propagator,
}

impl ForwardOperator {
    pub fn new(medium: Medium, sensors: SensorArray, config: SimConfig) -> Result<Self> {
        let prop = Propagator::new(&medium, &sensors, &config)?;
        Ok(Self {
            medium,
            sensors,
            config,
            prop,
        })
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    pub fn sensors(&self) -> &SensorArray {
        &self.sensors
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Same sensors and timing, different medium.
    pub fn with_medium(&self, medium: Medium) -> Result<Self> {
        Self::new(medium, self.sensors.clone(), self.config.clone())
    }

    fn check_field(&self, f: &ScalarField2D) -> Result<()> {
        f.check_same_grid(self.medium.c(), "field vs operator grid")
    }

    fn check_data(&self, y: &SensorData) -> Result<()> {
        y.check_shape(self.sensors.len(), self.config.n_steps)
    }
}

/// Fidelity value with both gradients, from one forward and one reverse
/// sweep.
#[derive(Debug, Clone)]
pub struct GradientPair {
    pub grad_p0: ScalarField2D,
    pub grad_c: ScalarField2D,
}

/// `H(c) p0`.
pub fn apply_forward(op: &ForwardOperator, p0: &ScalarField2D) -> Result<SensorData> {
    op.check_field(p0)?;
    let samples = sim::record(&op.prop, p0.values());
    SensorData::new(op.sensors.len(), op.config.n_steps, samples, op.config.dt)
}

/// `H(c)ᵀ y`, the exact transpose of [`apply_forward`].
pub fn apply_adjoint(op: &ForwardOperator, y: &SensorData) -> Result<ScalarField2D> {
    op.check_data(y)?;
    let (lpx, lpy) = reverse_sweep(&op.prop, y.samples(), None);
    p0_adjoint(op, &lpx, &lpy)
}

/// `½‖g − H(c) p0‖²`.
pub fn data_fidelity(op: &ForwardOperator, p0: &ScalarField2D, g: &SensorData) -> Result<f64> {
    op.check_data(g)?;
    let r = apply_forward(op, p0)?.sub(g)?;
    Ok(0.5 * r.dot(&r))
}

/// `∇_{p0} F = H(c)ᵀ (H(c) p0 − g)`.
pub fn grad_p0(op: &ForwardOperator, p0: &ScalarField2D, g: &SensorData) -> Result<ScalarField2D> {
    op.check_data(g)?;
    let r = apply_forward(op, p0)?.sub(g)?;
    apply_adjoint(op, &r)
}

/// `∇_c F` on the imaging region, with the default history options.
pub fn grad_c(op: &ForwardOperator, p0: &ScalarField2D, g: &SensorData) -> Result<ScalarField2D> {
    Ok(fidelity_and_gradients(op, p0, g, &GradientOptions::default())?
        .1
        .grad_c)
}

/// `F`, `∇_{p0} F` and `∇_c F` together.
pub fn fidelity_and_gradients(
    op: &ForwardOperator,
    p0: &ScalarField2D,
    g: &SensorData,
    options: &GradientOptions,
) -> Result<(f64, GradientPair)> {
    op.check_field(p0)?;
    op.check_data(g)?;
    let prop = &op.prop;
    let n_steps = prop.n_steps;
    let n_sensors = prop.sensor_cells.len();
    let cells = prop.cells();
    let n_updates = n_steps - 1;

    let segment = options.checkpoint_every.unwrap_or(n_updates).max(1);
    let stored_steps = segment.min(n_updates);
    let n_snapshots = if options.checkpoint_every.is_some() && segment < n_updates {
        n_updates.div_ceil(segment)
    } else {
        0
    };
    let snapshot_len = 2 * cells + prop.n_ux() + prop.n_uy();
    let needed = (2 * stored_steps * cells + n_snapshots * snapshot_len) * 8;
    if needed > options.history_budget {
        return Err(Error::HistoryTooLarge {
            needed,
            budget: options.history_budget,
        });
    }

    // Forward: record, and keep either the full divergence history or
    // solver snapshots at segment starts.
    let mut residual = vec![0.0; n_sensors * n_steps];
    let mut snapshots: Vec<Stepper<'_>> = Vec::new();
    let mut divx = vec![0.0; stored_steps * cells];
    let mut divy = vec![0.0; stored_steps * cells];
    let keep_full = options.checkpoint_every.is_none() || segment >= n_updates;
    let mut st = Stepper::new(prop, p0.values());
    for n in 0..n_steps {
        if n > 0 {
            let k = n - 1;
            if keep_full {
                let (a, b) = (&mut divx[k * cells..(k + 1) * cells], &mut divy[k * cells..(k + 1) * cells]);
                st.advance(Some((a, b)));
            } else {
                st.advance(None);
            }
        }
        if !keep_full && n < n_updates && n % segment == 0 {
            snapshots.push(st.clone());
        }
        for (s, &cell) in prop.sensor_cells.iter().enumerate() {
            residual[s * n_steps + n] = st.pressure_at(cell);
        }
    }
    for (r, gv) in residual.iter_mut().zip(g.samples()) {
        *r -= gv;
    }
    let fidelity = 0.5 * residual.iter().map(|r| r * r).sum::<f64>();

    let mut kgrad = vec![0.0; cells];
    let history = if keep_full {
        History::Full {
            divx: &divx,
            divy: &divy,
        }
    } else {
        History::Checkpointed {
            segment,
            snapshots,
            divx,
            divy,
            loaded: None,
        }
    };
    let (lpx, lpy) = reverse_sweep(prop, &residual, Some((&mut kgrad, history)));
    let grad_p0 = p0_adjoint(op, &lpx, &lpy)?;
    let grad_c = c_gradient(op, &kgrad)?;
    Ok((fidelity, GradientPair { grad_p0, grad_c }))
}

enum History<'a, 'p> {
    Full {
        divx: &'a [f64],
        divy: &'a [f64],
    },
    Checkpointed {
        segment: usize,
        snapshots: Vec<Stepper<'p>>,
        divx: Vec<f64>,
        divy: Vec<f64>,
        loaded: Option<usize>,
    },
}

impl History<'_, '_> {
    /// Divergences `(Dx ux, Dy uy)` produced by the update `k -> k + 1`.
    fn divergences(&mut self, k: usize, cells: usize) -> (&[f64], &[f64]) {
        match self {
            History::Full { divx, divy } => (
                &divx[k * cells..(k + 1) * cells],
                &divy[k * cells..(k + 1) * cells],
            ),
            History::Checkpointed {
                segment,
                snapshots,
                divx,
                divy,
                loaded,
            } => {
                let seg = k / *segment;
                if *loaded != Some(seg) {
                    let mut st = snapshots[seg].clone();
                    let start = seg * *segment;
                    let end = (start + *segment).min(st.prop.n_steps - 1);
                    for j in start..end {
                        let o = (j - start) * cells;
                        st.advance(Some((&mut divx[o..o + cells], &mut divy[o..o + cells])));
                    }
                    *loaded = Some(seg);
                }
                let o = (k - seg * *segment) * cells;
                (&divx[o..o + cells], &divy[o..o + cells])
            }
        }
    }
}

/// Reverse sweep of the recorded solver. `residual` is the adjoint seed on
/// the sensor samples. Returns the adjoints of the initial split pressures.
fn reverse_sweep(
    prop: &Propagator,
    residual: &[f64],
    mut kgrad: Option<(&mut Vec<f64>, History<'_, '_>)>,
) -> (Vec<f64>, Vec<f64>) {
    let n_steps = prop.n_steps;
    let cells = prop.cells();
    let mut lpx = vec![0.0; cells];
    let mut lpy = vec![0.0; cells];
    let mut lux = vec![0.0; prop.n_ux()];
    let mut luy = vec![0.0; prop.n_uy()];
    let mut lp = vec![0.0; cells];
    for n in (0..n_steps).rev() {
        if n + 1 < n_steps {
            match kgrad.as_mut() {
                Some((kg, hist)) => {
                    let (dvx, dvy) = hist.divergences(n, cells);
                    prop.pressure_step_adjoint(&mut lpx, &mut lpy, &mut lux, &mut luy, Some((kg.as_mut_slice(), dvx, dvy)));
                }
                None => prop.pressure_step_adjoint(&mut lpx, &mut lpy, &mut lux, &mut luy, None),
            }
            lp.iter_mut().for_each(|v| *v = 0.0);
            prop.velocity_step_adjoint(&mut lp, &mut lux, &mut luy, Propagator::half_factor(n));
            for ((a, b), l) in lpx.iter_mut().zip(lpy.iter_mut()).zip(&lp) {
                *a += l;
                *b += l;
            }
        }
        for (s, &cell) in prop.sensor_cells.iter().enumerate() {
            let r = residual[s * n_steps + n];
            lpx[cell] += r;
            lpy[cell] += r;
        }
    }
    (lpx, lpy)
}

/// `p0` enters as `px = py = p0 / 2` on the imaging region.
fn p0_adjoint(op: &ForwardOperator, lpx: &[f64], lpy: &[f64]) -> Result<ScalarField2D> {
    let sum: Vec<f64> = lpx.iter().zip(lpy).map(|(a, b)| 0.5 * (a + b)).collect();
    ScalarField2D::new(*op.medium.grid(), op.prop.restrict(&sum))
}

/// Chain `d/d kappa` through `kappa = rho c^2`, folding the replicated
/// collar cells back onto the edge cells they copy.
fn c_gradient(op: &ForwardOperator, kgrad: &[f64]) -> Result<ScalarField2D> {
    let prop = &op.prop;
    let c = op.medium.c().values();
    let rho = op.medium.rho().values();
    let mut out = vec![0.0; prop.nx * prop.ny];
    for jf in 0..prop.nyf {
        for i in 0..prop.nxf {
            let src = prop.source_cell(jf, i);
            out[src] += kgrad[jf * prop.nxf + i] * 2.0 * rho[src] * c[src];
        }
    }
    ScalarField2D::new(*op.medium.grid(), out)
}
