//! Joint proximal-gradient reconstruction of `(p0, c)`.
//!
//! Each outer iteration takes one gradient step in both unknowns, applies
//! the nonnegative-TV prox to `p0`, clamps `c` to the physical range and
//! backtracks on a common step factor until the composite objective
//! `F + beta * TV(p0)` decreases sufficiently.

use std::fmt::Write as _;
use std::path::Path;

use crate::adjoint::{self, ForwardOperator, GradientOptions};
use crate::error::{Error, Result};
use crate::field::{Medium, ScalarField2D};
use crate::phantom::{C_MAX, C_MIN};
use crate::sim::{SensorArray, SensorData, SimConfig};

const ARMIJO: f64 = 1e-4;
const MAX_SHRINKS: usize = 40;
/// Largest speed change (m/s) of the automatic first trial step in `c`.
const AUTO_C_STEP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    None,
    Tv,
}

impl std::str::FromStr for Regularizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Regularizer::None),
            "tv" => Ok(Regularizer::Tv),
            _ => Err(Error::InvalidConfig(format!("unknown regularizer `{s}` (none | tv)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    pub beta: f64,
    pub reg: Regularizer,
    pub tv_iters: usize,
    pub max_outer: usize,
    pub tol: f64,
    pub ls_shrink: f64,
    /// First trial step for `p0`; `None` uses the exact line minimizer of
    /// the fidelity along the negative gradient.
    pub ls_init_p: Option<f64>,
    /// First trial step for `c`; `None` scales it so the largest change is
    /// 50 m/s.
    pub ls_init_c: Option<f64>,
    /// Keep `c` at its initial value (known-speed reconstruction).
    pub freeze_c: bool,
    pub gradient: GradientOptions,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            beta: 1e-3,
            reg: Regularizer::Tv,
            tv_iters: 20,
            max_outer: 100,
            tol: 1e-6,
            ls_shrink: 0.5,
            ls_init_p: None,
            ls_init_c: None,
            freeze_c: false,
            gradient: GradientOptions::default(),
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta = {} must be >= 0", self.beta));
        }
        if !(self.ls_shrink > 0.0 && self.ls_shrink < 1.0) {
            return bad(format!("ls_shrink = {} must lie in (0, 1)", self.ls_shrink));
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1".into());
        }
        for s in [self.ls_init_p, self.ls_init_c].into_iter().flatten() {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("initial step {s} must be finite and >= 0"));
            }
        }
        Ok(())
    }

    fn reg_weight(&self) -> f64 {
        match self.reg {
            Regularizer::None => 0.0,
            Regularizer::Tv => self.beta,
        }
    }
}

/// One row per outer iteration; row 0 describes the initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub fidelity: f64,
    pub objective: f64,
    pub alpha_p: f64,
    pub alpha_c: f64,
    /// `‖p_{k+1} - p_k‖ / alpha_p`, the prox-gradient residual.
    pub prox_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// No sufficient decrease after 40 step reductions.
    LineSearchFailed,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReconTrace {
    pub rows: Vec<TraceRow>,
}

impl ReconTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,F,objective,alpha_p,alpha_c,prox_residual\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e}",
                r.iteration, r.fidelity, r.objective, r.alpha_p, r.alpha_c, r.prox_residual
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct ReconOutput {
    pub p0: ScalarField2D,
    pub c: ScalarField2D,
    pub trace: ReconTrace,
    pub stop: StopReason,
}

/// Isotropic total variation with forward differences (zero across the
/// last row and column).
pub fn total_variation(x: &ScalarField2D) -> f64 {
    let g = x.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let v = x.values();
    let mut tv = 0.0;
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let dx = if i + 1 < nx { v[k + 1] - v[k] } else { 0.0 };
            let dy = if j + 1 < ny { v[k + nx] - v[k] } else { 0.0 };
            tv += (dx * dx + dy * dy).sqrt();
        }
    }
    tv
}

/// Approximate `argmin_z tau·TV(z) + ½‖z − x‖²` over `z ≥ 0`, by
/// `tv_iters` projected-gradient steps on the dual (Beck–Teboulle).
pub fn prox_nonneg_tv(x: &ScalarField2D, tau: f64, tv_iters: usize) -> Result<ScalarField2D> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::InvalidConfig(format!("prox weight {tau} must be finite and >= 0")));
    }
    let grid = *x.grid();
    let xv = x.values();
    if tau == 0.0 || tv_iters == 0 {
        return ScalarField2D::new(grid, xv.iter().map(|v| v.max(0.0)).collect());
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let n = nx * ny;
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut z = vec![0.0; n];

    // z = P(x - tau * L(px, py)), L = -div with the forward-difference
    // adjoint boundary convention.
    let primal = |px: &[f64], py: &[f64], z: &mut [f64]| {
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let mut l = 0.0;
                if i + 1 < nx {
                    l += px[k];
                }
                if i > 0 {
                    l -= px[k - 1];
                }
                if j + 1 < ny {
                    l += py[k];
                }
                if j > 0 {
                    l -= py[k - nx];
                }
                z[k] = (xv[k] - tau * l).max(0.0);
            }
        }
    };
    let step = 1.0 / (8.0 * tau);
    for _ in 0..tv_iters {
        primal(&px, &py, &mut z);
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let gx = if i + 1 < nx { z[k] - z[k + 1] } else { 0.0 };
                let gy = if j + 1 < ny { z[k] - z[k + nx] } else { 0.0 };
                let (a, b) = (px[k] + step * gx, py[k] + step * gy);
                let s = (a * a + b * b).sqrt().max(1.0);
                px[k] = a / s;
                py[k] = b / s;
            }
        }
    }
    primal(&px, &py, &mut z);
    ScalarField2D::new(grid, z)
}

struct Problem<'a> {
    sensors: &'a SensorArray,
    sim: &'a SimConfig,
    cfg: &'a ReconConfig,
}

impl Problem<'_> {
    fn operator(&self, c: &ScalarField2D) -> Result<ForwardOperator> {
        ForwardOperator::new(Medium::with_unit_density(c.clone())?, self.sensors.clone(), self.sim.clone())
    }

    fn objective(&self, fidelity: f64, p: &ScalarField2D) -> f64 {
        let w = self.cfg.reg_weight();
        if w > 0.0 {
            fidelity + w * total_variation(p)
        } else {
            fidelity
        }
    }

    fn prox(&self, y: &ScalarField2D, alpha: f64) -> Result<ScalarField2D> {
        prox_nonneg_tv(y, alpha * self.cfg.reg_weight(), self.cfg.tv_iters)
    }
}

fn axpy(x: &ScalarField2D, a: f64, d: &ScalarField2D) -> Result<ScalarField2D> {
    let v = x.values().iter().zip(d.values()).map(|(x, d)| x + a * d).collect();
    ScalarField2D::new(*x.grid(), v)
}

fn dist2(a: &ScalarField2D, b: &ScalarField2D) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Run the joint reconstruction from `(p0_init, c_init)`.
pub fn reconstruct_classical(
    g: &SensorData,
    p0_init: &ScalarField2D,
    c_init: &ScalarField2D,
    cfg: &ReconConfig,
    sim: &SimConfig,
    sensors: &SensorArray,
) -> Result<ReconOutput> {
    cfg.validate()?;
    if c_init.min() <= 0.0 {
        return Err(Error::InvalidMedium("initial sound speed must be positive".into()));
    }
    p0_init.check_same_grid(c_init, "p0_init vs c_init")?;
    let prob = Problem { sensors, sim, cfg };

    let mut p = p0_init.clone();
    let mut c = if cfg.freeze_c {
        c_init.clone()
    } else {
        c_init.map(|v| v.clamp(C_MIN, C_MAX))?
    };
    let mut op = prob.operator(&c)?;
    let mut fidelity = adjoint::data_fidelity(&op, &p, g)?;
    let mut objective = prob.objective(fidelity, &p);
    let mut trace = ReconTrace {
        rows: vec![TraceRow {
            iteration: 0,
            fidelity,
            objective,
            alpha_p: 0.0,
            alpha_c: 0.0,
            prox_residual: 0.0,
        }],
    };
    let mut stop = StopReason::MaxIterations;

    for k in 1..=cfg.max_outer {
        let (gp, gc) = if cfg.freeze_c {
            (adjoint::grad_p0(&op, &p, g)?, None)
        } else {
            let (_, pair) = adjoint::fidelity_and_gradients(&op, &p, g, &cfg.gradient)?;
            (pair.grad_p0, Some(pair.grad_c))
        };

        let alpha_p0 = match cfg.ls_init_p {
            Some(a) => a,
            None => {
                let gg = gp.dot(&gp);
                let hg = adjoint::apply_forward(&op, &gp)?;
                let hh = hg.dot(&hg);
                if gg > 0.0 && hh > 0.0 {
                    gg / hh
                } else {
                    1.0
                }
            }
        };
        let alpha_c0 = match (&gc, cfg.ls_init_c) {
            (None, _) => 0.0,
            (Some(_), Some(a)) => a,
            (Some(gc), None) => {
                let m = gc.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if m > 0.0 {
                    AUTO_C_STEP / m
                } else {
                    0.0
                }
            }
        };

        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_SHRINKS {
            let (ap, ac) = (s * alpha_p0, s * alpha_c0);
            let p_new = prob.prox(&axpy(&p, -ap, &gp)?, ap)?;
            let c_new = match &gc {
                Some(gc) if ac > 0.0 => axpy(&c, -ac, gc)?.map(|v| v.clamp(C_MIN, C_MAX))?,
                _ => c.clone(),
            };
            let op_new = if c_new == c { op.clone() } else { prob.operator(&c_new)? };
            let f_new = adjoint::data_fidelity(&op_new, &p_new, g)?;
            let obj_new = prob.objective(f_new, &p_new);
            let mut decrease = 0.0;
            if ap > 0.0 {
                decrease += dist2(&p_new, &p) / ap;
            }
            if ac > 0.0 {
                decrease += dist2(&c_new, &c) / ac;
            }
            if obj_new <= objective - ARMIJO * decrease {
                accepted = Some((p_new, c_new, op_new, f_new, obj_new, ap, ac));
                break;
            }
            s *= cfg.ls_shrink;
        }
        let Some((p_new, c_new, op_new, f_new, obj_new, ap, ac)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        let prox_residual = if ap > 0.0 { dist2(&p_new, &p).sqrt() / ap } else { 0.0 };
        let rel = if objective > 0.0 {
            (objective - obj_new) / objective
        } else {
            0.0
        };
        p = p_new;
        c = c_new;
        op = op_new;
        fidelity = f_new;
        objective = obj_new;
        trace.rows.push(TraceRow {
            iteration: k,
            fidelity,
            objective,
            alpha_p: ap,
            alpha_c: ac,
            prox_residual,
        });
        if rel < cfg.tol {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(ReconOutput { p0: p, c, trace, stop })
}
