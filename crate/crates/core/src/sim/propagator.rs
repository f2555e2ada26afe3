//! Staggered-grid leapfrog scheme for the first-order acoustic system
//!
//! ```text
//! rho du/dt + grad p = 0
//! 1/(rho c^2) dp/dt + div u = 0
//! ```
//!
//! Pressure lives at cell centres and integer steps, velocity on cell faces
//! at half steps. The imaging region is surrounded by a collar of
//! `pml_cells` cells on every side whose medium replicates the nearest edge
//! cell. Inside the collar the pressure is split into `px + py` and each part
//! is damped with `exp(-sigma dt / 2)` on both sides of its update. The outer
//! walls are rigid (normal velocity fixed at zero).
//!
//! One step from `n` to `n + 1`:
//!
//! ```text
//! p      = px + py
//! ux'    = ax_f * (ax_f * ux - h_n * dt/rho_f * Gx p)
//! uy'    = ay_f * (ay_f * uy - h_n * dt/rho_f * Gy p)
//! px'    = ax_c * (ax_c * px - dt * kappa * Dx ux')
//! py'    = ay_c * (ay_c * py - dt * kappa * Dy uy')
//! ```
//!
//! with `kappa = rho c^2`, `h_0 = 1/2` (the half-step start from `u(0) = 0`)
//! and `h_n = 1` afterwards. The `*_adjoint` methods apply the exact
//! transposes of these updates.

use crate::error::Result;
use crate::field::{Medium, ScalarField2D};
use crate::sim::config::SimConfig;
use crate::sim::sensors::SensorArray;

#[derive(Debug, Clone)]
pub(crate) struct Propagator {
    /// imaging region size
    pub nx: usize,
    pub ny: usize,
    /// collar thickness
    pub pad: usize,
    /// full grid size
    pub nxf: usize,
    pub nyf: usize,
    pub dt: f64,
    pub dx: f64,
    pub kappa: Vec<f64>,
    /// `rho` on the full grid (replicated into the collar)
    pub rho: Vec<f64>,
    /// `dt / (rho_face * dx)` on x-faces, `(nxf + 1) * nyf`
    coef_ux: Vec<f64>,
    /// `dt / (rho_face * dx)` on y-faces, `nxf * (nyf + 1)`
    coef_uy: Vec<f64>,
    ax_c: Vec<f64>,
    ay_c: Vec<f64>,
    ax_f: Vec<f64>,
    ay_f: Vec<f64>,
    /// full-grid cell index of each sensor
    pub sensor_cells: Vec<usize>,
    pub n_steps: usize,
}

/// Quartic collar profile evaluated at depth `d` cells into a layer of
/// `pad` cells.
fn sigma(alpha: f64, pad: usize, depth: f64) -> f64 {
    if pad == 0 || depth <= 0.0 {
        0.0
    } else {
        alpha * (depth / pad as f64).powi(4)
    }
}

/// Per-cell (`n + 2 pad`) and per-face (`n + 2 pad + 1`) half-step decay
/// factors `exp(-sigma dt / 2)` along one axis.
pub(crate) fn collar_decay(alpha: f64, pad: usize, n: usize, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let depth = |x: f64| -> f64 {
        if x < pad as f64 {
            pad as f64 - x
        } else if x > (pad + n) as f64 {
            x - (pad + n) as f64
        } else {
            0.0
        }
    };
    let decay = |x: f64| (-0.5 * sigma(alpha, pad, depth(x)) * dt).exp();
    let total = n + 2 * pad;
    let cells = (0..total).map(|i| decay(i as f64 + 0.5)).collect();
    let faces = (0..=total).map(|i| decay(i as f64)).collect();
    (cells, faces)
}

impl Propagator {
    pub fn new(medium: &Medium, sensors: &SensorArray, config: &SimConfig) -> Result<Self> {
        config.check_medium(medium)?;
        if !sensors.fits(medium.grid()) {
            return Err(crate::error::Error::ShapeMismatch(
                "sensor array was built for a different grid".into(),
            ));
        }
        let grid = medium.grid();
        let (nx, ny, pad) = (grid.nx(), grid.ny(), config.pml_cells);
        let (nxf, nyf) = (nx + 2 * pad, ny + 2 * pad);
        let dt = config.dt;
        let dx = grid.dx();

        let src = |j: usize, i: usize| -> usize {
            let r = j.saturating_sub(pad).min(ny - 1);
            let c = i.saturating_sub(pad).min(nx - 1);
            r * nx + c
        };
        let mut kappa = vec![0.0; nxf * nyf];
        let mut rho = vec![0.0; nxf * nyf];
        for j in 0..nyf {
            for i in 0..nxf {
                let s = src(j, i);
                let r = medium.rho().values()[s];
                let c = medium.c().values()[s];
                rho[j * nxf + i] = r;
                kappa[j * nxf + i] = r * c * c;
            }
        }

        let mut coef_ux = vec![0.0; (nxf + 1) * nyf];
        for j in 0..nyf {
            for i in 1..nxf {
                let rf = 0.5 * (rho[j * nxf + i] + rho[j * nxf + i - 1]);
                coef_ux[j * (nxf + 1) + i] = dt / (rf * dx);
            }
        }
        let mut coef_uy = vec![0.0; nxf * (nyf + 1)];
        for j in 1..nyf {
            for i in 0..nxf {
                let rf = 0.5 * (rho[j * nxf + i] + rho[(j - 1) * nxf + i]);
                coef_uy[j * nxf + i] = dt / (rf * dx);
            }
        }

        let (ax_c, ax_f) = collar_decay(config.pml_alpha, pad, nx, dt);
        let (ay_c, ay_f) = collar_decay(config.pml_alpha, pad, ny, dt);

        let sensor_cells = sensors
            .positions()
            .iter()
            .map(|&(r, c)| (r + pad) * nxf + (c + pad))
            .collect();

        Ok(Self {
            nx,
            ny,
            pad,
            nxf,
            nyf,
            dt,
            dx,
            kappa,
            rho,
            coef_ux,
            coef_uy,
            ax_c,
            ay_c,
            ax_f,
            ay_f,
            sensor_cells,
            n_steps: config.n_steps,
        })
    }

    pub fn cells(&self) -> usize {
        self.nxf * self.nyf
    }

    pub fn n_ux(&self) -> usize {
        (self.nxf + 1) * self.nyf
    }

    pub fn n_uy(&self) -> usize {
        self.nxf * (self.nyf + 1)
    }

    /// Full-grid index of imaging cell `(row, col)`.
    #[inline]
    pub fn full_index(&self, row: usize, col: usize) -> usize {
        (row + self.pad) * self.nxf + col + self.pad
    }

    /// Embed an imaging-region field into the full grid (zero collar).
    pub fn embed(&self, field: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cells()];
        for j in 0..self.ny {
            let dst = self.full_index(j, 0);
            out[dst..dst + self.nx].copy_from_slice(&field[j * self.nx..(j + 1) * self.nx]);
        }
        out
    }

    /// Restrict a full-grid array to the imaging region.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            let src = self.full_index(j, 0);
            out.extend_from_slice(&full[src..src + self.nx]);
        }
        out
    }

    /// Imaging-region cell whose medium a full-grid cell replicates.
    #[inline]
    pub fn source_cell(&self, jf: usize, if_: usize) -> usize {
        let r = jf.saturating_sub(self.pad).min(self.ny - 1);
        let c = if_.saturating_sub(self.pad).min(self.nx - 1);
        r * self.nx + c
    }

    #[inline]
    pub fn half_factor(step: usize) -> f64 {
        if step == 0 {
            0.5
        } else {
            1.0
        }
    }

    /// `u(n-1/2) -> u(n+1/2)` given `p = px + py` at step `n`.
    pub fn velocity_step(&self, p: &[f64], ux: &mut [f64], uy: &mut [f64], h: f64) {
        let nxf = self.nxf;
        for j in 0..self.nyf {
            let row = &p[j * nxf..(j + 1) * nxf];
            let base = j * (nxf + 1);
            for i in 1..nxf {
                let f = base + i;
                let a = self.ax_f[i];
                ux[f] = a * (a * ux[f] - h * self.coef_ux[f] * (row[i] - row[i - 1]));
            }
        }
        for j in 1..self.nyf {
            let a = self.ay_f[j];
            let base = j * nxf;
            for i in 0..nxf {
                let f = base + i;
                uy[f] = a * (a * uy[f] - h * self.coef_uy[f] * (p[base + i] - p[base - nxf + i]));
            }
        }
    }

    /// `p(n) -> p(n+1)` given `u(n+1/2)`. When `div` is supplied, the
    /// per-cell divergences `(Dx ux, Dy uy)` are written into it.
    pub fn pressure_step(
        &self,
        px: &mut [f64],
        py: &mut [f64],
        ux: &[f64],
        uy: &[f64],
        mut div: Option<(&mut [f64], &mut [f64])>,
    ) {
        let nxf = self.nxf;
        let inv_dx = 1.0 / self.dx;
        for j in 0..self.nyf {
            let ay = self.ay_c[j];
            let ubase = j * (nxf + 1);
            for i in 0..nxf {
                let c = j * nxf + i;
                let dxu = (ux[ubase + i + 1] - ux[ubase + i]) * inv_dx;
                let dyu = (uy[c + nxf] - uy[c]) * inv_dx;
                let ax = self.ax_c[i];
                let k = self.dt * self.kappa[c];
                px[c] = ax * (ax * px[c] - k * dxu);
                py[c] = ay * (ay * py[c] - k * dyu);
                if let Some((dvx, dvy)) = div.as_mut() {
                    dvx[c] = dxu;
                    dvy[c] = dyu;
                }
            }
        }
    }

    /// Transpose of [`Self::pressure_step`]. On entry `lpx`, `lpy` hold the
    /// adjoint of `p(n+1)` and `lux`, `luy` the adjoint of `u(n+1/2)` from
    /// later steps; on exit `lpx`, `lpy` hold the adjoint of `p(n)` and the
    /// velocity adjoints include this step's contribution. When `kgrad` is
    /// supplied together with the stored divergences, `d/d kappa` is
    /// accumulated into it.
    #[allow(clippy::too_many_arguments)]
    pub fn pressure_step_adjoint(
        &self,
        lpx: &mut [f64],
        lpy: &mut [f64],
        lux: &mut [f64],
        luy: &mut [f64],
        kgrad: Option<(&mut [f64], &[f64], &[f64])>,
    ) {
        let nxf = self.nxf;
        let inv_dx = 1.0 / self.dx;
        let dt = self.dt;
        if let Some((kg, dvx, dvy)) = kgrad {
            for j in 0..self.nyf {
                let ay = self.ay_c[j];
                for i in 0..nxf {
                    let c = j * nxf + i;
                    let tx = self.ax_c[i] * lpx[c];
                    let ty = ay * lpy[c];
                    kg[c] -= dt * (dvx[c] * tx + dvy[c] * ty);
                }
            }
        }
        for j in 0..self.nyf {
            let ay = self.ay_c[j];
            let ubase = j * (nxf + 1);
            for i in 0..nxf {
                let c = j * nxf + i;
                let ax = self.ax_c[i];
                let tx = ax * lpx[c];
                let ty = ay * lpy[c];
                let k = dt * self.kappa[c] * inv_dx;
                // Dx^T and Dy^T restricted to interior faces
                let wx = k * tx;
                if i + 1 < nxf {
                    lux[ubase + i + 1] -= wx;
                }
                if i > 0 {
                    lux[ubase + i] += wx;
                }
                let wy = k * ty;
                if j + 1 < self.nyf {
                    luy[c + nxf] -= wy;
                }
                if j > 0 {
                    luy[c] += wy;
                }
                lpx[c] = ax * tx;
                lpy[c] = ay * ty;
            }
        }
    }

    /// Transpose of [`Self::velocity_step`]: turns the adjoint of
    /// `u(n+1/2)` into the adjoint of `u(n-1/2)` and adds the pressure
    /// adjoint contribution into `lp`.
    pub fn velocity_step_adjoint(&self, lp: &mut [f64], lux: &mut [f64], luy: &mut [f64], h: f64) {
        let nxf = self.nxf;
        for j in 0..self.nyf {
            let base = j * (nxf + 1);
            for i in 1..nxf {
                let f = base + i;
                let a = self.ax_f[i];
                let t = a * lux[f];
                let w = h * self.coef_ux[f] * t;
                lp[j * nxf + i] -= w;
                lp[j * nxf + i - 1] += w;
                lux[f] = a * t;
            }
        }
        for j in 1..self.nyf {
            let a = self.ay_f[j];
            let base = j * nxf;
            for i in 0..nxf {
                let f = base + i;
                let t = a * luy[f];
                let w = h * self.coef_uy[f] * t;
                lp[base + i] -= w;
                lp[base - nxf + i] += w;
                luy[f] = a * t;
            }
        }
    }
}

/// Full-grid simulation state, advanced one step at a time.
#[derive(Debug, Clone)]
pub(crate) struct Stepper<'a> {
    pub prop: &'a Propagator,
    pub px: Vec<f64>,
    pub py: Vec<f64>,
    /// velocities at `step - 1/2`
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    pub step: usize,
    p_scratch: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(prop: &'a Propagator, p0: &[f64]) -> Self {
        let full = prop.embed(p0);
        let half: Vec<f64> = full.iter().map(|v| 0.5 * v).collect();
        Self {
            prop,
            px: half.clone(),
            py: half,
            ux: vec![0.0; prop.n_ux()],
            uy: vec![0.0; prop.n_uy()],
            step: 0,
            p_scratch: vec![0.0; prop.cells()],
        }
    }

    #[inline]
    pub fn pressure_at(&self, cell: usize) -> f64 {
        self.px[cell] + self.py[cell]
    }

    pub fn pressure(&self) -> Vec<f64> {
        self.px.iter().zip(&self.py).map(|(a, b)| a + b).collect()
    }

    /// Advance one step; stores `(Dx ux, Dy uy)` in `div` when given.
    pub fn advance(&mut self, div: Option<(&mut [f64], &mut [f64])>) {
        let h = Propagator::half_factor(self.step);
        for ((p, a), b) in self.p_scratch.iter_mut().zip(&self.px).zip(&self.py) {
            *p = a + b;
        }
        self.prop
            .velocity_step(&self.p_scratch, &mut self.ux, &mut self.uy, h);
        self.prop
            .pressure_step(&mut self.px, &mut self.py, &self.ux, &self.uy, div);
        self.step += 1;
    }

    /// Velocities at `step - 1/2` and `step + 1/2`. At step 0 the earlier
    /// one is the virtual `u(-1/2) = -u(1/2)` implied by the half-step start.
    pub fn bracketing_velocities(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut ux = self.ux.clone();
        let mut uy = self.uy.clone();
        let p = self.pressure();
        self.prop
            .velocity_step(&p, &mut ux, &mut uy, Propagator::half_factor(self.step));
        if self.step == 0 {
            let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
            (neg(&ux), neg(&uy), ux, uy)
        } else {
            (self.ux.clone(), self.uy.clone(), ux, uy)
        }
    }
}

/// Copy of the medium on the full computational grid (collar included).
pub(crate) fn padded_medium(prop: &Propagator, dx: f64) -> Result<Medium> {
    let grid = crate::field::GridSpec::new(prop.nxf, prop.nyf, dx)?;
    let c: Vec<f64> = prop
        .kappa
        .iter()
        .zip(&prop.rho)
        .map(|(k, r)| (k / r).sqrt())
        .collect();
    Medium::new(
        ScalarField2D::new(grid, c)?,
        ScalarField2D::new(grid, prop.rho.clone())?,
    )
}
