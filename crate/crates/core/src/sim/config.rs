use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::field::{GridSpec, Medium};

/// Default grid spacing in meters (6.4 mm across a 64-cell image).
pub const DEFAULT_DX: f64 = 1e-4;
/// Default Courant number, applied against the maximum sound speed.
pub const DEFAULT_CFL: f64 = 0.3;
/// Absorbing collar thickness per side, in cells.
pub const DEFAULT_PML_CELLS: usize = 10;
/// Number of recorded time samples per detector at 64×64.
pub const DEFAULT_STEPS: usize = 652;

/// Dimensionless peak absorption of the quartic collar profile:
/// `pml_alpha = PML_ALPHA_NORM * c_ref / dx`.
///
/// Calibrated with a 1-D plane-wave probe of the same split-field update
/// (see `pml_reflection_probe` in the tests) to keep the normal-incidence
/// reflection below 1e-4 in amplitude for a 10-cell collar at cfl 0.3
/// (pulses two or more cells wide; grid-scale content reflects ~2e-3).
pub const PML_ALPHA_NORM: f64 = 4.0;

/// Time stepping and absorbing-layer settings for one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub grid: GridSpec,
    /// Time step in seconds.
    pub dt: f64,
    /// Number of recorded samples; sample 0 is taken at t = 0.
    pub n_steps: usize,
    pub cfl: f64,
    pub pml_cells: usize,
    /// Peak collar absorption in 1/s.
    pub pml_alpha: f64,
}

impl SimConfig {
    /// Builds a config whose `dt` is the CFL limit for `c_ref`.
    pub fn for_speed(
        grid: GridSpec,
        c_ref: f64,
        n_steps: usize,
        cfl: f64,
        pml_cells: usize,
    ) -> Result<Self> {
        if !(cfl > 0.0 && cfl < 1.0) {
            return Err(Error::InvalidConfig(format!("cfl = {cfl} must lie in (0, 1)")));
        }
        if !(c_ref.is_finite() && c_ref > 0.0) {
            return Err(Error::InvalidConfig(format!("reference speed {c_ref} must be positive")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidConfig("n_steps must be at least 1".into()));
        }
        let dt = cfl * grid.dx() / c_ref;
        Ok(Self {
            grid,
            dt,
            n_steps,
            cfl,
            pml_cells,
            pml_alpha: PML_ALPHA_NORM * c_ref / grid.dx(),
        })
    }

    /// Record length `(n_steps - 1) * dt`.
    pub fn duration(&self) -> f64 {
        (self.n_steps - 1) as f64 * self.dt
    }

    /// Largest sound speed this config can propagate.
    pub fn c_limit(&self) -> f64 {
        self.cfl * self.grid.dx() / self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(Error::InvalidConfig(format!("cfl = {} must lie in (0, 1)", self.cfl)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidConfig("n_steps must be at least 1".into()));
        }
        if !(self.pml_alpha.is_finite() && self.pml_alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "pml_alpha = {} must be non-negative",
                self.pml_alpha
            )));
        }
        Ok(())
    }

    /// Checks grid agreement and the CFL bound against `medium`.
    pub fn check_medium(&self, medium: &Medium) -> Result<()> {
        self.validate()?;
        if !self.grid.same_shape(medium.grid()) {
            return Err(Error::ShapeMismatch(format!(
                "config grid {}x{} vs medium {}x{}",
                self.grid.nx(),
                self.grid.ny(),
                medium.grid().nx(),
                medium.grid().ny()
            )));
        }
        let limit = self.cfl * self.grid.dx() / medium.c_max();
        // Allow round-off from the dt = cfl*dx/c division itself.
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt: self.dt, limit });
        }
        Ok(())
    }

    /// Plain-text `key = value` form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub(crate) fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("nx", self.grid.nx().to_string()),
            ("ny", self.grid.ny().to_string()),
            ("dx", format!("{:e}", self.grid.dx())),
            ("dt", format!("{:e}", self.dt)),
            ("n_steps", self.n_steps.to_string()),
            ("cfl", format!("{}", self.cfl)),
            ("pml_cells", self.pml_cells.to_string()),
            ("pml_alpha", format!("{:e}", self.pml_alpha)),
        ]
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_map(&parse_key_values(text)?)
    }

    pub(crate) fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Malformed(format!("missing key `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| Error::Malformed(format!("key `{k}`: {e}")))
        };
        let count = |k: &str| -> Result<usize> {
            get(k)?
                .parse::<usize>()
                .map_err(|e| Error::Malformed(format!("key `{k}`: {e}")))
        };
        let grid = GridSpec::new(count("nx")?, count("ny")?, num("dx")?)?;
        let cfg = Self {
            grid,
            dt: num("dt")?,
            n_steps: count("n_steps")?,
            cfl: num("cfl")?,
            pml_cells: count("pml_cells")?,
            pml_alpha: num("pml_alpha")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Build a config whose `dt` satisfies the CFL bound for `medium`.
pub fn make_sim_config(
    grid: GridSpec,
    medium: &Medium,
    n_steps: usize,
    cfl: f64,
    pml_cells: usize,
) -> Result<SimConfig> {
    if !grid.same_shape(medium.grid()) {
        return Err(Error::ShapeMismatch("grid and medium disagree".into()));
    }
    SimConfig::for_speed(grid, medium.c_max(), n_steps, cfl, pml_cells)
}

/// Parse `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Malformed(format!("line {}: expected `key = value`", lineno + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec::square(n, 1e-4).unwrap()
    }

    #[test]
    fn dt_from_max_speed() {
        let cfg = SimConfig::for_speed(grid(64), 3198.0, 652, 0.3, 10).unwrap();
        assert!((cfg.dt - 0.3 * 1e-4 / 3198.0).abs() < 1e-24);
        assert!((cfg.dt - 9.3808630e-9).abs() < 1e-15);
        assert!((cfg.duration() - 6.1069e-6).abs() < 1e-9);
    }

    #[test]
    fn uniform_medium_dt() {
        let m = Medium::uniform(grid(8), 1500.0).unwrap();
        let cfg = make_sim_config(grid(8), &m, 10, 0.5, 0).unwrap();
        assert!((cfg.dt - 3.333_333_333_333e-8).abs() < 1e-20);
    }

    #[test]
    fn cfl_range() {
        assert!(SimConfig::for_speed(grid(8), 1500.0, 10, 0.0, 0).is_err());
        assert!(SimConfig::for_speed(grid(8), 1500.0, 10, 1.0, 0).is_err());
        assert!(SimConfig::for_speed(grid(8), 1500.0, 0, 0.3, 0).is_err());
    }

    #[test]
    fn cfl_violation_detected() {
        let cfg = SimConfig::for_speed(grid(8), 1500.0, 10, 0.3, 0).unwrap();
        let fast = Medium::uniform(grid(8), 1600.0).unwrap();
        assert!(matches!(cfg.check_medium(&fast), Err(Error::CflViolation { .. })));
        let slow = Medium::uniform(grid(8), 1500.0).unwrap();
        assert!(cfg.check_medium(&slow).is_ok());
    }

    #[test]
    fn text_round_trip() {
        let cfg = SimConfig::for_speed(grid(32), 3198.0, 326, 0.3, 10).unwrap();
        let back = SimConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(cfg, back);
        assert!(cfg.to_text().contains("pml_alpha = "));
    }
}
