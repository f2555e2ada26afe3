//! Grid and field data model.
//!
//! Fields are stored row-major: the sample at row `j`, column `i` lives at
//! `values[j * nx + i]`. Rows run along `y`, columns along `x`.

use crate::error::{Error, Result};

/// Uniform square-cell grid over the imaging region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    dx: f64,
}

impl GridSpec {
    pub const MIN_SIDE: usize = 4;

    pub fn new(nx: usize, ny: usize, dx: f64) -> Result<Self> {
        if nx < Self::MIN_SIDE || ny < Self::MIN_SIDE {
            return Err(Error::InvalidGrid(format!(
                "{nx}x{ny} is smaller than {min}x{min}",
                min = Self::MIN_SIDE
            )));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::InvalidGrid(format!("dx = {dx} must be positive and finite")));
        }
        Ok(Self { nx, ny, dx })
    }

    /// Square `n`×`n` grid.
    pub fn square(n: usize, dx: f64) -> Result<Self> {
        Self::new(n, n, dx)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.ny && col < self.nx);
        row * self.nx + col
    }

    /// Same shape, ignoring spacing.
    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }
}

/// Real samples on a [`GridSpec`], finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField2D {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        assert!(value.is_finite(), "constant field value must be finite");
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Build from a closure over `(row, col)`.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                values.push(f(j, i));
            }
        }
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.index(row, col)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Elementwise map; fails if the map produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn dot(&self, other: &ScalarField2D) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub(crate) fn check_same_grid(&self, other: &ScalarField2D, what: &str) -> Result<()> {
        if self.grid.same_shape(&other.grid) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.grid.nx(),
                self.grid.ny(),
                other.grid.nx(),
                other.grid.ny()
            )))
        }
    }
}

/// Acoustic coefficients: sound speed `c` (m/s) and mass density `rho`
/// (kg/m³) on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    c: ScalarField2D,
    rho: ScalarField2D,
}

impl Medium {
    pub fn new(c: ScalarField2D, rho: ScalarField2D) -> Result<Self> {
        c.check_same_grid(&rho, "medium c/rho")?;
        if c.grid().dx() != rho.grid().dx() {
            return Err(Error::InvalidMedium("c and rho grids differ in dx".into()));
        }
        if let Some(i) = c.values().iter().position(|&v| v <= 0.0) {
            return Err(Error::InvalidMedium(format!("c[{i}] = {} is not positive", c.values()[i])));
        }
        if let Some(i) = rho.values().iter().position(|&v| v <= 0.0) {
            return Err(Error::InvalidMedium(format!(
                "rho[{i}] = {} is not positive",
                rho.values()[i]
            )));
        }
        Ok(Self { c, rho })
    }

    /// Medium with unit density everywhere.
    pub fn with_unit_density(c: ScalarField2D) -> Result<Self> {
        let rho = ScalarField2D::constant(*c.grid(), 1.0);
        Self::new(c, rho)
    }

    pub fn uniform(grid: GridSpec, c: f64) -> Result<Self> {
        Self::with_unit_density(ScalarField2D::constant(grid, c))
    }

    pub fn c(&self) -> &ScalarField2D {
        &self.c
    }

    pub fn rho(&self) -> &ScalarField2D {
        &self.rho
    }

    pub fn grid(&self) -> &GridSpec {
        self.c.grid()
    }

    pub fn c_max(&self) -> f64 {
        self.c.max()
    }
}
