use crate::error::{Error, Result};
use crate::field::GridSpec;

/// Detector pixels on the boundary of the imaging region, as `(row, col)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorArray {
    grid_nx: usize,
    grid_ny: usize,
    positions: Vec<(usize, usize)>,
}

impl SensorArray {
    pub fn new(grid: &GridSpec, positions: Vec<(usize, usize)>) -> Result<Self> {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut seen = vec![false; grid.len()];
        for &(r, c) in &positions {
            if r >= ny || c >= nx {
                return Err(Error::InvalidConfig(format!("sensor ({r}, {c}) outside the grid")));
            }
            if !(r == 0 || c == 0 || r == ny - 1 || c == nx - 1) {
                return Err(Error::InvalidConfig(format!(
                    "sensor ({r}, {c}) is not on the region boundary"
                )));
            }
            let k = grid.index(r, c);
            if seen[k] {
                return Err(Error::InvalidConfig(format!("duplicate sensor ({r}, {c})")));
            }
            seen[k] = true;
        }
        Ok(Self {
            grid_nx: nx,
            grid_ny: ny,
            positions,
        })
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn fits(&self, grid: &GridSpec) -> bool {
        grid.nx() == self.grid_nx && grid.ny() == self.grid_ny
    }
}

/// Every boundary pixel of the imaging region, clockwise from the top-left
/// corner: top row left to right, right column downward, bottom row right to
/// left, left column upward.
pub fn sensor_layout(grid: &GridSpec) -> SensorArray {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut positions = Vec::with_capacity(2 * nx + 2 * ny - 4);
    positions.extend((0..nx).map(|i| (0, i)));
    positions.extend((1..ny).map(|j| (j, nx - 1)));
    positions.extend((0..nx - 1).rev().map(|i| (ny - 1, i)));
    positions.extend((1..ny - 1).rev().map(|j| (j, 0)));
    SensorArray::new(grid, positions).expect("boundary layout is valid by construction")
}

/// Recorded pressure, `n_sensors × n_steps`, row-major (one row per sensor).
#[derive(Debug, Clone, PartialEq)]
pub struct SensorData {
    n_sensors: usize,
    n_steps: usize,
    samples: Vec<f64>,
    dt: f64,
}

impl SensorData {
    pub fn new(n_sensors: usize, n_steps: usize, samples: Vec<f64>, dt: f64) -> Result<Self> {
        if samples.len() != n_sensors * n_steps {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for {n_sensors}x{n_steps}",
                samples.len()
            )));
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            n_sensors,
            n_steps,
            samples,
            dt,
        })
    }

    pub fn zeros(n_sensors: usize, n_steps: usize, dt: f64) -> Self {
        Self {
            n_sensors,
            n_steps,
            samples: vec![0.0; n_sensors * n_steps],
            dt,
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Time series of one detector.
    pub fn trace(&self, sensor: usize) -> &[f64] {
        &self.samples[sensor * self.n_steps..(sensor + 1) * self.n_steps]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_sensors, self.n_steps)
    }

    pub fn dot(&self, other: &SensorData) -> f64 {
        self.samples.iter().zip(&other.samples).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self - other`, checking shapes.
    pub fn sub(&self, other: &SensorData) -> Result<SensorData> {
        self.check_shape(other.n_sensors, other.n_steps)?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a - b)
            .collect();
        SensorData::new(self.n_sensors, self.n_steps, samples, self.dt)
    }

    pub(crate) fn check_shape(&self, n_sensors: usize, n_steps: usize) -> Result<()> {
        if self.n_sensors == n_sensors && self.n_steps == n_steps {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "sensor data {}x{} where {n_sensors}x{n_steps} was expected",
                self.n_sensors, self.n_steps
            )))
        }
    }
}
