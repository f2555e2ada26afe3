//! Simplified Shepp–Logan phantoms and simulated datasets.
//!
//! A phantom is six nested ellipses. Region 2 (the outer shell) and region 6
//! have fixed geometry; regions 1, 3, 4 and 5 get a random centre offset and
//! axis scale from a seeded ChaCha20 stream, so a `(grid, seed, omit)` triple
//! always produces the same sample on every platform.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{GridSpec, Medium, ScalarField2D};
use crate::patf;
use crate::sim::{self, parse_key_values, SensorData, SimConfig};

pub use crate::sim::sensor_layout;

/// `(p0, c)` for regions 1..=6.
pub const REGION_TABLE: [(f64, f64); 6] = [
    (0.0, 1480.0),
    (0.2, 1800.0),
    (0.4, 1530.0),
    (0.6, 1520.0),
    (0.8, 2600.0),
    (1.0, 3198.0),
];

/// Values outside the phantom: no absorber, water-like speed.
pub const BACKGROUND: (f64, f64) = (0.0, 1500.0);
pub const C_MIN: f64 = 1480.0;
pub const C_MAX: f64 = 3198.0;

const PAINT_ORDER: [u8; 6] = [2, 1, 3, 4, 5, 6];
const RANDOMIZED: [u8; 4] = [1, 3, 4, 5];
const CENTER_JITTER: f64 = 0.15;
const SCALE_RANGE: (f64, f64) = (0.7, 1.3);
const MAX_ATTEMPTS: usize = 100;

/// Table row for a region index in `1..=6`.
pub fn region_values(index: u8) -> Result<(f64, f64)> {
    match index {
        1..=6 => Ok(REGION_TABLE[index as usize - 1]),
        _ => Err(Error::InvalidConfig(format!("region index {index} outside 1..=6"))),
    }
}

/// Values for a label (0 = background).
fn label_values(label: u8) -> (f64, f64) {
    if label == 0 {
        BACKGROUND
    } else {
        REGION_TABLE[label as usize - 1]
    }
}

/// Ellipse in cell units; `cx` runs along columns, `cy` along rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.a;
        let v = (-s * dx + c * dy) / self.b;
        u * u + v * v <= 1.0
    }

    /// Whether the whole of `self` lies inside `outer` (boundary sampled
    /// at 128 points).
    fn inside(&self, outer: &Ellipse) -> bool {
        let (s, c) = self.theta.sin_cos();
        (0..128).all(|k| {
            let t = k as f64 * std::f64::consts::TAU / 128.0;
            let (u, v) = (self.a * t.cos(), self.b * t.sin());
            outer.contains(self.cx + c * u - s * v, self.cy + s * u + c * v)
        })
    }
}

/// Nominal geometry in units of the half-width (x) and half-height (y) of
/// the grid, centred on the grid centre, y pointing down.
fn nominal(region: u8) -> (f64, f64, f64, f64, f64) {
    let deg = std::f64::consts::PI / 180.0;
    match region {
        2 => (0.0, 0.0, 0.72, 0.92, 0.0),
        1 => (0.0, 0.02, 0.60, 0.80, 0.0),
        3 => (0.24, 0.05, 0.12, 0.30, -18.0 * deg),
        4 => (-0.24, 0.05, 0.15, 0.38, 18.0 * deg),
        5 => (0.0, -0.42, 0.22, 0.20, 0.0),
        6 => (0.0, 0.60, 0.14, 0.10, 0.0),
        _ => unreachable!("regions are 1..=6"),
    }
}

fn nominal_ellipse(grid: &GridSpec, region: u8) -> Ellipse {
    let (hx, hy) = (grid.nx() as f64 / 2.0, grid.ny() as f64 / 2.0);
    let (x, y, a, b, theta) = nominal(region);
    Ellipse {
        cx: hx + x * hx,
        cy: hy + y * hy,
        a: a * hx,
        b: b * hy,
        theta,
    }
}

/// Geometry of one phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub grid: GridSpec,
    pub seed: u64,
    /// Indexed by region - 1.
    pub ellipses: [Ellipse; 6],
    pub omit_regions: BTreeSet<u8>,
}

impl PhantomSpec {
    pub fn draw(grid: GridSpec, seed: u64, omit_regions: &BTreeSet<u8>) -> Result<Self> {
        if grid.nx() < 32 || grid.ny() < 32 {
            return Err(Error::InvalidGrid(format!(
                "phantoms need at least 32x32 cells, got {}x{}",
                grid.nx(),
                grid.ny()
            )));
        }
        if let Some(&r) = omit_regions.iter().find(|&&r| !(1..=6).contains(&r)) {
            return Err(Error::InvalidConfig(format!("cannot omit region {r}")));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let outer = nominal_ellipse(&grid, 2);
        let mut ellipses = [outer; 6];
        for region in 1..=6u8 {
            let base = nominal_ellipse(&grid, region);
            ellipses[region as usize - 1] = if RANDOMIZED.contains(&region) {
                randomize(&base, &outer, &mut rng)
            } else {
                base
            };
        }
        Ok(Self {
            grid,
            seed,
            ellipses,
            omit_regions: omit_regions.clone(),
        })
    }

    /// Region label per pixel (0 outside), painted in the fixed order.
    pub fn rasterize(&self) -> Vec<u8> {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut labels = vec![0u8; nx * ny];
        for region in PAINT_ORDER {
            if self.omit_regions.contains(&region) {
                continue;
            }
            let e = &self.ellipses[region as usize - 1];
            for j in 0..ny {
                for i in 0..nx {
                    if e.contains(i as f64 + 0.5, j as f64 + 0.5) {
                        labels[j * nx + i] = region;
                    }
                }
            }
        }
        labels
    }
}

fn randomize(base: &Ellipse, outer: &Ellipse, rng: &mut ChaCha20Rng) -> Ellipse {
    let mut draw = || Ellipse {
        cx: base.cx + rng.gen_range(-CENTER_JITTER..=CENTER_JITTER) * outer.a,
        cy: base.cy + rng.gen_range(-CENTER_JITTER..=CENTER_JITTER) * outer.b,
        a: base.a * rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1),
        b: base.b * rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1),
        theta: base.theta,
    };
    let mut last = draw();
    for _ in 1..MAX_ATTEMPTS {
        if last.inside(outer) {
            return last;
        }
        last = draw();
    }
    // Pull the last draw toward the outer centre until it fits.
    while !last.inside(outer) {
        last.cx = outer.cx + 0.9 * (last.cx - outer.cx);
        last.cy = outer.cy + 0.9 * (last.cy - outer.cy);
        last.a *= 0.9;
        last.b *= 0.9;
    }
    last
}

#[derive(Debug, Clone)]
pub struct PhantomSample {
    pub spec: PhantomSpec,
    pub labels: Vec<u8>,
    pub p0: ScalarField2D,
    pub c: ScalarField2D,
    pub g: Option<SensorData>,
}

impl PhantomSample {
    pub fn medium(&self) -> Result<Medium> {
        Medium::with_unit_density(self.c.clone())
    }
}

pub fn generate_phantom(grid: GridSpec, seed: u64, omit_regions: &BTreeSet<u8>) -> Result<PhantomSample> {
    let spec = PhantomSpec::draw(grid, seed, omit_regions)?;
    let labels = spec.rasterize();
    let nx = grid.nx();
    let p0 = ScalarField2D::from_fn(grid, |j, i| label_values(labels[j * nx + i]).0)?;
    let c = ScalarField2D::from_fn(grid, |j, i| label_values(labels[j * nx + i]).1)?;
    Ok(PhantomSample {
        spec,
        labels,
        p0,
        c,
        g: None,
    })
}

/// Per-sample seed: SplitMix64 of `master + index + 1`. Samples depend only
/// on their index, never on scheduling.
pub fn sample_seed(master: u64, index: usize) -> u64 {
    let mut z = master.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub grid: GridSpec,
    pub seed: u64,
    pub n_steps: usize,
    pub cfl: f64,
    pub pml_cells: usize,
    pub omit_regions: BTreeSet<u8>,
}

impl DatasetSpec {
    pub fn new(n_train: usize, n_test: usize, grid: GridSpec, seed: u64, n_steps: usize) -> Self {
        Self {
            n_train,
            n_test,
            grid,
            seed,
            n_steps,
            cfl: sim::DEFAULT_CFL,
            pml_cells: sim::DEFAULT_PML_CELLS,
            omit_regions: BTreeSet::new(),
        }
    }

    /// Shared solver settings, stable for any speed up to [`C_MAX`].
    pub fn sim_config(&self) -> Result<SimConfig> {
        SimConfig::for_speed(self.grid, C_MAX, self.n_steps, self.cfl, self.pml_cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub split: Split,
    pub seed: u64,
    pub dir: String,
}

/// Contents of `manifest.txt`; sample paths are relative to `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub spec: DatasetSpec,
    pub config: SimConfig,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn plan(spec: &DatasetSpec, root: &Path) -> Result<Self> {
        let config = spec.sim_config()?;
        let entries = (0..spec.n_train + spec.n_test)
            .map(|index| ManifestEntry {
                index,
                split: if index < spec.n_train { Split::Train } else { Split::Test },
                seed: sample_seed(spec.seed, index),
                dir: format!("sample_{index:05}"),
            })
            .collect();
        Ok(Self {
            root: root.to_path_buf(),
            spec: spec.clone(),
            config,
            entries,
        })
    }

    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        let _ = writeln!(out, "n_train = {}", s.n_train);
        let _ = writeln!(out, "n_test = {}", s.n_test);
        let _ = writeln!(out, "master_seed = {}", s.seed);
        let _ = writeln!(out, "grid = {}x{}", s.grid.nx(), s.grid.ny());
        let omit: Vec<String> = s.omit_regions.iter().map(u8::to_string).collect();
        let _ = writeln!(out, "omit_regions = {}", omit.join(","));
        for (k, v) in self.config.to_pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        for e in &self.entries {
            let _ = writeln!(out, "{} = {} {} {}", e.dir, e.split.as_str(), e.seed, e.dir);
        }
        out
    }

    pub fn from_text(text: &str, root: &Path) -> Result<Self> {
        let map = parse_key_values(text)?;
        let get = |k: &str| {
            map.get(k)
                .ok_or_else(|| Error::Malformed(format!("manifest lacks `{k}`")))
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|e| Error::Malformed(format!("manifest `{k}`: {e}")))
        };
        let config = SimConfig::from_map(&map)?;
        let omit_regions = get("omit_regions")?
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<u8>().map_err(|e| Error::Malformed(format!("omit_regions: {e}"))))
            .collect::<Result<BTreeSet<u8>>>()?;
        let spec = DatasetSpec {
            n_train: int("n_train")? as usize,
            n_test: int("n_test")? as usize,
            grid: config.grid,
            seed: int("master_seed")?,
            n_steps: config.n_steps,
            cfl: config.cfl,
            pml_cells: config.pml_cells,
            omit_regions,
        };
        let mut entries = Vec::new();
        for (k, v) in map.iter().filter(|(k, _)| k.starts_with("sample_")) {
            let parts: Vec<&str> = v.split_whitespace().collect();
            let [split, seed, dir] = parts[..] else {
                return Err(Error::Malformed(format!("manifest entry `{k}`")));
            };
            let index = k["sample_".len()..]
                .parse()
                .map_err(|e| Error::Malformed(format!("manifest entry `{k}`: {e}")))?;
            let split = match split {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(Error::Malformed(format!("unknown split `{other}`"))),
            };
            let seed = seed
                .parse()
                .map_err(|e| Error::Malformed(format!("manifest entry `{k}`: {e}")))?;
            entries.push(ManifestEntry {
                index,
                split,
                seed,
                dir: dir.to_string(),
            });
        }
        entries.sort_by_key(|e| e.index);
        if entries.len() != spec.n_train + spec.n_test {
            return Err(Error::Malformed(format!(
                "manifest lists {} samples, header says {}",
                entries.len(),
                spec.n_train + spec.n_test
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            spec,
            config,
            entries,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_text(&text, dir)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn sample_dir(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.dir)
    }

    /// Rebuild one sample from its seed (phantom and simulated data).
    pub fn regenerate(&self, entry: &ManifestEntry) -> Result<PhantomSample> {
        build_sample(&self.spec, &self.config, entry.seed).map_err(|e| Error::Sample {
            index: entry.index,
            source: Box::new(e),
        })
    }

    pub fn read_sample(&self, entry: &ManifestEntry) -> Result<PhantomSample> {
        let wrap = |e| Error::Sample {
            index: entry.index,
            source: Box::new(e),
        };
        let dir = self.sample_dir(entry);
        let grid = self.spec.grid;
        let dx = grid.dx();
        let p0 = patf::read_field(&dir.join("p0.patf"), dx).map_err(wrap)?;
        let c = patf::read_field(&dir.join("c.patf"), dx).map_err(wrap)?;
        let labels: Vec<u8> = patf::read_field(&dir.join("labels.patf"), dx)
            .map_err(wrap)?
            .values()
            .iter()
            .map(|&v| v as u8)
            .collect();
        let g = patf::read_array(&dir.join("g.patf")).map_err(wrap)?;
        let g = SensorData::new(g.rows, g.cols, g.values, self.config.dt).map_err(wrap)?;
        let spec = PhantomSpec::draw(grid, entry.seed, &self.spec.omit_regions).map_err(wrap)?;
        Ok(PhantomSample {
            spec,
            labels,
            p0,
            c,
            g: Some(g),
        })
    }
}

fn build_sample(spec: &DatasetSpec, config: &SimConfig, seed: u64) -> Result<PhantomSample> {
    let mut sample = generate_phantom(spec.grid, seed, &spec.omit_regions)?;
    let sensors = sensor_layout(&spec.grid);
    let g = sim::simulate_forward(&sample.medium()?, &sample.p0, &sensors, config)?;
    sample.g = Some(g);
    Ok(sample)
}

pub fn write_sample(dir: &Path, sample: &PhantomSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    patf::write_field(&dir.join("p0.patf"), &sample.p0)?;
    patf::write_field(&dir.join("c.patf"), &sample.c)?;
    let labels = ScalarField2D::new(*sample.p0.grid(), sample.labels.iter().map(|&l| l as f64).collect())?;
    patf::write_field(&dir.join("labels.patf"), &labels)?;
    if let Some(g) = &sample.g {
        patf::write_array(&dir.join("g.patf"), g.n_sensors(), g.n_steps(), g.samples())?;
    }
    Ok(())
}

/// Generate, simulate and write every sample, then `manifest.txt`.
/// Samples are produced in parallel; each depends only on its own seed.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<Manifest> {
    let manifest = Manifest::plan(spec, out_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    manifest.entries.par_iter().try_for_each(|entry| {
        let sample = manifest.regenerate(entry)?;
        write_sample(&manifest.sample_dir(entry), &sample).map_err(|e| Error::Sample {
            index: entry.index,
            source: Box::new(e),
        })
    })?;
    let path = out_dir.join("manifest.txt");
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
