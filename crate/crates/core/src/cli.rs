//! The `pat-recon` command line. Every command writes `run.txt` next to its
//! outputs with the resolved flags and a command line that reproduces them.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::classical::{reconstruct_classical, ReconConfig, Regularizer};
use crate::error::{Error, Result};
use crate::field::{GridSpec, Medium, ScalarField2D};
use crate::metrics::{compute_mae, export_pgm, encode_pgm, MetricsRecord};
use crate::patf;
use crate::phantom::{self, DatasetSpec, Manifest, Split, C_MAX, C_MIN};
use crate::selftest::{self, Check};
use crate::sim::{self, sensor_layout, SensorData, SimConfig};
use crate::srnet::{self, StageWeights, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "pat-recon", version, about = "Joint reconstruction of initial pressure and sound speed")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one numerical phantom.
    Phantom(PhantomArgs),
    /// Generate, simulate and store a seeded train/test dataset.
    Dataset(DatasetArgs),
    /// Forward-simulate sensor data for given p0 and c maps.
    Simulate(SimulateArgs),
    /// Proximal-gradient joint reconstruction.
    ReconClassical(ReconClassicalArgs),
    /// Train the unrolled SR-Net stages greedily.
    Train(TrainArgs),
    /// Unrolled learned reconstruction with trained stages.
    ReconDl(ReconDlArgs),
    /// Mean absolute errors against ground truth.
    Eval(EvalArgs),
    /// Built-in numerical checks.
    Selftest(SelftestArgs),
    /// Render a stored map as an 8-bit PGM.
    ExportPgm(ExportPgmArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Region index to leave out (repeatable).
    #[arg(long = "omit-region")]
    pub omit_region: Vec<u8>,
    #[arg(long, default_value_t = sim::DEFAULT_DX)]
    pub dx: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long, default_value_t = 5120)]
    pub train: usize,
    #[arg(long, default_value_t = 1024)]
    pub test: usize,
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = sim::DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = sim::DEFAULT_CFL)]
    pub cfl: f64,
    #[arg(long = "pml-cells", default_value_t = sim::DEFAULT_PML_CELLS)]
    pub pml_cells: usize,
    #[arg(long, default_value_t = sim::DEFAULT_DX)]
    pub dx: f64,
    #[arg(long = "omit-region")]
    pub omit_region: Vec<u8>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub p0: PathBuf,
    #[arg(long)]
    pub c: PathBuf,
    /// `key = value` solver settings (a dataset `manifest.txt` also works).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegArg {
    None,
    Tv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReconClassicalArgs {
    /// A `g.patf` file, a sample directory, or a dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Solver settings; searched next to the data when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    pub beta: f64,
    #[arg(long, value_enum, default_value_t = RegArg::Tv)]
    pub reg: RegArg,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long = "tv-iters", default_value_t = 20)]
    pub tv_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long = "freeze-c", default_value_t = false, action = clap::ArgAction::Set)]
    pub freeze_c: bool,
    /// Constant initial sound speed in m/s.
    #[arg(long = "init-c", default_value_t = phantom::BACKGROUND.1)]
    pub init_c: f64,
    /// Store every k-th solver state for the speed gradient (0 = full history).
    #[arg(long = "checkpoint-every", default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Split reconstructed when `--data` is a dataset.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "c-loss-weight", default_value_t = 1e-3)]
    pub c_loss_weight: f64,
    #[arg(long = "c-scale", default_value_t = 1.0)]
    pub c_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconDlArgs {
    /// A `g.patf` file, a sample directory, or a dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reconstruction directory (one sample, or `sample_*` subdirectories).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth directory laid out like `--pred` (e.g. a dataset).
    #[arg(long)]
    pub truth: PathBuf,
    /// One row per stored iterate instead of the final estimate only.
    #[arg(long = "per-iter")]
    pub per_iter: bool,
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Adjoint,
    Gradcheck,
    Energy,
    All,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `run.txt` and `selftest.txt`; nothing is written
    /// when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportPgmArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub lo: f64,
    #[arg(long)]
    pub hi: f64,
    #[arg(long)]
    pub out: PathBuf,
}

enum FlagValue {
    One(String),
    Many(Vec<String>),
    Switch,
}

/// Resolved flags of one invocation, in command-line order.
struct RunRecord {
    command: &'static str,
    flags: Vec<(&'static str, FlagValue)>,
}

impl RunRecord {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            flags: Vec::new(),
        }
    }

    fn flag(mut self, name: &'static str, value: impl ToString) -> Self {
        self.flags.push((name, FlagValue::One(value.to_string())));
        self
    }

    fn path(self, name: &'static str, p: &Path) -> Self {
        self.flag(name, p.display())
    }

    fn repeated(mut self, name: &'static str, values: impl IntoIterator<Item = impl ToString>) -> Self {
        let v = values.into_iter().map(|v| v.to_string()).collect();
        self.flags.push((name, FlagValue::Many(v)));
        self
    }

    fn switch(mut self, name: &'static str, on: bool) -> Self {
        if on {
            self.flags.push((name, FlagValue::Switch));
        }
        self
    }

    fn render(&self) -> String {
        let quote = |s: &str| {
            if s.is_empty() || s.contains(|c: char| c.is_whitespace() || c == '\'') {
                format!("'{}'", s.replace('\'', r"'\''"))
            } else {
                s.to_string()
            }
        };
        let mut out = String::from("# pat-recon run record\n");
        let _ = writeln!(out, "command = {}", self.command);
        let _ = writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"));
        let mut line = format!("pat-recon {}", self.command);
        for (name, value) in &self.flags {
            match value {
                FlagValue::One(v) => {
                    let _ = writeln!(out, "{name} = {v}");
                    let _ = write!(line, " --{name} {}", quote(v));
                }
                FlagValue::Many(vs) => {
                    let _ = writeln!(out, "{name} = {}", vs.join(","));
                    for v in vs {
                        let _ = write!(line, " --{name} {}", quote(v));
                    }
                }
                FlagValue::Switch => {
                    let _ = writeln!(out, "{name} = true");
                    let _ = write!(line, " --{name}");
                }
            }
        }
        let _ = writeln!(out, "command_line = {line}");
        out
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run.txt");
        fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))
    }
}

fn parent_dir(file: &Path) -> &Path {
    file.parent().unwrap_or(Path::new("."))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SimConfig::from_text(&text)
}

/// One set of measurements to reconstruct.
struct Target {
    id: Option<String>,
    g: SensorData,
}

/// Resolve `--data`: a dataset directory (every sample of `split`), a
/// sample directory or a `g.patf` file. The solver settings come from
/// `--config`, else `sim.txt` or `manifest.txt` beside the data or one
/// level up.
fn load_targets(data: &Path, config: Option<&Path>, split: Split) -> Result<(SimConfig, Vec<Target>)> {
    if data.join("manifest.txt").is_file() {
        let manifest = Manifest::load(data)?;
        let sim = match config {
            Some(p) => read_config(p)?,
            None => manifest.config.clone(),
        };
        let targets = manifest
            .split(split)
            .map(|e| {
                let a = patf::read_array(&manifest.sample_dir(e).join("g.patf"))?;
                Ok(Target {
                    id: Some(e.dir.clone()),
                    g: SensorData::new(a.rows, a.cols, a.values, sim.dt)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok((sim, targets));
    }
    let (dir, file) = if data.is_dir() {
        (data.to_path_buf(), data.join("g.patf"))
    } else {
        (parent_dir(data).to_path_buf(), data.to_path_buf())
    };
    let sim = match config {
        Some(p) => read_config(p)?,
        None => {
            let candidates = [dir.join("sim.txt"), dir.join("manifest.txt"), dir.join("../manifest.txt")];
            let found = candidates.iter().find(|p| p.is_file()).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "no solver settings found near {}; pass --config",
                    data.display()
                ))
            })?;
            read_config(found)?
        }
    };
    let a = patf::read_array(&file)?;
    let g = SensorData::new(a.rows, a.cols, a.values, sim.dt)?;
    Ok((sim, vec![Target { id: None, g }]))
}

fn target_dir(out: &Path, t: &Target) -> PathBuf {
    match &t.id {
        Some(id) => out.join(id),
        None => out.to_path_buf(),
    }
}

fn check_target(sim: &SimConfig, g: &SensorData) -> Result<()> {
    let n = sensor_layout(&sim.grid).len();
    if g.shape() != (n, sim.n_steps) {
        return Err(Error::ShapeMismatch(format!(
            "data is {}x{}, the settings expect {n} sensors x {} steps",
            g.n_sensors(),
            g.n_steps(),
            sim.n_steps
        )));
    }
    Ok(())
}

fn cmd_phantom(a: &PhantomArgs) -> Result<()> {
    let grid = GridSpec::square(a.grid, a.dx)?;
    let omit: BTreeSet<u8> = a.omit_region.iter().copied().collect();
    let s = phantom::generate_phantom(grid, a.seed, &omit)?;
    create_dir(&a.out)?;
    patf::write_field(&a.out.join("p0.patf"), &s.p0)?;
    patf::write_field(&a.out.join("c.patf"), &s.c)?;
    let labels = ScalarField2D::new(grid, s.labels.iter().map(|&l| l as f64).collect())?;
    patf::write_field(&a.out.join("labels.patf"), &labels)?;
    export_pgm(&s.p0, 0.0, 1.0, &a.out.join("p0.pgm"))?;
    export_pgm(&s.c, C_MIN, C_MAX, &a.out.join("c.pgm"))?;
    RunRecord::new("phantom")
        .flag("grid", a.grid)
        .flag("seed", a.seed)
        .repeated("omit-region", &a.omit_region)
        .flag("dx", a.dx)
        .path("out", &a.out)
        .write(&a.out)
}

fn cmd_dataset(a: &DatasetArgs) -> Result<()> {
    let grid = GridSpec::square(a.grid, a.dx)?;
    let mut spec = DatasetSpec::new(a.train, a.test, grid, a.seed, a.steps);
    spec.cfl = a.cfl;
    spec.pml_cells = a.pml_cells;
    spec.omit_regions = a.omit_region.iter().copied().collect();
    let manifest = phantom::generate_dataset(&spec, &a.out)?;
    let path = a.out.join("sim.txt");
    fs::write(&path, manifest.config.to_text()).map_err(|e| Error::io(&path, e))?;
    eprintln!("wrote {} samples to {}", manifest.entries.len(), a.out.display());
    RunRecord::new("dataset")
        .flag("train", a.train)
        .flag("test", a.test)
        .flag("grid", a.grid)
        .flag("seed", a.seed)
        .flag("steps", a.steps)
        .flag("cfl", a.cfl)
        .flag("pml-cells", a.pml_cells)
        .flag("dx", a.dx)
        .repeated("omit-region", &a.omit_region)
        .path("out", &a.out)
        .write(&a.out)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let sim = read_config(&a.config)?;
    let dx = sim.grid.dx();
    let p0 = patf::read_field(&a.p0, dx)?;
    let c = patf::read_field(&a.c, dx)?;
    let medium = Medium::with_unit_density(c)?;
    sim.check_medium(&medium)?;
    let g = sim::simulate_forward(&medium, &p0, &sensor_layout(&sim.grid), &sim)?;
    create_dir(parent_dir(&a.out))?;
    patf::write_array(&a.out, g.n_sensors(), g.n_steps(), g.samples())?;
    RunRecord::new("simulate")
        .path("p0", &a.p0)
        .path("c", &a.c)
        .path("config", &a.config)
        .path("out", &a.out)
        .write(parent_dir(&a.out))
}

fn cmd_recon_classical(a: &ReconClassicalArgs) -> Result<()> {
    let (sim, targets) = load_targets(&a.data, a.config.as_deref(), a.split.into())?;
    let cfg = ReconConfig {
        beta: a.beta,
        reg: match a.reg {
            RegArg::None => Regularizer::None,
            RegArg::Tv => Regularizer::Tv,
        },
        tv_iters: a.tv_iters,
        max_outer: a.iters,
        tol: a.tol,
        freeze_c: a.freeze_c,
        gradient: crate::adjoint::GradientOptions {
            checkpoint_every: (a.checkpoint_every > 0).then_some(a.checkpoint_every),
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.validate()?;
    let sensors = sensor_layout(&sim.grid);
    targets.par_iter().try_for_each(|t| -> Result<()> {
        check_target(&sim, &t.g)?;
        let p_init = ScalarField2D::zeros(sim.grid);
        let c_init = ScalarField2D::constant(sim.grid, a.init_c);
        let r = reconstruct_classical(&t.g, &p_init, &c_init, &cfg, &sim, &sensors)?;
        let dir = target_dir(&a.out, t);
        create_dir(&dir)?;
        patf::write_field(&dir.join("p0.patf"), &r.p0)?;
        patf::write_field(&dir.join("c.patf"), &r.c)?;
        r.trace.write_csv(&dir.join("trace.csv"))?;
        let last = r.trace.rows.last().expect("trace has the initial row");
        eprintln!(
            "{}: {} iterations, F = {:.4e}, stop {:?}",
            t.id.as_deref().unwrap_or("sample"),
            last.iteration,
            last.fidelity,
            r.stop
        );
        Ok(())
    })?;
    let mut rec = RunRecord::new("recon-classical").path("data", &a.data);
    if let Some(c) = &a.config {
        rec = rec.path("config", c);
    }
    rec.flag("beta", a.beta)
        .flag("reg", a.reg.to_possible_value().expect("no skipped variants").get_name())
        .flag("iters", a.iters)
        .flag("tv-iters", a.tv_iters)
        .flag("tol", a.tol)
        .flag("freeze-c", a.freeze_c)
        .flag("init-c", a.init_c)
        .flag("checkpoint-every", a.checkpoint_every)
        .flag("split", a.split.to_possible_value().expect("no skipped variants").get_name())
        .path("out", &a.out)
        .write(&a.out)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    if a.stages == 0 {
        return Err(Error::InvalidConfig("--stages must be at least 1".into()));
    }
    let cfg = TrainConfig {
        lr: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        c_loss_weight: a.c_loss_weight,
        c_scale: a.c_scale,
        ..Default::default()
    };
    cfg.validate()?;
    let manifest = Manifest::load(&a.dataset)?;
    let entries: Vec<_> = manifest.split(Split::Train).collect();
    let samples = entries
        .par_iter()
        .map(|e| manifest.read_sample(e))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&a.out)?;
    let mut weights = StageWeights::new(a.c_scale);
    let mut losses = String::from("stage,epoch,loss\n");
    for k in 0..a.stages {
        let data = srnet::stage_inputs(&samples, &weights, &manifest.config)?;
        let (params, report) = srnet::train_stage_on(&data, &cfg, stage_seed(a.seed, k))?;
        for (e, l) in report.epoch_losses.iter().enumerate() {
            let _ = writeln!(losses, "{k},{},{l:e}", e + 1);
        }
        eprintln!(
            "stage {k}: {} Adam steps, final epoch loss {:.4e}",
            report.steps,
            report.epoch_losses.last().copied().unwrap_or(f64::NAN)
        );
        weights.stages.push(params);
        // keep finished stages on disk while later ones train
        srnet::write_stage_weights(&a.out, &weights)?;
    }
    let path = a.out.join("losses.csv");
    fs::write(&path, losses).map_err(|e| Error::io(&path, e))?;
    RunRecord::new("train")
        .path("dataset", &a.dataset)
        .flag("stages", a.stages)
        .flag("epochs", a.epochs)
        .flag("batch", a.batch)
        .flag("lr", a.lr)
        .flag("seed", a.seed)
        .flag("c-loss-weight", a.c_loss_weight)
        .flag("c-scale", a.c_scale)
        .path("out", &a.out)
        .write(&a.out)
}

/// Initialization seed of stage `k`.
pub fn stage_seed(seed: u64, k: usize) -> u64 {
    phantom::sample_seed(seed ^ 0x5352_4e45_5453_5447, k)
}

fn cmd_recon_dl(a: &ReconDlArgs) -> Result<()> {
    let weights = srnet::read_stage_weights(&a.weights)?;
    let (sim, targets) = load_targets(&a.data, a.config.as_deref(), a.split.into())?;
    let sensors = sensor_layout(&sim.grid);
    targets.par_iter().try_for_each(|t| -> Result<()> {
        check_target(&sim, &t.g)?;
        let r = srnet::reconstruct_dl(&t.g, &weights, &sim, &sensors)?;
        let dir = target_dir(&a.out, t);
        create_dir(&dir)?;
        patf::write_field(&dir.join("p0.patf"), &r.p0)?;
        patf::write_field(&dir.join("c.patf"), &r.c)?;
        for (k, (p, c)) in r.iterates.iter().enumerate() {
            patf::write_field(&dir.join(format!("iter_{}_p0.patf", k + 1)), p)?;
            patf::write_field(&dir.join(format!("iter_{}_c.patf", k + 1)), c)?;
        }
        Ok(())
    })?;
    let mut rec = RunRecord::new("recon-dl").path("data", &a.data);
    if let Some(c) = &a.config {
        rec = rec.path("config", c);
    }
    rec.path("weights", &a.weights)
        .flag("split", a.split.to_possible_value().expect("no skipped variants").get_name())
        .path("out", &a.out)
        .write(&a.out)
}

/// Sample directories under `root`: `root` itself when it holds a
/// `p0.patf`, otherwise its subdirectories that do, sorted by name.
fn sample_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    if root.join("p0.patf").is_file() {
        return Ok(vec![("sample".to_string(), root.to_path_buf())]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.join("p0.patf").is_file() {
            out.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Malformed(format!("no reconstructions under {}", root.display())));
    }
    Ok(out)
}

/// Per-sample MAE rows, following the layout written by `recon-dl` and
/// `recon-classical`.
pub fn evaluate(pred: &Path, truth: &Path, per_iter: bool) -> Result<MetricsRecord> {
    let samples = sample_dirs(pred)?;
    let single = samples.len() == 1 && samples[0].1 == pred;
    // MAE ignores the spacing; any positive value reads the maps
    let dx = 1.0;
    let rows = samples
        .par_iter()
        .map(|(id, dir)| -> Result<Vec<(String, String, f64, f64)>> {
            let tdir = if single { truth.to_path_buf() } else { truth.join(id) };
            let tp = patf::read_field(&tdir.join("p0.patf"), dx)?;
            let tc = patf::read_field(&tdir.join("c.patf"), dx)?;
            let mut iters: Vec<(String, PathBuf, PathBuf)> = Vec::new();
            if per_iter {
                let mut k = 1;
                while dir.join(format!("iter_{k}_p0.patf")).is_file() {
                    iters.push((
                        k.to_string(),
                        dir.join(format!("iter_{k}_p0.patf")),
                        dir.join(format!("iter_{k}_c.patf")),
                    ));
                    k += 1;
                }
            }
            if iters.is_empty() {
                iters.push(("final".into(), dir.join("p0.patf"), dir.join("c.patf")));
            }
            iters
                .into_iter()
                .map(|(label, p, c)| {
                    let mp = compute_mae(&patf::read_field(&p, dx)?, &tp)?;
                    let mc = compute_mae(&patf::read_field(&c, dx)?, &tc)?;
                    Ok((id.clone(), label, mp, mc))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut record = MetricsRecord::default();
    for (id, label, mp, mc) in rows.into_iter().flatten() {
        record.push(id, label, mp, mc);
    }
    Ok(record)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let record = evaluate(&a.pred, &a.truth, a.per_iter)?;
    create_dir(parent_dir(&a.out))?;
    record.write_csv(&a.out)?;
    for s in record.summary() {
        println!(
            "iter {:>5}: MAE(p0) = {:.4e} ± {:.4e}   MAE(c) = {:.4} ± {:.4} m/s   (n = {})",
            s.iter, s.mean_p0, s.std_p0, s.mean_c, s.std_c, s.count
        );
    }
    RunRecord::new("eval")
        .path("pred", &a.pred)
        .path("truth", &a.truth)
        .switch("per-iter", a.per_iter)
        .path("out", &a.out)
        .write(parent_dir(&a.out))
}

fn cmd_selftest(a: &SelftestArgs) -> Result<bool> {
    let mut checks: Vec<Check> = Vec::new();
    if matches!(a.suite, Suite::Adjoint | Suite::All) {
        checks.extend(selftest::adjoint_suite(a.seed)?);
    }
    if matches!(a.suite, Suite::Gradcheck | Suite::All) {
        checks.extend(selftest::gradcheck_suite(a.seed)?);
    }
    if matches!(a.suite, Suite::Energy | Suite::All) {
        checks.extend(selftest::energy_suite(a.seed)?);
    }
    let mut report = String::new();
    for c in &checks {
        let _ = writeln!(report, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    print!("{report}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        let path = out.join("selftest.txt");
        fs::write(&path, &report).map_err(|e| Error::io(&path, e))?;
        RunRecord::new("selftest")
            .flag("suite", a.suite.to_possible_value().expect("no skipped variants").get_name())
            .flag("seed", a.seed)
            .path("out", out)
            .write(out)?;
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn cmd_export_pgm(a: &ExportPgmArgs) -> Result<()> {
    let arr = patf::read_array(&a.input)?;
    let bytes = encode_pgm(arr.rows, arr.cols, &arr.values, a.lo, a.hi)?;
    create_dir(parent_dir(&a.out))?;
    fs::write(&a.out, bytes).map_err(|e| Error::io(&a.out, e))?;
    RunRecord::new("export-pgm")
        .path("in", &a.input)
        .flag("lo", a.lo)
        .flag("hi", a.hi)
        .path("out", &a.out)
        .write(parent_dir(&a.out))
}

/// Run one parsed command; `Ok(false)` means checks ran but failed.
pub fn execute(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Phantom(a) => cmd_phantom(a).map(|_| true),
        Command::Dataset(a) => cmd_dataset(a).map(|_| true),
        Command::Simulate(a) => cmd_simulate(a).map(|_| true),
        Command::ReconClassical(a) => cmd_recon_classical(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::ReconDl(a) => cmd_recon_dl(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Selftest(a) => cmd_selftest(a),
        Command::ExportPgm(a) => cmd_export_pgm(a).map(|_| true),
    }
}

/// Parse `args` (program name first), run, and map the outcome to the exit
/// code: 0 success, 2 usage, 3 data, 4 numerical failure.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
