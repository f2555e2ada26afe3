use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::layers::{BatchNormParams, Tensor};
use super::{forward_tensor, pack_inputs, srnet_backward, Mode, SRNetParams, StageInput, StageWeights};
use crate::adjoint::{self, ForwardOperator};
use crate::error::{Error, Result};
use crate::field::{GridSpec, Medium, ScalarField2D};
use crate::phantom::{PhantomSample, BACKGROUND, C_MAX, C_MIN};
use crate::sim::{SensorArray, SensorData, SimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of `|Δc|` (m/s) against `|Δp0|` in the loss.
    pub c_loss_weight: f64,
    /// The network sees `c / c_scale` and emits speeds in the same units.
    pub c_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            epochs: 5,
            c_loss_weight: 1e-3,
            c_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps < 0.0 {
            return bad("adam_eps must be >= 0");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 (batch statistics)");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.c_scale > 0.0 && self.c_scale.is_finite()) {
            return bad("c_scale must be positive");
        }
        Ok(())
    }
}

/// First and second moments for every trainable array, plus the step
/// count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &SRNetParams) -> Self {
        let mut p = params.clone();
        let shapes: Vec<usize> = p
            .tensors_mut()
            .into_iter()
            .filter(|(_, t)| *t)
            .map(|(v, _)| v.len())
            .collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `theta` at step `t ≥ 1`.
pub fn adam_update(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &TrainConfig) {
    let b1t = 1.0 - cfg.beta1.powi(t as i32);
    let b2t = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..theta.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mh = m[i] / b1t;
        let vh = v[i] / b2t;
        theta[i] -= cfg.lr * mh / (vh.sqrt() + cfg.adam_eps);
    }
}

/// Advance `state.t` and update every trainable array of `params`.
pub fn adam_step(params: &mut SRNetParams, grads: &SRNetParams, state: &mut AdamState, cfg: &TrainConfig) {
    state.t += 1;
    let mut g = grads.clone();
    let gs: Vec<&mut Vec<f64>> = g.tensors_mut().into_iter().filter(|(_, t)| *t).map(|(v, _)| v).collect();
    let ps: Vec<&mut Vec<f64>> = params.tensors_mut().into_iter().filter(|(_, t)| *t).map(|(v, _)| v).collect();
    for (k, (p, g)) in ps.into_iter().zip(gs).enumerate() {
        adam_update(p, g, &mut state.m[k], &mut state.v[k], state.t, cfg);
    }
}

fn clamp_speed(c: &ScalarField2D) -> Result<ScalarField2D> {
    c.map(|v| v.clamp(C_MIN, C_MAX))
}

/// `-∇_{p0} F` at `(p0, c)`. The solver sees `c` clamped to the physical
/// range so the shared time step stays stable.
fn neg_gradient(
    g: &SensorData,
    p0: &ScalarField2D,
    c: &ScalarField2D,
    sim: &SimConfig,
    sensors: &SensorArray,
) -> Result<ScalarField2D> {
    let op = ForwardOperator::new(Medium::with_unit_density(clamp_speed(c)?)?, sensors.clone(), sim.clone())?;
    adjoint::grad_p0(&op, p0, g)?.map(|v| -v)
}

fn initial_iterate(grid: GridSpec) -> (ScalarField2D, ScalarField2D) {
    (ScalarField2D::zeros(grid), ScalarField2D::constant(grid, BACKGROUND.1))
}

/// Scale the speed channel into network units.
fn to_network(mut x: Tensor, c_scale: f64, c_channel: usize) -> Tensor {
    if c_scale != 1.0 {
        let p = x.plane();
        let l = x.sample_len();
        for i in 0..x.n {
            let o = i * l + c_channel * p;
            x.data[o..o + p].iter_mut().for_each(|v| *v /= c_scale);
        }
    }
    x
}

fn apply_stage(params: &SRNetParams, input: &StageInput, c_scale: f64) -> Result<(ScalarField2D, ScalarField2D)> {
    let x = to_network(pack_inputs(std::slice::from_ref(input))?, c_scale, 2);
    let (y, _) = forward_tensor(params, &x, Mode::Infer)?;
    let grid = *input.p0.grid();
    Ok((
        ScalarField2D::new(grid, y.channel(0, 0).to_vec())?,
        ScalarField2D::new(grid, y.channel(0, 1).iter().map(|v| v * c_scale).collect())?,
    ))
}

/// Result of the unrolled reconstruction.
#[derive(Debug, Clone)]
pub struct DlReconstruction {
    pub p0: ScalarField2D,
    pub c: ScalarField2D,
    /// `(p0, c)` after each stage.
    pub iterates: Vec<(ScalarField2D, ScalarField2D)>,
}

/// Unrolled reconstruction: starting from `p0 = 0`, `c = 1500`, each stage
/// recomputes `-∇_{p0} F` with the current speed estimate and applies its
/// network. The speed gradient is never formed.
pub fn reconstruct_dl(
    g: &SensorData,
    weights: &StageWeights,
    sim: &SimConfig,
    sensors: &SensorArray,
) -> Result<DlReconstruction> {
    if weights.stages.is_empty() {
        return Err(Error::InvalidConfig("weights hold no stages".into()));
    }
    let (mut p, mut c) = initial_iterate(sim.grid);
    let mut iterates = Vec::with_capacity(weights.stages.len());
    for params in &weights.stages {
        let neg_grad = neg_gradient(g, &p, &c, sim, sensors)?;
        let (pn, cn) = apply_stage(params, &StageInput { p0: p, neg_grad, c }, weights.c_scale)?;
        iterates.push((pn.clone(), cn.clone()));
        p = pn;
        c = cn;
    }
    Ok(DlReconstruction { p0: p, c, iterates })
}

/// Inputs and targets for training one stage.
#[derive(Debug, Clone)]
pub struct StageData {
    pub inputs: Vec<StageInput>,
    /// Ground truth `(p0, c)` per sample.
    pub targets: Vec<(ScalarField2D, ScalarField2D)>,
}

/// Stage-`k` inputs for every sample, `k = prior.stages.len()`: run the
/// frozen prior stages from the initial iterate, then take the fresh
/// gradient at the resulting point.
pub fn stage_inputs(samples: &[PhantomSample], prior: &StageWeights, sim: &SimConfig) -> Result<StageData> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let sensors = crate::sim::sensor_layout(&sim.grid);
    let inputs = samples
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let g = s.g.as_ref().ok_or_else(|| {
                Error::InvalidConfig(format!("sample {index} has no simulated data"))
            })?;
            let (mut p, mut c) = initial_iterate(sim.grid);
            for params in &prior.stages {
                let neg_grad = neg_gradient(g, &p, &c, sim, &sensors)?;
                (p, c) = apply_stage(params, &StageInput { p0: p, neg_grad, c }, prior.c_scale)?;
            }
            let neg_grad = neg_gradient(g, &p, &c, sim, &sensors)?;
            Ok(StageInput { p0: p, neg_grad, c })
        })
        .collect::<Result<Vec<_>>>()?;
    let targets = samples.iter().map(|s| (s.p0.clone(), s.c.clone())).collect();
    Ok(StageData { inputs, targets })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch (batch-statistics forward).
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

fn pack_targets(targets: &[&(ScalarField2D, ScalarField2D)], c_scale: f64) -> Tensor {
    let g = *targets[0].0.grid();
    let mut t = Tensor::zeros(targets.len(), 2, g.ny(), g.nx());
    let p = t.plane();
    for (i, (p0, c)) in targets.iter().enumerate() {
        t.data[2 * i * p..(2 * i + 1) * p].copy_from_slice(p0.values());
        t.data[(2 * i + 1) * p..(2 * i + 2) * p]
            .iter_mut()
            .zip(c.values())
            .for_each(|(d, v)| *d = v / c_scale);
    }
    t
}

/// Mini-batches of a seeded permutation; a trailing singleton joins the
/// previous batch (normalization needs two samples).
fn batches(n: usize, size: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// Running statistics over the whole training set: each normalization
/// layer gets the population mean and unbiased variance of its input under
/// the (already finalized) earlier layers.
fn finalize_bn(params: &mut SRNetParams, data: &StageData, c_scale: f64, batch: usize) -> Result<()> {
    // Chan et al. merge of per-batch (count, mean, M2).
    struct Acc {
        n: f64,
        mean: Vec<f64>,
        m2: Vec<f64>,
    }
    impl Acc {
        fn new(c: usize) -> Self {
            Self {
                n: 0.0,
                mean: vec![0.0; c],
                m2: vec![0.0; c],
            }
        }
        fn add(&mut self, x: &Tensor) {
            let (m, v) = BatchNormParams::batch_stats(x);
            let nb = (x.n * x.plane()) as f64;
            for ch in 0..m.len() {
                let d = m[ch] - self.mean[ch];
                let tot = self.n + nb;
                self.mean[ch] += d * nb / tot;
                self.m2[ch] += v[ch] * nb + d * d * self.n * nb / tot;
            }
            self.n += nb;
        }
        fn store(&self, bn: &mut BatchNormParams) {
            bn.running_mean.clone_from(&self.mean);
            bn.running_var = self.m2.iter().map(|q| q / (self.n - 1.0).max(1.0)).collect();
        }
    }
    let chunks: Vec<Vec<usize>> = (0..data.inputs.len())
        .collect::<Vec<_>>()
        .chunks(batch)
        .map(<[usize]>::to_vec)
        .collect();
    let pack = |idx: &[usize]| -> Result<Tensor> {
        let sel: Vec<StageInput> = idx.iter().map(|&i| data.inputs[i].clone()).collect();
        Ok(to_network(pack_inputs(&sel)?, c_scale, 2))
    };
    let mut acc = Acc::new(params.fuse_bn.channels());
    for idx in &chunks {
        acc.add(&fused_input(params, &pack(idx)?));
    }
    acc.store(&mut params.fuse_bn);
    let mut accs = [Acc::new(params.heads[0].bn.channels()), Acc::new(params.heads[1].bn.channels())];
    for idx in &chunks {
        let x = pack(idx)?;
        let normed = params.fuse_bn.forward_infer(&fused_input(params, &x));
        let mut r3 = params.fuse1.forward(&normed);
        r3.relu_inplace();
        let mut f = params.fuse2.forward(&r3);
        f.relu_inplace();
        for (k, a) in accs.iter_mut().enumerate() {
            a.add(&params.heads[k].conv1.forward(&f));
        }
    }
    for (k, a) in accs.iter().enumerate() {
        a.store(&mut params.heads[k].bn);
    }
    Ok(())
}

/// Concatenated extraction features (input of the fusion normalization).
fn fused_input(params: &SRNetParams, x: &Tensor) -> Tensor {
    let parts = x.split_channels(&[1, 1, 1]);
    let outs: Vec<Tensor> = params
        .extract
        .iter()
        .zip(&parts)
        .map(|(b, x)| {
            let mut r1 = b.conv1.forward(x);
            r1.relu_inplace();
            let mut r2 = b.conv2.forward(&r1);
            r2.relu_inplace();
            r2
        })
        .collect();
    Tensor::concat_channels(&outs.iter().collect::<Vec<_>>())
}

/// Train stage `k = prior.stages.len()` on precomputed stage data.
pub fn train_stage_on(data: &StageData, cfg: &TrainConfig, seed: u64) -> Result<(SRNetParams, TrainReport)> {
    cfg.validate()?;
    let n = data.inputs.len();
    if n < 2 {
        return Err(Error::InvalidConfig("training needs at least two samples".into()));
    }
    let mut params = SRNetParams::init(seed);
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5348_5546_464c_4521);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let c_weight = cfg.c_loss_weight * cfg.c_scale;
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for idx in batches(n, cfg.batch_size, &mut rng) {
            let sel: Vec<StageInput> = idx.iter().map(|&i| data.inputs[i].clone()).collect();
            let x = to_network(pack_inputs(&sel)?, cfg.c_scale, 2);
            let tg: Vec<&(ScalarField2D, ScalarField2D)> = idx.iter().map(|&i| &data.targets[i]).collect();
            let y = pack_targets(&tg, cfg.c_scale);
            let (loss, grads, cache) = srnet_backward(&params, &x, &y, c_weight)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("training loss became {loss}")));
            }
            total += loss * idx.len() as f64;
            adam_step(&mut params, &grads, &mut adam, cfg);
            let count = x.n * x.plane();
            let [f, h0, h1] = cache.bn_caches();
            params.fuse_bn.update_running(f, count);
            params.heads[0].bn.update_running(h0, count);
            params.heads[1].bn.update_running(h1, count);
        }
        epoch_losses.push(total / n as f64);
    }
    finalize_bn(&mut params, data, cfg.c_scale, cfg.batch_size)?;
    Ok((
        params,
        TrainReport {
            epoch_losses,
            steps: adam.t,
        },
    ))
}

/// Greedy stage-wise training of stage `k`: `prior` must hold exactly the
/// `k` earlier stages, which stay frozen.
pub fn train_stage(
    k: usize,
    samples: &[PhantomSample],
    prior: &StageWeights,
    cfg: &TrainConfig,
    sim: &SimConfig,
    seed: u64,
) -> Result<(SRNetParams, TrainReport)> {
    if prior.stages.len() != k {
        return Err(Error::InvalidConfig(format!(
            "stage {k} needs {k} trained prior stages, found {}",
            prior.stages.len()
        )));
    }
    if prior.c_scale != cfg.c_scale {
        return Err(Error::InvalidConfig("c_scale differs from the prior stages".into()));
    }
    let data = stage_inputs(samples, prior, sim)?;
    train_stage_on(&data, cfg, seed)
}
