//! SR-Net: the learned update `(p0, -∇F, c) -> (p0', c')`.
//!
//! Three extraction branches (conv-ReLU-conv-ReLU, 32 channels each) are
//! concatenated, batch-normalized and fused (conv-ReLU 64, conv-ReLU 32).
//! Two heads (conv 16, BN, conv 1) add their skip input — `p0` for the
//! pressure head, `c` for the speed head — and end in a ReLU, so both
//! outputs are nonnegative.

mod gradcheck;
pub mod layers;
mod train;
mod weights;

pub use gradcheck::{finite_difference_check, random_problem, GradCheckReport};
pub use layers::{BatchNormParams, ConvParams, Tensor};
pub use train::{
    adam_step, adam_update, reconstruct_dl, stage_inputs, train_stage, train_stage_on, AdamState,
    DlReconstruction, StageData, TrainConfig, TrainReport,
};
pub use weights::{
    decode_weights, encode_weights, read_stage_weights, read_weights, write_stage_weights, write_weights,
    StageWeights,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::field::ScalarField2D;
use layers::BnCache;

pub const EXTRACT_CHANNELS: usize = 32;
pub const FUSE_CHANNELS: [usize; 2] = [64, 32];
pub const HEAD_CHANNELS: usize = 16;
const BRANCHES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in every normalization layer.
    Train,
    /// Running statistics; per-sample outputs independent of the batch.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub conv1: ConvParams,
    pub bn: BatchNormParams,
    pub conv2: ConvParams,
}

/// All weights of one SR-Net. The same layout doubles as the gradient
/// container (running statistics unused there).
#[derive(Debug, Clone, PartialEq)]
pub struct SRNetParams {
    /// Branches for `p0`, `-∇F` and `c`, in that order.
    pub extract: [Branch; BRANCHES],
    pub fuse_bn: BatchNormParams,
    pub fuse1: ConvParams,
    pub fuse2: ConvParams,
    /// Pressure head, then speed head.
    pub heads: [Head; 2],
}

impl SRNetParams {
    /// All kernels and biases zero, identity normalization.
    pub fn zeros() -> Self {
        let branch = || Branch {
            conv1: ConvParams::zeros(1, EXTRACT_CHANNELS),
            conv2: ConvParams::zeros(EXTRACT_CHANNELS, EXTRACT_CHANNELS),
        };
        let head = || Head {
            conv1: ConvParams::zeros(FUSE_CHANNELS[1], HEAD_CHANNELS),
            bn: BatchNormParams::identity(HEAD_CHANNELS),
            conv2: ConvParams::zeros(HEAD_CHANNELS, 1),
        };
        Self {
            extract: [branch(), branch(), branch()],
            fuse_bn: BatchNormParams::identity(BRANCHES * EXTRACT_CHANNELS),
            fuse1: ConvParams::zeros(BRANCHES * EXTRACT_CHANNELS, FUSE_CHANNELS[0]),
            fuse2: ConvParams::zeros(FUSE_CHANNELS[0], FUSE_CHANNELS[1]),
            heads: [head(), head()],
        }
    }

    /// He-uniform kernels (`±sqrt(6 / fan_in)`), zero biases, identity
    /// normalization, from a ChaCha20 stream.
    pub fn init(seed: u64) -> Self {
        let mut p = Self::zeros();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for conv in p.convs_mut() {
            let bound = (6.0 / (conv.cin * 9) as f64).sqrt();
            conv.kernel.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        }
        p
    }

    fn convs_mut(&mut self) -> Vec<&mut ConvParams> {
        let mut v = Vec::new();
        for b in self.extract.iter_mut() {
            v.push(&mut b.conv1);
            v.push(&mut b.conv2);
        }
        v.push(&mut self.fuse1);
        v.push(&mut self.fuse2);
        for h in self.heads.iter_mut() {
            v.push(&mut h.conv1);
            v.push(&mut h.conv2);
        }
        v
    }

    /// Every stored array with a stable name and shape, in file order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        fn push_conv<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: &str, c: &'a ConvParams) {
            out.push((format!("{name}.kernel"), vec![c.cout, c.cin, 3, 3], &c.kernel));
            out.push((format!("{name}.bias"), vec![c.cout], &c.bias));
        }
        fn push_bn<'a>(out: &mut Vec<(String, Vec<usize>, &'a [f64])>, name: &str, b: &'a BatchNormParams) {
            let n = b.channels();
            out.push((format!("{name}.gamma"), vec![n], &b.gamma));
            out.push((format!("{name}.beta"), vec![n], &b.beta));
            out.push((format!("{name}.running_mean"), vec![n], &b.running_mean));
            out.push((format!("{name}.running_var"), vec![n], &b.running_var));
        }
        for (i, b) in self.extract.iter().enumerate() {
            push_conv(&mut out, &format!("extract{i}.conv1"), &b.conv1);
            push_conv(&mut out, &format!("extract{i}.conv2"), &b.conv2);
        }
        push_bn(&mut out, "fuse.bn", &self.fuse_bn);
        push_conv(&mut out, "fuse.conv1", &self.fuse1);
        push_conv(&mut out, "fuse.conv2", &self.fuse2);
        for (i, h) in self.heads.iter().enumerate() {
            push_conv(&mut out, &format!("head{i}.conv1"), &h.conv1);
            push_bn(&mut out, &format!("head{i}.bn"), &h.bn);
            push_conv(&mut out, &format!("head{i}.conv2"), &h.conv2);
        }
        out
    }

    /// Mutable views in the order of [`SRNetParams::tensors`], with a flag
    /// marking trainable arrays (running statistics are not).
    pub fn tensors_mut(&mut self) -> Vec<(&mut Vec<f64>, bool)> {
        let mut out: Vec<(&mut Vec<f64>, bool)> = Vec::new();
        fn push_conv<'a>(out: &mut Vec<(&'a mut Vec<f64>, bool)>, c: &'a mut ConvParams) {
            out.push((&mut c.kernel, true));
            out.push((&mut c.bias, true));
        }
        fn push_bn<'a>(out: &mut Vec<(&'a mut Vec<f64>, bool)>, b: &'a mut BatchNormParams) {
            out.push((&mut b.gamma, true));
            out.push((&mut b.beta, true));
            out.push((&mut b.running_mean, false));
            out.push((&mut b.running_var, false));
        }
        for b in self.extract.iter_mut() {
            push_conv(&mut out, &mut b.conv1);
            push_conv(&mut out, &mut b.conv2);
        }
        push_bn(&mut out, &mut self.fuse_bn);
        push_conv(&mut out, &mut self.fuse1);
        push_conv(&mut out, &mut self.fuse2);
        for h in self.heads.iter_mut() {
            push_conv(&mut out, &mut h.conv1);
            push_bn(&mut out, &mut h.bn);
            push_conv(&mut out, &mut h.conv2);
        }
        out
    }

    /// Trainable values flattened in a fixed order.
    pub fn trainable_flat(&self) -> Vec<f64> {
        let mut c = self.clone();
        c.tensors_mut()
            .into_iter()
            .filter(|(_, t)| *t)
            .flat_map(|(v, _)| v.clone())
            .collect()
    }

    /// Count of trainable scalars.
    pub fn n_trainable(&self) -> usize {
        self.trainable_flat().len()
    }

    /// FNV-1a over the bit patterns of every stored array.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, _, v) in self.tensors() {
            for x in v {
                for b in x.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    fn zeros_like_grad() -> Self {
        let mut g = Self::zeros();
        for (v, _) in g.tensors_mut() {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        g
    }
}

/// One sample's inputs, all on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StageInput {
    pub p0: ScalarField2D,
    pub neg_grad: ScalarField2D,
    pub c: ScalarField2D,
}

/// Pack samples into a `B × 3 × ny × nx` tensor (channels `p0, -∇F, c`).
pub fn pack_inputs(inputs: &[StageInput]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty batch".into()))?;
    let g = *first.p0.grid();
    let mut t = Tensor::zeros(inputs.len(), BRANCHES, g.ny(), g.nx());
    let l = t.sample_len();
    let p = t.plane();
    for (i, s) in inputs.iter().enumerate() {
        s.neg_grad.check_same_grid(&s.p0, "SR-Net inputs")?;
        s.c.check_same_grid(&s.p0, "SR-Net inputs")?;
        first.p0.check_same_grid(&s.p0, "SR-Net batch")?;
        let o = i * l;
        t.data[o..o + p].copy_from_slice(s.p0.values());
        t.data[o + p..o + 2 * p].copy_from_slice(s.neg_grad.values());
        t.data[o + 2 * p..o + 3 * p].copy_from_slice(s.c.values());
    }
    Ok(t)
}

/// Activations kept for the reverse pass.
pub struct ForwardCache {
    input: Tensor,
    branch_in: Vec<Tensor>,
    branch_r1: Vec<Tensor>,
    cat: Tensor,
    fuse_bn: BnCache,
    normed: Tensor,
    r3: Tensor,
    features: Tensor,
    head_bn: Vec<BnCache>,
    head_y2: Vec<Tensor>,
    /// Pre-ReLU outputs `z + skip`, channels `(p0, c)`.
    pre_out: Tensor,
}

impl ForwardCache {
    /// Batch statistics of the three normalization layers (fuse, head p,
    /// head c).
    pub fn bn_caches(&self) -> [&BnCache; 3] {
        [&self.fuse_bn, &self.head_bn[0], &self.head_bn[1]]
    }

    pub fn batch(&self) -> usize {
        self.input.n
    }
}

fn bn_forward(bn: &BatchNormParams, x: &Tensor, mode: Mode) -> (Tensor, Option<BnCache>) {
    match mode {
        Mode::Train => {
            let (y, c) = bn.forward_train(x);
            (y, Some(c))
        }
        Mode::Infer => (bn.forward_infer(x), None),
    }
}

/// Run the network on a packed batch; returns `B × 2 × ny × nx` outputs
/// (channels `p0'`, `c'`) and, in train mode, the reverse-pass cache.
pub fn forward_tensor(params: &SRNetParams, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<ForwardCache>)> {
    if input.c != BRANCHES {
        return Err(Error::ShapeMismatch(format!("SR-Net takes 3 input channels, got {}", input.c)));
    }
    if mode == Mode::Train && input.n < 2 {
        return Err(Error::InvalidConfig(
            "train mode needs a batch of at least 2 (batch statistics)".into(),
        ));
    }
    let parts = input.split_channels(&[1, 1, 1]);
    let mut branch_r1 = Vec::with_capacity(BRANCHES);
    let mut outs = Vec::with_capacity(BRANCHES);
    for (b, x) in params.extract.iter().zip(&parts) {
        let mut r1 = b.conv1.forward(x);
        r1.relu_inplace();
        let mut r2 = b.conv2.forward(&r1);
        r2.relu_inplace();
        branch_r1.push(r1);
        outs.push(r2);
    }
    let cat = Tensor::concat_channels(&outs.iter().collect::<Vec<_>>());
    drop(outs);
    let (normed, fuse_cache) = bn_forward(&params.fuse_bn, &cat, mode);
    let mut r3 = params.fuse1.forward(&normed);
    r3.relu_inplace();
    let mut features = params.fuse2.forward(&r3);
    features.relu_inplace();

    let (n, h, w) = (input.n, input.h, input.w);
    let p = h * w;
    let mut pre_out = Tensor::zeros(n, 2, h, w);
    let mut head_bn = Vec::new();
    let mut head_y2 = Vec::new();
    for (k, head) in params.heads.iter().enumerate() {
        let y1 = head.conv1.forward(&features);
        let (y2, cache) = bn_forward(&head.bn, &y1, mode);
        let y3 = head.conv2.forward(&y2);
        // skip: channel 0 (p0) for the pressure head, channel 2 (c) for speed
        let skip_ch = if k == 0 { 0 } else { 2 };
        for i in 0..n {
            let skip = input.channel(i, skip_ch);
            let z = y3.channel(i, 0);
            let o = (i * 2 + k) * p;
            for (d, (a, b)) in pre_out.data[o..o + p].iter_mut().zip(z.iter().zip(skip)) {
                *d = a + b;
            }
        }
        if let Some(c) = cache {
            head_bn.push(c);
        }
        head_y2.push(y2);
    }
    let mut out = pre_out.clone();
    out.relu_inplace();
    let cache = match (mode, fuse_cache) {
        (Mode::Train, Some(fuse_bn)) => Some(ForwardCache {
            input: input.clone(),
            branch_in: parts,
            branch_r1,
            cat,
            fuse_bn,
            normed,
            r3,
            features,
            head_bn,
            head_y2,
            pre_out,
        }),
        _ => None,
    };
    Ok((out, cache))
}

/// Outputs `(p0', c')` for each sample.
pub fn srnet_forward(
    inputs: &[StageInput],
    params: &SRNetParams,
    mode: Mode,
) -> Result<Vec<(ScalarField2D, ScalarField2D)>> {
    let x = pack_inputs(inputs)?;
    let (y, _) = forward_tensor(params, &x, mode)?;
    let grid = *inputs[0].p0.grid();
    (0..y.n)
        .map(|i| {
            Ok((
                ScalarField2D::new(grid, y.channel(i, 0).to_vec())?,
                ScalarField2D::new(grid, y.channel(i, 1).to_vec())?,
            ))
        })
        .collect()
}

/// Mean over batch and pixels of `|Δp0| + c_weight·|Δc|`. `pred` and
/// `target` are `B × 2 × ny × nx` (channels `p0`, `c`).
pub fn loss_tensor(pred: &Tensor, target: &Tensor, c_weight: f64) -> f64 {
    let p = pred.plane();
    let count = (pred.n * p) as f64;
    let mut s = 0.0;
    for i in 0..pred.n {
        let dp: f64 = pred.channel(i, 0).iter().zip(target.channel(i, 0)).map(|(a, b)| (a - b).abs()).sum();
        let dc: f64 = pred.channel(i, 1).iter().zip(target.channel(i, 1)).map(|(a, b)| (a - b).abs()).sum();
        s += dp + c_weight * dc;
    }
    s / count
}

/// Loss over field pairs; see [`loss_tensor`].
pub fn srnet_loss(
    pred_p0: &[ScalarField2D],
    pred_c: &[ScalarField2D],
    true_p0: &[ScalarField2D],
    true_c: &[ScalarField2D],
    c_weight: f64,
) -> Result<f64> {
    let n = pred_p0.len();
    if pred_c.len() != n || true_p0.len() != n || true_c.len() != n || n == 0 {
        return Err(Error::ShapeMismatch("loss batch sizes differ or are empty".into()));
    }
    let mut s = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        pred_p0[i].check_same_grid(&true_p0[i], "loss p0")?;
        pred_c[i].check_same_grid(&true_c[i], "loss c")?;
        let abs = |a: &ScalarField2D, b: &ScalarField2D| -> f64 {
            a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum()
        };
        s += abs(&pred_p0[i], &true_p0[i]) + c_weight * abs(&pred_c[i], &true_c[i]);
        count += pred_p0[i].grid().len();
    }
    Ok(s / count as f64)
}

fn relu_mask(dy: &mut Tensor, act: &Tensor) {
    dy.data.iter_mut().zip(&act.data).for_each(|(d, a)| {
        if *a <= 0.0 {
            *d = 0.0
        }
    });
}

/// Loss and exact gradients for one training batch (train-mode forward).
pub fn srnet_backward(
    params: &SRNetParams,
    input: &Tensor,
    target: &Tensor,
    c_weight: f64,
) -> Result<(f64, SRNetParams, ForwardCache)> {
    let (out, cache) = forward_tensor(params, input, Mode::Train)?;
    let cache = cache.expect("train mode yields a cache");
    let loss = loss_tensor(&out, target, c_weight);
    let mut grad = SRNetParams::zeros_like_grad();

    let (n, h, w) = (input.n, input.h, input.w);
    let p = h * w;
    let count = (n * p) as f64;
    // d loss / d pre-ReLU output
    let mut dpre = Tensor::zeros(n, 2, h, w);
    for (k, d) in dpre.data.iter_mut().enumerate() {
        let ch = (k / p) % 2;
        let diff = out.data[k] - target.data[k];
        let wgt = if ch == 0 { 1.0 } else { c_weight };
        let s = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        *d = if cache.pre_out.data[k] > 0.0 { wgt * s / count } else { 0.0 };
    }

    let mut dfeatures = Tensor::zeros(n, FUSE_CHANNELS[1], h, w);
    for (k, head) in params.heads.iter().enumerate() {
        let mut dy3 = Tensor::zeros(n, 1, h, w);
        for i in 0..n {
            dy3.data[i * p..(i + 1) * p].copy_from_slice(dpre.channel(i, k));
        }
        let hg = &mut grad.heads[k];
        let dy2 = head
            .conv2
            .backward(&cache.head_y2[k], &dy3, true, &mut hg.conv2)
            .expect("dx requested");
        let dy1 = head.bn.backward(&cache.head_bn[k], &dy2, &mut hg.bn);
        let df = head
            .conv1
            .backward(&cache.features, &dy1, true, &mut hg.conv1)
            .expect("dx requested");
        dfeatures.data.iter_mut().zip(&df.data).for_each(|(a, b)| *a += b);
    }
    relu_mask(&mut dfeatures, &cache.features);
    let mut dr3 = params
        .fuse2
        .backward(&cache.r3, &dfeatures, true, &mut grad.fuse2)
        .expect("dx requested");
    relu_mask(&mut dr3, &cache.r3);
    let dnormed = params
        .fuse1
        .backward(&cache.normed, &dr3, true, &mut grad.fuse1)
        .expect("dx requested");
    let dcat = params.fuse_bn.backward(&cache.fuse_bn, &dnormed, &mut grad.fuse_bn);
    let dparts = dcat.split_channels(&[EXTRACT_CHANNELS; BRANCHES]);
    for (b, mut dr2) in dparts.into_iter().enumerate() {
        // r2 is the b-th slice of cat
        let r2 = &cache.cat.split_channels(&[EXTRACT_CHANNELS; BRANCHES])[b];
        relu_mask(&mut dr2, r2);
        let branch = &params.extract[b];
        let bg = &mut grad.extract[b];
        let mut dr1 = branch
            .conv2
            .backward(&cache.branch_r1[b], &dr2, true, &mut bg.conv2)
            .expect("dx requested");
        relu_mask(&mut dr1, &cache.branch_r1[b]);
        branch.conv1.backward(&cache.branch_in[b], &dr1, false, &mut bg.conv1);
    }
    Ok((loss, grad, cache))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;
    use rand_chacha::ChaCha8Rng;

    fn random_input(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = Tensor::zeros(n, 3, size, size);
        for i in 0..n {
            for ch in 0..3 {
                let o = (i * 3 + ch) * size * size;
                for v in &mut t.data[o..o + size * size] {
                    *v = match ch {
                        0 => rng.gen_range(0.0..1.0),
                        1 => rng.gen_range(-2.0..2.0),
                        _ => rng.gen_range(1480.0..3198.0),
                    };
                }
            }
        }
        t
    }

    #[test]
    fn zero_network_is_relu_of_skips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = random_input(3, 8, &mut rng);
        x.data[0] = -0.5; // a negative p0 pixel must come out as 0
        let (y, _) = forward_tensor(&SRNetParams::zeros(), &x, Mode::Infer).unwrap();
        for i in 0..3 {
            for (a, b) in y.channel(i, 0).iter().zip(x.channel(i, 0)) {
                assert_eq!(*a, b.max(0.0));
            }
            assert_eq!(y.channel(i, 1), x.channel(i, 2));
        }
    }

    #[test]
    fn tensor_names_are_unique_and_counted() {
        let p = SRNetParams::init(3);
        let t = p.tensors();
        let names: std::collections::BTreeSet<_> = t.iter().map(|(n, _, _)| n.clone()).collect();
        assert_eq!(names.len(), t.len());
        for (_, dims, v) in &t {
            assert_eq!(dims.iter().product::<usize>(), v.len());
        }
        // 3 x (1*32*9+32 + 32*32*9+32) + 96*2 + 96*64*9+64 + 64*32*9+32
        //   + 2 x (32*16*9+16 + 16*2 + 16*9+1)
        let expected = 3 * (288 + 32 + 9216 + 32) + 192 + 55296 + 64 + 18432 + 32 + 2 * (4608 + 16 + 32 + 144 + 1);
        assert_eq!(p.n_trainable(), expected);
    }

    #[test]
    fn train_mode_needs_two_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_input(1, 4, &mut rng);
        assert!(forward_tensor(&SRNetParams::init(0), &x, Mode::Train).is_err());
        assert!(forward_tensor(&SRNetParams::init(0), &x, Mode::Infer).is_ok());
    }

    #[test]
    fn loss_arithmetic() {
        let g = GridSpec::square(4, 1e-4).unwrap();
        let p = ScalarField2D::constant(g, 0.3);
        let c = ScalarField2D::constant(g, 1500.0);
        let p2 = ScalarField2D::constant(g, 0.31);
        let c2 = ScalarField2D::constant(g, 1510.0);
        let l = srnet_loss(&[p2], &[c2], std::slice::from_ref(&p), std::slice::from_ref(&c), 1e-3).unwrap();
        assert!((l - 0.02).abs() < 1e-12);
        let (ps, cs) = (std::slice::from_ref(&p), std::slice::from_ref(&c));
        assert_eq!(srnet_loss(ps, cs, ps, cs, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn duplicated_batch_has_the_same_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = SRNetParams::init(5);
        let x = random_input(2, 6, &mut rng);
        let mut y = Tensor::zeros(2, 2, 6, 6);
        y.data.iter_mut().enumerate().for_each(|(k, v)| {
            *v = if (k / 36) % 2 == 0 { rng.gen_range(0.0..1.0) } else { rng.gen_range(1480.0..3198.0) }
        });
        let dup = |t: &Tensor| {
            let mut d = t.clone();
            d.n *= 2;
            d.data.extend_from_slice(&t.data);
            d
        };
        let (l1, g1, _) = srnet_backward(&params, &x, &y, 1e-3).unwrap();
        let (l2, g2, _) = srnet_backward(&params, &dup(&x), &dup(&y), 1e-3).unwrap();
        assert!((l1 - l2).abs() < 1e-12 * l1);
        let (a, b) = (g1.trainable_flat(), g2.trainable_flat());
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-9 * scale, "{u} vs {v}");
        }
    }
}
