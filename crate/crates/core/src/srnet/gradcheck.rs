//! Central finite differences against [`srnet_backward`].

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::layers::Tensor;
use super::{forward_tensor, loss_tensor, srnet_backward, Mode, SRNetParams};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Parameters compared against the tolerance.
    pub checked: usize,
    /// Parameters whose analytic gradient was at most the threshold.
    pub below_threshold: usize,
    /// Parameters where the two one-sided differences disagree, i.e. the
    /// probe crossed a ReLU or `|·|` kink.
    pub kinks: usize,
    pub max_rel_error: f64,
    /// `(flat index, analytic, finite difference)` of the worst parameter.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64, min_checked: usize) -> bool {
        self.checked >= min_checked && self.max_rel_error <= tol
    }
}

fn set_flat(params: &mut SRNetParams, mut index: usize, value: f64) {
    for (v, trainable) in params.tensors_mut() {
        if !trainable {
            continue;
        }
        if index < v.len() {
            v[index] = value;
            return;
        }
        index -= v.len();
    }
    panic!("flat parameter index out of range");
}

/// Random well-conditioned problem: every trainable array gets generic
/// values (biases and normalization affine terms included) so that no
/// gradient vanishes by symmetry.
pub fn random_problem(seed: u64, batch: usize, size: usize) -> (SRNetParams, Tensor, Tensor) {
    let mut params = SRNetParams::init(seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
    let bn = &mut params.fuse_bn;
    bn.gamma.iter_mut().for_each(|g| *g = rng.gen_range(0.5..1.5));
    bn.beta.iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
    for h in params.heads.iter_mut() {
        h.bn.gamma.iter_mut().for_each(|g| *g = rng.gen_range(0.5..1.5));
        h.bn.beta.iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
        h.conv2.bias[0] = rng.gen_range(-0.1..0.1);
    }
    let mut x = Tensor::zeros(batch, 3, size, size);
    let p = size * size;
    for (k, v) in x.data.iter_mut().enumerate() {
        *v = match (k / p) % 3 {
            0 => rng.gen_range(0.2..1.0),
            1 => rng.gen_range(-1.0..1.0),
            _ => rng.gen_range(1.0..2.0),
        };
    }
    let mut y = Tensor::zeros(batch, 2, size, size);
    for (k, v) in y.data.iter_mut().enumerate() {
        *v = match (k / p) % 2 {
            0 => rng.gen_range(0.0..1.0),
            _ => rng.gen_range(1.0..2.0),
        };
    }
    (params, x, y)
}

/// Compare the analytic gradient with central differences of step `h` at
/// `n_params` randomly drawn trainable parameters. Parameters whose
/// analytic gradient is at most `threshold` in magnitude are skipped, as
/// are probes that straddle a kink of the piecewise-linear loss.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check(
    params: &SRNetParams,
    x: &Tensor,
    y: &Tensor,
    c_weight: f64,
    n_params: usize,
    h: f64,
    threshold: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (l0, grads, _) = srnet_backward(params, x, y, c_weight)?;
    let g = grads.trainable_flat();
    let theta = params.trainable_flat();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, theta.len(), n_params.min(theta.len()));
    let loss_at = |i: usize, v: f64| -> Result<f64> {
        let mut q = params.clone();
        set_flat(&mut q, i, v);
        let (out, _) = forward_tensor(&q, x, Mode::Train)?;
        Ok(loss_tensor(&out, y, c_weight))
    };
    let mut report = GradCheckReport {
        checked: 0,
        below_threshold: 0,
        kinks: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for i in picks.into_iter() {
        if g[i].abs() <= threshold {
            report.below_threshold += 1;
            continue;
        }
        let lp = loss_at(i, theta[i] + h)?;
        let lm = loss_at(i, theta[i] - h)?;
        let fd = (lp - lm) / (2.0 * h);
        // On a smooth piece both one-sided slopes agree up to O(h) and
        // round-off (about eps·|L|/h). A kink inside the probe shows up as
        // a jump; an undetected one below this threshold moves the central
        // difference by at most half of it.
        let (fwd, bwd) = ((lp - l0) / h, (l0 - lm) / h);
        let noise = 1e-15 * l0.abs() / h;
        if (fwd - bwd).abs() > 1e-3 * fd.abs().max(g[i].abs()) + 10.0 * noise {
            report.kinks += 1;
            continue;
        }
        let rel = (fd - g[i]).abs() / g[i].abs();
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((i, g[i], fd));
        }
    }
    Ok(report)
}
