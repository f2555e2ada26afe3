//! 3×3 same-padding convolutions and batch normalization on NCHW tensors,
//! with hand-written reverse passes.

use rayon::prelude::*;

/// Dense `n × c × h × w` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    /// Channel `ch` of sample `i`.
    pub fn channel(&self, i: usize, ch: usize) -> &[f64] {
        let p = self.plane();
        let o = i * self.sample_len() + ch * p;
        &self.data[o..o + p]
    }

    /// Stack along channels: every tensor must share `n`, `h`, `w`.
    pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
        let (n, h, w) = (parts[0].n, parts[0].h, parts[0].w);
        let c: usize = parts.iter().map(|t| t.c).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for t in parts {
                debug_assert!(t.n == n && t.h == h && t.w == w);
                data.extend_from_slice(t.sample(i));
            }
        }
        Tensor { n, c, h, w, data }
    }

    /// Inverse of [`Tensor::concat_channels`] for the given channel counts.
    pub fn split_channels(&self, counts: &[usize]) -> Vec<Tensor> {
        let p = self.plane();
        let mut out: Vec<Tensor> = counts.iter().map(|&c| Tensor::zeros(self.n, c, self.h, self.w)).collect();
        for i in 0..self.n {
            let mut off = i * self.sample_len();
            for t in out.iter_mut() {
                let l = t.c * p;
                t.data[i * l..(i + 1) * l].copy_from_slice(&self.data[off..off + l]);
                off += l;
            }
        }
        out
    }

    pub fn relu_inplace(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

/// `C = alpha op(A) op(B) + beta C` for row-major operands; `op` is the
/// transpose when the flag is set. `C` is `m × n`, the inner size `k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches for
    // these strides, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold one `cin × h × w` sample into a `(cin·9) × (h·w)` patch matrix
/// for a 3×3 kernel with zero padding 1.
fn im2col(x: &[f64], cin: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..cin {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let s = &src[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = 0.0;
                            out[1..].copy_from_slice(&s[..w - 1]);
                        }
                        1 => out.copy_from_slice(s),
                        _ => {
                            out[..w - 1].copy_from_slice(&s[1..]);
                            out[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate patches back into `dx`.
fn col2im(cols: &[f64], cin: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..cin {
        let dst = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let d = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    let r = &row[y * w..(y + 1) * w];
                    match kx {
                        0 => d[..w - 1].iter_mut().zip(&r[1..]).for_each(|(a, b)| *a += b),
                        1 => d.iter_mut().zip(r).for_each(|(a, b)| *a += b),
                        _ => d[1..].iter_mut().zip(&r[..w - 1]).for_each(|(a, b)| *a += b),
                    }
                }
            }
        }
    }
}

/// 3×3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub cin: usize,
    pub cout: usize,
    /// `cout × cin × 3 × 3`
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            kernel: vec![0.0; cout * cin * 9],
            bias: vec![0.0; cout],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let k = self.cin * 9;
        let mut y = Tensor::zeros(x.n, self.cout, h, w);
        let ylen = y.sample_len();
        y.data.par_chunks_mut(ylen).enumerate().for_each(|(i, out)| {
            let mut cols = vec![0.0; k * hw];
            im2col(x.sample(i), self.cin, h, w, &mut cols);
            for (o, b) in self.bias.iter().enumerate() {
                out[o * hw..(o + 1) * hw].fill(*b);
            }
            gemm(self.cout, k, hw, 1.0, &self.kernel, false, &cols, false, 1.0, out);
        });
        y
    }

    /// Adds the kernel and bias gradients into `grad` and returns the input
    /// gradient when `need_dx`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, need_dx: bool, grad: &mut ConvParams) -> Option<Tensor> {
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let k = self.cin * 9;
        // per sample: (kernel grad, bias grad, input grad)
        #[allow(clippy::type_complexity)]
        let per_sample: Vec<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> = (0..x.n)
            .into_par_iter()
            .map(|i| {
                let dyi = dy.sample(i);
                let mut cols = vec![0.0; k * hw];
                im2col(x.sample(i), self.cin, h, w, &mut cols);
                let mut dk = vec![0.0; self.cout * k];
                gemm(self.cout, hw, k, 1.0, dyi, false, &cols, true, 0.0, &mut dk);
                let db = (0..self.cout).map(|o| dyi[o * hw..(o + 1) * hw].iter().sum()).collect();
                let dx = need_dx.then(|| {
                    gemm(k, self.cout, hw, 1.0, &self.kernel, true, dyi, false, 0.0, &mut cols);
                    let mut dx = vec![0.0; self.cin * hw];
                    col2im(&cols, self.cin, h, w, &mut dx);
                    dx
                });
                (dk, db, dx)
            })
            .collect();
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, self.cin, h, w));
        for (i, (dk, db, dxi)) in per_sample.into_iter().enumerate() {
            grad.kernel.iter_mut().zip(&dk).for_each(|(a, b)| *a += b);
            grad.bias.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
            if let (Some(t), Some(d)) = (dx.as_mut(), dxi) {
                let l = self.cin * hw;
                t.data[i * l..(i + 1) * l].copy_from_slice(&d);
            }
        }
        dx
    }
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight of the old running value in each update.
    pub momentum: f64,
    pub eps: f64,
}

/// What the reverse pass needs from a training-mode normalization.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
}

impl BatchNormParams {
    pub fn identity(c: usize) -> Self {
        Self {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalize with the running statistics.
    pub fn forward_infer(&self, x: &Tensor) -> Tensor {
        let scale: Vec<f64> = (0..x.c)
            .map(|ch| self.gamma[ch] / (self.running_var[ch] + self.eps).sqrt())
            .collect();
        self.apply(x, &self.running_mean, &scale)
    }

    fn apply(&self, x: &Tensor, mean: &[f64], scale: &[f64]) -> Tensor {
        let p = x.plane();
        let mut y = x.clone();
        for (k, v) in y.data.iter_mut().enumerate() {
            let ch = (k / p) % x.c;
            *v = (*v - mean[ch]) * scale[ch] + self.beta[ch];
        }
        y
    }

    /// Per-channel mean and biased variance over batch and pixels.
    pub fn batch_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let p = x.plane();
        let count = (x.n * p) as f64;
        let mut mean = vec![0.0; x.c];
        let mut var = vec![0.0; x.c];
        for ch in 0..x.c {
            let s: f64 = (0..x.n).map(|i| x.channel(i, ch).iter().sum::<f64>()).sum();
            let m = s / count;
            let q: f64 = (0..x.n)
                .map(|i| x.channel(i, ch).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                .sum();
            mean[ch] = m;
            var[ch] = q / count;
        }
        (mean, var)
    }

    /// Normalize with batch statistics.
    pub fn forward_train(&self, x: &Tensor) -> (Tensor, BnCache) {
        let (mean, var) = Self::batch_stats(x);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let p = x.plane();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for (k, (h, o)) in xhat.data.iter_mut().zip(y.data.iter_mut()).enumerate() {
            let ch = (k / p) % x.c;
            *h = (*h - mean[ch]) * inv_std[ch];
            *o = self.gamma[ch] * *h + self.beta[ch];
        }
        (
            y,
            BnCache {
                xhat,
                inv_std,
                mean,
                var,
            },
        )
    }

    /// Fold one batch's statistics into the running averages (unbiased
    /// variance).
    pub fn update_running(&mut self, cache: &BnCache, count: usize) {
        let unbias = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        for ch in 0..self.channels() {
            self.running_mean[ch] = self.momentum * self.running_mean[ch] + (1.0 - self.momentum) * cache.mean[ch];
            self.running_var[ch] =
                self.momentum * self.running_var[ch] + (1.0 - self.momentum) * cache.var[ch] * unbias;
        }
    }

    /// Reverse pass through the batch statistics; adds `d gamma`,
    /// `d beta` into `grad`.
    pub fn backward(&self, cache: &BnCache, dy: &Tensor, grad: &mut BatchNormParams) -> Tensor {
        let p = dy.plane();
        let c = dy.c;
        let count = (dy.n * p) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for i in 0..dy.n {
            for ch in 0..c {
                let d = dy.channel(i, ch);
                let xh = cache.xhat.channel(i, ch);
                dbeta[ch] += d.iter().sum::<f64>();
                dgamma[ch] += d.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let mut dx = dy.clone();
        for (k, v) in dx.data.iter_mut().enumerate() {
            let ch = (k / p) % c;
            let xh = cache.xhat.data[k];
            *v = self.gamma[ch] * cache.inv_std[ch] / count * (count * *v - dbeta[ch] - xh * dgamma[ch]);
        }
        for ch in 0..c {
            grad.gamma[ch] += dgamma[ch];
            grad.beta[ch] += dbeta[ch];
        }
        dx
    }
}
