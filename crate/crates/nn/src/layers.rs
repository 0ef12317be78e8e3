//! Forward and backward kernels for the handful of layers the networks use.
//!
//! All image tensors are NHWC and row-major. Convolutions are "valid" (no
//! padding) and lowered to GEMM through an explicit patch matrix. Backward
//! functions *accumulate* into parameter gradients and overwrite input gradients.

use crate::error::{NnError, Result};
use crate::scalar::{gemm, Scalar};

/// Geometry of a valid, strided convolution from `in` to `out`.
///
/// The same struct describes a transposed convolution read in reverse: the
/// transposed layer maps an `out`-shaped tensor back to an `in`-shaped one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn new(in_h: usize, in_w: usize, in_c: usize, out_c: usize, kernel: usize, stride: usize) -> Self {
        assert!(kernel <= in_h && kernel <= in_w && stride > 0);
        Self { in_h, in_w, in_c, out_c, kernel, stride }
    }

    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel) / self.stride + 1
    }

    /// Length of one patch row: `kernel * kernel * in_c`.
    pub fn patch(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    pub fn in_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    pub fn out_len(&self) -> usize {
        self.out_h() * self.out_w() * self.out_c
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Weight shape `[patch, out_c]`.
    pub fn weight_shape(&self) -> [usize; 2] {
        [self.patch(), self.out_c]
    }

    /// The geometry a transposed convolution with `in_c` output channels needs:
    /// conv from `(in_h, in_w, channels)`.
    pub fn with_in_channels(&self, in_c: usize) -> Self {
        Self { in_c, ..*self }
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(NnError::Shape(format!("{what}: expected {want} values, got {got}")));
    }
    Ok(())
}

/// Gathers `batch` inputs into a `[batch * out_pixels, patch]` matrix.
pub fn im2col<T: Scalar>(x: &[T], batch: usize, g: &ConvGeom) -> Vec<T> {
    let (oh, ow, k, s, ic) = (g.out_h(), g.out_w(), g.kernel, g.stride, g.in_c);
    let patch = g.patch();
    let row_len = k * ic;
    let mut cols = vec![T::zero(); batch * oh * ow * patch];
    for b in 0..batch {
        let xb = &x[b * g.in_len()..(b + 1) * g.in_len()];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (b * oh + oy) * ow + ox;
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..k {
                    let src = ((oy * s + ky) * g.in_w + ox * s) * ic;
                    dst[ky * row_len..(ky + 1) * row_len].copy_from_slice(&xb[src..src + row_len]);
                }
            }
        }
    }
    cols
}

/// Scatter-adds a patch matrix back onto `batch` inputs (adjoint of [`im2col`]).
pub fn col2im<T: Scalar>(cols: &[T], batch: usize, g: &ConvGeom, out: &mut [T]) {
    let (oh, ow, k, s, ic) = (g.out_h(), g.out_w(), g.kernel, g.stride, g.in_c);
    let patch = g.patch();
    let row_len = k * ic;
    out.iter_mut().for_each(|v| *v = T::zero());
    for b in 0..batch {
        let xb = &mut out[b * g.in_len()..(b + 1) * g.in_len()];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (b * oh + oy) * ow + ox;
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..k {
                    let dst = ((oy * s + ky) * g.in_w + ox * s) * ic;
                    for (d, v) in xb[dst..dst + row_len]
                        .iter_mut()
                        .zip(&src[ky * row_len..(ky + 1) * row_len])
                    {
                        *d += *v;
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T]) {
    let c = bias.len();
    for row in y.chunks_exact_mut(c) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

fn accumulate_bias_grad<T: Scalar>(dy: &[T], db: &mut [T]) {
    let c = db.len();
    for row in dy.chunks_exact(c) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += *v;
        }
    }
}

/// Convolution forward. Returns `(y, cols)`; keep `cols` for the backward pass.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    bias: Option<&[T]>,
) -> Result<(Vec<T>, Vec<T>)> {
    check_len("conv2d input", x.len(), batch * g.in_len())?;
    check_len("conv2d weight", w.len(), g.patch() * g.out_c)?;
    let cols = im2col(x, batch, g);
    let m = batch * g.out_pixels();
    let mut y = vec![T::zero(); m * g.out_c];
    gemm(m, g.patch(), g.out_c, T::one(), &cols, false, w, false, T::zero(), &mut y);
    if let Some(b) = bias {
        check_len("conv2d bias", b.len(), g.out_c)?;
        add_bias(&mut y, b);
    }
    Ok((y, cols))
}

/// Convolution backward. Accumulates `dw`/`db`; returns `dx` when requested.
pub fn conv2d_backward<T: Scalar>(
    dy: &[T],
    cols: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Vec<T>> {
    let m = batch * g.out_pixels();
    let patch = g.patch();
    gemm(patch, m, g.out_c, T::one(), cols, true, dy, false, T::one(), dw);
    if let Some(db) = db {
        accumulate_bias_grad(dy, db);
    }
    if !want_dx {
        return None;
    }
    let mut dcols = vec![T::zero(); m * patch];
    gemm(m, g.out_c, patch, T::one(), dy, false, w, true, T::zero(), &mut dcols);
    let mut dx = vec![T::zero(); batch * g.in_len()];
    col2im(&dcols, batch, g, &mut dx);
    Some(dx)
}

/// Inputs at or below this fraction of nonzeros take the scatter path in
/// [`conv2d_forward_auto`] instead of building a patch matrix.
pub const SPARSE_DENSITY: f64 = 0.05;

/// What a convolution keeps for its backward pass.
#[derive(Debug, Clone)]
pub enum ConvCache<T> {
    /// Dense patch matrix from [`im2col`].
    Cols(Vec<T>),
    /// `(sample, flat index within sample, value)` of every nonzero input.
    Sparse(Vec<(usize, usize, T)>),
}

fn for_each_tap(g: &ConvGeom, idx: usize, mut f: impl FnMut(usize, usize)) {
    let (k, s) = (g.kernel, g.stride);
    let iy = idx / (g.in_w * g.in_c);
    let rem = idx % (g.in_w * g.in_c);
    let (ix, ic) = (rem / g.in_c, rem % g.in_c);
    let oy_lo = (iy + 1).saturating_sub(k).div_ceil(s);
    let oy_hi = (iy / s).min(g.out_h() - 1);
    let ox_lo = (ix + 1).saturating_sub(k).div_ceil(s);
    let ox_hi = (ix / s).min(g.out_w() - 1);
    for oy in oy_lo..=oy_hi {
        for ox in ox_lo..=ox_hi {
            let w_row = ((iy - oy * s) * k + (ix - ox * s)) * g.in_c + ic;
            f(oy * g.out_w() + ox, w_row);
        }
    }
}

/// Convolution that scatters nonzero inputs when the input is sparse enough,
/// otherwise falls back to [`conv2d_forward`]. Both paths compute the same sums.
pub fn conv2d_forward_auto<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    bias: Option<&[T]>,
) -> Result<(Vec<T>, ConvCache<T>)> {
    check_len("conv2d input", x.len(), batch * g.in_len())?;
    let nnz = x.iter().filter(|v| **v != T::zero()).count();
    if (nnz as f64) > SPARSE_DENSITY * x.len() as f64 {
        let (y, cols) = conv2d_forward(x, batch, g, w, bias)?;
        return Ok((y, ConvCache::Cols(cols)));
    }
    check_len("conv2d weight", w.len(), g.patch() * g.out_c)?;
    let oc = g.out_c;
    let mut y = vec![T::zero(); batch * g.out_len()];
    if let Some(b) = bias {
        check_len("conv2d bias", b.len(), oc)?;
        add_bias(&mut y, b);
    }
    let mut entries = Vec::with_capacity(nnz);
    for b in 0..batch {
        let xb = &x[b * g.in_len()..(b + 1) * g.in_len()];
        for (idx, &v) in xb.iter().enumerate() {
            if v == T::zero() {
                continue;
            }
            entries.push((b, idx, v));
            let yb = &mut y[b * g.out_len()..(b + 1) * g.out_len()];
            for_each_tap(g, idx, |pos, w_row| {
                for (o, wv) in yb[pos * oc..(pos + 1) * oc].iter_mut().zip(&w[w_row * oc..(w_row + 1) * oc]) {
                    *o += v * *wv;
                }
            });
        }
    }
    Ok((y, ConvCache::Sparse(entries)))
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_auto<T: Scalar>(
    dy: &[T],
    cache: &ConvCache<T>,
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Vec<T>> {
    match cache {
        ConvCache::Cols(cols) => conv2d_backward(dy, cols, batch, g, w, dw, db, want_dx),
        ConvCache::Sparse(entries) => {
            let oc = g.out_c;
            for &(b, idx, v) in entries {
                let dyb = &dy[b * g.out_len()..(b + 1) * g.out_len()];
                for_each_tap(g, idx, |pos, w_row| {
                    for (d, gv) in dw[w_row * oc..(w_row + 1) * oc].iter_mut().zip(&dyb[pos * oc..(pos + 1) * oc]) {
                        *d += v * *gv;
                    }
                });
            }
            if let Some(db) = db {
                accumulate_bias_grad(dy, db);
            }
            if !want_dx {
                return None;
            }
            let m = batch * g.out_pixels();
            let mut dcols = vec![T::zero(); m * g.patch()];
            gemm(m, oc, g.patch(), T::one(), dy, false, w, true, T::zero(), &mut dcols);
            let mut dx = vec![T::zero(); batch * g.in_len()];
            col2im(&dcols, batch, g, &mut dx);
            Some(dx)
        }
    }
}

/// Transposed convolution: maps `[batch, out_h, out_w, out_c]` to
/// `[batch, in_h, in_w, in_c]` of `g`. Weight layout matches [`conv2d_forward`]
/// (`[patch, out_c]`). `x` is kept by the caller for the backward pass.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    bias: Option<&[T]>,
) -> Result<Vec<T>> {
    let m = batch * g.out_pixels();
    check_len("conv_transpose2d input", x.len(), m * g.out_c)?;
    check_len("conv_transpose2d weight", w.len(), g.patch() * g.out_c)?;
    let mut cols = vec![T::zero(); m * g.patch()];
    gemm(m, g.out_c, g.patch(), T::one(), x, false, w, true, T::zero(), &mut cols);
    let mut y = vec![T::zero(); batch * g.in_len()];
    col2im(&cols, batch, g, &mut y);
    if let Some(b) = bias {
        check_len("conv_transpose2d bias", b.len(), g.in_c)?;
        add_bias(&mut y, b);
    }
    Ok(y)
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Vec<T>> {
    let m = batch * g.out_pixels();
    let dcols = im2col(dy, batch, g);
    gemm(g.patch(), m, g.out_c, T::one(), &dcols, true, x, false, T::one(), dw);
    if let Some(db) = db {
        accumulate_bias_grad(dy, db);
    }
    if !want_dx {
        return None;
    }
    let mut dx = vec![T::zero(); m * g.out_c];
    gemm(m, g.patch(), g.out_c, T::one(), &dcols, false, w, false, T::zero(), &mut dx);
    Some(dx)
}

/// `y = x W + b` with `W` stored `[in_dim, out_dim]`.
pub fn linear_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    w: &[T],
    b: Option<&[T]>,
) -> Result<Vec<T>> {
    check_len("linear input", x.len(), batch * in_dim)?;
    check_len("linear weight", w.len(), in_dim * out_dim)?;
    let mut y = vec![T::zero(); batch * out_dim];
    gemm(batch, in_dim, out_dim, T::one(), x, false, w, false, T::zero(), &mut y);
    if let Some(b) = b {
        check_len("linear bias", b.len(), out_dim)?;
        add_bias(&mut y, b);
    }
    Ok(y)
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    w: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Vec<T>> {
    gemm(in_dim, batch, out_dim, T::one(), x, true, dy, false, T::one(), dw);
    if let Some(db) = db {
        accumulate_bias_grad(dy, db);
    }
    if !want_dx {
        return None;
    }
    let mut dx = vec![T::zero(); batch * in_dim];
    gemm(batch, out_dim, in_dim, T::one(), dy, false, w, true, T::zero(), &mut dx);
    Some(dx)
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Backward through ReLU given its *output*.
pub fn relu_backward<T: Scalar>(dy: &mut [T], y: &[T]) {
    for (d, v) in dy.iter_mut().zip(y) {
        if *v <= T::zero() {
            *d = T::zero();
        }
    }
}

pub fn leaky_relu_inplace<T: Scalar>(x: &mut [T], slope: T) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = *v * slope
        }
    });
}

/// Backward through leaky ReLU given its *output* (sign is preserved).
pub fn leaky_relu_backward<T: Scalar>(dy: &mut [T], y: &[T], slope: T) {
    for (d, v) in dy.iter_mut().zip(y) {
        if *v < T::zero() {
            *d = *d * slope;
        }
    }
}

/// Per-channel statistics saved by a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub const BN_EPS: f64 = 1e-5;

/// Batch normalization over the leading rows of a `[rows, channels]` matrix.
///
/// In training mode statistics come from the batch and a cache is returned;
/// otherwise the provided running statistics are used.
pub fn batchnorm_forward<T: Scalar>(
    x: &[T],
    channels: usize,
    gamma: &[T],
    beta: &[T],
    running: Option<(&[T], &[T])>,
) -> Result<(Vec<T>, Option<BatchNormCache<T>>)> {
    if x.len() % channels != 0 || x.is_empty() {
        return Err(NnError::Shape(format!(
            "batchnorm: {} values not divisible into {channels} channels",
            x.len()
        )));
    }
    let rows = x.len() / channels;
    let eps = T::lit(BN_EPS);
    let mut y = vec![T::zero(); x.len()];
    match running {
        Some((rm, rv)) => {
            let scale: Vec<T> = (0..channels).map(|c| gamma[c] / (rv[c] + eps).sqrt()).collect();
            for (yr, xr) in y.chunks_exact_mut(channels).zip(x.chunks_exact(channels)) {
                for c in 0..channels {
                    yr[c] = (xr[c] - rm[c]) * scale[c] + beta[c];
                }
            }
            Ok((y, None))
        }
        None => {
            let n = T::from_usize(rows).unwrap();
            let mut mean = vec![T::zero(); channels];
            for xr in x.chunks_exact(channels) {
                for c in 0..channels {
                    mean[c] += xr[c];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![T::zero(); channels];
            for xr in x.chunks_exact(channels) {
                for c in 0..channels {
                    let d = xr[c] - mean[c];
                    var[c] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
            let mut xhat = vec![T::zero(); x.len()];
            for ((yr, hr), xr) in y
                .chunks_exact_mut(channels)
                .zip(xhat.chunks_exact_mut(channels))
                .zip(x.chunks_exact(channels))
            {
                for c in 0..channels {
                    hr[c] = (xr[c] - mean[c]) * inv_std[c];
                    yr[c] = gamma[c] * hr[c] + beta[c];
                }
            }
            Ok((y, Some(BatchNormCache { xhat, inv_std, mean, var })))
        }
    }
}

/// Training-mode batch-norm backward. Accumulates `dgamma`/`dbeta`; returns `dx`.
pub fn batchnorm_backward<T: Scalar>(
    dy: &[T],
    cache: &BatchNormCache<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let channels = gamma.len();
    let rows = dy.len() / channels;
    let n = T::from_usize(rows).unwrap();
    let mut sum_dxhat = vec![T::zero(); channels];
    let mut sum_dxhat_xhat = vec![T::zero(); channels];
    for (dr, hr) in dy.chunks_exact(channels).zip(cache.xhat.chunks_exact(channels)) {
        for c in 0..channels {
            dgamma[c] += dr[c] * hr[c];
            dbeta[c] += dr[c];
            let dxh = dr[c] * gamma[c];
            sum_dxhat[c] += dxh;
            sum_dxhat_xhat[c] += dxh * hr[c];
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for ((xr, dr), hr) in dx
        .chunks_exact_mut(channels)
        .zip(dy.chunks_exact(channels))
        .zip(cache.xhat.chunks_exact(channels))
    {
        for c in 0..channels {
            let dxh = dr[c] * gamma[c];
            xr[c] = cache.inv_std[c] / n * (n * dxh - sum_dxhat[c] - hr[c] * sum_dxhat_xhat[c]);
        }
    }
    dx
}

/// Exponential moving update `running = momentum * running + (1 - momentum) * batch`.
pub fn update_running<T: Scalar>(running: &mut [T], batch: &[T], momentum: T) {
    for (r, b) in running.iter_mut().zip(batch) {
        *r = momentum * *r + (T::one() - momentum) * *b;
    }
}
