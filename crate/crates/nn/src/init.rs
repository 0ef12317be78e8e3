//! Weight initialisers.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::{gemm, Scalar};

/// A `[rows, cols]` matrix with orthonormal rows or columns (whichever are
/// fewer), scaled by `gain`. Modified Gram-Schmidt, run twice, in f64.
pub fn orthogonal<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<T> {
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // `short` row vectors of length `long`, orthonormalised by Cholesky QR
    // applied twice (the second pass restores orthogonality lost to rounding).
    let mut q: Vec<f64> = (0..short * long).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    for _pass in 0..2 {
        cholesky_orthonormalise(&mut q, short, long);
    }
    let vecs: Vec<&[f64]> = q.chunks_exact(long).collect();
    let mut out = vec![T::zero(); rows * cols];
    for (i, v) in vecs.iter().enumerate() {
        for (j, &x) in v.iter().enumerate() {
            // rows >= cols: vectors are columns; otherwise rows
            let idx = if rows >= cols { j * cols + i } else { i * cols + j };
            out[idx] = T::lit(gain * x);
        }
    }
    out
}

/// Replaces the rows of `a` (`short × long`) with `L⁻¹ a`, where `L Lᵀ = a aᵀ`.
fn cholesky_orthonormalise(a: &mut [f64], short: usize, long: usize) {
    let mut g = vec![0.0f64; short * short];
    gemm(short, long, short, 1.0, a, false, a, true, 0.0, &mut g);
    // in-place lower Cholesky factor
    for j in 0..short {
        let mut d = g[j * short + j];
        for k in 0..j {
            d -= g[j * short + k] * g[j * short + k];
        }
        let d = d.max(f64::MIN_POSITIVE).sqrt();
        g[j * short + j] = d;
        for i in j + 1..short {
            let mut s = g[i * short + j];
            for k in 0..j {
                s -= g[i * short + k] * g[j * short + k];
            }
            g[i * short + j] = s / d;
        }
    }
    // inverse of the lower-triangular factor, column by column
    let mut inv = vec![0.0f64; short * short];
    for c in 0..short {
        for i in c..short {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                s -= g[i * short + k] * inv[k * short + c];
            }
            inv[i * short + c] = s / g[i * short + i];
        }
    }
    let mut out = vec![0.0f64; short * long];
    gemm(short, short, long, 1.0, &inv, false, a, false, 0.0, &mut out);
    a.copy_from_slice(&out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check(rows: usize, cols: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = orthogonal(rows, cols, 2.0, &mut rng);
        let short = rows.min(cols);
        for a in 0..short {
            for b in 0..short {
                let dot: f64 = if rows >= cols {
                    (0..rows).map(|r| w[r * cols + a] * w[r * cols + b]).sum()
                } else {
                    (0..cols).map(|c| w[a * cols + c] * w[b * cols + c]).sum()
                };
                let want = if a == b { 4.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9, "{rows}x{cols} ({a},{b}) = {dot}");
            }
        }
    }

    #[test]
    fn tall_and_wide_matrices_are_orthogonal() {
        check(40, 7);
        check(6, 33);
        check(9, 9);
    }
}
