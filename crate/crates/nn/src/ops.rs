//! Numerically stable scalar helpers shared by losses and samplers.

use crate::scalar::Scalar;

/// `log(sum(exp(x)))` in the max-shifted form.
pub fn logsumexp<T: Scalar>(x: &[T]) -> T {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    let s: T = x.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

pub fn log_softmax<T: Scalar>(x: &[T], out: &mut [T]) {
    let lse = logsumexp(x);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

pub fn softmax<T: Scalar>(x: &[T], out: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv<T: Scalar>(y: T) -> T {
    if y > T::lit(20.0) {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn mean<T: Scalar>(x: &[T]) -> T {
    if x.is_empty() {
        return T::zero();
    }
    x.iter().copied().sum::<T>() / T::from_usize(x.len()).unwrap()
}

/// Population (biased) standard deviation.
pub fn pop_std<T: Scalar>(x: &[T]) -> T {
    if x.is_empty() {
        return T::zero();
    }
    let m = mean(x);
    let v = x.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / T::from_usize(x.len()).unwrap();
    v.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_handles_large_magnitudes() {
        let x = [1e4f32, -1e4, 0.0];
        assert_eq!(logsumexp(&x), 1e4);
        let y = [-1e4f64, -1e4];
        assert!((logsumexp(&y) - (-1e4 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn softmax_sums_to_one() {
        let x = [3.0f64, -2.0, 0.5, 1e3];
        let mut p = [0.0; 4];
        softmax(&x, &mut p);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_tails_are_finite() {
        assert_eq!(sigmoid(-1e4f32), 0.0);
        assert_eq!(sigmoid(1e4f32), 1.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
    }

    #[test]
    fn softplus_round_trips() {
        for &y in &[1e-3f64, 0.1, 1.0, 5.0, 30.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-9 * y.max(1.0));
        }
    }

    #[test]
    fn population_std_of_one_two_three() {
        assert!((pop_std(&[1.0f64, 2.0, 3.0]) - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
