//! Adam.

use crate::error::{NnError, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: ParamSet<T>,
    v: ParamSet<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, lr: T, eps: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable entry of `params` from `grads`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<()> {
        if !grads.all_finite() {
            return Err(NnError::NonFinite("gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let step_size = self.lr / bc1;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            if !p.trainable {
                continue;
            }
            if p.name != g.name || p.data.len() != g.data.len() {
                return Err(NnError::Shape(format!("adam: param {} vs grad {}", p.name, g.name)));
            }
            for (((x, &gr), mi), vi) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.data.iter_mut())
                .zip(v.data.iter_mut())
            {
                *mi = self.beta1 * *mi + (T::one() - self.beta1) * gr;
                *vi = self.beta2 * *vi + (T::one() - self.beta2) * gr * gr;
                let denom = (*vi / bc2).sqrt() + self.eps;
                *x -= step_size * *mi / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut p = ParamSet::<f64>::new("q");
        p.insert("x", &[2], vec![3.0, -2.0], true).unwrap();
        let mut opt = Adam::new(&p, 0.05, 1e-8);
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            let x = p.get("x").unwrap().to_vec();
            g.get_mut("x").unwrap().copy_from_slice(&[2.0 * (x[0] - 1.0), 2.0 * (x[1] + 0.5)]);
            opt.step(&mut p, &g).unwrap();
        }
        let x = p.get("x").unwrap();
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn zero_learning_rate_is_bitwise_identity() {
        let mut p = ParamSet::<f32>::new("q");
        p.insert("x", &[3], vec![0.1, 0.2, -0.3], true).unwrap();
        let before = p.clone();
        let mut opt = Adam::new(&p, 0.0, 1e-5);
        let mut g = p.zeros_like();
        g.get_mut("x").unwrap().copy_from_slice(&[1.0, -4.0, 0.5]);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_trainable_entries_untouched() {
        let mut p = ParamSet::<f32>::new("q");
        p.insert("buf", &[1], vec![1.0], false).unwrap();
        let mut g = p.zeros_like();
        g.get_mut("buf").unwrap()[0] = 10.0;
        Adam::new(&p, 0.1, 1e-8).step(&mut p, &g).unwrap();
        assert_eq!(p.get("buf").unwrap()[0], 1.0);
    }
}
