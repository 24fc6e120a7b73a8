//! Adam with bias correction.

use crate::diff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::Real;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub step: u64,
    /// First and second moments, indexed like the store.
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: Real, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|p| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn moments(&self, index: usize) -> (&Tensor, &Tensor) {
        (&self.m[index], &self.v[index])
    }

    /// Updates every trainable parameter from its accumulated gradient.
    /// Nothing is modified if any gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        if let Some(p) = store.iter().find(|p| p.trainable && !p.grad.all_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in parameter `{}`",
                p.name
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let (w, g) = (p.value.data_mut(), p.grad.data());
            for j in 0..w.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                w[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(all(test, not(feature = "single-precision")))]
mod tests {
    use super::*;

    fn scalar_store(x: Real) -> (ParamStore, crate::diff::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(x));
        (s, id)
    }

    #[test]
    fn five_step_trace() {
        // lr 0.1, w0 = 1, gradients 1, -0.5, 2, 0, 0.3 worked by hand
        let table = [
            (0.900000001, 0.09999999999999998, 0.0010000000000000009),
            (
                0.8733662973709032,
                0.039999999999999994,
                0.0012490000000000012,
            ),
            (
                0.8075551378428033,
                0.23599999999999996,
                0.0052477510000000045,
            ),
            (
                0.7536466405048852,
                0.21239999999999998,
                0.0052425032490000046,
            ),
            (0.7013780491062849, 0.22116, 0.005327260745751005),
        ];
        let (mut s, id) = scalar_store(1.0);
        let mut adam = Adam::new(0.1, &s);
        for (g, (w, m, v)) in [1.0, -0.5, 2.0, 0.0, 0.3].into_iter().zip(table) {
            s.get_mut(id).grad = Tensor::scalar(g);
            adam.step(&mut s).unwrap();
            assert!((s.value(id).data()[0] - w).abs() < 1e-12);
            let (mm, vv) = adam.moments(0);
            assert!((mm.data()[0] - m).abs() < 1e-12);
            assert!((vv.data()[0] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new([3], vec![0.0, 0.0, 0.0]).unwrap());
        s.get_mut(id).grad = Tensor::new([3], vec![3.0, -0.02, 1e3]).unwrap();
        let mut adam = Adam::new(1e-3, &s);
        adam.step(&mut s).unwrap();
        for (w, sign) in s.value(id).data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((w - sign * 1e-3).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_moments() {
        let (mut s, id) = scalar_store(2.0);
        let mut adam = Adam::new(0.1, &s);
        s.get_mut(id).grad = Tensor::scalar(1.0);
        adam.step(&mut s).unwrap();
        let w1 = s.value(id).data()[0];
        let (m1, v1) = (adam.moments(0).0.data()[0], adam.moments(0).1.data()[0]);
        s.get_mut(id).grad = Tensor::scalar(0.0);
        let mut fresh = Adam::new(0.1, &s);
        fresh.step(&mut s).unwrap();
        assert_eq!(s.value(id).data()[0], w1);
        adam.step(&mut s).unwrap();
        assert_eq!(adam.moments(0).0.data()[0], 0.9 * m1);
        assert_eq!(adam.moments(0).1.data()[0], 0.999 * v1);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut s = ParamStore::new();
        s.add("fc.1.weight", Tensor::scalar(0.0));
        let id = s.add("fc.2.weight", Tensor::scalar(1.0));
        s.get_mut(id).grad = Tensor::scalar(Real::NAN);
        let mut adam = Adam::new(0.1, &s);
        let err = adam.step(&mut s).unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.contains("fc.2.weight")));
        assert_eq!(s.value(id).data()[0], 1.0);
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut s = ParamStore::new();
        let id = s.add_buffer("bn.1.running_mean", Tensor::scalar(0.5));
        s.get_mut(id).grad = Tensor::scalar(1.0);
        let mut adam = Adam::new(0.1, &s);
        adam.step(&mut s).unwrap();
        assert_eq!(s.value(id).data()[0], 0.5);
    }
}
