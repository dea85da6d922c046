use super::params::{Moments, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamW {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// One decoupled-weight-decay Adam update over every trainable parameter
    /// holding a gradient. Gradients are checked for NaN before anything is
    /// modified, so a bad step leaves the store untouched.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        for p in store.iter() {
            if let Some(g) = &p.grad {
                if g.data().iter().any(|v| v.is_nan()) {
                    return Err(Error::NanGradient(p.name.clone()));
                }
            }
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.param_mut(id);
            if !p.trainable {
                continue;
            }
            let Some(grad) = p.grad.as_ref() else {
                continue;
            };
            let n = p.value.len();
            let mom = p.moments.get_or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            });
            mom.step += 1;
            let bc1 = 1.0 - self.beta1.powi(mom.step as i32);
            let bc2 = 1.0 - self.beta2.powi(mom.step as i32);
            let decay = 1.0 - self.lr * self.weight_decay;
            for (((w, g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(mom.m.iter_mut())
                .zip(mom.v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w = *w * decay - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(p: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.insert("p", Tensor::scalar(p), true);
        s.accumulate_grad(id, &Tensor::scalar(g), 1.0).unwrap();
        s
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut s = scalar_store(1.5, 0.0);
        AdamW::with_lr(0.1).step(&mut s).unwrap();
        assert_eq!(s.get("p").unwrap().data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the update is lr·g/(|g| + eps)
        let mut s = scalar_store(1.0, 1.0);
        AdamW::with_lr(0.1).step(&mut s).unwrap();
        let p = s.get("p").unwrap().data()[0];
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p - expected).abs() < 1e-15, "{p}");
        assert!((p - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_only() {
        let mut s = scalar_store(2.0, 0.0);
        let opt = AdamW {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamW::default()
        };
        opt.step(&mut s).unwrap();
        assert_eq!(s.get("p").unwrap().data(), &[2.0 * (1.0 - 0.1 * 0.5)]);
    }

    #[test]
    fn nan_gradient_aborts_with_name() {
        let mut s = scalar_store(1.0, f64::NAN);
        let err = AdamW::default().step(&mut s).unwrap_err();
        assert!(matches!(err, Error::NanGradient(ref n) if n == "p"));
        assert_eq!(s.get("p").unwrap().data(), &[1.0]);
    }

    #[test]
    fn frozen_parameters_untouched() {
        let mut s = ParamStore::new();
        s.insert("f", Tensor::scalar(3.0), false);
        let opt = AdamW {
            lr: 0.1,
            weight_decay: 1.0,
            ..AdamW::default()
        };
        opt.step(&mut s).unwrap();
        assert_eq!(s.get("f").unwrap().data(), &[3.0]);
    }
}
