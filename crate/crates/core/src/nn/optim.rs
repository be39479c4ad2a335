use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::params::{Moments, ParamStore};

/// Adam with bias correction. Moments and step counts live in the
/// [`ParamStore`], one set per parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    /// Updates every parameter that currently holds a gradient. Parameters
    /// without one (untouched by the last backward pass) are left as they
    /// are, moments included.
    pub fn step<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        let one = T::one();
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let Some(grad) = store.get_mut(id).grad.take() else {
                continue;
            };
            let n = grad.len();
            let mut mom = store.moments[id.0].take().unwrap_or_else(|| Moments {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
                t: 0,
            });
            mom.t += 1;
            let t = i32::try_from(mom.t).unwrap_or(i32::MAX);
            let c1 = one - b1.powi(t);
            let c2 = one - b2.powi(t);
            let param = store.get_mut(id);
            for (((p, &g), m), v) in param
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(mom.m.iter_mut())
                .zip(mom.v.iter_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
            param.grad = Some(grad);
            store.moments[id.0] = Some(mom);
        }
    }
}
