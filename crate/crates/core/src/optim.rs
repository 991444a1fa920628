//! Decoupled-weight-decay adaptive optimizer (AdamW).

use indexmap::IndexMap;

use crate::net::{OptimState, ParamStore};
use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamW {
    /// One update over every parameter with a gradient, in store order;
    /// parameters absent from `grads` (frozen or unused) are left untouched.
    pub fn apply<T: Scalar>(
        &self,
        params: &mut ParamStore<T>,
        state: &mut OptimState<T>,
        grads: &IndexMap<String, Tensor<T>>,
        lr: T,
    ) {
        state.step += 1;
        let t = state.step as f64;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one_m_b1 = T::one() - b1;
        let one_m_b2 = T::one() - b2;
        let bc1 = T::of(1.0 / (1.0 - self.beta1.powf(t)));
        let bc2 = T::of(1.0 / (1.0 - self.beta2.powf(t)));
        let eps = T::of(self.eps);
        let wd = T::of(self.weight_decay);

        let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
        for name in names {
            let Some(grad) = grads.get(&name) else {
                continue;
            };
            let p = params.get_mut(&name);
            let m = state
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = state
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let g = grad.data()[i];
                md[i] = b1 * md[i] + one_m_b1 * g;
                vd[i] = b2 * vd[i] + one_m_b2 * g * g;
                let mhat = md[i] * bc1;
                let vhat = vd[i] * bc2;
                pd[i] = pd[i] - lr * (mhat / (vhat.sqrt() + eps) + wd * pd[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::OptimState;

    #[test]
    fn adamw_descends_a_quadratic() {
        // Minimize f(p) = p^2 from p = 1.
        let mut params = ParamStore::<f64>::new();
        params.insert("p", Tensor::full(&[1], 1.0));
        let mut state = OptimState::default();
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        for _ in 0..400 {
            let p = params.get("p").data()[0];
            let mut grads = IndexMap::new();
            grads.insert("p".to_string(), Tensor::full(&[1], 2.0 * p));
            opt.apply(&mut params, &mut state, &grads, 0.05);
        }
        let p = params.get("p").data()[0];
        assert!(p.abs() < 1e-2, "converged to {p}");
        assert_eq!(state.step, 400);
    }

    #[test]
    fn frozen_parameters_stay_untouched() {
        let mut params = ParamStore::<f64>::new();
        params.insert("p", Tensor::full(&[1], 1.0));
        params.insert("frozen", Tensor::full(&[1], 2.0));
        let mut state = OptimState::default();
        let opt = AdamW::default();
        let mut grads = IndexMap::new();
        grads.insert("p".to_string(), Tensor::full(&[1], 1.0));
        opt.apply(&mut params, &mut state, &grads, 0.5);
        assert_ne!(params.get("p").data()[0], 1.0);
        assert_eq!(params.get("frozen").data()[0], 2.0);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut params = ParamStore::<f64>::new();
        params.insert("p", Tensor::full(&[1], 1.0));
        let mut state = OptimState::default();
        let opt = AdamW {
            weight_decay: 0.1,
            ..AdamW::default()
        };
        let mut grads = IndexMap::new();
        grads.insert("p".to_string(), Tensor::zeros(&[1]));
        opt.apply(&mut params, &mut state, &grads, 0.5);
        let p = params.get("p").data()[0];
        assert!((p - (1.0 - 0.5 * 0.1)).abs() < 1e-12, "decoupled decay: {p}");
    }
}
