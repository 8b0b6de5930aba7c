//! AdamW with bias-corrected moments and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::encoder::Weights;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Weights,
    pub v: Weights,
    pub t: u64,
}

impl AdamState {
    pub fn new(like: &Weights) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }
}

fn same_shapes(a: &Weights, b: &Weights) -> bool {
    let (ta, tb) = (a.tensors(), b.tensors());
    ta.len() == tb.len() && ta.iter().zip(&tb).all(|((_, x), (_, y))| x.shape() == y.shape())
}

/// One in-place update of `params` from `grads`.
pub fn optimizer_step(params: &mut Weights, grads: &Weights, state: &mut AdamState, hyper: &AdamWConfig) -> Result<()> {
    if !same_shapes(params, grads) || !same_shapes(params, &state.m) {
        return Err(Error::InvalidConfig("parameter and gradient shapes differ".into()));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let lr = hyper.learning_rate;
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()));
    for (((_, mut p), (_, g)), ((_, mut m), (_, mut v))) in tensors {
        ndarray::Zip::from(&mut p)
            .and(&g)
            .and(&mut m)
            .and(&mut v)
            .for_each(|p, &g, m, v| {
                *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
                *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * (m_hat / (v_hat.sqrt() + hyper.eps) + hyper.weight_decay * *p);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, EncoderConfig, EncoderVariant};

    fn weights() -> Weights {
        init_params(&EncoderConfig {
            vocab_size: 5,
            d_model: 4,
            variant: EncoderVariant::BagOfEmbeddings,
            max_len: 4,
            ..Default::default()
        })
        .unwrap()
        .weights
    }

    fn fill(w: &mut Weights, value: f64) {
        for (_, mut t) in w.tensors_mut() {
            t.fill(value);
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut p = weights();
        let before = p.clone();
        let g = p.zeros_like();
        let mut state = AdamState::new(&p);
        let hyper = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..3 {
            optimizer_step(&mut p, &g, &mut state, &hyper).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = weights();
        fill(&mut p, 0.5);
        let mut g = p.zeros_like();
        fill(&mut g, 1.0);
        let mut state = AdamState::new(&p);
        let hyper = AdamWConfig {
            learning_rate: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        optimizer_step(&mut p, &g, &mut state, &hyper).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let expected = 0.5 - 0.01 / (1.0 + 1e-8);
        for (_, t) in p.tensors() {
            for &x in t.iter() {
                assert!((x - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_gradient_with_decay_is_multiplicative() {
        let mut p = weights();
        let before = p.clone();
        let g = p.zeros_like();
        let mut state = AdamState::new(&p);
        let hyper = AdamWConfig {
            learning_rate: 0.1,
            weight_decay: 0.2,
            ..Default::default()
        };
        optimizer_step(&mut p, &g, &mut state, &hyper).unwrap();
        for ((_, a), (_, b)) in p.tensors().iter().zip(before.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y * (1.0 - 0.1 * 0.2)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = weights();
        let mut g = p.zeros_like();
        g.token_emb[[0, 0]] = f64::NAN;
        let mut state = AdamState::new(&p);
        assert!(optimizer_step(&mut p, &g, &mut state, &AdamWConfig::default()).is_err());
        assert_eq!(state.t, 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = weights();
        let other = init_params(&EncoderConfig {
            vocab_size: 6,
            d_model: 4,
            variant: EncoderVariant::BagOfEmbeddings,
            max_len: 4,
            ..Default::default()
        })
        .unwrap()
        .weights;
        let mut state = AdamState::new(&p);
        assert!(optimizer_step(&mut p, &other, &mut state, &AdamWConfig::default()).is_err());
    }
}
