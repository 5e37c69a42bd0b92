use serde::{Deserialize, Serialize};

use super::Gradients;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub t: u64,
}

/// One bias-corrected Adam update of a flat parameter slice at step `t` (1-based).
pub fn adam_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    cfg: &AdamConfig,
) {
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let c1 = T::lit(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::lit(1.0 - cfg.beta2.powf(t as f64));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &Network<T>, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
        }
    }

    /// Applies one update. A non-finite gradient rejects the step and leaves
    /// both the network and the state untouched.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        if !self.m.is_congruent(net) || !grads.is_congruent(net) {
            return Err(Error::invalid("optimizer state is not congruent with the network"));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite(format!("gradient at Adam step {}", self.t + 1)));
        }
        self.t += 1;
        let ids: Vec<usize> = net.parameterized_layers().collect();
        for id in ids {
            let p = net.params_mut(id).expect("parameterized");
            let g = grads.layers[id].as_ref().expect("congruent");
            let m = self.m.layers[id].as_mut().expect("congruent");
            let v = self.v.layers[id].as_mut().expect("congruent");
            adam_update(
                p.weight.data_mut(),
                g.weight.data(),
                m.weight.data_mut(),
                v.weight.data_mut(),
                self.t,
                &self.config,
            );
            adam_update(
                p.bias.data_mut(),
                g.bias.data(),
                m.bias.data_mut(),
                v.bias.data_mut(),
                self.t,
                &self.config,
            );
        }
        Ok(())
    }
}
