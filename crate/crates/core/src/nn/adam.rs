use ndarray::Zip;

use super::dense::{DenseNetwork, Gradients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment accumulators for one network.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: Gradients,
    second: Gradients,
}

impl OptimizerState {
    pub fn new(net: &DenseNetwork, config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }
}

/// One bias-corrected Adam update, descending along `grads`.
pub fn adam_step(
    net: &mut DenseNetwork,
    grads: &Gradients,
    state: &mut OptimizerState,
) -> Result<()> {
    if !grads.matches(net) || !state.first.matches(net) {
        return Err(Error::InvalidInput(
            "gradient or optimizer shapes do not match the network".into(),
        ));
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    };
    for (k, layer) in net.layers_mut().iter_mut().enumerate() {
        Zip::from(&mut layer.weight)
            .and(&grads.weights[k])
            .and(&mut state.first.weights[k])
            .and(&mut state.second.weights[k])
            .for_each(update);
        Zip::from(&mut layer.bias)
            .and(&grads.biases[k])
            .and(&mut state.first.biases[k])
            .and(&mut state.second.biases[k])
            .for_each(update);
    }
    Ok(())
}
