use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(numel: usize, config: AdamConfig) -> Self {
        AdamState {
            m: vec![T::zero(); numel],
            v: vec![T::zero(); numel],
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update of `param` from its accumulated gradient.
pub fn adam_step<T: Scalar>(param: &mut Tensor<T>, state: &mut AdamState<T>) -> Result<()> {
    let numel = param.numel();
    if state.m.len() != numel {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            left: param.shape().to_vec(),
            right: vec![state.m.len()],
        });
    }
    let grad = param
        .grad()
        .ok_or_else(|| Error::MissingGrad(format!("parameter of shape {:?}", param.shape())))?
        .to_vec();

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
    let bias1 = T::of(1.0 - c.beta1.powi(t));
    let bias2 = T::of(1.0 - c.beta2.powi(t));
    let lr = T::of(c.learning_rate);
    let eps = T::of(c.epsilon);

    let data = param.data_mut();
    for i in 0..numel {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + one_b1 * g;
        state.v[i] = b2 * state.v[i] + one_b2 * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every trainable tensor of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar = f32> {
    states: Vec<Option<AdamState<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let states = store
            .entries()
            .iter()
            .map(|e| e.trainable.then(|| AdamState::new(e.tensor.numel(), config)))
            .collect();
        Adam { states }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (entry, state) in store.iter_mut().zip(&mut self.states) {
            if let Some(state) = state {
                adam_step(&mut entry.tensor, state)?;
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.iter().flatten().map(|s| s.step).max().unwrap_or(0)
    }
}
