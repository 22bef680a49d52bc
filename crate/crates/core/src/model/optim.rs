use super::{ParamGradients, ToyTransducerParams};

/// Bias-corrected adaptive moment estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: ParamGradients,
    pub second_moment: ParamGradients,
    pub step: u64,
    pub learning_rate: f64,
}

impl OptimizerState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(params: &ToyTransducerParams, learning_rate: f64) -> Self {
        Self {
            first_moment: ParamGradients::zeros_like(params),
            second_moment: ParamGradients::zeros_like(params),
            step: 0,
            learning_rate,
        }
    }
}

pub fn optimizer_step(
    params: &mut ToyTransducerParams,
    grads: &ParamGradients,
    state: &mut OptimizerState,
) {
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(OptimizerState::BETA1, t);
    let c2 = 1.0 - libm::pow(OptimizerState::BETA2, t);
    let lr = state.learning_rate;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut())
    {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = OptimizerState::BETA1 * *m + (1.0 - OptimizerState::BETA1) * g;
            *v = OptimizerState::BETA2 * *v + (1.0 - OptimizerState::BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + OptimizerState::EPSILON);
        }
    }
}
