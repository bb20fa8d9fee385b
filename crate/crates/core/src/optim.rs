//! SGD and Adam.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamGradient;
use crate::error::{Error, Result};
use crate::network::MlpModel;

/// Gradients above this magnitude are logged but still applied.
pub const LARGE_GRADIENT_WARNING: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::config(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

/// Bias-corrected Adam with the usual defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(model: &MlpModel, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; model.num_params()],
            v: vec![0.0; model.num_params()],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&mut self, model: &mut MlpModel, grad: &ParamGradient) -> Result<()> {
        check_gradient(model, grad)?;
        if self.m.len() != model.num_params() {
            return Err(Error::config("Adam moments are not congruent with the model"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in model
            .params_mut()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `θ ← θ - η ∇θ`.
pub fn sgd_step(model: &mut MlpModel, grad: &ParamGradient, lr: f64) -> Result<()> {
    check_gradient(model, grad)?;
    for (p, g) in model.params_mut().iter_mut().zip(grad.as_slice()) {
        *p -= lr * g;
    }
    Ok(())
}

fn check_gradient(model: &MlpModel, grad: &ParamGradient) -> Result<()> {
    if !grad.is_congruent(model) {
        return Err(Error::config("gradient shape does not match the model"));
    }
    if !grad.all_finite() {
        return Err(Error::diverged(0, Vec::new()));
    }
    let big = grad.norm_inf();
    if big > LARGE_GRADIENT_WARNING {
        log::warn!("gradient magnitude {big:.3e} exceeds {LARGE_GRADIENT_WARNING:.0e}");
    }
    Ok(())
}

/// One optimizer instance per training run.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, model: &MlpModel, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(model, lr)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grad: &ParamGradient) -> Result<()> {
        match self {
            Optimizer::Adam(state) => state.step(model, grad),
            Optimizer::Sgd { lr } => sgd_step(model, grad, *lr),
        }
    }
}
