//! Physics-informed neural networks for singularly perturbed
//! convection-diffusion-reaction equations, trained with a loss-threshold
//! curriculum that down-weights layer samples.
//!
//! The pieces, bottom up: [`autodiff`] (second-order forward jets and exact
//! parameter gradients of input derivatives), [`network`] (tanh MLP),
//! [`optim`], [`problems`] (benchmark PDEs), [`sampling`], [`curriculum`],
//! [`trainer`], [`metrics`] and the experiment runner in [`cli`].

pub mod autodiff;
pub mod cli;
pub mod curriculum;
pub mod error;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod problems;
pub mod sampling;
pub mod seeding;
pub mod svg;
pub mod trainer;

pub use autodiff::{Jet2, PointDerivs, Surrogate};
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use network::{init_xavier, MlpModel, XavierScheme};
pub use problems::{PdeProblem, ProblemId};
pub use trainer::{train, TrainConfig, TrainingLog};
