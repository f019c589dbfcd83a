//! Coupling-flow generators with exact likelihoods, trainable by maximum
//! likelihood, adversarial and hybrid objectives, together with the tools
//! used to evaluate them: a memorizing mixture baseline, kernel density and
//! annealed importance sampling estimators, Jacobian spectra and
//! classifier-based sample scores.

// `!(x > 0.0)` is how argument checks reject NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod io;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod training;

pub use adversarial::{Critic, DivergenceKind, DivergenceSpec};
pub use error::{Error, Result};
pub use evaluation::{AisConfig, Classifier, GmmBaseline, SpectralReport};
pub use flow::{CouplingKind, FlowModel, Prior, PriorKind};
pub use io::{Dataset, ExperimentConfig};
pub use nn::{Activation, Mlp, Parameterized};
pub use tensor::{Tape, Tensor, Var};
pub use training::{MetricLog, Objective, TrainConfig, Trainer};
