//! Conditional diffusion models on analytic Gaussian-mixture laws: closed-form
//! diffused densities and scores, the diffused local polynomial score
//! approximator, a trainable MLP score network, reverse-SDE sampling, linear
//! inverse problems and the evaluation metrics tying them together.

pub mod densities;
pub mod diffused_poly;
pub mod error;
pub mod inverse;
pub mod eval;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod score_net;

pub use nalgebra;

pub use densities::{ConditionalDensitySpec, FastRateDensitySpec, GuidanceLaw, Sample};
pub use error::{Error, Result};
pub use schedule::DiffusionSchedule;
