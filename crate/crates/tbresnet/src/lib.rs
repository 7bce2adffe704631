//! Discrete choice models with a neural residual on the utility function.
//!
//! A choice among K alternatives is modeled by per-alternative utilities
//! `v_k = (1 - delta) * V_theory_k + delta * V_net_k` fed into a softmax,
//! where the theory component is a multinomial logit, a prospect-theory
//! value/weighting model, or a hyperbolic discounting model, and the
//! network component is a small feedforward ReLU net over all inputs.
//! Sweeping delta over [0, 1] interpolates between the interpretable pure
//! theory model and the flexible pure network, and the shape of the
//! test-metric curve over delta diagnoses how complete the theory is for
//! the data at hand.
//!
//! The crate provides synthetic data generation calibrated to published
//! survey moments, maximum-likelihood training (sequential or joint SGD),
//! prediction metrics, aggregate elasticities, utility-surface export,
//! gradient-sign and Gaussian input perturbations, and an empirical
//! Rademacher estimator. Everything is deterministic per seed; heavy loops
//! are data-parallel via rayon behind the default `parallel` feature, with
//! a sequential fallback when the feature is disabled.

pub mod dataset;
pub mod dcm;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod robustness;
pub mod surface;

pub use error::{Error, Result};
pub use model::{TbResNet, TrainConfig, TrainerKind};
