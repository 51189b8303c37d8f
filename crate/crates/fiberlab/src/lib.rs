//! A desk-scale numerical laboratory for ratio-gated policy-optimization
//! objectives over finite tabular policies.
//!
//! The crate implements a family of surrogate objectives that all share one
//! algebraic skeleton — a weighted sum of gated importance ratios times
//! advantages — and the machinery needed to verify their analytic claims:
//!
//! * [`core`]: finite state–action spaces, tabular softmax policies, sampled
//!   batches of augmented tokens `(s, a, trajectory, timestep)`, importance
//!   ratios, and a central finite-difference gradient engine.
//! * [`divergence`]: per-state / average / max / trajectory-normalized TV and
//!   KL estimators in ratio form.
//! * [`rgf`]: the ratio-gating surrogate evaluator plus the PPO, GRPO, and
//!   GSPO gating maps as pluggable instances.
//! * [`trust_region`]: the cross-coupled clipping objective (APC) that is
//!   equivalent to sample-based TV trust-region optimization, its clip-zone
//!   classification, the unit-TV linear-program maximizer, the retraction
//!   operator, and the equivalence harness.
//! * [`fbg`]: generic fiber-bundle gating over finite total/base spaces —
//!   densities, pushforward, reflecting Markov kernels, residual
//!   decomposition, and a first-order-agreement checker.
//! * [`fiberpo`]: the concrete two-level objective with trajectory-level
//!   signed aggregate gates and token-level residual clipping, its analytic
//!   Jacobian, and regime classification.
//! * [`fgh`]: the stratified generalization (chains of fibrations) and the
//!   four-level domain/group/trajectory/token instantiation.
//!
//! All types are immutable after construction and every operation is a pure
//! function of its inputs; everything is plain `f64`.

pub mod core;
pub mod divergence;
pub mod error;
pub mod fbg;
pub mod fgh;
pub mod fiberpo;
pub mod rgf;
pub mod synth;
pub mod trust_region;

pub use crate::core::{
    finite_diff_gradient, Batch, GatingConfig, PolicyTable, RatioTuple, StateActionSpace, Token,
};
pub use crate::error::{Error, Result};
