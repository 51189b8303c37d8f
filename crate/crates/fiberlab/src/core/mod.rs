//! Finite MDP data model: spaces, tabular policies, batches, ratios, and the
//! finite-difference gradient engine shared by all objective modules.

mod batch;
mod config;
mod fd;
mod ratio;
mod space;

pub use batch::{center_advantages, Batch, PairInfo, StateInfo, Token, TrajectoryInfo};
pub use config::GatingConfig;
pub use fd::finite_diff_gradient;
pub use ratio::{compute_ratios, ratio_jacobian_wrt_logits, RatioTuple};
pub use space::{softmax_policy, PolicyTable, StateActionSpace};
