//! Cross-coupled clipping (APC), the sample-based TV trust-region oracle,
//! the retraction operator, and the equivalence harness.
//!
//! The clipped objective allocates a per-state budget T_s·δ across all
//! same-state tokens: each token's clip bound is whatever budget the other
//! tokens have not consumed. Maximizing that unconstrained objective yields
//! the same update as the penalized TV trust-region objective; this module
//! holds both routes and the harness that checks they agree.

mod apc;
mod equivalence;
mod lp;

pub use apc::{
    apc_clip_bound, apc_objective, apc_objective_discounted, classify_zone, clip_to_budget,
    correction_term, retract, surrogated_apc_objective, ZoneLabel,
};
pub use equivalence::{
    equivalence_check, maximize_surrogated_apc, EquivalenceReport, OptimizerBudget,
};
pub use lp::{
    delta_apc, discounted_m, state_weights, tv_trpo_maximizer, tv_trpo_objective,
    unit_tv_maximizer, unit_tv_vertex_oracle, DeltaApcForm, StateUnitSolution, UnitTvSolution,
};

use crate::core::{Batch, RatioTuple};
use crate::error::{Error, Result};

/// Ratio deviations Δ = r − 1, stored per distinct (state, action) pair in
/// the batch's pair order.
///
/// When built from a valid policy pair over fully sampled states, each state
/// satisfies the probability constraint Σ_a n_{s,a} Δ_{s,a} = 0; synthetic
/// tuples are expected to satisfy it too before entering the retraction or
/// equivalence machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationTuple {
    values: Vec<f64>,
}

impl DeviationTuple {
    /// One deviation per batch pair.
    pub fn new(batch: &Batch, values: Vec<f64>) -> Result<Self> {
        if values.len() != batch.pairs().len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} pair deviations, got {}",
                batch.pairs().len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("deviation at pair {i}")));
        }
        Ok(Self { values })
    }

    pub fn zeros(batch: &Batch) -> Self {
        Self {
            values: vec![0.0; batch.pairs().len()],
        }
    }

    pub fn from_ratios(batch: &Batch, ratios: &RatioTuple) -> Self {
        let values = batch
            .pairs()
            .iter()
            .map(|p| ratios.value(p.token_indices[0]) - 1.0)
            .collect();
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, pair: usize) -> f64 {
        self.values[pair]
    }

    /// Per-token view: Δ of the pair carried by each token.
    pub fn token_values(&self, batch: &Batch) -> Vec<f64> {
        (0..batch.total())
            .map(|i| self.values[batch.token_pair(i)])
            .collect()
    }

    /// Per-state sample TV: (1/T_s) Σ_a n_{s,a} |Δ_{s,a}|.
    pub fn per_state_tv(&self, batch: &Batch, state_index: usize) -> f64 {
        let info = &batch.states()[state_index];
        let sum: f64 = info
            .pair_indices
            .iter()
            .map(|&p| batch.pairs()[p].count as f64 * self.values[p].abs())
            .sum();
        sum / info.count as f64
    }

    /// Max per-state sample TV.
    pub fn max_tv(&self, batch: &Batch) -> f64 {
        (0..batch.states().len())
            .map(|s| self.per_state_tv(batch, s))
            .fold(0.0, f64::max)
    }

    /// max_s |Σ_a n_{s,a} Δ_{s,a}| / T_s — zero when the probability
    /// constraint holds.
    pub fn probability_constraint_residual(&self, batch: &Batch) -> f64 {
        batch
            .states()
            .iter()
            .map(|info| {
                let sum: f64 = info
                    .pair_indices
                    .iter()
                    .map(|&p| batch.pairs()[p].count as f64 * self.values[p])
                    .sum();
                (sum / info.count as f64).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Sample-weighted squared norm Σ_s (1/T_s) Σ_a n |Δ|², the tie-break
    /// metric.
    pub fn l2_norm_sq(&self, batch: &Batch) -> f64 {
        batch
            .states()
            .iter()
            .map(|info| {
                info.pair_indices
                    .iter()
                    .map(|&p| batch.pairs()[p].count as f64 * self.values[p] * self.values[p])
                    .sum::<f64>()
                    / info.count as f64
            })
            .sum()
    }

    /// Max entrywise |Δ − other|.
    pub fn max_abs_diff(&self, other: &DeviationTuple) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
