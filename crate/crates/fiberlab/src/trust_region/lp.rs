//! Per-state unit-TV maximizers and the sample-based TV trust-region oracle.

use serde::{Deserialize, Serialize};

use crate::core::Batch;
use crate::error::{Error, Result};
use crate::trust_region::DeviationTuple;

/// Per-state maximizer of Σ_a n Δ Â subject to the unit-TV constraint
/// (1/T_s) Σ n |Δ| = 1 and the probability constraint Σ n Δ = 0.
#[derive(Debug, Clone)]
pub struct StateUnitSolution {
    pub state: usize,
    /// Δ̂* per pair at this state, parallel to `StateInfo::pair_indices`.
    pub deviation: Vec<f64>,
    /// Optimal value M(s); `0` when every advantage at the state is equal.
    pub value: f64,
}

/// All per-state unit-TV solutions plus the undiscounted aggregate.
#[derive(Debug, Clone)]
pub struct UnitTvSolution {
    /// Parallel to `batch.states()`.
    pub per_state: Vec<StateUnitSolution>,
    /// Aggregate value at γ = 1, (1/T) Σ_s M(s); use [`discounted_m`] for
    /// γ < 1 weights.
    pub aggregate_value: f64,
}

impl UnitTvSolution {
    /// Assemble the per-pair unit deviations into a full tuple.
    pub fn deviation_tuple(&self, batch: &Batch) -> DeviationTuple {
        let mut values = vec![0.0; batch.pairs().len()];
        for (info, sol) in batch.states().iter().zip(&self.per_state) {
            for (&p, &d) in info.pair_indices.iter().zip(&sol.deviation) {
                values[p] = d;
            }
        }
        DeviationTuple::new(batch, values).expect("finite by construction")
    }
}

/// Closed-form per-state solution: mass +T_s/(2n) on an argmax-advantage
/// action and −T_s/(2n) on an argmin-advantage action, ties broken by lowest
/// action id. States with a single action or all-equal advantages get Δ̂* = 0
/// and M(s) = 0 (the probability constraint forces it).
pub fn unit_tv_maximizer(batch: &Batch) -> UnitTvSolution {
    let mut per_state = Vec::with_capacity(batch.states().len());
    let mut total = 0.0;
    for info in batch.states() {
        let t_s = info.count as f64;
        let k = info.pair_indices.len();
        let mut sol = StateUnitSolution {
            state: info.id,
            deviation: vec![0.0; k],
            value: 0.0,
        };
        if k >= 2 {
            let adv = |slot: usize| -> f64 { batch.pairs()[info.pair_indices[slot]].advantage };
            let mut hi = 0;
            let mut lo = 0;
            for slot in 1..k {
                if adv(slot) > adv(hi) {
                    hi = slot;
                }
                if adv(slot) < adv(lo) {
                    lo = slot;
                }
            }
            if adv(hi) > adv(lo) {
                let n_hi = batch.pairs()[info.pair_indices[hi]].count as f64;
                let n_lo = batch.pairs()[info.pair_indices[lo]].count as f64;
                sol.deviation[hi] = t_s / (2.0 * n_hi);
                sol.deviation[lo] = -t_s / (2.0 * n_lo);
                sol.value = t_s / 2.0 * (adv(hi) - adv(lo));
            }
        }
        total += sol.value;
        per_state.push(sol);
    }
    UnitTvSolution {
        per_state,
        aggregate_value: total / batch.total() as f64,
    }
}

/// Independent check of the closed form: enumerate every vertex of the
/// polytope {(1/T_s)Σ n|Δ| = 1, Σ nΔ = 0} — the ± two-action support points —
/// and take the best. Intended for small states (the enumeration is
/// quadratic in the action count).
pub fn unit_tv_vertex_oracle(batch: &Batch, state: usize) -> Result<StateUnitSolution> {
    let info = batch.state_info(state)?;
    let t_s = info.count as f64;
    let k = info.pair_indices.len();
    let mut best = StateUnitSolution {
        state,
        deviation: vec![0.0; k],
        value: 0.0,
    };
    let mut best_norm = 0.0;
    for plus in 0..k {
        for minus in 0..k {
            if plus == minus {
                continue;
            }
            let n_plus = batch.pairs()[info.pair_indices[plus]].count as f64;
            let n_minus = batch.pairs()[info.pair_indices[minus]].count as f64;
            let d_plus = t_s / (2.0 * n_plus);
            let d_minus = -t_s / (2.0 * n_minus);
            let value = n_plus * d_plus * batch.pairs()[info.pair_indices[plus]].advantage
                + n_minus * d_minus * batch.pairs()[info.pair_indices[minus]].advantage;
            let norm = n_plus * d_plus * d_plus + n_minus * d_minus * d_minus;
            let better = value > best.value + 1e-15
                || (value > best.value - 1e-15 && best.value > 0.0 && norm < best_norm - 1e-15);
            if better && value > 1e-15 {
                best.deviation = vec![0.0; k];
                best.deviation[plus] = d_plus;
                best.deviation[minus] = d_minus;
                best.value = value;
                best_norm = norm;
            }
        }
    }
    Ok(best)
}

/// Discounted state weights w_s = Γ(s)/(Γ·T_s), with
/// Γ(s) = Σ_{tokens at s} γ^t. At γ = 1 this is 1/T for every state.
pub fn state_weights(batch: &Batch, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidConfig(format!("gamma {gamma} not in (0, 1]")));
    }
    let mut gammas = Vec::with_capacity(batch.states().len());
    let mut total = 0.0;
    for info in batch.states() {
        let g: f64 = info
            .token_indices
            .iter()
            .map(|&i| gamma.powi(batch.token(i).timestep as i32))
            .sum();
        total += g;
        gammas.push(g);
    }
    Ok(batch
        .states()
        .iter()
        .zip(gammas)
        .map(|(info, g)| g / (total * info.count as f64))
        .collect())
}

/// Discount-weighted aggregate M = (1/Γ) Σ_s (Γ(s)/T_s) M(s).
pub fn discounted_m(batch: &Batch, solution: &UnitTvSolution, gamma: f64) -> Result<f64> {
    let weights = state_weights(batch, gamma)?;
    Ok(weights
        .iter()
        .zip(&solution.per_state)
        .map(|(w, s)| w * s.value)
        .sum())
}

/// Which closed form to use for the clipped objective's radius δ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeltaApcForm {
    /// (1 − γ)·M / (8γ‖Â‖∞) — identical to the trust-region step size t*;
    /// the form pinned by the equivalence harness.
    StepSize,
    /// (1 − γ)²·M / (8γ‖Â‖∞·T) — the alternative normalization carried as a
    /// config option.
    Normalized,
}

/// Radius δ of the clipped objective for a batch.
pub fn delta_apc(batch: &Batch, gamma: f64, form: DeltaApcForm) -> Result<f64> {
    let solution = unit_tv_maximizer(batch);
    let m = discounted_m(batch, &solution, gamma)?;
    let norm = batch.advantage_norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let base = (1.0 - gamma) * m / (8.0 * gamma * norm);
    Ok(match form {
        DeltaApcForm::StepSize => base,
        DeltaApcForm::Normalized => base * (1.0 - gamma) / batch.total() as f64,
    })
}

/// The penalized trust-region objective in deviation space, scaled by
/// (1 − γ) like the surrogated clipped objective:
///
/// j(Δ) = Σ_s w_s Σ_a n Δ Â − (4γ‖Â‖∞/(1 − γ)) · (max_s D̂_TV(s, Δ))².
///
/// Requires γ < 1 (the penalty diverges at γ = 1, where only the zero update
/// is admissible).
pub fn tv_trpo_objective(batch: &Batch, dev: &DeviationTuple, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidConfig(format!("gamma {gamma} not in (0, 1)")));
    }
    let weights = state_weights(batch, gamma)?;
    let mut linear = 0.0;
    for (si, info) in batch.states().iter().enumerate() {
        let term: f64 = info
            .pair_indices
            .iter()
            .map(|&p| {
                let pair = &batch.pairs()[p];
                pair.count as f64 * dev.value(p) * pair.advantage
            })
            .sum();
        linear += weights[si] * term;
    }
    let max_tv = dev.max_tv(batch);
    let penalty = 4.0 * gamma * batch.advantage_norm() / (1.0 - gamma) * max_tv * max_tv;
    Ok(linear - penalty)
}

/// Maximizer of the penalized trust-region objective: Δ* = t*·Δ̂* with
/// t* = (1 − γ)·M / (8γ‖Â‖∞).
///
/// At γ = 1 the radius vanishes and the only admissible update is the zero
/// deviation; states with M(s) = 0 get Δ = 0 by the smallest-norm tie-break.
pub fn tv_trpo_maximizer(batch: &Batch, gamma: f64) -> Result<DeviationTuple> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidConfig(format!("gamma {gamma} not in (0, 1]")));
    }
    if gamma == 1.0 {
        return Ok(DeviationTuple::zeros(batch));
    }
    let solution = unit_tv_maximizer(batch);
    let norm = batch.advantage_norm();
    if norm == 0.0 {
        return Ok(DeviationTuple::zeros(batch));
    }
    let m = discounted_m(batch, &solution, gamma)?;
    let t_star = (1.0 - gamma) * m / (8.0 * gamma * norm);
    let unit = solution.deviation_tuple(batch);
    let values = unit.values().iter().map(|d| t_star * d).collect();
    DeviationTuple::new(batch, values)
}
