//! The two-level gated objective: a trajectory-level base weight built from
//! sign-split aggregate drifts, times a token-level gated residual.
//!
//! Per trajectory, positive and negative log-ratio parts are averaged into
//! the signed aggregates log s±. Each channel is gated by the
//! piecewise-linear `g_agg` (pass-through / rollback / zeroed) under its own
//! budget C±, producing the base weight. Each token's deviation from its
//! same-sign aggregate is clipped in log space by ε, producing the gated
//! residual. The product recovers the raw ratio whenever every gate is in
//! pass-through.

use serde::{Deserialize, Serialize};

use crate::core::{Batch, GatingConfig, RatioTuple};
use crate::error::{Error, Result};
use crate::fbg::{Density, FbgInstance, FiniteBundle, MarkovKernel};
use crate::rgf::trajectory_weights;

/// Per-trajectory signed aggregate drifts, both non-negative:
/// log s⁺ = (1/T_τ) Σ max(log r, 0) and log s⁻ = (1/T_τ) Σ max(−log r, 0).
/// Their difference is the trajectory mean log-ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedAggregates {
    pub log_s_plus: f64,
    pub log_s_minus: f64,
}

impl SignedAggregates {
    /// Mean log-ratio of the trajectory, log s⁺ − log s⁻.
    pub fn mean_log_ratio(&self) -> f64 {
        self.log_s_plus - self.log_s_minus
    }

    /// Aggregate of the channel selected by a sign label.
    pub fn channel(&self, sign: i8) -> f64 {
        if sign >= 0 {
            self.log_s_plus
        } else {
            self.log_s_minus
        }
    }
}

/// Signed aggregates of every trajectory, in batch trajectory-slot order.
pub fn signed_aggregates_all(batch: &Batch, ratios: &RatioTuple) -> Vec<SignedAggregates> {
    batch
        .trajectories()
        .iter()
        .map(|info| {
            let mut plus = 0.0;
            let mut minus = 0.0;
            for &i in &info.token_indices {
                let lg = ratios.log(i);
                plus += lg.max(0.0);
                minus += (-lg).max(0.0);
            }
            SignedAggregates {
                log_s_plus: plus / info.len as f64,
                log_s_minus: minus / info.len as f64,
            }
        })
        .collect()
}

/// Signed aggregates of one trajectory by id.
pub fn signed_aggregates(
    batch: &Batch,
    ratios: &RatioTuple,
    trajectory: usize,
) -> Result<SignedAggregates> {
    let slot = batch.trajectory_slot(trajectory)?;
    Ok(signed_aggregates_all(batch, ratios)[slot])
}

/// The three-branch aggregate gate:
///
/// ```text
/// g_agg(x, C, k) = x                         if |x| <= C      (pass-through)
///                = sign(x)(k+1)C - kx        if C < |x| < (1 + 1/k)C  (rollback)
///                = 0                         otherwise        (zeroed)
/// ```
///
/// Continuous and odd; the rollback branch has width C/k and slope −k, so
/// the gate approaches a hard clip at ±C as k grows. Boundaries follow the
/// branch inequalities: pass-through and zeroed are closed, rollback open.
pub fn g_agg(x: f64, c: f64, k: u64) -> f64 {
    debug_assert!(c > 0.0, "budget must be positive (validated in config)");
    debug_assert!(k >= 1);
    let kf = k as f64;
    let ax = x.abs();
    if ax <= c {
        x
    } else if ax < (1.0 + 1.0 / kf) * c {
        x.signum() * (kf + 1.0) * c - kf * x
    } else {
        0.0
    }
}

/// Branch derivative of `g_agg`: 1 / −k / 0, following the same branch
/// selection as the value (closed pass-through and zeroed boundaries).
pub fn g_agg_deriv(x: f64, c: f64, k: u64) -> f64 {
    let kf = k as f64;
    let ax = x.abs();
    if ax <= c {
        1.0
    } else if ax < (1.0 + 1.0 / kf) * c {
        -kf
    } else {
        0.0
    }
}

/// Gate regime of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelZone {
    Pass,
    Rollback,
    Zeroed,
}

/// Which branch of `g_agg` the argument falls in.
pub fn channel_zone(x: f64, c: f64, k: u64) -> ChannelZone {
    let ax = x.abs();
    if ax <= c {
        ChannelZone::Pass
    } else if ax < (1.0 + 1.0 / k as f64) * c {
        ChannelZone::Rollback
    } else {
        ChannelZone::Zeroed
    }
}

/// logclip(x, ε) = exp(clip(log x, ±ε)): clamp a positive ratio to the
/// asymmetric band [e^−ε, e^ε].
pub fn logclip(x: f64, epsilon: f64) -> f64 {
    debug_assert!(x > 0.0);
    x.ln().clamp(-epsilon, epsilon).exp()
}

/// Per-token gate state: sign label, fiber residual, opposite-sign
/// aggregate, and whether each ε-clip is inactive.
#[derive(Debug, Clone, Copy)]
pub struct TokenGateState {
    /// l = sign(log r); +1 at log r = 0 (the channel contribution is zero
    /// either way, so the objective value does not depend on this tie-break).
    pub sign_label: i8,
    /// u = l·log r − log s^(l).
    pub fiber_residual: f64,
    /// v = −log s^(−l).
    pub opposite_aggregate: f64,
    /// |u| ≤ ε.
    pub u_unclipped: bool,
    /// |v| ≤ ε.
    pub v_unclipped: bool,
}

/// Gate states of every token, in token order.
pub fn token_gate_states(
    batch: &Batch,
    ratios: &RatioTuple,
    config: &GatingConfig,
) -> Vec<TokenGateState> {
    let aggs = signed_aggregates_all(batch, ratios);
    (0..batch.total())
        .map(|i| token_gate_state(ratios.log(i), &aggs[batch.token_trajectory(i)], config))
        .collect()
}

fn token_gate_state(log_r: f64, aggs: &SignedAggregates, config: &GatingConfig) -> TokenGateState {
    let sign_label: i8 = if log_r >= 0.0 { 1 } else { -1 };
    let l = sign_label as f64;
    let u = l * log_r - aggs.channel(sign_label);
    let v = -aggs.channel(-sign_label);
    TokenGateState {
        sign_label,
        fiber_residual: u,
        opposite_aggregate: v,
        u_unclipped: u.abs() <= config.epsilon(),
        v_unclipped: v.abs() <= config.epsilon(),
    }
}

/// Gated residual r̃ = exp(clip(l·u, ±ε) − clip(l·v, ±ε)).
pub fn gated_residual(state: &TokenGateState, epsilon: f64) -> f64 {
    let l = state.sign_label as f64;
    let num = (l * state.fiber_residual).clamp(-epsilon, epsilon);
    let den = (l * state.opposite_aggregate).clamp(-epsilon, epsilon);
    (num - den).exp()
}

/// Base weight of one trajectory:
/// w = exp(g_agg(log s⁺, C⁺, k) − g_agg(log s⁻, C⁻, k)).
pub fn base_weight(aggs: &SignedAggregates, config: &GatingConfig, traj_len: usize) -> f64 {
    let k = config.rollback_k_for(traj_len);
    (g_agg(aggs.log_s_plus, config.c_plus(), k) - g_agg(aggs.log_s_minus, config.c_minus(), k))
        .exp()
}

/// Base weights of every trajectory, in slot order.
pub fn base_weights(batch: &Batch, aggs: &[SignedAggregates], config: &GatingConfig) -> Vec<f64> {
    batch
        .trajectories()
        .iter()
        .zip(aggs)
        .map(|(info, a)| base_weight(a, config, info.len))
        .collect()
}

/// The full gating map: 𝒢(r)_i = w_base(τ_i) · r̃_i per token.
pub fn fiberpo_gate(batch: &Batch, ratios: &RatioTuple, config: &GatingConfig) -> Result<Vec<f64>> {
    let aggs = signed_aggregates_all(batch, ratios);
    let weights = base_weights(batch, &aggs, config);
    Ok((0..batch.total())
        .map(|i| {
            let state = token_gate_state(ratios.log(i), &aggs[batch.token_trajectory(i)], config);
            weights[batch.token_trajectory(i)] * gated_residual(&state, config.epsilon())
        })
        .collect())
}

/// Objective value Σ_i (1/(|Tj|·T_τ)) · 𝒢(r)_i · Â_i.
pub fn fiberpo_objective(batch: &Batch, ratios: &RatioTuple, config: &GatingConfig) -> Result<f64> {
    let gated = fiberpo_gate(batch, ratios, config)?;
    let mu = trajectory_weights(batch);
    Ok(gated
        .iter()
        .zip(&mu)
        .zip(batch.tokens())
        .map(|((g, w), t)| w * g * t.advantage)
        .sum())
}

/// Objective with the base weight forced to 1 (fiber gating only); the value
/// the full objective collapses to once both channels are zeroed.
pub fn fiberpo_objective_no_reweighting(
    batch: &Batch,
    ratios: &RatioTuple,
    config: &GatingConfig,
) -> Result<f64> {
    let aggs = signed_aggregates_all(batch, ratios);
    let mu = trajectory_weights(batch);
    Ok((0..batch.total())
        .map(|i| {
            let state = token_gate_state(ratios.log(i), &aggs[batch.token_trajectory(i)], config);
            mu[i] * gated_residual(&state, config.epsilon()) * batch.token(i).advantage
        })
        .sum())
}

/// Analytic Jacobian 𝔍_ij = ∂𝒢(r)_i/∂r_j over token pairs.
///
/// Block-diagonal over trajectories (exactly zero across them). Within a
/// trajectory:
///
/// ```text
/// J_ij = G_i/r_j · [ 1{|u_i|<=eps} 1{i=j}
///        + (1/T_tau) (gamma^(l_j) - 1{|u_i|<=eps} 1{l_i=l_j}
///                                 - 1{|v_i|<=eps} (1 - 1{l_i=l_j})) ]
/// ```
///
/// where γ^(l) is the branch derivative of the base gate on channel l. At
/// exact regime boundaries (measure zero) the closed-branch derivative is
/// reported.
pub fn fiberpo_jacobian(
    batch: &Batch,
    ratios: &RatioTuple,
    config: &GatingConfig,
) -> Result<Vec<Vec<f64>>> {
    let t = batch.total();
    let aggs = signed_aggregates_all(batch, ratios);
    let base = base_weights(batch, &aggs, config);
    let mut jac = vec![vec![0.0; t]; t];
    for info in batch.trajectories() {
        let slot = batch.trajectory_slot(info.id)?;
        let agg = &aggs[slot];
        let t_tau = info.len as f64;
        let k = config.rollback_k_for(info.len);
        let gamma_plus = g_agg_deriv(agg.log_s_plus, config.c_plus(), k);
        let gamma_minus = g_agg_deriv(agg.log_s_minus, config.c_minus(), k);
        for &i in &info.token_indices {
            let state_i = token_gate_state(ratios.log(i), agg, config);
            let g_i = base[slot] * gated_residual(&state_i, config.epsilon());
            let self_term = if state_i.u_unclipped { 1.0 } else { 0.0 };
            for &j in &info.token_indices {
                let state_j = token_gate_state(ratios.log(j), agg, config);
                let gamma_lj = if state_j.sign_label >= 0 {
                    gamma_plus
                } else {
                    gamma_minus
                };
                let same_sign = state_i.sign_label == state_j.sign_label;
                let coupling = gamma_lj
                    - if state_i.u_unclipped && same_sign {
                        1.0
                    } else {
                        0.0
                    }
                    - if state_i.v_unclipped && !same_sign {
                        1.0
                    } else {
                        0.0
                    };
                let bracket = if i == j { self_term } else { 0.0 } + coupling / t_tau;
                jac[i][j] = g_i / ratios.value(j) * bracket;
            }
        }
    }
    Ok(jac)
}

/// Local (fiber-clip) regime of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalRegime {
    /// No ε-clip active: max_i |u_i| < ε.
    L1,
    /// Some but not all tokens clipped.
    L2,
    /// Every token clipped: min_i |u_i| ≥ ε.
    L3,
}

impl std::fmt::Display for LocalRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LocalRegime::L1 => "L1",
            LocalRegime::L2 => "L2",
            LocalRegime::L3 => "L3",
        })
    }
}

/// Global (base-gate) regime of a trajectory, from the two channel zones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlobalRegime {
    /// Both channels pass through: the base gate is transparent.
    G1,
    /// Exactly one channel rolling back, the other passing through.
    G2r,
    /// Exactly one channel fully gated, the other passing through.
    G2,
    /// Both channels past their budgets, at least one still rolling back.
    G3r,
    /// Both channels fully gated: the base weight is exactly 1.
    G3,
}

impl std::fmt::Display for GlobalRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GlobalRegime::G1 => "G1",
            GlobalRegime::G2r => "G2r",
            GlobalRegime::G2 => "G2",
            GlobalRegime::G3r => "G3r",
            GlobalRegime::G3 => "G3",
        })
    }
}

/// Joint local/global regime of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub local: LocalRegime,
    pub global: GlobalRegime,
}

/// Combine the two channel zones into the five-way global regime.
pub fn global_regime(zone_plus: ChannelZone, zone_minus: ChannelZone) -> GlobalRegime {
    use ChannelZone::*;
    match (zone_plus, zone_minus) {
        (Pass, Pass) => GlobalRegime::G1,
        (Rollback, Pass) | (Pass, Rollback) => GlobalRegime::G2r,
        (Zeroed, Pass) | (Pass, Zeroed) => GlobalRegime::G2,
        (Zeroed, Zeroed) => GlobalRegime::G3,
        _ => GlobalRegime::G3r,
    }
}

/// Classify every trajectory, in slot order.
pub fn classify_regimes(
    batch: &Batch,
    ratios: &RatioTuple,
    config: &GatingConfig,
) -> Vec<RegimeLabel> {
    let aggs = signed_aggregates_all(batch, ratios);
    batch
        .trajectories()
        .iter()
        .zip(&aggs)
        .map(|(info, agg)| {
            let k = config.rollback_k_for(info.len);
            let clipped = info
                .token_indices
                .iter()
                .filter(|&&i| {
                    let state = token_gate_state(ratios.log(i), agg, config);
                    state.fiber_residual.abs() >= config.epsilon()
                })
                .count();
            let local = if clipped == 0 {
                LocalRegime::L1
            } else if clipped == info.len {
                LocalRegime::L3
            } else {
                LocalRegime::L2
            };
            let global = global_regime(
                channel_zone(agg.log_s_plus, config.c_plus(), k),
                channel_zone(agg.log_s_minus, config.c_minus(), k),
            );
            RegimeLabel { local, global }
        })
        .collect()
}

/// The gating map realized through the generic bundle machinery: total space
/// = tokens × sign channels, base = trajectories × sign channels, uniform
/// 1/T_τ reflecting kernel, aggregate gate per base point, and the ε/T_τ
/// clip per fiber point. `gate_ratios` through this instance agrees with
/// [`fiberpo_gate`] up to float association.
pub fn fbg_instance(batch: &Batch, config: &GatingConfig) -> Result<FbgInstance> {
    let t = batch.total();
    let projection = (0..2 * t)
        .map(|e| 2 * batch.token_trajectory(e / 2) + e % 2)
        .collect();
    let bundle = FiniteBundle::new(2 * batch.num_trajectories(), projection)?;
    let kernel_weights = (0..2 * t)
        .map(|e| 1.0 / batch.token_traj_len(e / 2) as f64)
        .collect();
    let kernel = MarkovKernel::new(&bundle, kernel_weights)?;

    let base_params: Vec<(f64, u64)> = batch
        .trajectories()
        .iter()
        .flat_map(|info| {
            let k = config.rollback_k_for(info.len);
            [(config.c_plus(), k), (config.c_minus(), k)]
        })
        .collect();
    let fiber_eps: Vec<f64> = (0..2 * t)
        .map(|e| config.epsilon() / batch.token_traj_len(e / 2) as f64)
        .collect();
    let traj_lens: Vec<f64> = (0..t).map(|i| batch.token_traj_len(i) as f64).collect();
    let decompose_lens = traj_lens.clone();

    Ok(FbgInstance {
        bundle,
        kernel,
        base_gate: Box::new(move |b, x| {
            let (c, k) = base_params[b];
            g_agg(x, c, k)
        }),
        fiber_gate: Box::new(move |e, x, _p| x.clamp(-fiber_eps[e], fiber_eps[e])),
        decompose: Box::new(move |ratios: &RatioTuple| {
            let mut weights = vec![0.0; 2 * decompose_lens.len()];
            for (i, &len) in decompose_lens.iter().enumerate() {
                let lg = ratios.log(i);
                weights[2 * i] = lg.max(0.0) / len;
                weights[2 * i + 1] = (-lg).max(0.0) / len;
            }
            Density::new(weights)
        }),
        recover: Box::new(move |density: &Density| {
            traj_lens
                .iter()
                .enumerate()
                .map(|(i, &len)| {
                    (len * (density.weights[2 * i] - density.weights[2 * i + 1])).exp()
                })
                .collect()
        }),
        weights: trajectory_weights(batch),
    })
}

/// Structured error for budget misuse outside config validation.
pub fn require_budgets(config: &GatingConfig) -> Result<()> {
    if (config.c_plus() + config.c_minus() - config.delta()).abs() > 1e-12 {
        return Err(Error::InvalidConfig("budget identity violated".into()));
    }
    Ok(())
}
