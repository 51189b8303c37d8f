//! The ratio-gating surrogate evaluator and the PPO/GRPO/GSPO gating maps.
//!
//! Every surrogate in this crate has the same shape: a predetermined weight
//! per token, a gating map that transforms the full ratio tuple, and the
//! advantage estimates. A method is fully specified by that triple.

use std::fmt;
use std::str::FromStr;

use crate::core::{Batch, GatingConfig, RatioTuple};
use crate::error::{Error, Result};
use crate::fiberpo;

/// Method labels accepted by the CLI and the surrogate constructors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ppo,
    Grpo,
    Gspo,
    Apc,
    FiberPo,
    FiberPoDomain,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Method::Ppo),
            "grpo" => Ok(Method::Grpo),
            "gspo" => Ok(Method::Gspo),
            "apc" => Ok(Method::Apc),
            "fiberpo" => Ok(Method::FiberPo),
            "fiberpo-domain" => Ok(Method::FiberPoDomain),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Ppo => "ppo",
            Method::Grpo => "grpo",
            Method::Gspo => "gspo",
            Method::Apc => "apc",
            Method::FiberPo => "fiberpo",
            Method::FiberPoDomain => "fiberpo-domain",
        };
        f.write_str(s)
    }
}

/// A ratio-gating map: transforms the full tuple of importance ratios into a
/// gated value per token. Gates are stateless and reentrant.
pub trait RatioGate {
    fn gate(&self, batch: &Batch, ratios: &RatioTuple) -> Result<Vec<f64>>;
}

/// The identity gate, whose surrogate is the linear one.
pub struct IdentityGate;

impl RatioGate for IdentityGate {
    fn gate(&self, _batch: &Batch, ratios: &RatioTuple) -> Result<Vec<f64>> {
        Ok(ratios.values().to_vec())
    }
}

/// Token-wise clip gate shared by PPO and GRPO.
pub struct PpoGate {
    pub epsilon: f64,
    pub sign_gated: bool,
}

impl RatioGate for PpoGate {
    fn gate(&self, batch: &Batch, ratios: &RatioTuple) -> Result<Vec<f64>> {
        let advantages = batch.advantages();
        Ok((0..batch.total())
            .map(|i| {
                gate_ppo_value(
                    ratios.value(i),
                    self.epsilon,
                    advantages[i],
                    self.sign_gated,
                )
            })
            .collect())
    }
}

/// Trajectory-aggregate clip gate.
pub struct GspoGate {
    pub epsilon: f64,
    pub sign_gated: bool,
}

impl RatioGate for GspoGate {
    fn gate(&self, batch: &Batch, ratios: &RatioTuple) -> Result<Vec<f64>> {
        gate_gspo(batch, ratios, self.epsilon, self.sign_gated)
    }
}

/// A surrogate specification: weights, gate, and a display label.
pub struct RgfSpec {
    pub weights: Vec<f64>,
    pub gate: Box<dyn RatioGate>,
    pub label: String,
}

impl RgfSpec {
    /// Identity-gate spec with trajectory-normalized weights; its value is
    /// the linear surrogate.
    pub fn linear(batch: &Batch) -> Self {
        RgfSpec {
            weights: trajectory_weights(batch),
            gate: Box::new(IdentityGate),
            label: "linear".into(),
        }
    }

    /// PPO: per-token weight 1/T (equivalently n_{s,a}/T per distinct pair)
    /// and the token-wise clip gate.
    pub fn ppo(batch: &Batch, config: &GatingConfig) -> Self {
        let t = batch.total() as f64;
        RgfSpec {
            weights: vec![1.0 / t; batch.total()],
            gate: Box::new(PpoGate {
                epsilon: config.eps_ppo(),
                sign_gated: config.sign_gated(),
            }),
            label: "ppo".into(),
        }
    }

    /// GRPO: the same token-wise clip gate, with weights 1/(|Tj| T_τ).
    pub fn grpo(batch: &Batch, config: &GatingConfig) -> Self {
        RgfSpec {
            weights: trajectory_weights(batch),
            gate: Box::new(PpoGate {
                epsilon: config.eps_ppo(),
                sign_gated: config.sign_gated(),
            }),
            label: "grpo".into(),
        }
    }

    /// GSPO: trajectory-normalized weights and the aggregate clip gate.
    pub fn gspo(batch: &Batch, config: &GatingConfig) -> Self {
        RgfSpec {
            weights: trajectory_weights(batch),
            gate: Box::new(GspoGate {
                epsilon: config.eps_gspo(),
                sign_gated: config.sign_gated(),
            }),
            label: "gspo".into(),
        }
    }

    /// FiberPO's gate in spec form (weights 1/(|Tj| T_τ)).
    pub fn fiberpo(batch: &Batch, config: &GatingConfig) -> Self {
        struct FiberPoGate {
            config: GatingConfig,
        }
        impl RatioGate for FiberPoGate {
            fn gate(&self, batch: &Batch, ratios: &RatioTuple) -> Result<Vec<f64>> {
                fiberpo::fiberpo_gate(batch, ratios, &self.config)
            }
        }
        RgfSpec {
            weights: trajectory_weights(batch),
            gate: Box::new(FiberPoGate {
                config: config.clone(),
            }),
            label: "fiberpo".into(),
        }
    }
}

/// Per-token weights 1/(|Tj| · T_τ); they sum to 1 over the batch.
pub fn trajectory_weights(batch: &Batch) -> Vec<f64> {
    let num_traj = batch.num_trajectories() as f64;
    (0..batch.total())
        .map(|i| 1.0 / (num_traj * batch.token_traj_len(i) as f64))
        .collect()
}

/// Evaluate a surrogate: Σ_i μ_i · 𝒢(r)_i · Â_i.
///
/// A gate output that is non-positive or non-finite is rejected with the
/// offending token index.
pub fn eval_rgf(spec: &RgfSpec, batch: &Batch, ratios: &RatioTuple) -> Result<f64> {
    let gated = spec.gate.gate(batch, ratios)?;
    debug_assert_eq!(gated.len(), batch.total());
    let mut total = 0.0;
    for (i, &g) in gated.iter().enumerate() {
        if !g.is_finite() || g <= 0.0 {
            return Err(Error::GateOutput { token: i, value: g });
        }
        total += spec.weights[i] * g * batch.token(i).advantage;
    }
    Ok(total)
}

/// The PPO clip for a single ratio.
///
/// Plain variant: clip(r, 1 ± ε). Sign-gated (pessimistic) variant:
/// sign(Â) · min(clip(r, 1±ε) · sign(Â), r · sign(Â)).
pub fn gate_ppo_value(r: f64, epsilon: f64, advantage: f64, sign_gated: bool) -> f64 {
    let clipped = r.clamp(1.0 - epsilon, 1.0 + epsilon);
    if !sign_gated {
        return clipped;
    }
    let sign = if advantage >= 0.0 { 1.0 } else { -1.0 };
    sign * (clipped * sign).min(r * sign)
}

/// Token-wise PPO gate over a batch.
pub fn gate_ppo(batch: &Batch, ratios: &RatioTuple, epsilon: f64, sign_gated: bool) -> Vec<f64> {
    (0..batch.total())
        .map(|i| {
            gate_ppo_value(
                ratios.value(i),
                epsilon,
                batch.token(i).advantage,
                sign_gated,
            )
        })
        .collect()
}

/// GRPO shares PPO's token-wise gate; only the weights differ.
pub fn gate_grpo(batch: &Batch, ratios: &RatioTuple, epsilon: f64, sign_gated: bool) -> Vec<f64> {
    gate_ppo(batch, ratios, epsilon, sign_gated)
}

/// Geometric-mean aggregate ratio s_τ = (Π_t r_t)^{1/T_τ}.
pub fn gspo_aggregate(batch: &Batch, ratios: &RatioTuple, trajectory: usize) -> Result<f64> {
    let slot = batch.trajectory_slot(trajectory)?;
    let info = &batch.trajectories()[slot];
    let mean_log: f64 = info
        .token_indices
        .iter()
        .map(|&i| ratios.log(i))
        .sum::<f64>()
        / info.len as f64;
    Ok(mean_log.exp())
}

/// GSPO gate: every token of trajectory τ receives clip(s_τ, 1 ± ε); the
/// sign-gated variant applies the pessimistic min with the trajectory
/// advantage sign.
pub fn gate_gspo(
    batch: &Batch,
    ratios: &RatioTuple,
    epsilon: f64,
    sign_gated: bool,
) -> Result<Vec<f64>> {
    let mut gated = vec![0.0; batch.total()];
    for info in batch.trajectories() {
        let s_tau = gspo_aggregate(batch, ratios, info.id)?;
        let clipped = s_tau.clamp(1.0 - epsilon, 1.0 + epsilon);
        let value = if sign_gated {
            let adv_sum: f64 = info
                .token_indices
                .iter()
                .map(|&i| batch.token(i).advantage)
                .sum();
            let l_tau = if adv_sum >= 0.0 { 1.0 } else { -1.0 };
            l_tau * (clipped * l_tau).min(s_tau * l_tau)
        } else {
            clipped
        };
        for &i in &info.token_indices {
            gated[i] = value;
        }
    }
    Ok(gated)
}

/// Trajectory-mean advantage Â_τ, used when token advantages differ within a
/// trajectory.
pub fn trajectory_advantage(batch: &Batch, trajectory: usize) -> Result<f64> {
    let slot = batch.trajectory_slot(trajectory)?;
    let info = &batch.trajectories()[slot];
    let sum: f64 = info
        .token_indices
        .iter()
        .map(|&i| batch.token(i).advantage)
        .sum();
    Ok(sum / info.len as f64)
}

/// The classical trust-region radius (1 − γ)/(8γ); zero at γ = 1, where the
/// region collapses to the reference policy.
pub fn delta_trpo(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidConfig(format!("gamma {gamma} not in (0, 1]")));
    }
    Ok((1.0 - gamma) / (8.0 * gamma))
}
