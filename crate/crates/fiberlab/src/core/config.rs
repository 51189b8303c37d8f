//! Gating hyperparameters shared across the objective modules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters for the gated objectives.
///
/// * `delta` — total trust-region budget, split per sign channel as
///   `c_plus + c_minus = delta` (enforced within 1e-12).
/// * `c_plus`, `c_minus` — per-channel budgets for the aggregate gate. The
///   defaults keep `c_minus < c_plus`, compensating for the negative
///   channel's faster drift; the symmetric split is allowed.
/// * `epsilon` — token-level residual clip width (log space).
/// * `gamma` — discount factor in (0, 1].
/// * `eps_ppo`, `eps_gspo` — method-specific clip constants.
/// * `rollback_k` — slope parameter of the aggregate gate's rollback branch;
///   `None` uses the trajectory length.
/// * `sign_gated` — enable the pessimistic (minimize-function) clip variants
///   for PPO/GRPO/GSPO.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GatingConfigRepr", into = "GatingConfigRepr")]
pub struct GatingConfig {
    delta: f64,
    c_plus: f64,
    c_minus: f64,
    epsilon: f64,
    gamma: f64,
    eps_ppo: f64,
    eps_gspo: f64,
    rollback_k: Option<u64>,
    sign_gated: bool,
}

#[derive(Serialize, Deserialize)]
struct GatingConfigRepr {
    delta: f64,
    c_plus: f64,
    c_minus: f64,
    epsilon: f64,
    gamma: f64,
    eps_ppo: f64,
    eps_gspo: f64,
    #[serde(default)]
    rollback_k: Option<u64>,
    #[serde(default)]
    sign_gated: bool,
}

impl TryFrom<GatingConfigRepr> for GatingConfig {
    type Error = Error;
    fn try_from(r: GatingConfigRepr) -> Result<Self> {
        let mut cfg = GatingConfig::new(r.delta, r.c_plus, r.c_minus, r.epsilon, r.gamma)?;
        cfg = cfg.with_method_clips(r.eps_ppo, r.eps_gspo)?;
        cfg.rollback_k = r.rollback_k;
        cfg.sign_gated = r.sign_gated;
        if let Some(k) = r.rollback_k {
            if k == 0 {
                return Err(Error::InvalidConfig("rollback_k must be >= 1".into()));
            }
        }
        Ok(cfg)
    }
}

impl From<GatingConfig> for GatingConfigRepr {
    fn from(c: GatingConfig) -> Self {
        GatingConfigRepr {
            delta: c.delta,
            c_plus: c.c_plus,
            c_minus: c.c_minus,
            epsilon: c.epsilon,
            gamma: c.gamma,
            eps_ppo: c.eps_ppo,
            eps_gspo: c.eps_gspo,
            rollback_k: c.rollback_k,
            sign_gated: c.sign_gated,
        }
    }
}

impl GatingConfig {
    /// Validates ranges and the budget identity `c_plus + c_minus = delta`.
    pub fn new(delta: f64, c_plus: f64, c_minus: f64, epsilon: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [
            ("delta", delta),
            ("c_plus", c_plus),
            ("c_minus", c_minus),
            ("epsilon", epsilon),
            ("gamma", gamma),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("config field {name}")));
            }
        }
        if delta < 0.0 {
            return Err(Error::InvalidConfig(format!("delta {delta} < 0")));
        }
        if c_plus <= 0.0 || c_minus <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "channel budgets must be positive, got c_plus {c_plus}, c_minus {c_minus}"
            )));
        }
        if epsilon <= 0.0 {
            return Err(Error::InvalidConfig(format!("epsilon {epsilon} <= 0")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma {gamma} not in (0, 1]")));
        }
        if (c_plus + c_minus - delta).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "budget identity violated: c_plus + c_minus = {} != delta = {delta}",
                c_plus + c_minus
            )));
        }
        Ok(Self {
            delta,
            c_plus,
            c_minus,
            epsilon,
            gamma,
            eps_ppo: 0.2,
            eps_gspo: 4e-4,
            rollback_k: None,
            sign_gated: false,
        })
    }

    /// Demo defaults: ε = 0.04, C⁺ = 0.12, C⁻ = 0.05, rollback slope k = 32.
    pub fn demo_defaults() -> Self {
        let mut cfg = Self::new(0.17, 0.12, 0.05, 0.04, 1.0).expect("defaults are valid");
        cfg.rollback_k = Some(32);
        cfg
    }

    pub fn with_method_clips(mut self, eps_ppo: f64, eps_gspo: f64) -> Result<Self> {
        if eps_ppo <= 0.0 || eps_gspo <= 0.0 || eps_ppo.is_nan() || eps_gspo.is_nan() {
            return Err(Error::InvalidConfig(
                "method clip constants must be positive".into(),
            ));
        }
        self.eps_ppo = eps_ppo;
        self.eps_gspo = eps_gspo;
        Ok(self)
    }

    pub fn with_rollback_k(mut self, k: Option<u64>) -> Result<Self> {
        if let Some(0) = k {
            return Err(Error::InvalidConfig("rollback_k must be >= 1".into()));
        }
        self.rollback_k = k;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma {gamma} not in (0, 1]")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_sign_gated(mut self, sign_gated: bool) -> Self {
        self.sign_gated = sign_gated;
        self
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn c_plus(&self) -> f64 {
        self.c_plus
    }

    pub fn c_minus(&self) -> f64 {
        self.c_minus
    }

    /// Budget of the channel selected by a ±1 sign label.
    pub fn channel_budget(&self, sign: i8) -> f64 {
        if sign >= 0 {
            self.c_plus
        } else {
            self.c_minus
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eps_ppo(&self) -> f64 {
        self.eps_ppo
    }

    pub fn eps_gspo(&self) -> f64 {
        self.eps_gspo
    }

    /// Rollback slope for a trajectory of length `traj_len`.
    pub fn rollback_k_for(&self, traj_len: usize) -> u64 {
        self.rollback_k.unwrap_or(traj_len as u64)
    }

    pub fn sign_gated(&self) -> bool {
        self.sign_gated
    }
}
