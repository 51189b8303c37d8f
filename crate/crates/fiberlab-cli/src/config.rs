//! Experiment configuration, loaded from JSON with full defaults.

use serde::{Deserialize, Serialize};

use fiberlab::core::GatingConfig;

/// Top-level configuration shared by all subcommands. The seed fully
/// determines every random draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Method labels whose objectives the sweep emits, in column order.
    pub methods: Vec<String>,
    pub gating: GatingConfig,
    pub batch: BatchShape,
    pub sweep: SweepConfig,
    pub simplex: SimplexConfig,
    pub equivalence: EquivalenceConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            methods: vec!["fiberpo".into(), "grpo".into(), "gspo".into()],
            gating: GatingConfig::demo_defaults(),
            batch: BatchShape::default(),
            sweep: SweepConfig::default(),
            simplex: SimplexConfig::default(),
            equivalence: EquivalenceConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

/// Shape of generated batches.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchShape {
    pub num_trajectories: usize,
    pub trajectory_length: usize,
    pub num_states: usize,
    pub actions_per_state: usize,
    /// Logit perturbation scale between the old and new policies.
    pub drift_scale: f64,
    /// Prompt groups and domains for the generated assignment file.
    pub num_groups: usize,
    pub num_domains: usize,
}

impl Default for BatchShape {
    fn default() -> Self {
        Self {
            num_trajectories: 4,
            trajectory_length: 8,
            num_states: 5,
            actions_per_state: 3,
            drift_scale: 0.3,
            num_groups: 2,
            num_domains: 2,
        }
    }
}

/// Parameterized-drift sweep: ratios r_i = 1 + t·Δ̂_i over a t grid, with
/// sign(Δ̂_i) = sign(Â_i) and |Δ̂_i| uniform in [0.5, 1.5].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub t_start: f64,
    pub t_stop: f64,
    pub t_steps: usize,
    pub num_trajectories: usize,
    pub trajectory_length: usize,
    /// Probability that a token draws a positive advantage.
    pub positive_fraction: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t_stop: 0.666,
            t_steps: 334,
            num_trajectories: 1,
            trajectory_length: 10,
            positive_fraction: 0.3,
        }
    }
}

impl SweepConfig {
    /// Strictly increasing t grid.
    pub fn grid(&self) -> Result<Vec<f64>, String> {
        if self.t_steps < 2 {
            return Err("sweep.t_steps must be >= 2".into());
        }
        if self.t_stop <= self.t_start || self.t_stop.is_nan() {
            return Err("sweep t grid must be strictly increasing".into());
        }
        let step = (self.t_stop - self.t_start) / (self.t_steps - 1) as f64;
        Ok((0..self.t_steps)
            .map(|i| self.t_start + i as f64 * step)
            .collect())
    }
}

/// Regime map over the constraint surface (1/3)(r1 + r2 + r3) = 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimplexConfig {
    pub resolution: f64,
    pub epsilon: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub k: u64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            resolution: 0.01,
            epsilon: 0.025,
            c_plus: 0.15,
            c_minus: 0.09,
            k: 3,
        }
    }
}

impl SimplexConfig {
    pub fn gating(&self) -> Result<GatingConfig, fiberlab::Error> {
        GatingConfig::new(
            self.c_plus + self.c_minus,
            self.c_plus,
            self.c_minus,
            self.epsilon,
            1.0,
        )?
        .with_rollback_k(Some(self.k))
    }
}

/// Equivalence-harness budget and thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EquivalenceConfig {
    pub instances: usize,
    pub gammas: Vec<f64>,
    pub starts: usize,
    pub grid: usize,
    pub max_abs_diff: f64,
    pub max_objective_gap: f64,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            gammas: vec![0.5, 0.9],
            starts: 8,
            grid: 81,
            max_abs_diff: 1e-3,
            max_objective_gap: 1e-6,
        }
    }
}

/// Case counts for the verification suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub retraction_cases: usize,
    pub retraction_shapes: usize,
    pub first_order_instances: usize,
    pub jacobian_instances: usize,
    pub gspo_seeds: usize,
    pub zone_tokens: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            retraction_cases: 1000,
            retraction_shapes: 10,
            first_order_instances: 20,
            jacobian_instances: 12,
            gspo_seeds: 500,
            zone_tokens: 1000,
        }
    }
}
