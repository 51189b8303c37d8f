//! Finite state–action spaces and tabular softmax policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite state–action space with dense integer ids.
///
/// State `s` has actions `0..actions_per_state[s]`; both kinds of id are
/// usable directly as array indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateActionSpace {
    actions_per_state: Vec<usize>,
}

impl StateActionSpace {
    /// Build a space from per-state action counts. Every state needs at
    /// least one action.
    pub fn new(actions_per_state: Vec<usize>) -> Result<Self> {
        if actions_per_state.is_empty() {
            return Err(Error::InvalidConfig("space has no states".into()));
        }
        if let Some(s) = actions_per_state.iter().position(|&n| n == 0) {
            return Err(Error::InvalidConfig(format!("state {s} has no actions")));
        }
        Ok(Self { actions_per_state })
    }

    /// Uniform space: `num_states` states with `num_actions` actions each.
    pub fn uniform(num_states: usize, num_actions: usize) -> Result<Self> {
        Self::new(vec![num_actions; num_states])
    }

    pub fn num_states(&self) -> usize {
        self.actions_per_state.len()
    }

    pub fn num_actions(&self, state: usize) -> usize {
        self.actions_per_state[state]
    }

    pub fn contains(&self, state: usize, action: usize) -> bool {
        state < self.num_states() && action < self.actions_per_state[state]
    }

    /// Total number of logit coordinates, Σ_s |A_s|.
    pub fn num_entries(&self) -> usize {
        self.actions_per_state.iter().sum()
    }
}

/// A tabular policy parameterized by per-(state, action) logits, with
/// probabilities derived by a per-state softmax.
///
/// The softmax subtracts the per-state max logit before exponentiating, so
/// probabilities are strictly positive and sum to 1 within 1e-12 for any
/// finite logits. Adding a constant to all logits of one state leaves the
/// probabilities unchanged (one redundant dimension per state).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "PolicyTableRepr", into = "PolicyTableRepr")]
pub struct PolicyTable {
    logits: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

/// On-disk form: just the nested logit arrays.
#[derive(Serialize, Deserialize)]
struct PolicyTableRepr {
    logits: Vec<Vec<f64>>,
}

impl TryFrom<PolicyTableRepr> for PolicyTable {
    type Error = Error;
    fn try_from(repr: PolicyTableRepr) -> Result<Self> {
        PolicyTable::from_logits(repr.logits)
    }
}

impl From<PolicyTable> for PolicyTableRepr {
    fn from(table: PolicyTable) -> Self {
        PolicyTableRepr {
            logits: table.logits,
        }
    }
}

impl PolicyTable {
    /// Build a policy from per-state logit vectors.
    pub fn from_logits(logits: Vec<Vec<f64>>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::InvalidConfig("policy has no states".into()));
        }
        let mut probs = Vec::with_capacity(logits.len());
        for (s, row) in logits.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidConfig(format!("state {s} has no actions")));
            }
            for (a, &z) in row.iter().enumerate() {
                if !z.is_finite() {
                    return Err(Error::NonFinite(format!("logit at state {s}, action {a}")));
                }
            }
            probs.push(softmax_row(row));
        }
        Ok(Self { logits, probs })
    }

    pub fn space(&self) -> StateActionSpace {
        StateActionSpace::new(self.logits.iter().map(Vec::len).collect())
            .expect("policy rows are non-empty by construction")
    }

    pub fn num_states(&self) -> usize {
        self.logits.len()
    }

    pub fn num_actions(&self, state: usize) -> usize {
        self.logits[state].len()
    }

    /// π(a|s). Errors on out-of-range ids.
    pub fn prob(&self, state: usize, action: usize) -> Result<f64> {
        self.probs
            .get(state)
            .and_then(|row| row.get(action))
            .copied()
            .ok_or(Error::MissingEntry { state, action })
    }

    pub fn logit(&self, state: usize, action: usize) -> Result<f64> {
        self.logits
            .get(state)
            .and_then(|row| row.get(action))
            .copied()
            .ok_or(Error::MissingEntry { state, action })
    }

    pub fn probs(&self, state: usize) -> &[f64] {
        &self.probs[state]
    }

    /// Flatten all logits into one coordinate vector, state-major.
    pub fn flat_logits(&self) -> Vec<f64> {
        self.logits.iter().flatten().copied().collect()
    }

    /// Rebuild a policy from a flat coordinate vector with the given shape.
    pub fn from_flat_logits(space: &StateActionSpace, flat: &[f64]) -> Result<Self> {
        if flat.len() != space.num_entries() {
            return Err(Error::InvalidConfig(format!(
                "expected {} logits, got {}",
                space.num_entries(),
                flat.len()
            )));
        }
        let mut logits = Vec::with_capacity(space.num_states());
        let mut offset = 0;
        for s in 0..space.num_states() {
            let n = space.num_actions(s);
            logits.push(flat[offset..offset + n].to_vec());
            offset += n;
        }
        Self::from_logits(logits)
    }
}

/// Normalized softmax policy from per-state logit vectors.
///
/// Max-subtraction is applied per state for numerical stability; non-finite
/// logits are rejected.
pub fn softmax_policy(logits: Vec<Vec<f64>>) -> Result<PolicyTable> {
    PolicyTable::from_logits(logits)
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}
