//! Sampled batches of augmented tokens.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One sampled augmented token `(s, a, τ, t)` with its advantage estimate.
///
/// Serialized as the array `[state, action, trajectory, timestep, advantage]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Token {
    pub state: usize,
    pub action: usize,
    pub trajectory: usize,
    pub timestep: usize,
    pub advantage: f64,
}

impl Serialize for Token {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        (
            self.state,
            self.action,
            self.trajectory,
            self.timestep,
            self.advantage,
        )
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let (state, action, trajectory, timestep, advantage) =
            <(usize, usize, usize, usize, f64)>::deserialize(deserializer)?;
        if !advantage.is_finite() {
            return Err(D::Error::custom("non-finite advantage"));
        }
        Ok(Token {
            state,
            action,
            trajectory,
            timestep,
            advantage,
        })
    }
}

/// Per-trajectory bookkeeping: id, length T_τ, and token indices in timestep
/// order.
#[derive(Debug, Clone)]
pub struct TrajectoryInfo {
    pub id: usize,
    pub len: usize,
    pub token_indices: Vec<usize>,
}

/// Per-(state, action) bookkeeping: multiplicity n_{s,a}, the shared
/// advantage estimate, and the token indices carrying this pair.
#[derive(Debug, Clone)]
pub struct PairInfo {
    pub state: usize,
    pub action: usize,
    pub count: usize,
    pub advantage: f64,
    pub token_indices: Vec<usize>,
}

/// Per-state bookkeeping: sample count T_s and the pair/token indices at
/// this state.
#[derive(Debug, Clone)]
pub struct StateInfo {
    pub id: usize,
    pub count: usize,
    pub pair_indices: Vec<usize>,
    pub token_indices: Vec<usize>,
}

/// An immutable batch of sampled tokens with derived multiplicities.
///
/// Construction validates:
/// * the batch is non-empty and every trajectory has length ≥ 1;
/// * `(trajectory, timestep)` is unique and each timestep is `< T_τ`
///   (so each trajectory's timesteps are exactly `0..T_τ`);
/// * advantages are finite, and tokens sharing the same `(s, a)` carry the
///   same advantage estimate (advantages are functions of the pair).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "BatchRepr", into = "BatchRepr")]
pub struct Batch {
    tokens: Vec<Token>,
    trajectories: Vec<TrajectoryInfo>,
    pairs: Vec<PairInfo>,
    states: Vec<StateInfo>,
    token_pair: Vec<usize>,
    token_traj: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BatchRepr {
    tokens: Vec<Token>,
}

impl TryFrom<BatchRepr> for Batch {
    type Error = Error;
    fn try_from(repr: BatchRepr) -> Result<Self> {
        Batch::new(repr.tokens)
    }
}

impl From<Batch> for BatchRepr {
    fn from(batch: Batch) -> Self {
        BatchRepr {
            tokens: batch.tokens,
        }
    }
}

impl Batch {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidBatch("batch has no tokens".into()));
        }

        let mut traj_tokens: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut pair_tokens: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, tok) in tokens.iter().enumerate() {
            if !tok.advantage.is_finite() {
                return Err(Error::NonFinite(format!("advantage at token {i}")));
            }
            traj_tokens.entry(tok.trajectory).or_default().push(i);
            pair_tokens
                .entry((tok.state, tok.action))
                .or_default()
                .push(i);
        }

        let mut trajectories = Vec::with_capacity(traj_tokens.len());
        let mut token_traj = vec![0usize; tokens.len()];
        for (slot, (id, mut idxs)) in traj_tokens.into_iter().enumerate() {
            let len = idxs.len();
            idxs.sort_by_key(|&i| tokens[i].timestep);
            for (t, &i) in idxs.iter().enumerate() {
                let step = tokens[i].timestep;
                if step >= len {
                    return Err(Error::InvalidBatch(format!(
                        "trajectory {id}: timestep {step} >= length {len}"
                    )));
                }
                if step != t {
                    return Err(Error::InvalidBatch(format!(
                        "trajectory {id}: duplicate or missing timestep {t}"
                    )));
                }
                token_traj[i] = slot;
            }
            trajectories.push(TrajectoryInfo {
                id,
                len,
                token_indices: idxs,
            });
        }

        let mut pairs = Vec::with_capacity(pair_tokens.len());
        let mut token_pair = vec![0usize; tokens.len()];
        let mut state_map: BTreeMap<usize, StateInfo> = BTreeMap::new();
        for ((state, action), idxs) in pair_tokens {
            let advantage = tokens[idxs[0]].advantage;
            for &i in &idxs {
                if tokens[i].advantage.to_bits() != advantage.to_bits() {
                    return Err(Error::InvalidBatch(format!(
                        "tokens sharing ({state}, {action}) carry different advantages"
                    )));
                }
                token_pair[i] = pairs.len();
            }
            let entry = state_map.entry(state).or_insert_with(|| StateInfo {
                id: state,
                count: 0,
                pair_indices: Vec::new(),
                token_indices: Vec::new(),
            });
            entry.count += idxs.len();
            entry.pair_indices.push(pairs.len());
            entry.token_indices.extend(idxs.iter().copied());
            pairs.push(PairInfo {
                state,
                action,
                count: idxs.len(),
                advantage,
                token_indices: idxs,
            });
        }

        Ok(Self {
            tokens,
            trajectories,
            pairs,
            states: state_map.into_values().collect(),
            token_pair,
            token_traj,
        })
    }

    /// Total sample count T = |tokens| = Σ_τ T_τ.
    pub fn total(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, index: usize) -> &Token {
        &self.tokens[index]
    }

    /// Trajectories in increasing-id order; the position in this slice is the
    /// trajectory "slot" used by per-trajectory result vectors.
    pub fn trajectories(&self) -> &[TrajectoryInfo] {
        &self.trajectories
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    /// Slot of a trajectory id, or an error if the id is absent.
    pub fn trajectory_slot(&self, id: usize) -> Result<usize> {
        self.trajectories
            .binary_search_by_key(&id, |t| t.id)
            .map_err(|_| Error::UnknownTrajectory(id))
    }

    /// Trajectory slot of a token index.
    pub fn token_trajectory(&self, token: usize) -> usize {
        self.token_traj[token]
    }

    /// Distinct (state, action) pairs in increasing (s, a) order.
    pub fn pairs(&self) -> &[PairInfo] {
        &self.pairs
    }

    /// Pair index of a token index.
    pub fn token_pair(&self, token: usize) -> usize {
        self.token_pair[token]
    }

    /// States present in the batch, in increasing-id order.
    pub fn states(&self) -> &[StateInfo] {
        &self.states
    }

    pub fn state_info(&self, state: usize) -> Result<&StateInfo> {
        self.states
            .binary_search_by_key(&state, |s| s.id)
            .map(|i| &self.states[i])
            .map_err(|_| Error::UnknownState(state))
    }

    /// Per-state sample count T_s.
    pub fn t_s(&self, state: usize) -> Result<usize> {
        Ok(self.state_info(state)?.count)
    }

    /// Length T_τ of the trajectory holding the given token.
    pub fn token_traj_len(&self, token: usize) -> usize {
        self.trajectories[self.token_traj[token]].len
    }

    /// Max |Â| over the batch.
    pub fn advantage_norm(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.advantage.abs())
            .fold(0.0, f64::max)
    }

    /// Per-token advantages in token order.
    pub fn advantages(&self) -> Vec<f64> {
        self.tokens.iter().map(|t| t.advantage).collect()
    }
}

/// Subtract the per-state sample-weighted advantage mean from every token, so
/// that Σ_{a∈X_s} n_{s,a} Â_{s,a} = 0 at every state.
///
/// Used when synthesizing data; the trust-region equivalence results assume
/// this centering holds exactly.
pub fn center_advantages(tokens: &mut [Token]) {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for tok in tokens.iter() {
        let entry = sums.entry(tok.state).or_insert((0.0, 0));
        entry.0 += tok.advantage;
        entry.1 += 1;
    }
    for tok in tokens.iter_mut() {
        let (sum, count) = sums[&tok.state];
        tok.advantage -= sum / count as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(s: usize, a: usize, tj: usize, t: usize, adv: f64) -> Token {
        Token {
            state: s,
            action: a,
            trajectory: tj,
            timestep: t,
            advantage: adv,
        }
    }

    #[test]
    fn counts_are_derived() {
        let batch = Batch::new(vec![
            tok(0, 0, 0, 0, 1.0),
            tok(0, 1, 0, 1, -1.0),
            tok(1, 0, 1, 0, 0.5),
            tok(0, 0, 1, 1, 1.0),
        ])
        .unwrap();
        assert_eq!(batch.total(), 4);
        assert_eq!(batch.t_s(0).unwrap(), 3);
        assert_eq!(batch.t_s(1).unwrap(), 1);
        let pair = &batch.pairs()[0];
        assert_eq!((pair.state, pair.action, pair.count), (0, 0, 2));
        assert_eq!(batch.trajectories()[0].len, 2);
    }

    #[test]
    fn duplicate_timestep_rejected() {
        let err = Batch::new(vec![tok(0, 0, 0, 0, 1.0), tok(0, 1, 0, 0, 1.0)]);
        assert!(err.is_err());
    }

    #[test]
    fn timestep_must_be_below_length() {
        let err = Batch::new(vec![tok(0, 0, 0, 0, 1.0), tok(0, 1, 0, 2, 1.0)]);
        assert!(err.is_err());
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(Batch::new(vec![]).is_err());
    }

    #[test]
    fn inconsistent_pair_advantage_rejected() {
        let err = Batch::new(vec![tok(0, 0, 0, 0, 1.0), tok(0, 0, 0, 1, 2.0)]);
        assert!(err.is_err());
    }

    #[test]
    fn centering_zeroes_per_state_sums() {
        let mut tokens = vec![
            tok(0, 0, 0, 0, 1.0),
            tok(0, 1, 0, 1, 2.5),
            tok(1, 0, 0, 2, -3.0),
            tok(1, 1, 1, 0, 4.0),
        ];
        center_advantages(&mut tokens);
        let batch = Batch::new(tokens).unwrap();
        for state in batch.states() {
            let sum: f64 = state
                .pair_indices
                .iter()
                .map(|&p| {
                    let pair = &batch.pairs()[p];
                    pair.count as f64 * pair.advantage
                })
                .sum();
            assert!(sum.abs() <= 1e-10);
        }
    }

    #[test]
    fn batch_json_round_trip() {
        let batch = Batch::new(vec![tok(0, 0, 0, 0, 1.5), tok(0, 1, 0, 1, -1.5)]).unwrap();
        let json = serde_json::to_string(&batch).unwrap();
        assert!(json.contains("[0,0,0,0,1.5]"));
        let back: Batch = serde_json::from_str(&json).unwrap();
        assert_eq!(back.tokens(), batch.tokens());
    }
}
