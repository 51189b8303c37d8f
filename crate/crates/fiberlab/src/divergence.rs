//! TV and KL divergence estimators in ratio form.
//!
//! All estimators are Monte-Carlo means of |r − 1| (TV) or −log r (KL) over
//! the sampled tokens, at three granularities: per state, batch average /
//! max, and per trajectory. Single-batch KL estimates are unbiased but not
//! sign-constrained, so they may come out negative; they are reported as-is.
//! Everything here is the undiscounted (γ = 1) weighting T_s/T; the
//! discounted Γ(s)/Γ weights live in the trust-region module where they are
//! needed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::core::{Batch, RatioTuple};
use crate::error::Result;

/// Per-state TV estimate: (1/T_s) Σ_{a∈X_s} n_{s,a} |r_{s,a} − 1|.
pub fn per_state_tv(batch: &Batch, ratios: &RatioTuple, state: usize) -> Result<f64> {
    let info = batch.state_info(state)?;
    let sum: f64 = info
        .pair_indices
        .iter()
        .map(|&p| {
            let pair = &batch.pairs()[p];
            pair.count as f64 * (ratios.value(pair.token_indices[0]) - 1.0).abs()
        })
        .sum();
    Ok(sum / info.count as f64)
}

/// Per-state KL estimate: −(1/T_s) Σ_{a∈X_s} n_{s,a} log r_{s,a}.
pub fn per_state_kl(batch: &Batch, ratios: &RatioTuple, state: usize) -> Result<f64> {
    let info = batch.state_info(state)?;
    let sum: f64 = info
        .pair_indices
        .iter()
        .map(|&p| {
            let pair = &batch.pairs()[p];
            pair.count as f64 * ratios.log(pair.token_indices[0])
        })
        .sum();
    Ok(-sum / info.count as f64)
}

/// Batch-average TV: (1/T) Σ_tokens |r − 1|.
pub fn avg_tv(batch: &Batch, ratios: &RatioTuple) -> f64 {
    let sum: f64 = (0..batch.total())
        .map(|i| (ratios.value(i) - 1.0).abs())
        .sum();
    sum / batch.total() as f64
}

/// Batch-average KL: −(1/T) Σ_tokens log r.
pub fn avg_kl(batch: &Batch, ratios: &RatioTuple) -> f64 {
    let sum: f64 = (0..batch.total()).map(|i| ratios.log(i)).sum();
    -sum / batch.total() as f64
}

/// Max per-state TV over the states observed in the batch.
pub fn max_tv(batch: &Batch, ratios: &RatioTuple) -> f64 {
    batch
        .states()
        .iter()
        .map(|s| per_state_tv(batch, ratios, s.id).expect("state comes from the batch"))
        .fold(0.0, f64::max)
}

/// Single-trajectory TV estimate: (1/T_τ) Σ_t |r − 1|.
pub fn traj_tv(batch: &Batch, ratios: &RatioTuple, trajectory: usize) -> Result<f64> {
    let slot = batch.trajectory_slot(trajectory)?;
    let info = &batch.trajectories()[slot];
    let sum: f64 = info
        .token_indices
        .iter()
        .map(|&i| (ratios.value(i) - 1.0).abs())
        .sum();
    Ok(sum / info.len as f64)
}

/// Single-trajectory KL estimate: −(1/T_τ) Σ_t log r.
pub fn traj_kl(batch: &Batch, ratios: &RatioTuple, trajectory: usize) -> Result<f64> {
    let slot = batch.trajectory_slot(trajectory)?;
    let info = &batch.trajectories()[slot];
    let sum: f64 = info.token_indices.iter().map(|&i| ratios.log(i)).sum();
    Ok(-sum / info.len as f64)
}

/// Pinsker slack kl/2 − tv². Non-negative for exact distribution-level
/// quantities; meaningless for single-sample estimates.
pub fn pinsker_gap(tv: f64, kl: f64) -> f64 {
    kl / 2.0 - tv * tv
}

/// Exact TV distance between two finite distributions:
/// (1/2) Σ_a |p_a − q_a|.
pub fn exact_tv(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    0.5 * p
        .iter()
        .zip(q)
        .map(|(&pa, &qa)| (pa - qa).abs())
        .sum::<f64>()
}

/// Exact KL divergence D_KL(p ‖ q) = Σ_a p_a log(p_a/q_a) for strictly
/// positive distributions.
pub fn exact_kl(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.iter().zip(q).map(|(&pa, &qa)| pa * (pa / qa).ln()).sum()
}

/// All divergence estimates of a batch, with stable key order for golden
/// files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub per_state_tv: BTreeMap<usize, f64>,
    pub per_state_kl: BTreeMap<usize, f64>,
    pub avg_tv: f64,
    pub avg_kl: f64,
    pub max_tv: f64,
    pub traj_tv: BTreeMap<usize, f64>,
    pub traj_kl: BTreeMap<usize, f64>,
}

impl DivergenceReport {
    pub fn compute(batch: &Batch, ratios: &RatioTuple) -> Result<Self> {
        let mut report = DivergenceReport {
            per_state_tv: BTreeMap::new(),
            per_state_kl: BTreeMap::new(),
            avg_tv: avg_tv(batch, ratios),
            avg_kl: avg_kl(batch, ratios),
            max_tv: 0.0,
            traj_tv: BTreeMap::new(),
            traj_kl: BTreeMap::new(),
        };
        for state in batch.states() {
            report
                .per_state_tv
                .insert(state.id, per_state_tv(batch, ratios, state.id)?);
            report
                .per_state_kl
                .insert(state.id, per_state_kl(batch, ratios, state.id)?);
        }
        report.max_tv = report.per_state_tv.values().copied().fold(0.0, f64::max);
        for traj in batch.trajectories() {
            report
                .traj_tv
                .insert(traj.id, traj_tv(batch, ratios, traj.id)?);
            report
                .traj_kl
                .insert(traj.id, traj_kl(batch, ratios, traj.id)?);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Token;

    fn tok(s: usize, a: usize, tj: usize, t: usize) -> Token {
        Token {
            state: s,
            action: a,
            trajectory: tj,
            timestep: t,
            advantage: 0.0,
        }
    }

    fn batch_of(tokens: Vec<Token>) -> Batch {
        Batch::new(tokens).unwrap()
    }

    #[test]
    fn on_policy_everything_zero() {
        let batch = batch_of(vec![tok(0, 0, 0, 0), tok(0, 1, 0, 1), tok(1, 0, 1, 0)]);
        let r = RatioTuple::from_token_values(&batch, vec![1.0; 3]).unwrap();
        let report = DivergenceReport::compute(&batch, &r).unwrap();
        assert_eq!(report.avg_tv, 0.0);
        assert_eq!(report.avg_kl, 0.0);
        assert_eq!(report.max_tv, 0.0);
        assert_eq!(report.per_state_tv[&0], 0.0);
        assert_eq!(report.traj_tv[&1], 0.0);
    }

    #[test]
    fn per_state_tv_direct_sum() {
        // ratios {1.2, 0.9, 0.95}, unit multiplicities → (0.2+0.1+0.05)/3
        let batch = batch_of(vec![tok(0, 0, 0, 0), tok(0, 1, 0, 1), tok(0, 2, 0, 2)]);
        let r = RatioTuple::from_token_values(&batch, vec![1.2, 0.9, 0.95]).unwrap();
        let tv = per_state_tv(&batch, &r, 0).unwrap();
        assert!((tv - (0.2 + 0.1 + 0.05) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn per_state_tv_multiplicity_weighting() {
        // ratios {1.2, 0.9}, n = {2, 1} → (2·0.2 + 0.1)/3
        let batch = batch_of(vec![tok(0, 0, 0, 0), tok(0, 0, 1, 0), tok(0, 1, 1, 1)]);
        let r = RatioTuple::from_token_values(&batch, vec![1.2, 1.2, 0.9]).unwrap();
        let tv = per_state_tv(&batch, &r, 0).unwrap();
        assert!((tv - (2.0 * 0.2 + 0.1) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn per_state_kl_direct_sum() {
        let batch = batch_of(vec![tok(0, 0, 0, 0), tok(0, 1, 0, 1), tok(0, 2, 0, 2)]);
        let r = RatioTuple::from_token_values(&batch, vec![1.2, 0.9, 0.95]).unwrap();
        let kl = per_state_kl(&batch, &r, 0).unwrap();
        let expect = -(1.2f64.ln() + 0.9f64.ln() + 0.95f64.ln()) / 3.0;
        assert!((kl - expect).abs() < 1e-15);
        // This single-sample estimate is legitimately negative.
        assert!(kl < 0.0);
    }

    #[test]
    fn per_state_kl_symmetric_pair_cancels() {
        let x = 0.37f64;
        let batch = batch_of(vec![tok(0, 0, 0, 0), tok(0, 1, 0, 1)]);
        let r = RatioTuple::from_token_values(&batch, vec![x.exp(), (-x).exp()]).unwrap();
        assert!(per_state_kl(&batch, &r, 0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn unknown_state_errors() {
        let batch = batch_of(vec![tok(0, 0, 0, 0)]);
        let r = RatioTuple::from_token_values(&batch, vec![1.0]).unwrap();
        assert!(per_state_tv(&batch, &r, 5).is_err());
    }

    #[test]
    fn avg_and_max_weighted_mean() {
        // state 0: one token with |r−1| = 0.1 → per-state TV 0.1
        // state 1: three tokens with |r−1| = 0.3 → per-state TV 0.3
        // avg = (1·0.1 + 3·0.3)/4 = 0.25, max = 0.3
        let batch = batch_of(vec![
            tok(0, 0, 0, 0),
            tok(1, 0, 0, 1),
            tok(1, 1, 0, 2),
            tok(1, 2, 0, 3),
        ]);
        let r = RatioTuple::from_token_values(&batch, vec![1.1, 1.3, 0.7, 1.3]).unwrap();
        assert!((avg_tv(&batch, &r) - 0.25).abs() < 1e-15);
        assert!((max_tv(&batch, &r) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_state_avg_equals_per_state() {
        let batch = batch_of(vec![tok(0, 0, 0, 0), tok(0, 1, 0, 1)]);
        let r = RatioTuple::from_token_values(&batch, vec![1.2, 0.85]).unwrap();
        assert_eq!(avg_tv(&batch, &r), per_state_tv(&batch, &r, 0).unwrap());
    }

    #[test]
    fn traj_estimators_direct_sums() {
        // log-ratios {0.1, −0.05, 0.15} → traj_kl = −0.2/3
        let batch = batch_of(vec![tok(0, 0, 0, 0), tok(1, 0, 0, 1), tok(2, 0, 0, 2)]);
        let r = RatioTuple::from_token_values(
            &batch,
            vec![0.1f64.exp(), (-0.05f64).exp(), 0.15f64.exp()],
        )
        .unwrap();
        let kl = traj_kl(&batch, &r, 0).unwrap();
        assert!((kl - (-0.2 / 3.0)).abs() < 1e-15);

        // ratios {1.1, 0.95} → traj_tv = 0.075
        let batch2 = batch_of(vec![tok(0, 0, 0, 0), tok(1, 0, 0, 1)]);
        let r2 = RatioTuple::from_token_values(&batch2, vec![1.1, 0.95]).unwrap();
        assert!((traj_tv(&batch2, &r2, 0).unwrap() - 0.075).abs() < 1e-15);
    }

    #[test]
    fn avg_tv_state_grouped_expansion_agrees() {
        // (1/T) Σ_s T_s · per_state_tv(s) against the token-flat form. The
        // two groupings associate additions differently, so agreement is
        // checked at accumulated-rounding scale, not bitwise.
        let batch = batch_of(vec![
            tok(0, 0, 0, 0),
            tok(0, 1, 0, 1),
            tok(1, 0, 0, 2),
            tok(1, 1, 1, 0),
            tok(2, 0, 1, 1),
        ]);
        let r = RatioTuple::from_token_values(&batch, vec![1.07, 0.93, 1.21, 0.77, 1.003]).unwrap();
        let grouped: f64 = batch
            .states()
            .iter()
            .map(|s| s.count as f64 * per_state_tv(&batch, &r, s.id).unwrap())
            .sum::<f64>()
            / batch.total() as f64;
        let flat = avg_tv(&batch, &r);
        assert!((grouped - flat).abs() <= 1e-15 * flat.max(1.0));
    }

    #[test]
    fn traj_to_avg_recovery() {
        // (1/T) Σ_τ T_τ · traj_tv(τ) recovers avg_tv within 1e-12.
        let batch = batch_of(vec![
            tok(0, 0, 0, 0),
            tok(1, 0, 0, 1),
            tok(2, 0, 0, 2),
            tok(3, 0, 7, 0),
            tok(4, 0, 7, 1),
        ]);
        let r = RatioTuple::from_token_values(&batch, vec![1.3, 0.8, 1.01, 0.99, 1.2]).unwrap();
        let recovered: f64 = batch
            .trajectories()
            .iter()
            .map(|t| t.len as f64 * traj_tv(&batch, &r, t.id).unwrap())
            .sum::<f64>()
            / batch.total() as f64;
        assert!((recovered - avg_tv(&batch, &r)).abs() <= 1e-12);
    }

    #[test]
    fn pinsker_on_exact_two_point_distributions() {
        assert_eq!(pinsker_gap(0.0, 0.0), 0.0);
        let p = [0.5, 0.5];
        let q = [0.6, 0.4];
        let tv = exact_tv(&p, &q);
        let kl = exact_kl(&p, &q);
        assert!((tv - 0.1).abs() < 1e-15);
        assert!(pinsker_gap(tv, kl) > 0.0);
        assert_eq!(exact_tv(&p, &p), 0.0);
        assert_eq!(exact_kl(&p, &p), 0.0);
    }

    #[test]
    fn report_json_key_order_stable() {
        let batch = batch_of(vec![tok(3, 0, 0, 0), tok(1, 0, 0, 1)]);
        let r = RatioTuple::from_token_values(&batch, vec![1.1, 0.9]).unwrap();
        let report = DivergenceReport::compute(&batch, &r).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let pos1 = json.find("\"1\":").unwrap();
        let pos3 = json.find("\"3\":").unwrap();
        assert!(pos1 < pos3);
    }
}
