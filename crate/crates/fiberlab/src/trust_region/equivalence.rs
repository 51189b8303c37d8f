//! Numerical check that maximizing the surrogated clipped objective yields
//! the trust-region oracle's update.
//!
//! The surrogated objective is separable across states (clip bounds couple
//! only same-state entries), so the maximizer is found state by state on the
//! probability-constraint subspace: a dense zooming grid on states with ≤ 3
//! actions, plus multi-start projected pattern search everywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{Batch, StateInfo};
use crate::error::Result;
use crate::trust_region::apc::surrogated_state_term;
use crate::trust_region::lp::{delta_apc, state_weights, DeltaApcForm};
use crate::trust_region::{surrogated_apc_objective, tv_trpo_maximizer, DeviationTuple};

/// Outcome of one equivalence run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub gamma: f64,
    pub delta_apc: f64,
    pub t_star: f64,
    /// Max entrywise |Δ| difference between the numerical maximizer and
    /// t*·Δ̂*.
    pub max_abs_diff: f64,
    /// |j(numerical) − j(t*·Δ̂*)| under the surrogated objective.
    pub objective_gap: f64,
}

/// Optimizer budget for [`maximize_surrogated_apc`].
#[derive(Debug, Clone, Copy)]
pub struct OptimizerBudget {
    /// Random starts per state for the pattern search.
    pub starts: usize,
    /// Grid points per axis for ≤ 3-action states.
    pub grid: usize,
    pub seed: u64,
}

impl Default for OptimizerBudget {
    fn default() -> Self {
        Self {
            starts: 8,
            grid: 81,
            seed: 0,
        }
    }
}

/// Run both routes and compare.
pub fn equivalence_check(
    batch: &Batch,
    gamma: f64,
    budget: OptimizerBudget,
) -> Result<EquivalenceReport> {
    let delta = delta_apc(batch, gamma, DeltaApcForm::StepSize)?;
    let oracle = tv_trpo_maximizer(batch, gamma)?;
    let found = maximize_surrogated_apc(batch, delta, gamma, budget)?;
    let j_found = surrogated_apc_objective(batch, &found, delta, gamma)?;
    let j_oracle = surrogated_apc_objective(batch, &oracle, delta, gamma)?;
    Ok(EquivalenceReport {
        gamma,
        delta_apc: delta,
        t_star: delta,
        max_abs_diff: found.max_abs_diff(&oracle),
        objective_gap: (j_found - j_oracle).abs(),
    })
}

/// Maximize the surrogated clipped objective over deviation space subject to
/// the per-state probability constraint.
pub fn maximize_surrogated_apc(
    batch: &Batch,
    delta: f64,
    gamma: f64,
    budget: OptimizerBudget,
) -> Result<DeviationTuple> {
    // Validate γ up front; state_weights errors outside (0, 1].
    let _ = state_weights(batch, gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut values = vec![0.0; batch.pairs().len()];
    for (si, info) in batch.states().iter().enumerate() {
        let local = maximize_state(batch, si, info, delta, budget, &mut rng);
        for (&p, &d) in info.pair_indices.iter().zip(&local) {
            values[p] = d;
        }
    }
    DeviationTuple::new(batch, values)
}

struct StateProblem<'a> {
    batch: &'a Batch,
    state_index: usize,
    info: &'a StateInfo,
    delta: f64,
    scratch: DeviationTuple,
}

impl<'a> StateProblem<'a> {
    fn new(batch: &'a Batch, state_index: usize, info: &'a StateInfo, delta: f64) -> Self {
        Self {
            batch,
            state_index,
            info,
            delta,
            scratch: DeviationTuple::zeros(batch),
        }
    }

    fn eval(&mut self, local: &[f64]) -> f64 {
        let mut values = self.scratch.values().to_vec();
        for (&p, &d) in self.info.pair_indices.iter().zip(local) {
            values[p] = d;
        }
        self.scratch = DeviationTuple::new(self.batch, values).expect("finite");
        surrogated_state_term(
            self.batch,
            &self.scratch,
            self.delta,
            self.state_index,
            self.info,
        )
    }

    fn l2(&self, local: &[f64]) -> f64 {
        local.iter().map(|d| d * d).sum()
    }
}

fn counts(batch: &Batch, info: &StateInfo) -> Vec<f64> {
    info.pair_indices
        .iter()
        .map(|&p| batch.pairs()[p].count as f64)
        .collect()
}

fn maximize_state(
    batch: &Batch,
    state_index: usize,
    info: &StateInfo,
    delta: f64,
    budget: OptimizerBudget,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let k = info.pair_indices.len();
    if k < 2 {
        return vec![0.0; k];
    }
    let n = counts(batch, info);
    let t_s = info.count as f64;
    let mut problem = StateProblem::new(batch, state_index, info, delta);
    // Free-coordinate range: TV up to 1.5·δ covers the whole useful region.
    let radius: Vec<f64> = n
        .iter()
        .map(|ni| (1.5 * delta * t_s / ni).max(1e-6))
        .collect();

    struct Best {
        point: Vec<f64>,
        value: f64,
        l2: f64,
    }
    impl Best {
        fn consider(&mut self, cand: Vec<f64>, problem: &mut StateProblem) {
            let val = problem.eval(&cand);
            let l2 = problem.l2(&cand);
            let tol = 1e-13 * (1.0 + self.value.abs());
            if val > self.value + tol || (val > self.value - tol && l2 < self.l2 - 1e-15) {
                self.value = val;
                self.l2 = l2;
                self.point = cand;
            }
        }
    }
    let zero = vec![0.0; k];
    let mut best = Best {
        value: problem.eval(&zero),
        l2: 0.0,
        point: zero,
    };

    if k <= 3 && budget.grid >= 3 {
        let grid_best = zoom_grid(&mut problem, &n, &radius, budget.grid);
        best.consider(grid_best, &mut problem);
    }

    let refined = pattern_search(&mut problem, &n, best.point.clone(), radius[0].max(1e-4));
    best.consider(refined, &mut problem);

    for _ in 0..budget.starts {
        let start: Vec<f64> = (0..k)
            .map(|i| rng.gen_range(-radius[i]..radius[i]))
            .collect();
        let start = project_constraint(&start, &n);
        let refined = pattern_search(&mut problem, &n, start, radius[0].max(1e-4));
        best.consider(refined, &mut problem);
    }

    best.point
}

/// Project onto {Σ n·Δ = 0} along the n direction.
fn project_constraint(local: &[f64], n: &[f64]) -> Vec<f64> {
    let dot: f64 = local.iter().zip(n).map(|(d, ni)| d * ni).sum();
    let nn: f64 = n.iter().map(|ni| ni * ni).sum();
    local
        .iter()
        .zip(n)
        .map(|(d, ni)| d - dot / nn * ni)
        .collect()
}

/// Shrinking grid over the constraint subspace, re-centered on the best
/// point each pass. Only used for k ≤ 3 (1 or 2 free coordinates).
fn zoom_grid(problem: &mut StateProblem, n: &[f64], radius: &[f64], grid: usize) -> Vec<f64> {
    let k = n.len();
    let free = k - 1;
    let mut center = vec![0.0; free];
    let mut half: Vec<f64> = radius[..free].to_vec();
    let mut best = vec![0.0; k];
    let mut best_val = f64::NEG_INFINITY;
    let mut best_l2 = f64::INFINITY;
    for _pass in 0..7 {
        let mut coords = vec![0usize; free];
        loop {
            let mut local = vec![0.0; k];
            for (d, &c) in coords.iter().enumerate() {
                let frac = c as f64 / (grid - 1) as f64 * 2.0 - 1.0;
                local[d] = center[d] + frac * half[d];
            }
            // Last coordinate from the probability constraint.
            let partial: f64 = local[..free]
                .iter()
                .zip(&n[..free])
                .map(|(d, ni)| d * ni)
                .sum();
            local[free] = -partial / n[free];
            let val = problem.eval(&local);
            let l2 = problem.l2(&local);
            if val > best_val + 1e-15 || (val > best_val - 1e-15 && l2 < best_l2 - 1e-15) {
                best_val = val;
                best_l2 = l2;
                best = local;
            }
            // Odometer increment over the free coordinates.
            let mut d = 0;
            loop {
                if d == free {
                    break;
                }
                coords[d] += 1;
                if coords[d] < grid {
                    break;
                }
                coords[d] = 0;
                d += 1;
            }
            if d == free {
                break;
            }
        }
        for d in 0..free {
            center[d] = best[d];
            half[d] = (half[d] * 4.0 / (grid - 1) as f64).max(1e-10);
        }
    }
    best
}

/// Projected pattern search along the pairwise constraint-preserving
/// directions (1/n_a)·e_a − (1/n_b)·e_b, with smallest-norm tie-breaking.
fn pattern_search(
    problem: &mut StateProblem,
    n: &[f64],
    start: Vec<f64>,
    initial_step: f64,
) -> Vec<f64> {
    let k = n.len();
    let mut directions = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            let mut d = vec![0.0; k];
            d[a] = 1.0 / n[a];
            d[b] = -1.0 / n[b];
            directions.push(d);
        }
    }
    let mut point = start;
    let mut value = problem.eval(&point);
    let mut step = initial_step;
    while step > 1e-9 {
        let mut improved = false;
        for dir in &directions {
            for sign in [1.0, -1.0] {
                let cand: Vec<f64> = point
                    .iter()
                    .zip(dir)
                    .map(|(p, d)| p + sign * step * d)
                    .collect();
                let cand_val = problem.eval(&cand);
                let tol = 1e-14 * (1.0 + value.abs());
                let better = cand_val > value + tol
                    || (cand_val > value - tol && problem.l2(&cand) < problem.l2(&point) - 1e-15);
                if better {
                    point = cand;
                    value = cand_val;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    point
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Token;

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
    fn two_action_instance_matches_oracle() {
        // 1 state × 2 actions, Â = {1, −1}, γ = 0.9.
        let batch = Batch::new(vec![tok(0, 0, 0, 0, 1.0), tok(0, 1, 0, 1, -1.0)]).unwrap();
        let report = equivalence_check(&batch, 0.9, OptimizerBudget::default()).unwrap();
        assert!(
            report.max_abs_diff <= 1e-3,
            "max_abs_diff = {}",
            report.max_abs_diff
        );
        assert!(report.objective_gap <= 1e-6);
    }

    #[test]
    fn gamma_sweep_shrinks_update() {
        let batch = Batch::new(vec![tok(0, 0, 0, 0, 1.0), tok(0, 1, 0, 1, -1.0)]).unwrap();
        let mut last_norm = f64::INFINITY;
        for gamma in [0.5, 0.7, 0.9, 0.99] {
            let dev = tv_trpo_maximizer(&batch, gamma).unwrap();
            let norm = dev.values().iter().map(|d| d.abs()).fold(0.0, f64::max);
            assert!(norm < last_norm);
            // Proportional to (1 − γ)/γ for a fixed instance.
            let expected = (1.0 - gamma) / (8.0 * gamma) * 1.0;
            assert!((norm - expected).abs() < 1e-12);
            last_norm = norm;
        }
    }

    #[test]
    fn degenerate_instance_both_zero() {
        // Equal advantages → M = 0 → both maximizers vanish.
        let batch = Batch::new(vec![tok(0, 0, 0, 0, 0.5), tok(0, 1, 0, 1, 0.5)]).unwrap();
        let report = equivalence_check(&batch, 0.9, OptimizerBudget::default()).unwrap();
        assert_eq!(report.delta_apc, 0.0);
        assert!(report.max_abs_diff <= 1e-9);
    }

    #[test]
    fn three_state_instance() {
        let batch = Batch::new(vec![
            tok(0, 0, 0, 0, 1.5),
            tok(0, 1, 0, 1, -1.5),
            tok(1, 0, 0, 2, 0.8),
            tok(1, 1, 1, 0, -0.8),
            tok(2, 0, 1, 1, 0.25),
            tok(2, 1, 1, 2, -0.25),
        ])
        .unwrap();
        for gamma in [0.5, 0.9] {
            let report = equivalence_check(&batch, gamma, OptimizerBudget::default()).unwrap();
            assert!(
                report.max_abs_diff <= 1e-3,
                "gamma {gamma}: diff {}",
                report.max_abs_diff
            );
            assert!(report.objective_gap <= 1e-6);
        }
    }
}
