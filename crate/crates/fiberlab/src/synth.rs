//! Seeded synthetic-data generators for experiments and verification:
//! random tabular policies, sampled batches with centered advantages,
//! constraint-satisfying deviations, and token-chain batches for drift
//! sweeps.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::core::{Batch, PolicyTable, RatioTuple, StateActionSpace, Token};
use crate::fgh::DomainBatch;
use crate::trust_region::DeviationTuple;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_policy(rng: &mut ChaCha8Rng, space: &StateActionSpace, scale: f64) -> PolicyTable {
    let normal = Normal::new(0.0, scale).unwrap();
    let logits = (0..space.num_states())
        .map(|s| {
            (0..space.num_actions(s))
                .map(|_| normal.sample(rng))
                .collect()
        })
        .collect();
    PolicyTable::from_logits(logits).unwrap()
}

/// Perturb a policy's logits by `scale`-sized noise.
pub fn perturbed_policy(rng: &mut ChaCha8Rng, base: &PolicyTable, scale: f64) -> PolicyTable {
    let normal = Normal::new(0.0, scale).unwrap();
    let logits = (0..base.num_states())
        .map(|s| {
            (0..base.num_actions(s))
                .map(|a| base.logit(s, a).unwrap() + normal.sample(rng))
                .collect()
        })
        .collect();
    PolicyTable::from_logits(logits).unwrap()
}

/// Sample a batch of `num_traj` trajectories of length `traj_len` from the
/// old policy: states uniform, actions from π_old, advantages drawn per
/// (state, action) and centered per state when asked.
pub fn sample_batch(
    rng: &mut ChaCha8Rng,
    old: &PolicyTable,
    num_traj: usize,
    traj_len: usize,
    center: bool,
) -> Batch {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut advantages: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut tokens = Vec::new();
    for tj in 0..num_traj {
        for t in 0..traj_len {
            let state = rng.gen_range(0..old.num_states());
            let action = sample_action(rng, old.probs(state));
            let advantage = *advantages
                .entry((state, action))
                .or_insert_with(|| normal.sample(rng));
            tokens.push(Token {
                state,
                action,
                trajectory: tj,
                timestep: t,
                advantage,
            });
        }
    }
    if center {
        center_per_state(&mut tokens);
    }
    Batch::new(tokens).unwrap()
}

fn sample_action(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.len() - 1
}

/// Center advantages per state with multiplicity weights, keeping values
/// shared across tokens of the same pair.
pub fn center_per_state(tokens: &mut [Token]) {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for tok in tokens.iter() {
        let e = sums.entry(tok.state).or_insert((0.0, 0));
        e.0 += tok.advantage;
        e.1 += 1;
    }
    for tok in tokens.iter_mut() {
        let (sum, n) = sums[&tok.state];
        tok.advantage -= sum / n as f64;
    }
}

/// A tiny instance for the equivalence harness: ≤ 3 states × ≤ 3 actions,
/// some multiplicities > 1, centered advantages with a clear argmax/argmin
/// margin per state.
pub fn tiny_equivalence_batch(rng: &mut ChaCha8Rng) -> Batch {
    loop {
        let num_states = rng.gen_range(1..=3);
        let mut tokens = Vec::new();
        let mut advantages: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for state in 0..num_states {
            let num_actions = rng.gen_range(2..=3);
            for action in 0..num_actions {
                let adv = rng.gen_range(-2.0..2.0);
                advantages.insert((state, action), adv);
                let multiplicity = rng.gen_range(1..=2);
                for _ in 0..multiplicity {
                    tokens.push(Token {
                        state,
                        action,
                        trajectory: 0,
                        timestep: 0,
                        advantage: adv,
                    });
                }
            }
        }
        // Clear per-state margins keep the maximizer unique.
        let mut ok = true;
        for state in 0..num_states {
            let mut vals: Vec<f64> = advantages
                .iter()
                .filter(|((s, _), _)| *s == state)
                .map(|(_, &v)| v)
                .collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in vals.windows(2) {
                if (w[1] - w[0]).abs() < 0.25 {
                    ok = false;
                }
            }
        }
        if !ok {
            continue;
        }
        // Spread tokens over 1-2 trajectories with sequential timesteps.
        let num_traj = rng.gen_range(1..=2).min(tokens.len());
        let mut steps = vec![0usize; num_traj];
        for (i, tok) in tokens.iter_mut().enumerate() {
            let tj = i % num_traj;
            tok.trajectory = tj;
            tok.timestep = steps[tj];
            steps[tj] += 1;
        }
        center_per_state(&mut tokens);
        return Batch::new(tokens).unwrap();
    }
}

/// Random constraint-satisfying deviations with per-state TV scaled to
/// `target_tv` wherever the state has ≥ 2 actions.
pub fn random_deviation(rng: &mut ChaCha8Rng, batch: &Batch, target_tv: f64) -> DeviationTuple {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut values = vec![0.0; batch.pairs().len()];
    for info in batch.states() {
        let k = info.pair_indices.len();
        if k < 2 {
            continue;
        }
        let t_s = info.count as f64;
        loop {
            let raw: Vec<f64> = (0..k).map(|_| normal.sample(rng)).collect();
            let weighted_mean: f64 = info
                .pair_indices
                .iter()
                .zip(&raw)
                .map(|(&p, &x)| batch.pairs()[p].count as f64 * x)
                .sum::<f64>()
                / t_s;
            let projected: Vec<f64> = raw.iter().map(|x| x - weighted_mean).collect();
            let tv: f64 = info
                .pair_indices
                .iter()
                .zip(&projected)
                .map(|(&p, &x)| batch.pairs()[p].count as f64 * x.abs())
                .sum::<f64>()
                / t_s;
            if tv > 1e-9 {
                for (&p, &x) in info.pair_indices.iter().zip(&projected) {
                    values[p] = x * target_tv / tv;
                }
                break;
            }
        }
    }
    DeviationTuple::new(batch, values).unwrap()
}

/// One trajectory per row of `logs`, every token carrying a unique state so
/// synthetic per-token ratios are structurally valid.
pub fn chain_batch(trajectories: &[Vec<(f64, f64)>]) -> (Batch, RatioTuple) {
    let mut tokens = Vec::new();
    let mut values = Vec::new();
    let mut state = 0;
    for (tj, traj) in trajectories.iter().enumerate() {
        for (t, &(log_ratio, advantage)) in traj.iter().enumerate() {
            tokens.push(Token {
                state,
                action: 0,
                trajectory: tj,
                timestep: t,
                advantage,
            });
            values.push(log_ratio.exp());
            state += 1;
        }
    }
    let batch = Batch::new(tokens).unwrap();
    let ratios = RatioTuple::from_token_values(&batch, values).unwrap();
    (batch, ratios)
}

/// Random multi-trajectory batch with unique states and per-token log-ratios
/// in ±`log_scale`, advantages in ±2.
pub fn random_chain(
    rng: &mut ChaCha8Rng,
    num_traj: usize,
    traj_len: usize,
    log_scale: f64,
) -> (Batch, RatioTuple) {
    let spec: Vec<Vec<(f64, f64)>> = (0..num_traj)
        .map(|_| {
            (0..traj_len)
                .map(|_| {
                    (
                        rng.gen_range(-log_scale..log_scale),
                        rng.gen_range(-2.0..2.0),
                    )
                })
                .collect()
        })
        .collect();
    chain_batch(&spec)
}

/// Assign each trajectory of a batch to a random group and each group to a
/// random domain.
pub fn random_domain_batch(
    rng: &mut ChaCha8Rng,
    batch: Batch,
    num_groups: usize,
    num_domains: usize,
) -> DomainBatch {
    let group_domain: Vec<usize> = (0..num_groups)
        .map(|_| rng.gen_range(0..num_domains))
        .collect();
    let assignment: BTreeMap<usize, (usize, usize)> = batch
        .trajectories()
        .iter()
        .map(|info| {
            let g = rng.gen_range(0..num_groups);
            (info.id, (g, group_domain[g]))
        })
        .collect();
    DomainBatch::new(batch, &assignment).unwrap()
}
