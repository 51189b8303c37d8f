//! The cross-coupled clipping objective, its clip-zone classification, the
//! surrogated (deviation-space) form, and the retraction operator.

use serde::{Deserialize, Serialize};

use crate::core::{Batch, RatioTuple};
use crate::error::{Error, Result};
use crate::trust_region::lp::state_weights;
use crate::trust_region::DeviationTuple;

/// clip(x, B) := clamp(x, −B⁺, B⁺) with B⁺ = max(B, 0).
pub fn clip_to_budget(x: f64, bound: f64) -> f64 {
    let b = bound.max(0.0);
    x.clamp(-b, b)
}

/// Clip regime of one token under the coupled bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZoneLabel {
    /// Clip inactive: the state's TV estimate is within budget.
    P,
    /// Clip active with nonzero output: the state is over budget but this
    /// token has not individually exhausted the overshoot.
    R,
    /// Clip output zero: the other tokens alone consumed the whole budget.
    Z,
}

impl std::fmt::Display for ZoneLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ZoneLabel::P => "P",
            ZoneLabel::R => "R",
            ZoneLabel::Z => "Z",
        })
    }
}

fn state_abs_dev_sum(batch: &Batch, ratios: &RatioTuple, state: usize) -> Result<f64> {
    let info = batch.state_info(state)?;
    Ok(info
        .pair_indices
        .iter()
        .map(|&p| {
            let pair = &batch.pairs()[p];
            pair.count as f64 * (ratios.value(pair.token_indices[0]) - 1.0).abs()
        })
        .sum())
}

/// Per-token clip bound B = T_s·δ − Σ over the *other* same-state tokens of
/// |r − 1|. The effective bound used by the clip is B⁺ = max(B, 0).
pub fn apc_clip_bound(batch: &Batch, ratios: &RatioTuple, token: usize, delta: f64) -> Result<f64> {
    if token >= batch.total() {
        return Err(Error::InvalidConfig(format!("token {token} out of range")));
    }
    let state = batch.token(token).state;
    let t_s = batch.t_s(state)? as f64;
    let others = state_abs_dev_sum(batch, ratios, state)? - (ratios.value(token) - 1.0).abs();
    Ok(t_s * delta - others)
}

/// The γ = 1 clipped objective: (1/T) Σ_tokens [clip(r − 1, B)·Â + Â].
pub fn apc_objective(batch: &Batch, ratios: &RatioTuple, delta: f64) -> Result<f64> {
    let mut total = 0.0;
    for state in batch.states() {
        let t_s = state.count as f64;
        let abs_sum: f64 = state
            .pair_indices
            .iter()
            .map(|&p| {
                let pair = &batch.pairs()[p];
                pair.count as f64 * (ratios.value(pair.token_indices[0]) - 1.0).abs()
            })
            .sum();
        for &p in &state.pair_indices {
            let pair = &batch.pairs()[p];
            let dev = ratios.value(pair.token_indices[0]) - 1.0;
            let bound = t_s * delta - (abs_sum - dev.abs());
            total +=
                pair.count as f64 * (clip_to_budget(dev, bound) * pair.advantage + pair.advantage);
        }
    }
    Ok(total / batch.total() as f64)
}

/// Discounted form: (1/Γ) Σ_s (Γ(s)/T_s) Σ_a n [clip(Δ, B)·Â + Â].
///
/// This is the raw discounted objective scaled by (1 − γ), which removes
/// the γ → 1 singularity without moving the argmax; at γ = 1 it coincides
/// with [`apc_objective`].
pub fn apc_objective_discounted(
    batch: &Batch,
    ratios: &RatioTuple,
    delta: f64,
    gamma: f64,
) -> Result<f64> {
    let dev = DeviationTuple::from_ratios(batch, ratios);
    let weights = state_weights(batch, gamma)?;
    let mut total = 0.0;
    for (si, state) in batch.states().iter().enumerate() {
        let t_s = state.count as f64;
        let abs_sum: f64 = state
            .pair_indices
            .iter()
            .map(|&p| batch.pairs()[p].count as f64 * dev.value(p).abs())
            .sum();
        let mut state_term = 0.0;
        for &p in &state.pair_indices {
            let pair = &batch.pairs()[p];
            let d = dev.value(p);
            let bound = t_s * delta - (abs_sum - d.abs());
            state_term +=
                pair.count as f64 * (clip_to_budget(d, bound) * pair.advantage + pair.advantage);
        }
        total += weights[si] * state_term;
    }
    Ok(total)
}

/// Zone of one token: P when the state's TV estimate is within δ, otherwise
/// R or Z depending on whether the residual bound is still positive.
pub fn classify_zone(
    batch: &Batch,
    ratios: &RatioTuple,
    token: usize,
    delta: f64,
) -> Result<ZoneLabel> {
    if token >= batch.total() {
        return Err(Error::InvalidConfig(format!("token {token} out of range")));
    }
    let state = batch.token(token).state;
    let t_s = batch.t_s(state)? as f64;
    let abs_sum = state_abs_dev_sum(batch, ratios, state)?;
    if abs_sum / t_s <= delta {
        return Ok(ZoneLabel::P);
    }
    let bound = t_s * delta - (abs_sum - (ratios.value(token) - 1.0).abs());
    if bound <= 0.0 {
        Ok(ZoneLabel::Z)
    } else {
        Ok(ZoneLabel::R)
    }
}

/// Correction term 𝒞(Δ)_s = (1/T_s) Σ_a n clip(Δ_a, B_a): the per-state mean
/// of the clipped deviations. Vanishes when the state's TV is within δ and
/// the probability constraint holds.
pub fn correction_term(batch: &Batch, dev: &DeviationTuple, delta: f64, state_index: usize) -> f64 {
    let state = &batch.states()[state_index];
    let t_s = state.count as f64;
    let abs_sum: f64 = state
        .pair_indices
        .iter()
        .map(|&p| batch.pairs()[p].count as f64 * dev.value(p).abs())
        .sum();
    let sum: f64 = state
        .pair_indices
        .iter()
        .map(|&p| {
            let pair = &batch.pairs()[p];
            let d = dev.value(p);
            let bound = t_s * delta - (abs_sum - d.abs());
            pair.count as f64 * clip_to_budget(d, bound)
        })
        .sum();
    sum / t_s
}

/// The surrogated objective in deviation space:
///
/// j(Δ, δ) = Σ_s w_s Σ_a n_a [clip(Δ_a, B_a)·Â_a + (1 − 𝒞(Δ)_s)·Â_a],
///
/// with w_s = Γ(s)/(Γ·T_s). As with [`apc_objective_discounted`] the global
/// 1/(1 − γ) factor is dropped; argmax and equivalence statements are
/// unaffected and the form extends smoothly to γ = 1.
pub fn surrogated_apc_objective(
    batch: &Batch,
    dev: &DeviationTuple,
    delta: f64,
    gamma: f64,
) -> Result<f64> {
    let weights = state_weights(batch, gamma)?;
    let mut total = 0.0;
    for (si, state) in batch.states().iter().enumerate() {
        total += weights[si] * surrogated_state_term(batch, dev, delta, si, state);
    }
    Ok(total)
}

/// One state's contribution Σ_a n_a [clip(Δ_a, B_a)·Â_a + (1 − 𝒞_s)·Â_a]
/// (without the w_s factor). The objective is separable across states, which
/// the equivalence optimizer exploits.
pub(crate) fn surrogated_state_term(
    batch: &Batch,
    dev: &DeviationTuple,
    delta: f64,
    state_index: usize,
    state: &crate::core::StateInfo,
) -> f64 {
    let t_s = state.count as f64;
    let abs_sum: f64 = state
        .pair_indices
        .iter()
        .map(|&p| batch.pairs()[p].count as f64 * dev.value(p).abs())
        .sum();
    let correction = correction_term(batch, dev, delta, state_index);
    let mut term = 0.0;
    for &p in &state.pair_indices {
        let pair = &batch.pairs()[p];
        let d = dev.value(p);
        let bound = t_s * delta - (abs_sum - d.abs());
        term += pair.count as f64
            * (clip_to_budget(d, bound) * pair.advantage + (1.0 - correction) * pair.advantage);
    }
    term
}

/// Centered clipping retraction:
///
/// 𝒢(u)_{s,a} = clip(u_{s,a}, T_s(δ − D̂_TV(s, u)) + |u_{s,a}|), followed by
/// per-state centering 𝒢(u) − 𝒞(𝒢(u))_s. Requires the probability
/// constraint on the input; guarantees per-state TV ≤ δ, strictly below δ
/// wherever the input violated the budget.
pub fn retract(batch: &Batch, u: &DeviationTuple, delta: f64) -> Result<DeviationTuple> {
    if delta < 0.0 {
        return Err(Error::InvalidConfig(format!("delta {delta} < 0")));
    }
    if u.values().len() != batch.pairs().len() {
        return Err(Error::InvalidConfig("deviation/batch mismatch".into()));
    }
    if u.probability_constraint_residual(batch) > 1e-8 {
        return Err(Error::InvalidConfig(
            "input deviations violate the per-state probability constraint".into(),
        ));
    }
    let mut out = vec![0.0; batch.pairs().len()];
    for (si, state) in batch.states().iter().enumerate() {
        let t_s = state.count as f64;
        let tv = u.per_state_tv(batch, si);
        let mut clipped = Vec::with_capacity(state.pair_indices.len());
        for &p in &state.pair_indices {
            let bound = t_s * (delta - tv) + u.value(p).abs();
            clipped.push(clip_to_budget(u.value(p), bound));
        }
        let mean: f64 = state
            .pair_indices
            .iter()
            .zip(&clipped)
            .map(|(&p, &v)| batch.pairs()[p].count as f64 * v)
            .sum::<f64>()
            / t_s;
        for (&p, &v) in state.pair_indices.iter().zip(&clipped) {
            out[p] = v - mean;
        }
    }
    DeviationTuple::new(batch, out)
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

    /// One state, two actions, unit multiplicities.
    fn pair_batch(adv: [f64; 2]) -> Batch {
        Batch::new(vec![tok(0, 0, 0, 0, adv[0]), tok(0, 1, 0, 1, adv[1])]).unwrap()
    }

    #[test]
    fn clip_bound_on_policy_is_full_budget() {
        let batch = pair_batch([1.0, -1.0]);
        let r = RatioTuple::from_token_values(&batch, vec![1.0, 1.0]).unwrap();
        let b = apc_clip_bound(&batch, &r, 0, 0.2).unwrap();
        assert!((b - 2.0 * 0.2).abs() < 1e-15);
    }

    #[test]
    fn clip_bound_exhausted_goes_negative() {
        // Δ = {+0.5, −0.5}, δ = 0.2 → B = 0.4 − 0.5 = −0.1; effective bound 0.
        let batch = pair_batch([1.0, -1.0]);
        let r = RatioTuple::from_token_values(&batch, vec![1.5, 0.5]).unwrap();
        let b = apc_clip_bound(&batch, &r, 0, 0.2).unwrap();
        assert!((b - (-0.1)).abs() < 1e-12);
        assert_eq!(clip_to_budget(0.5, b), 0.0);
    }

    #[test]
    fn delta_zero_clips_everything_to_zero() {
        let batch = pair_batch([1.0, -1.0]);
        let r = RatioTuple::from_token_values(&batch, vec![1.3, 0.7]).unwrap();
        for token in 0..2 {
            let b = apc_clip_bound(&batch, &r, token, 0.0).unwrap();
            assert!(b <= 0.0);
            assert_eq!(clip_to_budget(r.value(token) - 1.0, b), 0.0);
        }
    }

    #[test]
    fn objective_on_policy_is_mean_advantage() {
        let batch = pair_batch([1.0, -0.5]);
        let r = RatioTuple::from_token_values(&batch, vec![1.0, 1.0]).unwrap();
        let j = apc_objective(&batch, &r, 0.2).unwrap();
        assert!((j - (1.0 - 0.5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn objective_with_inactive_clip_equals_linear_plus_constant() {
        let batch = pair_batch([1.0, -0.5]);
        let r = RatioTuple::from_token_values(&batch, vec![1.1, 0.9]).unwrap();
        let j = apc_objective(&batch, &r, 10.0).unwrap();
        let linear: f64 = (0..2)
            .map(|i| (r.value(i) - 1.0) * batch.token(i).advantage)
            .sum::<f64>()
            / 2.0;
        let constant: f64 = batch.tokens().iter().map(|t| t.advantage).sum::<f64>() / 2.0;
        assert!((j - (linear + constant)).abs() < 1e-15);
    }

    #[test]
    fn objective_fully_censored_case() {
        // Δ = {+0.5, −0.5}, δ = 0.2, Â = {+1, −1}: both clips zero →
        // objective = (1/2)(0 + 1) + (1/2)(0 − 1) = 0.
        let batch = pair_batch([1.0, -1.0]);
        let r = RatioTuple::from_token_values(&batch, vec![1.5, 0.5]).unwrap();
        let j = apc_objective(&batch, &r, 0.2).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn zones_match_worked_examples() {
        let batch = pair_batch([1.0, -1.0]);
        let on = RatioTuple::from_token_values(&batch, vec![1.0, 1.0]).unwrap();
        assert_eq!(classify_zone(&batch, &on, 0, 0.2).unwrap(), ZoneLabel::P);

        // Δ = ±0.5, δ = 0.2: TV = 0.5 > 0.2 and 0.25 ≤ 0.3 → Z for both.
        let wide = RatioTuple::from_token_values(&batch, vec![1.5, 0.5]).unwrap();
        assert_eq!(classify_zone(&batch, &wide, 0, 0.2).unwrap(), ZoneLabel::Z);
        assert_eq!(classify_zone(&batch, &wide, 1, 0.2).unwrap(), ZoneLabel::Z);

        // Δ = ±0.3, δ = 0.2: TV = 0.3 > 0.2 and 0.15 > 0.1 → R.
        let mid = RatioTuple::from_token_values(&batch, vec![1.3, 0.7]).unwrap();
        assert_eq!(classify_zone(&batch, &mid, 0, 0.2).unwrap(), ZoneLabel::R);
    }

    #[test]
    fn retraction_identity_inside_region() {
        let batch = pair_batch([1.0, -1.0]);
        let u = DeviationTuple::new(&batch, vec![0.05, -0.05]).unwrap();
        let out = retract(&batch, &u, 0.2).unwrap();
        assert_eq!(out, u);
    }

    #[test]
    fn retraction_worked_examples() {
        let batch = pair_batch([1.0, -1.0]);

        // u = ±0.5, δ = 0.2 → bound 2(0.2−0.5)+0.5 = −0.1 → 𝒢(u) = 0, TV 0.
        let u = DeviationTuple::new(&batch, vec![0.5, -0.5]).unwrap();
        let out = retract(&batch, &u, 0.2).unwrap();
        assert_eq!(out.values(), &[0.0, 0.0]);

        // u = ±0.3, δ = 0.2 → bound 2(0.2−0.3)+0.3 = 0.1 → 𝒢(u) = ±0.1,
        // centering leaves it unchanged, TV 0.1 < 0.2.
        let u = DeviationTuple::new(&batch, vec![0.3, -0.3]).unwrap();
        let out = retract(&batch, &u, 0.2).unwrap();
        assert!((out.value(0) - 0.1).abs() < 1e-15);
        assert!((out.value(1) + 0.1).abs() < 1e-15);
        assert!(out.per_state_tv(&batch, 0) < 0.2);
    }

    #[test]
    fn retraction_rejects_unconstrained_input() {
        let batch = pair_batch([1.0, -1.0]);
        let u = DeviationTuple::new(&batch, vec![0.3, 0.3]).unwrap();
        assert!(retract(&batch, &u, 0.2).is_err());
    }

    #[test]
    fn correction_vanishes_inside_region() {
        let batch = pair_batch([1.0, -1.0]);
        let dev = DeviationTuple::new(&batch, vec![0.05, -0.05]).unwrap();
        assert!(correction_term(&batch, &dev, 0.2, 0).abs() <= 1e-12);
    }

    #[test]
    fn clipped_and_surrogated_forms_agree_under_centering() {
        // With per-state advantage centering the correction term cancels, so
        // the ratio-space objective and the deviation-space surrogate agree.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for case in 0..50 {
            let adv = rng.gen_range(0.2..2.0);
            // Multiplicity-weighted advantage sums vanish at both states.
            let batch = Batch::new(vec![
                tok(0, 0, 0, 0, adv),
                tok(0, 0, 1, 0, adv),
                tok(0, 1, 0, 1, -adv),
                tok(0, 1, 1, 1, -adv),
                tok(1, 0, 0, 2, 0.7),
                tok(1, 1, 1, 2, -0.7),
            ])
            .unwrap();
            let values: Vec<f64> = (0..batch.pairs().len())
                .map(|_| rng.gen_range(0.5..1.6))
                .collect();
            let ratios = RatioTuple::from_pair_values(&batch, &values).unwrap();
            let dev = DeviationTuple::from_ratios(&batch, &ratios);
            let delta = rng.gen_range(0.02..0.4);
            let gamma = [0.5, 0.9, 1.0][case % 3];
            let a = apc_objective_discounted(&batch, &ratios, delta, gamma).unwrap();
            let b = surrogated_apc_objective(&batch, &dev, delta, gamma).unwrap();
            assert!((a - b).abs() <= 1e-10, "case {case}: {a} vs {b}");
        }
    }

    #[test]
    fn discounted_objective_matches_gamma_one_form() {
        let batch = Batch::new(vec![
            tok(0, 0, 0, 0, 1.0),
            tok(0, 1, 0, 1, -1.0),
            tok(1, 0, 0, 2, 0.5),
            tok(1, 1, 1, 0, -0.5),
        ])
        .unwrap();
        let r = RatioTuple::from_token_values(&batch, vec![1.2, 0.8, 1.05, 0.95]).unwrap();
        let a = apc_objective(&batch, &r, 0.15).unwrap();
        let b = apc_objective_discounted(&batch, &r, 0.15, 1.0).unwrap();
        assert!((a - b).abs() < 1e-14);
    }
}
