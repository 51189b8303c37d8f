//! `verify`: the full verification suite as named checks with a JSON report.

use std::path::Path;

use rand::Rng;
use serde::Serialize;

use fiberlab::core::{finite_diff_gradient, GatingConfig, PolicyTable, RatioTuple};
use fiberlab::divergence::{exact_kl, exact_tv};
use fiberlab::fbg::{check_reflecting, first_order_check, FirstOrderReport, MarkovKernel};
use fiberlab::fgh::{
    build_domain_chain, domain_base_weights, domain_decompose, domain_recover, fgh_gate,
    fiberpo_domain_gate, group_domain_aggregates, DomainGatingConfig,
};
use fiberlab::fiberpo::{
    base_weight, fbg_instance, fiberpo_gate, fiberpo_jacobian, signed_aggregates_all,
    token_gate_states,
};
use fiberlab::rgf::{delta_trpo, gate_gspo, trajectory_weights};
use fiberlab::synth::{
    perturbed_policy, random_chain, random_deviation, random_domain_batch, random_policy, rng,
    sample_batch, tiny_equivalence_batch,
};
use fiberlab::trust_region::{
    apc_clip_bound, classify_zone, clip_to_budget, equivalence_check, retract, OptimizerBudget,
    ZoneLabel,
};
use fiberlab::StateActionSpace;

use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, write_json};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub passed: bool,
    pub details: String,
}

fn result(check: &str, passed: bool, details: String) -> CheckResult {
    CheckResult {
        check: check.into(),
        passed,
        details,
    }
}

pub fn run(
    config: &ExperimentConfig,
    out: &Path,
    inject_fault: Option<&str>,
) -> anyhow::Result<bool> {
    if let Some(fault) = inject_fault {
        if fault != "non-reflecting-kernel" {
            anyhow::bail!("unknown fault '{fault}' (expected non-reflecting-kernel)");
        }
    }
    ensure_dir(out)?;
    let checks = vec![
        check_trpo_vanishing(),
        check_equivalence(config),
        check_retraction(config),
        check_first_order(config),
        check_jacobian(config),
        check_reflecting_kernels(config, inject_fault == Some("non-reflecting-kernel")),
        check_telescoping(config),
        check_gspo_bound(config),
        check_zone_classification(config),
        check_fgh_recovery(config),
    ];
    let mut all_passed = true;
    for check in &checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("check {}: {status} ({})", check.check, check.details);
        all_passed &= check.passed;
    }
    write_json(&out.join("verify_report.json"), &checks)?;
    Ok(all_passed)
}

fn check_trpo_vanishing() -> CheckResult {
    let cases = [
        (0.5, 0.125),
        (0.9, (1.0 - 0.9) / (8.0 * 0.9)),
        (0.99, (1.0 - 0.99) / (8.0 * 0.99)),
        (1.0, 0.0),
    ];
    let passed = cases
        .iter()
        .all(|&(gamma, expect)| delta_trpo(gamma).unwrap() == expect);
    result(
        "trpo-vanishing",
        passed,
        "radius (1-gamma)/(8 gamma) at gamma in {0.5, 0.9, 0.99, 1}".into(),
    )
}

fn check_equivalence(config: &ExperimentConfig) -> CheckResult {
    let eq = &config.equivalence;
    let mut generator = rng(config.seed ^ 0x45_51);
    let mut worst_diff = 0.0f64;
    let mut worst_gap = 0.0f64;
    for instance in 0..eq.instances {
        let gamma = eq.gammas[instance % eq.gammas.len()];
        let batch = tiny_equivalence_batch(&mut generator);
        let report = match equivalence_check(
            &batch,
            gamma,
            OptimizerBudget {
                starts: eq.starts,
                grid: eq.grid,
                seed: config.seed.wrapping_add(instance as u64),
            },
        ) {
            Ok(r) => r,
            Err(e) => return result("apc-tv-trpo-equivalence", false, e.to_string()),
        };
        worst_diff = worst_diff.max(report.max_abs_diff);
        worst_gap = worst_gap.max(report.objective_gap);
    }
    result(
        "apc-tv-trpo-equivalence",
        worst_diff <= eq.max_abs_diff && worst_gap <= eq.max_objective_gap,
        format!(
            "{} instances, max |d(delta)| {worst_diff:.2e}, max objective gap {worst_gap:.2e}",
            eq.instances
        ),
    )
}

fn check_retraction(config: &ExperimentConfig) -> CheckResult {
    let mut generator = rng(config.seed ^ 0x52_45);
    let shapes = config.verify.retraction_shapes.max(1);
    let per_shape = config.verify.retraction_cases.div_ceil(shapes);
    let mut checked = 0;
    for shape in 0..shapes {
        let space = StateActionSpace::uniform(2 + shape % 4, 2 + shape % 3).unwrap();
        let old = random_policy(&mut generator, &space, 1.0);
        let batch = sample_batch(&mut generator, &old, 2, 6 + shape, false);
        let delta = generator.gen_range(0.05..0.3);
        for case in 0..per_shape {
            let target = if case % 2 == 0 {
                generator.gen_range(0.1..0.8) * delta
            } else {
                generator.gen_range(1.2..4.0) * delta
            };
            let u = random_deviation(&mut generator, &batch, target);
            let post = match retract(&batch, &u, delta) {
                Ok(p) => p,
                Err(e) => return result("retraction", false, e.to_string()),
            };
            for si in 0..batch.states().len() {
                if post.per_state_tv(&batch, si) > delta + 1e-12 {
                    return result("retraction", false, "per-state TV above delta".into());
                }
                if u.per_state_tv(&batch, si) > delta
                    && post.per_state_tv(&batch, si) >= delta - 1e-9
                {
                    return result(
                        "retraction",
                        false,
                        "violation not strictly retracted".into(),
                    );
                }
            }
            checked += 1;
        }
    }
    result(
        "retraction",
        true,
        format!("{checked} deviations, {shapes} shapes"),
    )
}

fn check_first_order(config: &ExperimentConfig) -> CheckResult {
    let mut generator = rng(config.seed ^ 0x46_4f);
    let gating = &config.gating;
    let instances = config.verify.first_order_instances.max(2);
    let mut worst = 0.0f64;
    for instance in 0..instances / 2 {
        let space = StateActionSpace::uniform(3 + instance % 3, 2 + instance % 2).unwrap();
        let old = random_policy(&mut generator, &space, 1.0);
        let batch = sample_batch(&mut generator, &old, 2, 5, true);
        let instance = match fbg_instance(&batch, gating) {
            Ok(i) => i,
            Err(e) => return result("first-order", false, e.to_string()),
        };
        match first_order_check(&instance, &batch, &old, 1e-5) {
            Ok(FirstOrderReport::Agreement {
                value_gap,
                max_rel_grad_err,
            }) => {
                if value_gap > 1e-12 {
                    return result("first-order", false, format!("value gap {value_gap:.2e}"));
                }
                worst = worst.max(max_rel_grad_err);
            }
            Ok(FirstOrderReport::PreconditionViolated { what }) => {
                return result("first-order", false, format!("precondition: {what}"))
            }
            Err(e) => return result("first-order", false, e.to_string()),
        }
    }
    // Four-level objective against the linear surrogate.
    for instance in 0..instances / 2 {
        let space = StateActionSpace::uniform(3, 2 + instance % 2).unwrap();
        let old = random_policy(&mut generator, &space, 1.0);
        let batch = sample_batch(&mut generator, &old, 4, 4, true);
        let dbatch = random_domain_batch(&mut generator, batch.clone(), 3, 2);
        let dconfig = DomainGatingConfig::uniform(gating.clone());
        let mu = trajectory_weights(&batch);
        let advantages = batch.advantages();
        let flat = old.flat_logits();
        let gated = |z: &[f64]| -> fiberlab::Result<f64> {
            let policy = PolicyTable::from_flat_logits(&space, z)?;
            let ratios = RatioTuple::from_policies(&policy, &old, &batch)?;
            fiberlab::fgh::fiberpo_domain_objective(&dbatch, &ratios, &dconfig)
        };
        let linear = |z: &[f64]| -> fiberlab::Result<f64> {
            let policy = PolicyTable::from_flat_logits(&space, z)?;
            let ratios = RatioTuple::from_policies(&policy, &old, &batch)?;
            Ok(ratios
                .values()
                .iter()
                .zip(&mu)
                .zip(&advantages)
                .map(|((r, w), a)| w * r * a)
                .sum())
        };
        let g1 = finite_diff_gradient(gated, &flat, 1e-5).unwrap();
        let g2 = finite_diff_gradient(linear, &flat, 1e-5).unwrap();
        let norm: f64 = g2.iter().map(|g| g * g).sum::<f64>().sqrt();
        let diff: f64 = g1
            .iter()
            .zip(&g2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(diff / norm.max(1e-12));
    }
    result(
        "first-order",
        worst <= 1e-5,
        format!("{instances} instances, max relative gradient error {worst:.2e}"),
    )
}

fn check_jacobian(config: &ExperimentConfig) -> CheckResult {
    let gating = &config.gating;
    let mut generator = rng(config.seed ^ 0x4a_41);
    let mut worst = 0.0f64;
    let mut instances = 0;
    let mut attempts = 0;
    while instances < config.verify.jacobian_instances && attempts < 10_000 {
        attempts += 1;
        let (batch, ratios) = random_chain(&mut generator, 2, 6, 0.25);
        if !off_boundary(&batch, &ratios, gating) {
            continue;
        }
        instances += 1;
        let jac = fiberpo_jacobian(&batch, &ratios, gating).unwrap();
        let h = 1e-7;
        for j in 0..batch.total() {
            let mut plus = ratios.values().to_vec();
            let mut minus = plus.clone();
            plus[j] += h;
            minus[j] -= h;
            let gp = fiberpo_gate(
                &batch,
                &RatioTuple::from_token_values(&batch, plus).unwrap(),
                gating,
            )
            .unwrap();
            let gm = fiberpo_gate(
                &batch,
                &RatioTuple::from_token_values(&batch, minus).unwrap(),
                gating,
            )
            .unwrap();
            for i in 0..batch.total() {
                if batch.token_trajectory(i) != batch.token_trajectory(j) {
                    if jac[i][j] != 0.0 {
                        return result("jacobian", false, "cross-trajectory entry non-zero".into());
                    }
                    continue;
                }
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                worst = worst.max((jac[i][j] - fd).abs() / fd.abs().max(1.0));
            }
        }
    }
    result(
        "jacobian",
        worst <= 1e-5 && instances > 0,
        format!("{instances} off-boundary instances, max error {worst:.2e}"),
    )
}

fn off_boundary(batch: &fiberlab::Batch, ratios: &RatioTuple, config: &GatingConfig) -> bool {
    let margin = 1e-4;
    let aggs = signed_aggregates_all(batch, ratios);
    for (info, agg) in batch.trajectories().iter().zip(&aggs) {
        let k = config.rollback_k_for(info.len);
        for (x, c) in [
            (agg.log_s_plus, config.c_plus()),
            (agg.log_s_minus, config.c_minus()),
        ] {
            let star = (1.0 + 1.0 / k as f64) * c;
            if (x.abs() - c).abs() < margin || (x.abs() - star).abs() < margin {
                return false;
            }
        }
    }
    for state in token_gate_states(batch, ratios, config) {
        if (state.fiber_residual.abs() - config.epsilon()).abs() < margin
            || (state.opposite_aggregate.abs() - config.epsilon()).abs() < margin
        {
            return false;
        }
    }
    ratios.logs().iter().all(|lg| lg.abs() > margin)
}

fn check_reflecting_kernels(config: &ExperimentConfig, inject_fault: bool) -> CheckResult {
    let mut generator = rng(config.seed ^ 0x52_4b);
    for _ in 0..50 {
        let (batch, _) = random_chain(&mut generator, 3, 4, 0.3);
        let instance = fbg_instance(&batch, &config.gating).unwrap();
        let kernel = if inject_fault {
            let mut weights: Vec<f64> = (0..instance.bundle.total_count())
                .map(|e| instance.kernel.weight(e))
                .collect();
            weights[0] *= 0.9;
            MarkovKernel::new(&instance.bundle, weights).unwrap()
        } else {
            instance.kernel
        };
        if !check_reflecting(&instance.bundle, &kernel) {
            return result(
                "reflecting",
                false,
                "kernel violates the reflecting condition".into(),
            );
        }
    }
    result(
        "reflecting",
        true,
        "50 bundles, pushforward o kernel = id".into(),
    )
}

fn check_telescoping(config: &ExperimentConfig) -> CheckResult {
    let mut generator = rng(config.seed ^ 0x54_45);
    for _ in 0..20 {
        let (batch, ratios) = random_chain(&mut generator, 6, 4, 0.01);
        let dbatch = random_domain_batch(&mut generator, batch.clone(), 3, 2);
        let dconfig = DomainGatingConfig::uniform(config.gating.clone());
        let aggs = group_domain_aggregates(&dbatch, &ratios);
        let w = domain_base_weights(&dbatch, &aggs, &dconfig);
        for (slot, info) in batch.trajectories().iter().enumerate() {
            let two = base_weight(&aggs.trajectory[slot], &config.gating, info.len);
            if (w[slot] - two).abs() > 1e-12 {
                return result(
                    "telescoping",
                    false,
                    format!("pass-through exponent mismatch: {} vs {two}", w[slot]),
                );
            }
        }
    }
    result(
        "telescoping",
        true,
        "pass-through six-term exponent collapses to the two-level base weight".into(),
    )
}

fn check_gspo_bound(config: &ExperimentConfig) -> CheckResult {
    let epsilon = config.gating.eps_gspo();
    let target_kl = -(1.0f64 - epsilon).ln();
    let tv_bound = (epsilon / 2.0).sqrt() * 1.10;
    let mut generator = rng(config.seed ^ 0x47_53);
    for seed in 0..config.verify.gspo_seeds {
        let space = StateActionSpace::uniform(5, 4).unwrap();
        let old = random_policy(&mut generator, &space, 1.0);
        let direction = random_policy(&mut generator, &space, 1.0);
        let states: Vec<usize> = (0..10).map(|t| t % 5).collect();
        let kl_at = |scale: f64| -> f64 {
            let new = mix(&old, &direction, scale);
            states
                .iter()
                .map(|&s| exact_kl(old.probs(s), new.probs(s)))
                .sum::<f64>()
                / states.len() as f64
        };
        let mut hi = 0.01;
        while kl_at(hi) < target_kl {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if kl_at(mid) < target_kl {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let new = mix(&old, &direction, 0.5 * (lo + hi));
        let tv: f64 = states
            .iter()
            .map(|&s| exact_tv(old.probs(s), new.probs(s)))
            .sum::<f64>()
            / states.len() as f64;
        if tv > tv_bound {
            return result(
                "gspo-bound",
                false,
                format!("seed {seed}: exact TV {tv:.5} above {tv_bound:.5}"),
            );
        }
        let batch = sample_batch(&mut generator, &old, 2, 8, false);
        let ratios = RatioTuple::from_policies(&new, &old, &batch).unwrap();
        let gated = gate_gspo(&batch, &ratios, epsilon, false).unwrap();
        for info in batch.trajectories() {
            let implied = -gated[info.token_indices[0]].ln();
            if implied > target_kl + 1e-12 {
                return result(
                    "gspo-bound",
                    false,
                    format!("seed {seed}: post-gate KL {implied:.6}"),
                );
            }
        }
    }
    result(
        "gspo-bound",
        true,
        format!(
            "{} seeds, exact TV within {tv_bound:.4}, gated KL within {target_kl:.2e}",
            config.verify.gspo_seeds
        ),
    )
}

fn mix(old: &PolicyTable, direction: &PolicyTable, scale: f64) -> PolicyTable {
    let logits = (0..old.num_states())
        .map(|s| {
            (0..old.num_actions(s))
                .map(|a| old.logit(s, a).unwrap() + scale * direction.logit(s, a).unwrap())
                .collect()
        })
        .collect();
    PolicyTable::from_logits(logits).unwrap()
}

fn check_zone_classification(config: &ExperimentConfig) -> CheckResult {
    let mut generator = rng(config.seed ^ 0x5a_4f);
    let mut checked = 0;
    while checked < config.verify.zone_tokens {
        let space = StateActionSpace::uniform(2 + checked % 3, 2 + checked % 4).unwrap();
        let old = random_policy(&mut generator, &space, 1.0);
        let scale = generator.gen_range(0.05..0.8);
        let new = perturbed_policy(&mut generator, &old, scale);
        let batch = sample_batch(&mut generator, &old, 2, 5, false);
        let ratios = RatioTuple::from_policies(&new, &old, &batch).unwrap();
        let delta = generator.gen_range(0.01..0.3);
        for token in 0..batch.total() {
            let zone = classify_zone(&batch, &ratios, token, delta).unwrap();
            let bound = apc_clip_bound(&batch, &ratios, token, delta).unwrap();
            let dev = ratios.value(token) - 1.0;
            let clipped = clip_to_budget(dev, bound);
            let consistent = match zone {
                ZoneLabel::P => clipped == dev,
                ZoneLabel::Z => clipped == 0.0,
                ZoneLabel::R => clipped != 0.0 && clipped != dev,
            };
            if !consistent {
                return result(
                    "zone-classification",
                    false,
                    format!("token {token}: zone {zone} vs clip output"),
                );
            }
            checked += 1;
        }
    }
    result("zone-classification", true, format!("{checked} tokens"))
}

fn check_fgh_recovery(config: &ExperimentConfig) -> CheckResult {
    let mut generator = rng(config.seed ^ 0x46_47);
    for _ in 0..20 {
        let (batch, ratios) = random_chain(&mut generator, 3, 4, 0.3);
        let dbatch = random_domain_batch(&mut generator, batch.clone(), 2, 2);
        let dconfig = DomainGatingConfig::uniform(config.gating.clone());
        let direct = fiberpo_domain_gate(&dbatch, &ratios, &dconfig).unwrap();
        let chain = match build_domain_chain(&dbatch, &dconfig) {
            Ok(c) => c,
            Err(e) => return result("fgh-recovery", false, e.to_string()),
        };
        let sigma = domain_decompose(&batch, &ratios);
        let gated = fgh_gate(&chain, &sigma).unwrap();
        let via_chain = domain_recover(&batch, &gated);
        for (a, b) in direct.iter().zip(&via_chain) {
            if (a - b).abs() > 1e-10 {
                return result(
                    "fgh-recovery",
                    false,
                    format!("chain path deviates: {a} vs {b}"),
                );
            }
        }
    }
    result(
        "fgh-recovery",
        true,
        "stratified chain reproduces the closed-form gate".into(),
    )
}
