//! `gradcheck` and `equivalence`: focused numerical reports as JSON.

use std::path::Path;

use serde::Serialize;

use fiberlab::core::RatioTuple;
use fiberlab::fbg::{first_order_check, FirstOrderReport};
use fiberlab::fiberpo::{fbg_instance, fiberpo_gate, fiberpo_jacobian};
use fiberlab::synth::{random_chain, random_policy, rng, sample_batch, tiny_equivalence_batch};
use fiberlab::trust_region::{equivalence_check, EquivalenceReport, OptimizerBudget};
use fiberlab::StateActionSpace;

use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, write_json};

#[derive(Debug, Serialize)]
struct GradCheckReport {
    first_order_value_gap: f64,
    first_order_max_rel_grad_err: f64,
    jacobian_max_err: f64,
    instances: usize,
    passed: bool,
}

pub fn run_gradcheck(config: &ExperimentConfig, out: &Path) -> anyhow::Result<bool> {
    ensure_dir(out)?;
    let mut generator = rng(config.seed ^ 0x47_43);
    let gating = &config.gating;
    let mut value_gap = 0.0f64;
    let mut grad_err = 0.0f64;
    let instances = 8;
    for i in 0..instances {
        let space = StateActionSpace::uniform(3 + i % 3, 2 + i % 2)?;
        let old = random_policy(&mut generator, &space, 1.0);
        let batch = sample_batch(&mut generator, &old, 2, 5, true);
        let instance = fbg_instance(&batch, gating)?;
        match first_order_check(&instance, &batch, &old, 1e-5)? {
            FirstOrderReport::Agreement {
                value_gap: v,
                max_rel_grad_err: g,
            } => {
                value_gap = value_gap.max(v);
                grad_err = grad_err.max(g);
            }
            FirstOrderReport::PreconditionViolated { what } => {
                anyhow::bail!("gate precondition violated: {what}")
            }
        }
    }

    let mut jac_err = 0.0f64;
    let mut done = 0;
    while done < instances {
        let (batch, ratios) = random_chain(&mut generator, 2, 5, 0.2);
        let jac = fiberpo_jacobian(&batch, &ratios, gating)?;
        let h = 3e-7;
        let mut boundary = false;
        let mut worst = 0.0f64;
        for j in 0..batch.total() {
            let mut plus = ratios.values().to_vec();
            let mut minus = plus.clone();
            plus[j] += h;
            minus[j] -= h;
            let gp = fiberpo_gate(
                &batch,
                &RatioTuple::from_token_values(&batch, plus)?,
                gating,
            )?;
            let gm = fiberpo_gate(
                &batch,
                &RatioTuple::from_token_values(&batch, minus)?,
                gating,
            )?;
            for i in 0..batch.total() {
                if batch.token_trajectory(i) != batch.token_trajectory(j) {
                    continue;
                }
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                let err = (jac[i][j] - fd).abs() / fd.abs().max(1.0);
                if err > 1e-3 {
                    // A probe straddled a regime boundary; skip the instance.
                    boundary = true;
                }
                worst = worst.max(err);
            }
        }
        if boundary {
            continue;
        }
        jac_err = jac_err.max(worst);
        done += 1;
    }

    let report = GradCheckReport {
        first_order_value_gap: value_gap,
        first_order_max_rel_grad_err: grad_err,
        jacobian_max_err: jac_err,
        instances,
        passed: value_gap <= 1e-12 && grad_err <= 1e-5 && jac_err <= 1e-5,
    };
    let passed = report.passed;
    write_json(&out.join("gradcheck.json"), &report)?;
    println!(
        "gradcheck: value gap {value_gap:.2e}, gradient error {grad_err:.2e}, jacobian error {jac_err:.2e} -> {}",
        if passed { "PASS" } else { "FAIL" }
    );
    Ok(passed)
}

#[derive(Debug, Serialize)]
struct EquivalenceRun {
    reports: Vec<EquivalenceReport>,
    passed: bool,
}

pub fn run_equivalence(config: &ExperimentConfig, out: &Path) -> anyhow::Result<bool> {
    ensure_dir(out)?;
    let eq = &config.equivalence;
    let mut generator = rng(config.seed ^ 0x45_51);
    let mut reports = Vec::new();
    let mut passed = true;
    for instance in 0..eq.instances {
        let gamma = eq.gammas[instance % eq.gammas.len()];
        let batch = tiny_equivalence_batch(&mut generator);
        let report = equivalence_check(
            &batch,
            gamma,
            OptimizerBudget {
                starts: eq.starts,
                grid: eq.grid,
                seed: config.seed.wrapping_add(instance as u64),
            },
        )?;
        passed &=
            report.max_abs_diff <= eq.max_abs_diff && report.objective_gap <= eq.max_objective_gap;
        reports.push(report);
    }
    let run = EquivalenceRun { reports, passed };
    write_json(&out.join("equivalence.json"), &run)?;
    println!(
        "equivalence: {} instances -> {}",
        eq.instances,
        if passed { "PASS" } else { "FAIL" }
    );
    Ok(passed)
}
