//! `gen`: seeded synthetic batch, policy, and domain-assignment files.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use fiberlab::core::{RatioTuple, StateActionSpace};
use fiberlab::fgh::{assignment_to_json, drift_report, DomainBatch, DomainGatingConfig};
use fiberlab::synth::{perturbed_policy, random_policy, rng, sample_batch};

use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, fmt, write_json, write_text, Csv};

pub fn run(config: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    ensure_dir(out)?;
    let shape = &config.batch;
    let space = StateActionSpace::uniform(shape.num_states, shape.actions_per_state)?;
    let mut generator = rng(config.seed);
    let old = random_policy(&mut generator, &space, 1.0);
    let new = perturbed_policy(&mut generator, &old, shape.drift_scale);
    let batch = sample_batch(
        &mut generator,
        &old,
        shape.num_trajectories,
        shape.trajectory_length,
        true,
    );

    // Random group/domain assignment over the generated trajectories.
    let group_domain: Vec<usize> = (0..shape.num_groups)
        .map(|_| generator.gen_range(0..shape.num_domains))
        .collect();
    let assignment: BTreeMap<usize, (usize, usize)> = batch
        .trajectories()
        .iter()
        .map(|info| {
            let group = generator.gen_range(0..shape.num_groups);
            (info.id, (group, group_domain[group]))
        })
        .collect();

    write_json(&out.join("policy_old.json"), &old)?;
    write_json(&out.join("policy_new.json"), &new)?;
    write_json(&out.join("batch.json"), &batch)?;
    write_text(
        &out.join("domain_assignment.json"),
        &(assignment_to_json(&assignment) + "\n"),
    )?;

    // Per-level drift report for the generated policy pair.
    let dbatch = DomainBatch::new(batch.clone(), &assignment)?;
    let ratios = RatioTuple::from_policies(&new, &old, &batch)?;
    let rows = drift_report(
        &dbatch,
        &ratios,
        &DomainGatingConfig::uniform(config.gating.clone()),
    );
    let mut csv = Csv::new(
        "fiberlab/domain-drift/v1",
        &["level", "unit", "log_s_plus", "log_s_minus", "regime"],
    );
    for row in &rows {
        csv.row(&[
            row.level.to_string(),
            row.unit.to_string(),
            fmt(row.log_s_plus),
            fmt(row.log_s_minus),
            format!("{}", row.regime),
        ]);
    }
    write_text(&out.join("domain_drift.csv"), &csv.finish())?;

    println!(
        "gen: wrote batch ({} tokens, {} trajectories), policy pair, assignment, and drift report to {}",
        batch.total(),
        batch.num_trajectories(),
        out.display()
    );
    Ok(())
}
