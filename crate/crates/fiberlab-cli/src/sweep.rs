//! `sweep`: objective traces under parameterized drift r_i = 1 + t·Δ̂_i.
//!
//! One CSV row per grid point: the first trajectory's signed aggregates,
//! base-weight log, one objective column per configured method, and the
//! trajectory's regime labels. Drift directions match the advantage signs,
//! so positive-advantage tokens grow their ratios. The ratios here are
//! synthetic (not derived from a policy pair), so every token gets its own
//! state and the per-state probability constraint is not enforced.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::bail;
use rand::Rng;

use fiberlab::core::{Batch, GatingConfig, RatioTuple, Token};
use fiberlab::fgh::{fiberpo_domain_objective, DomainBatch, DomainGatingConfig};
use fiberlab::fiberpo::{base_weight, classify_regimes, fiberpo_objective, signed_aggregates_all};
use fiberlab::rgf::{gate_gspo, gate_ppo, trajectory_weights};
use fiberlab::synth::rng;
use fiberlab::trust_region::apc_objective;

use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, fmt, write_text, Csv};

struct DriftInstance {
    batch: Batch,
    directions: Vec<f64>,
}

fn build_instance(config: &ExperimentConfig) -> DriftInstance {
    let mut generator = rng(config.seed);
    let sweep = &config.sweep;
    let mut tokens = Vec::new();
    let mut directions = Vec::new();
    let mut state = 0;
    for tj in 0..sweep.num_trajectories {
        for t in 0..sweep.trajectory_length {
            let positive = generator.gen_bool(sweep.positive_fraction);
            let advantage: f64 = if positive {
                generator.gen_range(0.5..1.5)
            } else {
                -generator.gen_range(0.5..1.5)
            };
            directions.push(advantage.signum() * generator.gen_range(0.5..1.5));
            tokens.push(Token {
                state,
                action: 0,
                trajectory: tj,
                timestep: t,
                advantage,
            });
            state += 1;
        }
    }
    DriftInstance {
        batch: Batch::new(tokens).expect("sweep batch is structurally valid"),
        directions,
    }
}

fn method_objective(
    label: &str,
    batch: &Batch,
    ratios: &RatioTuple,
    gating: &GatingConfig,
) -> anyhow::Result<f64> {
    let mu = trajectory_weights(batch);
    let weighted = |gated: &[f64]| -> f64 {
        gated
            .iter()
            .zip(&mu)
            .zip(batch.tokens())
            .map(|((g, w), tok)| w * g * tok.advantage)
            .sum()
    };
    Ok(match label {
        "fiberpo" => fiberpo_objective(batch, ratios, gating)?,
        "fiberpo-domain" => {
            let dbatch = DomainBatch::degenerate(batch.clone())?;
            fiberpo_domain_objective(
                &dbatch,
                ratios,
                &DomainGatingConfig::uniform(gating.clone()),
            )?
        }
        // Token-level clip at the same ε as the fiber gate, so the traces
        // share a clipping scale.
        "grpo" => weighted(&gate_ppo(
            batch,
            ratios,
            gating.epsilon(),
            gating.sign_gated(),
        )),
        "ppo" => {
            let gated = gate_ppo(batch, ratios, gating.eps_ppo(), gating.sign_gated());
            gated
                .iter()
                .zip(batch.tokens())
                .map(|(g, tok)| g * tok.advantage)
                .sum::<f64>()
                / batch.total() as f64
        }
        "gspo" => weighted(&gate_gspo(
            batch,
            ratios,
            gating.eps_gspo(),
            gating.sign_gated(),
        )?),
        "apc" => apc_objective(batch, ratios, gating.delta())?,
        other => bail!("unknown method '{other}' in sweep"),
    })
}

pub fn run(
    config: &ExperimentConfig,
    out: &Path,
    method_filter: Option<&str>,
) -> anyhow::Result<()> {
    ensure_dir(out)?;
    let grid = config.sweep.grid().map_err(anyhow::Error::msg)?;
    let methods: Vec<String> = match method_filter {
        Some(label) => vec![label.to_string()],
        None => config.methods.clone(),
    };
    let instance = build_instance(config);
    let gating = &config.gating;

    let mut header = vec![
        "t".to_string(),
        "log_s_plus".to_string(),
        "log_s_minus".to_string(),
        "base_weight_log".to_string(),
    ];
    for label in &methods {
        header.push(if label == "fiberpo" {
            "objective".to_string()
        } else {
            format!("objective_{label}")
        });
    }
    header.push("local_regime".to_string());
    header.push("global_regime".to_string());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new("fiberlab/sweep/v1", &header_refs);

    let mut ratio_cache: BTreeMap<usize, f64> = BTreeMap::new();
    for &t in &grid {
        ratio_cache.clear();
        let values: Vec<f64> = instance.directions.iter().map(|d| 1.0 + t * d).collect();
        if values.iter().any(|&r| r <= 0.0) {
            bail!("drift grid pushes a ratio non-positive at t = {t}; shrink sweep.t_stop");
        }
        let ratios = RatioTuple::from_token_values(&instance.batch, values)?;
        let aggs = signed_aggregates_all(&instance.batch, &ratios);
        let first = &aggs[0];
        let w = base_weight(first, gating, instance.batch.trajectories()[0].len);
        let label = classify_regimes(&instance.batch, &ratios, gating)[0];

        let mut cells = vec![
            fmt(t),
            fmt(first.log_s_plus),
            fmt(first.log_s_minus),
            fmt(w.ln()),
        ];
        for method in &methods {
            cells.push(fmt(method_objective(
                method,
                &instance.batch,
                &ratios,
                gating,
            )?));
        }
        cells.push(label.local.to_string());
        cells.push(label.global.to_string());
        csv.row(&cells);
    }

    let path = out.join("sweep.csv");
    write_text(&path, &csv.finish())?;
    println!(
        "sweep: wrote {} rows ({} methods) to {}",
        grid.len(),
        methods.len(),
        path.display()
    );
    Ok(())
}
