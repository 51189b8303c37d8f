//! `simplex-map`: joint regime labels over the constraint surface
//! (1/3)(r1 + r2 + r3) = 1 for a three-token trajectory.

use std::path::Path;

use fiberlab::core::{Batch, RatioTuple, Token};
use fiberlab::fiberpo::classify_regimes;

use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, fmt, write_text, Csv};

pub fn run(config: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    ensure_dir(out)?;
    let gating = config.simplex.gating()?;
    let step = config.simplex.resolution;
    if !(step > 0.0 && step < 1.0) {
        anyhow::bail!("simplex.resolution must be in (0, 1)");
    }

    let tokens: Vec<Token> = (0..3)
        .map(|i| Token {
            state: i,
            action: 0,
            trajectory: 0,
            timestep: i,
            advantage: 1.0,
        })
        .collect();
    let batch = Batch::new(tokens)?;

    let mut csv = Csv::new(
        "fiberlab/simplex-map/v1",
        &["r1", "r2", "r3", "local_regime", "global_regime"],
    );
    let mut rows = 0usize;
    let mut r1 = step;
    while r1 < 3.0 - 2.0 * step + 1e-12 {
        let mut r2 = step;
        while r1 + r2 < 3.0 - step + 1e-12 {
            let r3 = 3.0 - r1 - r2;
            let ratios = RatioTuple::from_token_values(&batch, vec![r1, r2, r3])?;
            let label = classify_regimes(&batch, &ratios, &gating)[0];
            csv.row(&[
                fmt(r1),
                fmt(r2),
                fmt(r3),
                label.local.to_string(),
                label.global.to_string(),
            ]);
            rows += 1;
            r2 += step;
        }
        r1 += step;
    }

    let path = out.join("simplex_map.csv");
    write_text(&path, &csv.finish())?;
    println!(
        "simplex-map: wrote {rows} grid points to {}",
        path.display()
    );
    Ok(())
}
