//! Full two-stage training for one seed: auxiliary actor-critics, then the
//! constrained main policy. Checkpoints land in a temp directory.

use tscac::experiment::{run_two_stage, summarize, ExperimentConfig};

fn main() -> tscac::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.training.iterations = 1000;
    let run = run_two_stage(&cfg, 0)?;
    let dir = std::env::temp_dir().join("tscac_two_stage");
    run.save(&dir)?;
    let last = run.metrics.iter().rev().find(|r| r.stage == "main");
    if let Some(r) = last {
        println!("final stage-two batch: mean weight {:.3}, clipped {:.3}", r.mean_weight, r.clipped_fraction);
    }
    for row in summarize(&cfg, &run)? {
        println!("{:<12} mc {:>9.5}  ncis {:>9.5}", row.channel, row.mc_value, row.ncis);
    }
    println!("checkpoints in {}", dir.display());
    Ok(())
}
