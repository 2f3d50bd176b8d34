//! Main-channel and interaction values across the multiplier grid.

use tscac::experiment::{run_sweep, sweep_means, ExperimentConfig, DEFAULT_GRID};

fn main() -> tscac::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.seeds = vec![0, 1];
    cfg.output_dir = std::env::temp_dir().join("tscac_sweep");
    let rows = run_sweep(&cfg, &DEFAULT_GRID)?;
    let names = cfg.response_spec.names().to_vec();
    println!("lambda  {}", names.join("  "));
    for (l, means) in DEFAULT_GRID.iter().zip(sweep_means(&rows, &DEFAULT_GRID, &names)) {
        let cells: Vec<String> = means.iter().map(|(m, _)| format!("{m:.4}")).collect();
        println!("{l:<7e} {}", cells.join("  "));
    }
    Ok(())
}
