//! Every algorithm on the same seeds, reported against behavior cloning.
//!
//! `cargo run --release --example compare [n_seeds]`

use tscac::experiment::{build_report, run_training, Algorithm, ExperimentConfig, ReportMetric};

fn main() -> tscac::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2);
    let mut cfg = ExperimentConfig::default();
    cfg.seeds = (0..n).collect();
    cfg.output_dir = std::env::temp_dir().join("tscac_compare");
    for algo in [Algorithm::Bc, Algorithm::Rcpo, Algorithm::RcpoMulti, Algorithm::Tscac] {
        cfg.algorithm = algo;
        run_training(&cfg)?;
        eprintln!("trained {algo}");
    }
    print!("{}", build_report(&cfg, &cfg.output_dir, ReportMetric::McValue)?.to_text());
    Ok(())
}
