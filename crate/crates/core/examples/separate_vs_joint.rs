//! Separate per-channel critics versus one joint critic on simulator logs
//! with a dense watch-time channel and one sparse interaction.
//!
//! `cargo run --release --example separate_vs_joint [sparse_discount]`

use tscac::approx::MlpSpec;
use tscac::critics::{separate_vs_joint, DiagnosticConfig};
use tscac::env::{PreferencePolicy, Simulator, SimulatorConfig};

fn main() -> tscac::Result<()> {
    let gamma_sparse: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.95);
    let cfg = SimulatorConfig {
        interaction_base_rates: vec![0.0161],
        affinity_pref_mix: vec![0.0],
        state_dim: 0,
        ..SimulatorConfig::default()
    }
    .normalized()?;
    let sim = Simulator::new(cfg.clone())?;
    let behavior = PreferencePolicy::new(&sim, 1.0)?;
    let (mut sep, mut joint) = (0.0, 0.0);
    for seed in 0..5u64 {
        let train = sim.rollout(&behavior, 1000, seed * 2 + 100)?;
        let eval = sim.rollout(&behavior, 1000, seed * 2 + 101)?;
        let dc = DiagnosticConfig {
            network: MlpSpec::standard(cfg.state_dim, 1, 0),
            gamma_dense: 0.95,
            gamma_sparse,
            epochs: 10,
            batch_size: 64,
            lr: 0.05,
            seed,
        };
        let r = separate_vs_joint(&train, &eval, 0, 1, &dc)?;
        println!("seed {seed}: separate {:.4} joint {:.4}", r.separate, r.joint);
        sep += r.separate / 5.0;
        joint += r.joint / 5.0;
    }
    println!("mean: separate {sep:.4} joint {joint:.4}");
    Ok(())
}
