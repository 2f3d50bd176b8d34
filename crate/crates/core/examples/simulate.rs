//! Roll out the logging policy, print per-channel response rates and write
//! the sessions as JSONL.

use tscac::cmdp::flatten;
use tscac::env::{PreferencePolicy, Simulator, SimulatorConfig};

fn main() -> tscac::Result<()> {
    let sim = Simulator::new(SimulatorConfig::default())?;
    let policy = PreferencePolicy::new(&sim, 1.0)?;
    let path = std::env::temp_dir().join("tscac_sessions.jsonl");
    let sessions = sim.generate_log(&policy, 2000, 7, &path)?;
    let steps = flatten(&sessions);
    println!(
        "{} sessions, {} steps, mean length {:.2} (expected {:.2})",
        sessions.len(),
        steps.len(),
        steps.len() as f64 / sessions.len() as f64,
        sim.config().expected_session_len()
    );
    let m = sim.config().m();
    for c in 0..m {
        let nonzero = steps.iter().filter(|t| t.reward[c] != 0.0).count() as f64 / steps.len() as f64;
        let mean = steps.iter().map(|t| t.reward[c]).sum::<f64>() / steps.len() as f64;
        println!("channel {c}: mean {mean:.5}, nonzero fraction {nonzero:.4}");
    }
    println!("wrote {}", path.display());
    Ok(())
}
