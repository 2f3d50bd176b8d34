//! NCIS and DCG scores of a few policies on one behavior log.

use tscac::approx::{StochasticPolicy, UniformPolicy};
use tscac::env::{PreferencePolicy, Simulator, SimulatorConfig};
use tscac::eval::{dcg, monte_carlo_values, ncis_all, DEFAULT_CAP};
use tscac::cmdp::ResponseSpec;

fn report<P: StochasticPolicy + Sync>(name: &str, p: &P, sim: &Simulator, log: &[tscac::cmdp::Session]) -> tscac::Result<()> {
    let spec = ResponseSpec::uniform(&["watch_time", "click", "like", "comment"], 0.95)?;
    let ncis = ncis_all(p, log, DEFAULT_CAP)?;
    let mc = monte_carlo_values(&sim.rollout(p, 1000, 11)?, &spec)?;
    let d = dcg(p, log, 1)?;
    println!("{name:<10} ncis {ncis:.5?}\n{:<10} mc   {mc:.4?}  click dcg {d:.4}", "");
    Ok(())
}

fn main() -> tscac::Result<()> {
    let sim = Simulator::new(SimulatorConfig::default())?;
    let behavior = PreferencePolicy::new(&sim, 1.0)?;
    let log = sim.rollout(&behavior, 1000, 3)?;
    report("behavior", &behavior, &sim, &log)?;
    report("greedy", &PreferencePolicy::new(&sim, 0.1)?, &sim, &log)?;
    report("uniform", &UniformPolicy { n_actions: sim.n_actions() }, &sim, &log)?;
    Ok(())
}
