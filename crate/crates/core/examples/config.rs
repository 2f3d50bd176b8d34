//! Print the default experiment configuration as JSON.

use tscac::experiment::ExperimentConfig;

fn main() {
    let cfg = ExperimentConfig::default();
    println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
}
