//! Closed-form stage-two target for one state with two auxiliary policies,
//! and how it moves as the multiplier grows.

use tscac::actors::{closed_form_target, LagrangeWeights};
use tscac::approx::log_softmax;

fn main() -> tscac::Result<()> {
    let aux = vec![
        log_softmax(&[1.0, 0.0, 0.0, -1.0]),
        log_softmax(&[0.0, 0.0, 1.5, 0.0]),
    ];
    let advantages = [0.3, 0.8, -0.2, 0.1];
    println!("advantages {advantages:?}");
    for lambda in [1e-2, 1e-1, 1.0, 10.0, 100.0] {
        let lambdas = LagrangeWeights::uniform(2, lambda)?;
        let cf = closed_form_target(&aux, &lambdas, &advantages)?;
        let p: Vec<String> = cf.probs.iter().map(|p| format!("{p:.4}")).collect();
        println!("lambda {lambda:>6}: pi* = [{}]  log Z = {:.4}", p.join(", "), cf.log_partition);
    }
    Ok(())
}
