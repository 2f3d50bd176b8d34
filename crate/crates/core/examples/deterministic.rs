//! Deterministic-policy variant: gradient ascent on a continuous action
//! under the kernel-weighted objective, pulled between Q and two auxiliary
//! actions.

use tscac::actors::{deterministic_objective, ActionValueFunction, LagrangeWeights};

fn main() -> tscac::Result<()> {
    let q = ActionValueFunction::new(2, 2, vec![16], 1)?;
    let state = [0.3, -0.4];
    let aux = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    for lambda in [0.0, 0.5, 5.0] {
        let lambdas = LagrangeWeights::uniform(2, lambda)?;
        let mut a = vec![0.0, 0.0];
        let mut obj = 0.0;
        for _ in 0..500 {
            let (v, g) = deterministic_objective(&state, &a, &aux, &lambdas, &q)?;
            obj = v;
            for (x, gx) in a.iter_mut().zip(&g) {
                *x += 0.1 * gx;
            }
        }
        println!("lambda {lambda}: action [{:.3}, {:.3}] objective {obj:.4}", a[0], a[1]);
    }
    Ok(())
}
