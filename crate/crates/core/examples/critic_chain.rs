//! Per-channel TD critics on a small deterministic chain, compared with the
//! exact discounted values.

use tscac::approx::{MlpSpec, ValueFunction};
use tscac::cmdp::{ResponseSpec, Sparsity, Transition};
use tscac::critics::CriticEnsemble;

fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    if k < n {
        v[k] = 1.0;
    }
    v
}

fn main() -> tscac::Result<()> {
    let rewards = [[1.0, 0.0], [0.5, 0.0], [0.0, 1.0], [2.0, 0.0]];
    let discounts = [0.9, 0.5];
    let n = rewards.len();
    let spec = ResponseSpec::new(
        vec!["watch".into(), "like".into()],
        discounts.to_vec(),
        vec![Sparsity::Dense, Sparsity::Sparse],
        vec![None],
    )?;
    let batch: Vec<Transition> = (0..n)
        .map(|k| Transition {
            state: one_hot(n, k),
            action: 0,
            reward: rewards[k].to_vec(),
            next_state: one_hot(n, k + 1),
            terminal: k + 1 == n,
            behavior_prob: 1.0,
        })
        .collect();
    let critics = (0..2).map(|_| ValueFunction::zeros(MlpSpec::linear(n, 1))).collect::<Result<Vec<_>, _>>()?;
    let mut ens = CriticEnsemble::from_critics(spec, critics)?;
    for _ in 0..2000 {
        for c in 0..2 {
            ens.critic_update(c, &batch, 0.5)?;
        }
    }
    for (c, g) in discounts.iter().enumerate() {
        let mut exact = vec![0.0; n + 1];
        for k in (0..n).rev() {
            exact[k] = rewards[k][c] + g * exact[k + 1];
        }
        for k in 0..n {
            println!("channel {c} state {k}: td {:.6} exact {:.6}", ens.value(c, &one_hot(n, k))?, exact[k]);
        }
    }
    Ok(())
}
