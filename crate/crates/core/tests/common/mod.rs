#![allow(dead_code)]

use tscac::approx::{Mlp, MlpSpec, SoftmaxPolicy, ValueFunction};
use tscac::cmdp::{ResponseSpec, Transition};
use tscac::critics::CriticEnsemble;

/// Single-state softmax policy: with state `[0.0]` the weights are inert
/// and the biases are the logits.
pub fn tabular_policy(logits: &[f64]) -> SoftmaxPolicy {
    let n = logits.len();
    let mut params = vec![0.0; n];
    params.extend_from_slice(logits);
    SoftmaxPolicy::from_network(Mlp::from_params(MlpSpec::linear(1, n), params).unwrap())
}

/// Ensemble of zero critics, so the advantage of a terminal step is its reward.
pub fn zero_ensemble(m: usize) -> CriticEnsemble {
    let names: Vec<String> = (0..m).map(|i| format!("r{i}")).collect();
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let spec = ResponseSpec::uniform(&refs, 0.9).unwrap();
    let critics = (0..m).map(|_| ValueFunction::zeros(MlpSpec::linear(1, 1)).unwrap()).collect();
    CriticEnsemble::from_critics(spec, critics).unwrap()
}

pub fn terminal_step(action: usize, reward: Vec<f64>, behavior_prob: f64) -> Transition {
    Transition {
        state: vec![0.0],
        action,
        reward,
        next_state: vec![0.0],
        terminal: true,
        behavior_prob,
    }
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        css += uj;
        let t = (css - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// `-sum_a pi(a) A(a) + sum_i lambda_i KL(pi || pi_i)`.
pub fn lagrangian(pi: &[f64], advantages: &[f64], aux: &[Vec<f64>], lambdas: &[f64]) -> f64 {
    let mut f = -pi.iter().zip(advantages).map(|(p, a)| p * a).sum::<f64>();
    for (q, l) in aux.iter().zip(lambdas) {
        f += l * pi
            .iter()
            .zip(q)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, q)| p * (p / q).ln())
            .sum::<f64>();
    }
    f
}

/// Projected gradient descent on the Lagrangian from the uniform policy.
pub fn pgd_minimizer(advantages: &[f64], aux: &[Vec<f64>], lambdas: &[f64]) -> Vec<f64> {
    let n = advantages.len();
    let total: f64 = lambdas.iter().sum();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..400_000 {
        let grad: Vec<f64> = (0..n)
            .map(|a| {
                let lp = pi[a].max(1e-300).ln();
                -advantages[a] + aux.iter().zip(lambdas).map(|(q, l)| l * (lp - q[a].ln() + 1.0)).sum::<f64>()
            })
            .collect();
        let min_p = pi.iter().cloned().fold(f64::INFINITY, f64::min).max(1e-6);
        let eta = 0.5 * min_p / total;
        let next = project_simplex(&pi.iter().zip(&grad).map(|(p, g)| p - eta * g).collect::<Vec<_>>());
        let change = linf(&next, &pi);
        pi = next;
        if change < 1e-15 {
            break;
        }
    }
    pi
}
