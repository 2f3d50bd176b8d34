//! Per-response value learning with one-step TD, the single joint critic it
//! is compared against, and one-step advantages.

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::approx::{sgd_step_in_place, MlpSpec, ValueFunction};
use crate::cmdp::{discounted_return, ResponseSpec, Session, Sparsity, Transition};
use crate::error::{check_finite, check_len, Error, Result};
use crate::seed;

/// `reward + gamma * next_value`, or just `reward` on a terminal step.
pub fn td_target(reward: f64, gamma: f64, next_value: f64, terminal: bool) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * next_value
    }
}

/// One semi-gradient step on the mean squared TD error of `batch`, with
/// the scalar reward picked by `reward`. The target uses the pre-update
/// parameters and is held fixed. Returns the pre-update loss.
fn td_step<F>(critic: &mut ValueFunction, batch: &[Transition], gamma: f64, lr: f64, reward: F) -> Result<f64>
where
    F: Fn(&Transition) -> f64,
{
    if batch.is_empty() {
        return Err(Error::InsufficientData("critic update on empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; critic.params().len()];
    let mut loss = 0.0;
    for t in batch {
        let next_v = if t.terminal { 0.0 } else { critic.value(&t.next_state)? };
        let y = td_target(reward(t), gamma, next_v, t.terminal);
        let trace = critic.network().trace(&t.state)?;
        let err = y - trace.output()[0];
        loss += err * err;
        critic
            .network()
            .backward_accumulate(&trace, &[-2.0 * err / n], &mut grad);
    }
    check_finite("critic gradient", &grad)?;
    sgd_step_in_place(critic.params_mut(), &grad, lr)?;
    Ok(loss / n)
}

/// Critic for a single scalarized reward `weights . r` with one discount.
pub fn joint_critic_update(
    critic: &mut ValueFunction,
    batch: &[Transition],
    weights: &[f64],
    gamma: f64,
    lr: f64,
) -> Result<f64> {
    for t in batch {
        check_len("joint critic weights", t.reward.len(), weights.len())?;
    }
    td_step(critic, batch, gamma, lr, |t| {
        t.reward.iter().zip(weights).map(|(r, w)| r * w).sum()
    })
}

/// Scalar TD update on an arbitrary reward function. Used by the RCPO
/// baseline, whose critic sees `r_0 + sum lambda_i r_i`.
pub fn scalar_critic_update<F>(critic: &mut ValueFunction, batch: &[Transition], gamma: f64, lr: f64, reward: F) -> Result<f64>
where
    F: Fn(&Transition) -> f64,
{
    td_step(critic, batch, gamma, lr, reward)
}

/// One-step advantage of a single critic.
pub fn one_step_advantage(critic: &ValueFunction, gamma: f64, reward: f64, t: &Transition) -> Result<f64> {
    let v = critic.value(&t.state)?;
    let next_v = if t.terminal { 0.0 } else { critic.value(&t.next_state)? };
    Ok(td_target(reward, gamma, next_v, t.terminal) - v)
}

/// One value model per response channel; critic `i` only ever sees reward
/// channel `i` with discount `gamma_i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticEnsemble {
    spec: ResponseSpec,
    critics: Vec<ValueFunction>,
}

impl CriticEnsemble {
    /// Critic `i` is initialized with seed `derive(template.init_seed, "critic_i")`.
    pub fn new(spec: ResponseSpec, template: &MlpSpec) -> Result<Self> {
        let critics = (0..spec.m())
            .map(|i| {
                let mut s = template.clone();
                s.output_dim = 1;
                s.init_seed = seed::derive(template.init_seed, &format!("critic_{i}"));
                ValueFunction::new(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CriticEnsemble { spec, critics })
    }

    pub fn from_critics(spec: ResponseSpec, critics: Vec<ValueFunction>) -> Result<Self> {
        check_len("critic ensemble", spec.m(), critics.len())?;
        Ok(CriticEnsemble { spec, critics })
    }

    pub fn spec(&self) -> &ResponseSpec {
        &self.spec
    }

    pub fn critic(&self, channel: usize) -> Result<&ValueFunction> {
        self.spec.check_channel(channel)?;
        Ok(&self.critics[channel])
    }

    pub fn critic_mut(&mut self, channel: usize) -> Result<&mut ValueFunction> {
        self.spec.check_channel(channel)?;
        Ok(&mut self.critics[channel])
    }

    pub fn critics(&self) -> &[ValueFunction] {
        &self.critics
    }

    pub fn value(&self, channel: usize, state: &[f64]) -> Result<f64> {
        self.critic(channel)?.value(state)
    }

    /// One TD step for `channel`; returns the pre-update mean squared TD error.
    pub fn critic_update(&mut self, channel: usize, batch: &[Transition], lr: f64) -> Result<f64> {
        let gamma = self.spec.discount(channel)?;
        let m = self.spec.m();
        for t in batch {
            check_len("transition.reward", m, t.reward.len())?;
        }
        td_step(&mut self.critics[channel], batch, gamma, lr, |t| t.reward[channel])
    }

    /// `r_i + gamma_i V_i(s') - V_i(s)`, without the bootstrap on terminal steps.
    pub fn advantage(&self, channel: usize, t: &Transition) -> Result<f64> {
        let gamma = self.spec.discount(channel)?;
        check_len("transition.reward", self.spec.m(), t.reward.len())?;
        one_step_advantage(&self.critics[channel], gamma, t.reward[channel], t)
    }
}

/// Pearson correlation coefficient.
pub fn critic_correlation(values: &[f64], mc_returns: &[f64]) -> Result<f64> {
    check_len("correlation inputs", values.len(), mc_returns.len())?;
    if values.len() < 2 {
        return Err(Error::InsufficientData("correlation needs at least 2 points".into()));
    }
    let n = values.len() as f64;
    let mx = values.iter().sum::<f64>() / n;
    let my = mc_returns.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in values.iter().zip(mc_returns) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("model values have zero variance"));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("returns have zero variance"));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Settings for the separate-versus-joint critic comparison.
#[derive(Clone, Debug)]
pub struct DiagnosticConfig {
    pub network: MlpSpec,
    /// Discount of the dense channel; the joint critic uses it too.
    pub gamma_dense: f64,
    pub gamma_sparse: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiagnosticResult {
    /// corr(V_dense + V_sparse, MC summed return)
    pub separate: f64,
    /// corr(V_joint, MC summed return)
    pub joint: f64,
}

/// Trains `V_dense`, `V_sparse` on their own channels with their own
/// discounts and `V_joint` on the summed reward with the dense discount, all
/// with the same network shape, batches and step count. Each estimate is
/// then correlated with the Monte-Carlo return of the summed reward over the
/// sessions of `eval`, one point per session at its first state.
pub fn separate_vs_joint(
    train: &[Session],
    eval: &[Session],
    dense: usize,
    sparse: usize,
    cfg: &DiagnosticConfig,
) -> Result<DiagnosticResult> {
    let transitions: Vec<Transition> = train.iter().flat_map(|s| s.transitions.iter().cloned()).collect();
    if transitions.is_empty() || eval.is_empty() {
        return Err(Error::InsufficientData("diagnostic needs training and evaluation sessions".into()));
    }
    let m = transitions[0].reward.len();
    let mut discounts = vec![cfg.gamma_dense; m];
    discounts[sparse] = cfg.gamma_sparse;
    let spec = ResponseSpec::new(
        vec!["r".to_string(); m],
        discounts,
        vec![Sparsity::Dense; m],
        vec![None; m - 1],
    )?;
    let mut template = cfg.network.clone();
    template.output_dim = 1;
    let mk = |name: &str| {
        let mut s = template.clone();
        s.init_seed = seed::derive(cfg.seed, name);
        ValueFunction::new(s)
    };
    let mut v_dense = mk("v_dense")?;
    let mut v_sparse = mk("v_sparse")?;
    let mut v_joint = mk("v_joint")?;

    let mut order: Vec<usize> = (0..transitions.len()).collect();
    let mut rng = seed::component_rng(cfg.seed, "diagnostic_batches");
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| transitions[i].clone()));
            td_step(&mut v_dense, &batch, cfg.gamma_dense, cfg.lr, |t| t.reward[dense])?;
            td_step(&mut v_sparse, &batch, cfg.gamma_sparse, cfg.lr, |t| t.reward[sparse])?;
            td_step(&mut v_joint, &batch, cfg.gamma_dense, cfg.lr, |t| t.reward[dense] + t.reward[sparse])?;
        }
    }

    let (mut sep, mut joint, mut mc) = (Vec::new(), Vec::new(), Vec::new());
    for s in eval {
        let first = &s.transitions[0].state;
        let ret = discounted_return(s, &spec, 0)?;
        sep.push(v_dense.value(first)? + v_sparse.value(first)?);
        joint.push(v_joint.value(first)?);
        mc.push(ret[dense] + ret[sparse]);
    }
    Ok(DiagnosticResult {
        separate: critic_correlation(&sep, &mc)?,
        joint: critic_correlation(&joint, &mc)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::Mlp;

    fn chain_batch(rewards: &[Vec<f64>]) -> Vec<Transition> {
        // one-hot chain s0 -> s1 -> ... -> terminal
        let n = rewards.len();
        (0..n)
            .map(|k| {
                let mut s = vec![0.0; n];
                s[k] = 1.0;
                let mut s2 = vec![0.0; n];
                if k + 1 < n {
                    s2[k + 1] = 1.0;
                }
                Transition {
                    state: s,
                    action: 0,
                    reward: rewards[k].clone(),
                    next_state: s2,
                    terminal: k + 1 == n,
                    behavior_prob: 1.0,
                }
            })
            .collect()
    }

    #[test]
    fn td_target_cases() {
        assert_eq!(td_target(2.0, 0.9, 10.0, false), 11.0);
        assert_eq!(td_target(2.0, 0.9, 10.0, true), 2.0);
        assert_eq!(td_target(0.0, 0.5, 0.0, false), 0.0);
    }

    #[test]
    fn zero_rewards_zero_critic_is_fixed_point() {
        let spec = ResponseSpec::uniform(&["a", "b"], 0.9).unwrap();
        let critics = vec![
            ValueFunction::zeros(MlpSpec::standard(2, 1, 0)).unwrap(),
            ValueFunction::zeros(MlpSpec::standard(2, 1, 0)).unwrap(),
        ];
        let mut ens = CriticEnsemble::from_critics(spec, critics).unwrap();
        let batch = chain_batch(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let before = ens.critic(0).unwrap().params().to_vec();
        let loss = ens.critic_update(0, &batch, 0.1).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(ens.critic(0).unwrap().params(), &before[..]);
    }

    #[test]
    fn two_state_chain_converges_to_dp_values() {
        let spec = ResponseSpec::uniform(&["a", "b"], 0.9).unwrap();
        let mut ens = CriticEnsemble::new(spec, &MlpSpec::linear(2, 1)).unwrap();
        let batch = chain_batch(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        for _ in 0..5000 {
            ens.critic_update(0, &batch, 0.1).unwrap();
        }
        // DP: V(s1) = 1, V(s0) = 1 + 0.9 * 1
        assert!((ens.value(0, &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-3);
        assert!((ens.value(0, &[1.0, 0.0]).unwrap() - 1.9).abs() < 1e-3);
        for t in &batch {
            assert!(ens.advantage(0, t).unwrap().abs() < 1e-3);
        }
    }

    #[test]
    fn advantage_arithmetic() {
        // V(s) = w . s on a linear critic: V([1,0]) = 2.5, V([0,1]) = 2
        let spec = ResponseSpec::uniform(&["a", "b"], 0.95).unwrap();
        let vf = ValueFunction::from_network(Mlp::from_params(MlpSpec::linear(2, 1), vec![2.5, 2.0, 0.0]).unwrap()).unwrap();
        let ens = CriticEnsemble::from_critics(spec, vec![vf.clone(), vf]).unwrap();
        let t = Transition {
            state: vec![1.0, 0.0],
            action: 0,
            reward: vec![1.0, 3.0],
            next_state: vec![0.0, 1.0],
            terminal: false,
            behavior_prob: 1.0,
        };
        assert!((ens.advantage(0, &t).unwrap() - 0.4).abs() < 1e-12);
        let mut term = t.clone();
        term.terminal = true;
        term.state = vec![0.4, 0.0]; // V(s) = 1
        assert!((ens.advantage(1, &term).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let spec = ResponseSpec::uniform(&["a", "b"], 0.9).unwrap();
        let mut ens = CriticEnsemble::new(spec, &MlpSpec::linear(2, 1)).unwrap();
        assert!(matches!(ens.critic_update(0, &[], 0.1), Err(Error::InsufficientData(_))));
        assert!(matches!(ens.critic_update(2, &chain_batch(&[vec![0.0, 0.0]]), 0.1), Err(Error::Index { .. })));
    }

    #[test]
    fn joint_with_selector_weights_matches_channel_update() {
        let spec = ResponseSpec::uniform(&["a", "b"], 0.9).unwrap();
        let mut ens = CriticEnsemble::new(spec, &MlpSpec::standard(3, 1, 17)).unwrap();
        let mut joint = ens.critic(0).unwrap().clone();
        let batch = chain_batch(&[vec![1.0, 5.0], vec![0.5, -2.0], vec![2.0, 1.0]]);
        for _ in 0..50 {
            let a = ens.critic_update(0, &batch, 0.05).unwrap();
            let b = joint_critic_update(&mut joint, &batch, &[1.0, 0.0], 0.9, 0.05).unwrap();
            assert_eq!(a, b);
            assert_eq!(ens.critic(0).unwrap().params(), joint.params());
        }
    }

    #[test]
    fn joint_critic_zero_weights_goes_to_zero_output() {
        let mut critic = ValueFunction::new(MlpSpec::linear(2, 1)).unwrap();
        let batch = chain_batch(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        for _ in 0..3000 {
            joint_critic_update(&mut critic, &batch, &[0.0, 0.0], 0.9, 0.1).unwrap();
        }
        for t in &batch {
            assert!(critic.value(&t.state).unwrap().abs() < 1e-6);
        }
    }

    #[test]
    fn joint_critic_on_summed_chain_reward() {
        let mut critic = ValueFunction::new(MlpSpec::linear(2, 1)).unwrap();
        let batch = chain_batch(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        for _ in 0..5000 {
            joint_critic_update(&mut critic, &batch, &[1.0, 1.0], 0.9, 0.1).unwrap();
        }
        // DP on summed reward 3: V(s1) = 3, V(s0) = 3 + 0.9 * 3
        assert!((critic.value(&[1.0, 0.0]).unwrap() - 5.7).abs() < 1e-3);
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 4.5];
        assert!((critic_correlation(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((critic_correlation(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        // hand computation: sxy = 3, sxx = 2, syy = 14/3
        let r = critic_correlation(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.98198).abs() < 1e-5);
        assert!(matches!(
            critic_correlation(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }
}
