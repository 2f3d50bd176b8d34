//! Policy-improvement rules.
//!
//! Every discrete-action update here is a weighted log-likelihood ascent
//! step: `theta += lr * mean_b[coef_b * grad log pi_theta(a_b | s_b)]`. The
//! rules differ only in how `coef` is built:
//!
//! | rule | coef |
//! |---|---|
//! | auxiliary actor (stage one) | `rho * A_i` |
//! | constrained main actor (stage two) | `min(w_max, w)` with `w` below |
//! | RCPO | advantage of the scalarized reward |
//! | RCPO with multiple critics | `A_1 + sum_i lambda_i A_i` |
//! | behavior cloning | `1` |
//!
//! The stage-two weight is
//!
//! ```text
//! w(s, a) = prod_i pi_i(a|s)^(lambda_i / L) / pi_den(a|s) * exp(A_1(s, a) / L),   L = sum_i lambda_i
//! ```
//!
//! where `pi_den` is the current main policy for on-policy data and the
//! logging policy for offline data. Its expectation under `pi_den` moves the
//! main policy toward the KL projection of the closed-form target
//!
//! ```text
//! pi*(a|s) = prod_i pi_i(a|s)^(lambda_i / L) * exp(A_1(s, a) / L) / Z(s)
//! ```
//!
//! which minimizes `-E_pi[A_1] + sum_i lambda_i KL(pi || pi_i)` over the simplex.

use serde::{Deserialize, Serialize};

use crate::approx::{sgd_step_in_place, Mlp, MlpSpec, SoftmaxPolicy, ValueFunction};
use crate::cmdp::{check_behavior_prob, Transition};
use crate::critics::{one_step_advantage, scalar_critic_update, CriticEnsemble};
use crate::error::{check_finite, check_len, Error, Result};

/// Multipliers for auxiliary channels `1..m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LagrangeWeights {
    lambdas: Vec<f64>,
}

impl TryFrom<Vec<f64>> for LagrangeWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        LagrangeWeights::new(v)
    }
}

impl From<LagrangeWeights> for Vec<f64> {
    fn from(w: LagrangeWeights) -> Self {
        w.lambdas
    }
}

impl LagrangeWeights {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if let Some((i, l)) = lambdas
            .iter()
            .enumerate()
            .find(|(_, l)| !(**l >= 0.0 && l.is_finite()))
        {
            return Err(Error::config(
                format!("lambdas[{i}]"),
                format!("multiplier {l} must be finite and nonnegative"),
            ));
        }
        Ok(LagrangeWeights { lambdas })
    }

    /// The same multiplier on each of `count` auxiliary channels.
    pub fn uniform(count: usize, value: f64) -> Result<Self> {
        LagrangeWeights::new(vec![value; count])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.lambdas.iter().sum()
    }

    fn positive_sum(&self) -> Result<f64> {
        let s = self.sum();
        if s > 0.0 {
            Ok(s)
        } else {
            Err(Error::DegenerateMultiplier(s))
        }
    }
}

/// Auxiliary policies (frozen after stage one) and the main policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyBank {
    aux: Vec<SoftmaxPolicy>,
    pub main: SoftmaxPolicy,
}

impl PolicyBank {
    pub fn new(aux: Vec<SoftmaxPolicy>, main: SoftmaxPolicy) -> Self {
        PolicyBank { aux, main }
    }

    /// Auxiliary policy for channel `c` is `aux()[c - 1]`.
    pub fn aux(&self) -> &[SoftmaxPolicy] {
        &self.aux
    }

    fn aux_log_probs(&self, state: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.aux.iter().map(|p| p.log_probs(state)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub mean_weight: f64,
    pub clipped_fraction: f64,
    pub mean_advantage: f64,
}

fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for v in values.iter_mut() {
        *v -= mean;
        if sd > 0.0 {
            *v /= sd;
        }
    }
}

/// Ascent step on `mean_b[coef_b * log pi(a_b | s_b)]`.
fn weighted_log_likelihood_step(policy: &mut SoftmaxPolicy, batch: &[Transition], coefs: &[f64], lr: f64) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("actor update on empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; policy.params().len()];
    for (t, c) in batch.iter().zip(coefs) {
        // minimizing -objective
        policy.accumulate_grad_log_prob(&t.state, t.action, -c / n, &mut grad)?;
    }
    check_finite("actor gradient", &grad)?;
    sgd_step_in_place(policy.params_mut(), &grad, lr)?;
    let probs = policy.probs(&batch[0].state)?;
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 || probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Numeric(format!("policy left the simplex after update (sum {total})")));
    }
    Ok(())
}

/// Importance correction for auxiliary actors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Correction {
    /// `rho = 1`.
    OnPolicy,
    /// `rho = min(clip_c, pi(a|s) / behavior_prob)`, first-order correction.
    OffPolicy { clip_c: f64 },
}

pub fn clipped_ratio(pi: f64, behavior_prob: f64, clip_c: f64) -> Result<f64> {
    check_behavior_prob(behavior_prob)?;
    Ok((pi / behavior_prob).min(clip_c))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageOneConfig {
    pub lr: f64,
    pub correction: Correction,
    pub normalize_advantages: bool,
}

impl StageOneConfig {
    pub fn on_policy(lr: f64) -> Self {
        StageOneConfig {
            lr,
            correction: Correction::OnPolicy,
            normalize_advantages: false,
        }
    }
}

/// Advantage-weighted ascent for the actor of `channel` (usually an
/// auxiliary channel; channel 0 gives the unconstrained main learner).
/// Advantages come from the ensemble's current critic for that channel.
pub fn stage_one_actor_update(
    policy: &mut SoftmaxPolicy,
    ensemble: &CriticEnsemble,
    channel: usize,
    batch: &[Transition],
    cfg: &StageOneConfig,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("actor update on empty batch".into()));
    }
    let mut adv = batch
        .iter()
        .map(|t| ensemble.advantage(channel, t))
        .collect::<Result<Vec<_>>>()?;
    let mean_advantage = adv.iter().sum::<f64>() / adv.len() as f64;
    if cfg.normalize_advantages {
        standardize(&mut adv);
    }
    let (rhos, clipped) = match cfg.correction {
        Correction::OnPolicy => (vec![1.0; batch.len()], 0usize),
        Correction::OffPolicy { clip_c } => {
            if !(clip_c > 0.0) {
                return Err(Error::config("clip_c", "must be positive"));
            }
            let mut clipped = 0;
            let rhos = batch
                .iter()
                .map(|t| {
                    let pi = policy.probs(&t.state)?[t.action];
                    check_behavior_prob(t.behavior_prob)?;
                    let raw = pi / t.behavior_prob;
                    if raw > clip_c {
                        clipped += 1;
                    }
                    clipped_ratio(pi, t.behavior_prob, clip_c)
                })
                .collect::<Result<Vec<_>>>()?;
            (rhos, clipped)
        }
    };
    let coefs: Vec<f64> = rhos.iter().zip(&adv).map(|(r, a)| r * a).collect();
    weighted_log_likelihood_step(policy, batch, &coefs, cfg.lr)?;
    let n = batch.len() as f64;
    Ok(UpdateStats {
        mean_weight: rhos.iter().sum::<f64>() / n,
        clipped_fraction: clipped as f64 / n,
        mean_advantage,
    })
}

/// Closed-form target policy at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedForm {
    pub probs: Vec<f64>,
    /// `Z(s) = sum_a prod_i pi_i(a|s)^(lambda_i/L) exp(A_1(s,a)/L)`.
    pub partition: f64,
    pub log_partition: f64,
}

/// Unnormalized log target `sum_i (lambda_i / L) log pi_i(a) + A(a) / L`.
fn log_target(aux_log_probs: &[Vec<f64>], lambdas: &LagrangeWeights, advantages: &[f64]) -> Result<Vec<f64>> {
    let total = lambdas.positive_sum()?;
    check_len("auxiliary policies vs multipliers", lambdas.len(), aux_log_probs.len())?;
    check_finite("advantages", advantages)?;
    let n = advantages.len();
    let mut out: Vec<f64> = advantages.iter().map(|a| a / total).collect();
    for (lp, l) in aux_log_probs.iter().zip(lambdas.as_slice()) {
        check_len("auxiliary policy", n, lp.len())?;
        if *l == 0.0 {
            continue;
        }
        let w = l / total;
        for (o, v) in out.iter_mut().zip(lp) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Target from explicit auxiliary log-probabilities and per-action advantages.
pub fn closed_form_target(aux_log_probs: &[Vec<f64>], lambdas: &LagrangeWeights, advantages: &[f64]) -> Result<ClosedForm> {
    let logu = log_target(aux_log_probs, lambdas, advantages)?;
    let max = logu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("closed-form target has no finite mass".into()));
    }
    let sum_shifted: f64 = logu.iter().map(|v| (v - max).exp()).sum();
    let log_partition = max + sum_shifted.ln();
    let probs = logu.iter().map(|v| (v - log_partition).exp()).collect();
    Ok(ClosedForm {
        probs,
        partition: log_partition.exp(),
        log_partition,
    })
}

/// Closed-form target at `state` using the bank's auxiliary policies.
pub fn closed_form_policy(
    state: &[f64],
    bank: &PolicyBank,
    lambdas: &LagrangeWeights,
    advantages: &[f64],
) -> Result<ClosedForm> {
    closed_form_target(&bank.aux_log_probs(state)?, lambdas, advantages)
}

/// Where the stage-two weight's denominator comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// Current main policy probability.
    OnPolicy,
    /// Logged behavior probability.
    Offline,
}

fn log_weight(t: &Transition, bank: &PolicyBank, lambdas: &LagrangeWeights, advantage: f64, mode: DataMode) -> Result<f64> {
    let total = lambdas.positive_sum()?;
    check_len("auxiliary policies vs multipliers", lambdas.len(), bank.aux.len())?;
    let mut logw = advantage / total;
    for (p, l) in bank.aux.iter().zip(lambdas.as_slice()) {
        if *l > 0.0 {
            logw += (l / total) * p.log_probs(&t.state)?[t.action];
        }
    }
    let log_den = match mode {
        DataMode::OnPolicy => {
            let lp = bank.main.log_probs(&t.state)?[t.action];
            if !lp.is_finite() {
                return Err(Error::Data("main policy gives zero probability to logged action".into()));
            }
            lp
        }
        DataMode::Offline => {
            check_behavior_prob(t.behavior_prob)?;
            t.behavior_prob.ln()
        }
    };
    Ok(logw - log_den)
}

/// Stage-two weight, clipped at `w_max` when given.
pub fn tscac_weight(
    t: &Transition,
    bank: &PolicyBank,
    lambdas: &LagrangeWeights,
    advantage_1: f64,
    mode: DataMode,
    w_max: Option<f64>,
) -> Result<f64> {
    let w = log_weight(t, bank, lambdas, advantage_1, mode)?.exp();
    Ok(match w_max {
        Some(c) => w.min(c),
        None => w,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageTwoConfig {
    pub lr: f64,
    /// `f64::INFINITY` disables clipping.
    pub w_max: f64,
    pub mode: DataMode,
    pub normalize_advantages: bool,
    /// Divide the clipped weights by their batch mean, a per-batch
    /// estimate of the partition function.
    pub normalize_weights: bool,
}

/// Ascent on `mean_b[min(w_max, w_b) log pi_theta(a_b|s_b)]` for the main
/// policy. `A_1` comes from the ensemble's channel-0 critic; the auxiliary
/// policies are only read.
pub fn stage_two_actor_update(
    bank: &mut PolicyBank,
    ensemble: &CriticEnsemble,
    batch: &[Transition],
    lambdas: &LagrangeWeights,
    cfg: &StageTwoConfig,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("actor update on empty batch".into()));
    }
    lambdas.positive_sum()?;
    let mut adv = batch
        .iter()
        .map(|t| ensemble.advantage(0, t))
        .collect::<Result<Vec<_>>>()?;
    let mean_advantage = adv.iter().sum::<f64>() / adv.len() as f64;
    if cfg.normalize_advantages {
        standardize(&mut adv);
    }
    let mut clipped = 0usize;
    let coefs = batch
        .iter()
        .zip(&adv)
        .map(|(t, a)| {
            let w = log_weight(t, bank, lambdas, *a, cfg.mode)?.exp();
            if w > cfg.w_max {
                clipped += 1;
                Ok(cfg.w_max)
            } else {
                Ok(w)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len() as f64;
    let mean_weight = coefs.iter().sum::<f64>() / n;
    let coefs = if cfg.normalize_weights && mean_weight > 0.0 {
        coefs.iter().map(|w| w / mean_weight).collect()
    } else {
        coefs
    };
    weighted_log_likelihood_step(&mut bank.main, batch, &coefs, cfg.lr)?;
    Ok(UpdateStats {
        mean_weight,
        clipped_fraction: clipped as f64 / n,
        mean_advantage,
    })
}

/// `reward[0] + sum_i lambda_i * reward[i]`.
pub fn rcpo_scalar_reward(reward: &[f64], lambdas: &LagrangeWeights) -> Result<f64> {
    check_len("rcpo reward", lambdas.len() + 1, reward.len())?;
    Ok(reward[0]
        + reward[1..]
            .iter()
            .zip(lambdas.as_slice())
            .map(|(r, l)| l * r)
            .sum::<f64>())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RcpoConfig {
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Standardize the actor coefficients within each batch.
    pub normalize_advantages: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ActorCriticStats {
    pub actor: UpdateStats,
    /// Pre-update critic loss (mean over channels for multi-critic updates).
    pub critic_loss: f64,
}

/// Single-critic RCPO step: advantages of the scalarized reward under the
/// pre-update critic, actor ascent, then one TD step on the same reward.
pub fn rcpo_update(
    policy: &mut SoftmaxPolicy,
    critic: &mut ValueFunction,
    batch: &[Transition],
    lambdas: &LagrangeWeights,
    gamma: f64,
    cfg: &RcpoConfig,
) -> Result<ActorCriticStats> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("rcpo update on empty batch".into()));
    }
    let rewards = batch
        .iter()
        .map(|t| rcpo_scalar_reward(&t.reward, lambdas))
        .collect::<Result<Vec<_>>>()?;
    let mut adv = batch
        .iter()
        .zip(&rewards)
        .map(|(t, r)| one_step_advantage(critic, gamma, *r, t))
        .collect::<Result<Vec<_>>>()?;
    let mean_advantage = adv.iter().sum::<f64>() / adv.len() as f64;
    if cfg.normalize_advantages {
        standardize(&mut adv);
    }
    weighted_log_likelihood_step(policy, batch, &adv, cfg.lr_actor)?;
    let critic_loss = scalar_critic_update(critic, batch, gamma, cfg.lr_critic, |t| {
        rcpo_scalar_reward(&t.reward, lambdas).unwrap_or(f64::NAN)
    })?;
    Ok(ActorCriticStats {
        actor: UpdateStats {
            mean_weight: 1.0,
            clipped_fraction: 0.0,
            mean_advantage,
        },
        critic_loss,
    })
}

/// Actor ascent on `[A_1 + sum_i lambda_i A_i] log pi`, then one TD step
/// for every channel's critic with its own discount.
pub fn rcpo_multi_critic_update(
    policy: &mut SoftmaxPolicy,
    ensemble: &mut CriticEnsemble,
    batch: &[Transition],
    lambdas: &LagrangeWeights,
    cfg: &RcpoConfig,
) -> Result<ActorCriticStats> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("rcpo update on empty batch".into()));
    }
    let m = ensemble.spec().m();
    check_len("rcpo multipliers", m - 1, lambdas.len())?;
    let mut adv = batch
        .iter()
        .map(|t| {
            let mut a = ensemble.advantage(0, t)?;
            for (i, l) in lambdas.as_slice().iter().enumerate() {
                a += l * ensemble.advantage(i + 1, t)?;
            }
            Ok(a)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_advantage = adv.iter().sum::<f64>() / adv.len() as f64;
    if cfg.normalize_advantages {
        standardize(&mut adv);
    }
    weighted_log_likelihood_step(policy, batch, &adv, cfg.lr_actor)?;
    let mut critic_loss = 0.0;
    for c in 0..m {
        critic_loss += ensemble.critic_update(c, batch, cfg.lr_critic)?;
    }
    Ok(ActorCriticStats {
        actor: UpdateStats {
            mean_weight: 1.0,
            clipped_fraction: 0.0,
            mean_advantage,
        },
        critic_loss: critic_loss / m as f64,
    })
}

/// One stage-one actor-critic iteration on `channel`: actor step with the
/// pre-update critic, then the channel's TD step.
pub fn actor_critic_step(
    policy: &mut SoftmaxPolicy,
    ensemble: &mut CriticEnsemble,
    channel: usize,
    batch: &[Transition],
    actor: &StageOneConfig,
    lr_critic: f64,
) -> Result<ActorCriticStats> {
    let stats = stage_one_actor_update(policy, ensemble, channel, batch, actor)?;
    let critic_loss = ensemble.critic_update(channel, batch, lr_critic)?;
    Ok(ActorCriticStats {
        actor: stats,
        critic_loss,
    })
}

/// Supervised step on the mean negative log-likelihood of logged actions.
/// Returns the pre-update loss.
pub fn behavior_cloning_update(policy: &mut SoftmaxPolicy, batch: &[Transition], lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("behavior cloning on empty batch".into()));
    }
    let mut nll = 0.0;
    for t in batch {
        let lp = policy.log_probs(&t.state)?;
        if t.action >= lp.len() {
            return Err(Error::Index {
                what: "action",
                index: t.action,
                len: lp.len(),
            });
        }
        nll -= lp[t.action];
    }
    weighted_log_likelihood_step(policy, batch, &vec![1.0; batch.len()], lr)?;
    Ok(nll / batch.len() as f64)
}

// ---------------------------------------------------------------------------
// Deterministic-policy variant
// ---------------------------------------------------------------------------

/// `h(a1, a2) = sum_d exp(-(a1_d - a2_d)^2 / 2)`.
pub fn kernel_h(a1: &[f64], a2: &[f64]) -> Result<f64> {
    check_len("kernel action", a1.len(), a2.len())?;
    Ok(a1.iter().zip(a2).map(|(x, y)| (-(x - y).powi(2) / 2.0).exp()).sum())
}

/// Gradient of `h(aux, main)` with respect to `main`.
fn kernel_grad_second(aux: &[f64], main: &[f64]) -> Vec<f64> {
    aux.iter()
        .zip(main)
        .map(|(x, y)| {
            let d = x - y;
            (-d * d / 2.0).exp() * d
        })
        .collect()
}

/// `Q(s, a)` over the concatenated input `[state, action]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionValueFunction {
    net: Mlp,
    state_dim: usize,
}

impl ActionValueFunction {
    pub fn new(state_dim: usize, action_dim: usize, hidden: Vec<usize>, init_seed: u64) -> Result<Self> {
        let spec = MlpSpec {
            hidden,
            init_seed,
            ..MlpSpec::standard(state_dim + action_dim, 1, init_seed)
        };
        Ok(ActionValueFunction {
            net: Mlp::new(spec)?,
            state_dim,
        })
    }

    pub fn from_network(net: Mlp, state_dim: usize) -> Result<Self> {
        check_len("action-value output_dim", 1, net.spec().output_dim)?;
        if state_dim >= net.spec().input_dim {
            return Err(Error::config("state_dim", "must leave at least one action input"));
        }
        Ok(ActionValueFunction { net, state_dim })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn action_dim(&self) -> usize {
        self.net.spec().input_dim - self.state_dim
    }

    fn input(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_len("action-value state", self.state_dim, state.len())?;
        check_len("action-value action", self.action_dim(), action.len())?;
        Ok(state.iter().chain(action).cloned().collect())
    }

    pub fn value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&self.input(state, action)?)?[0])
    }

    /// `(Q, dQ/daction)`.
    pub fn value_and_action_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        let trace = self.net.trace(&self.input(state, action)?)?;
        let mut scratch = vec![0.0; self.net.params().len()];
        let g_in = self.net.backward_accumulate(&trace, &[1.0], &mut scratch);
        Ok((trace.output()[0], g_in[self.state_dim..].to_vec()))
    }
}

/// `prod_i h(aux_i, main)^lambda_i * Q(s, main)` and its gradient with
/// respect to `main`. The product is evaluated in the log domain.
pub fn deterministic_objective(
    state: &[f64],
    main_action: &[f64],
    aux_actions: &[Vec<f64>],
    lambdas: &LagrangeWeights,
    q: &ActionValueFunction,
) -> Result<(f64, Vec<f64>)> {
    check_len("auxiliary actions vs multipliers", lambdas.len(), aux_actions.len())?;
    let n = main_action.len();
    let mut log_prod = 0.0;
    let mut dlog = vec![0.0; n];
    for (aux, l) in aux_actions.iter().zip(lambdas.as_slice()) {
        let h = kernel_h(aux, main_action)?;
        if *l == 0.0 {
            continue;
        }
        if !(h > 0.0) {
            return Err(Error::Underflow(format!("kernel is {h} with multiplier {l}")));
        }
        log_prod += l * h.ln();
        for (d, g) in dlog.iter_mut().zip(kernel_grad_second(aux, main_action)) {
            *d += l * g / h;
        }
    }
    let prod = log_prod.exp();
    let (qv, qgrad) = q.value_and_action_grad(state, main_action)?;
    let grad = qgrad
        .iter()
        .zip(&dlog)
        .map(|(gq, gl)| prod * (gq + qv * gl))
        .collect();
    Ok((prod * qv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::ResponseSpec;

    fn tabular_policy(logits: &[f64]) -> SoftmaxPolicy {
        // single state [0.0]: weights are inert, biases are the logits
        let n = logits.len();
        let mut params = vec![0.0; n];
        params.extend_from_slice(logits);
        SoftmaxPolicy::from_network(Mlp::from_params(MlpSpec::linear(1, n), params).unwrap())
    }

    fn zero_ensemble(m: usize, gamma: f64) -> CriticEnsemble {
        let names: Vec<&str> = vec!["r"; m];
        let spec = ResponseSpec::uniform(&names, gamma).unwrap();
        let critics = (0..m)
            .map(|_| ValueFunction::zeros(MlpSpec::linear(1, 1)).unwrap())
            .collect();
        CriticEnsemble::from_critics(spec, critics).unwrap()
    }

    fn terminal_step(action: usize, reward: Vec<f64>, behavior_prob: f64) -> Transition {
        Transition {
            state: vec![0.0],
            action,
            reward,
            next_state: vec![0.0],
            terminal: true,
            behavior_prob,
        }
    }

    #[test]
    fn lagrange_weights_validation() {
        assert!(LagrangeWeights::new(vec![-0.1]).is_err());
        assert!(LagrangeWeights::new(vec![f64::NAN]).is_err());
        let zero = LagrangeWeights::new(vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            closed_form_target(&[vec![0.0], vec![0.0]], &zero, &[0.0]),
            Err(Error::DegenerateMultiplier(_))
        ));
    }

    #[test]
    fn zero_advantages_leave_params_unchanged() {
        let mut p = tabular_policy(&[0.3, -0.2]);
        let ens = zero_ensemble(2, 0.9);
        let batch = vec![terminal_step(0, vec![0.0, 0.0], 0.5), terminal_step(1, vec![0.0, 0.0], 0.5)];
        let before = p.params().to_vec();
        stage_one_actor_update(&mut p, &ens, 1, &batch, &StageOneConfig::on_policy(0.1)).unwrap();
        assert_eq!(p.params(), &before[..]);
    }

    #[test]
    fn clipped_ratio_definition() {
        assert_eq!(clipped_ratio(0.9, 0.1, 5.0).unwrap(), 5.0);
        assert!((clipped_ratio(0.3, 0.1, 5.0).unwrap() - 3.0).abs() < 1e-12);
        assert!(matches!(clipped_ratio(0.3, 0.0, 5.0), Err(Error::Data(_))));
    }

    #[test]
    fn closed_form_hand_cases() {
        let one = LagrangeWeights::new(vec![1.0]).unwrap();
        let uniform = vec![vec![0.5f64.ln(); 2]];
        let cf = closed_form_target(&uniform, &one, &[2f64.ln(), 0.0]).unwrap();
        assert!((cf.probs[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((cf.probs[1] - 1.0 / 3.0).abs() < 1e-12);

        let aux = vec![vec![0.7f64.ln(), 0.2f64.ln(), 0.1f64.ln()]];
        let cf = closed_form_target(&aux, &one, &[0.0; 3]).unwrap();
        for (p, q) in cf.probs.iter().zip([0.7, 0.2, 0.1]) {
            assert!((p - q).abs() < 1e-12);
        }

        let two = LagrangeWeights::new(vec![0.3, 2.0]).unwrap();
        let aux = vec![vec![0.25f64.ln(); 4], vec![0.25f64.ln(); 4]];
        let cf = closed_form_target(&aux, &two, &[1.5; 4]).unwrap();
        assert!(cf.probs.iter().all(|p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn tscac_weight_arithmetic() {
        let bank = PolicyBank::new(vec![tabular_policy(&[0.0, 0.0])], tabular_policy(&[0.0, 3f64.ln()]));
        let one = LagrangeWeights::new(vec![1.0]).unwrap();
        // pi_2(0) = 0.5, pi_1(0) = 0.25
        let t = terminal_step(0, vec![0.0, 0.0], 0.25);
        let w = tscac_weight(&t, &bank, &one, 0.0, DataMode::OnPolicy, None).unwrap();
        assert!((w - 2.0).abs() < 1e-12);
        let w = tscac_weight(&t, &bank, &one, 2f64.ln(), DataMode::OnPolicy, None).unwrap();
        assert!((w - 4.0).abs() < 1e-12);
        let w = tscac_weight(&t, &bank, &one, 2f64.ln(), DataMode::OnPolicy, Some(3.0)).unwrap();
        assert_eq!(w, 3.0);
        // offline: behavior 0.25 in the denominator
        let w = tscac_weight(&t, &bank, &one, 0.0, DataMode::Offline, None).unwrap();
        assert!((w - 2.0).abs() < 1e-12);
        let mut bad = t.clone();
        bad.behavior_prob = 0.0;
        assert!(matches!(
            tscac_weight(&bad, &bank, &one, 0.0, DataMode::Offline, None),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn weight_equals_partition_at_the_target() {
        let aux = vec![tabular_policy(&[0.4, -1.0, 0.2]), tabular_policy(&[1.0, 0.0, -0.5])];
        let lambdas = LagrangeWeights::new(vec![0.7, 1.6]).unwrap();
        let adv = [0.3, -0.8, 1.1];
        let bank = PolicyBank::new(aux, tabular_policy(&[0.0; 3]));
        let cf = closed_form_policy(&[0.0], &bank, &lambdas, &adv).unwrap();
        let logits: Vec<f64> = cf.probs.iter().map(|p| p.ln()).collect();
        let bank = PolicyBank::new(bank.aux().to_vec(), tabular_policy(&logits));
        for a in 0..3 {
            let t = terminal_step(a, vec![0.0; 3], 1.0);
            let w = tscac_weight(&t, &bank, &lambdas, adv[a], DataMode::OnPolicy, None).unwrap();
            assert!((w - cf.partition).abs() < 1e-9 * cf.partition);
        }
    }

    #[test]
    fn constant_weight_is_scaled_behavior_cloning() {
        // pi_1 == pi_2 and A = 0 gives w = 1 everywhere; lambda scale is irrelevant
        let logits = [0.2, -0.4, 0.9];
        let bank = PolicyBank::new(vec![tabular_policy(&logits)], tabular_policy(&logits));
        let ens = zero_ensemble(2, 0.9);
        let lambdas = LagrangeWeights::new(vec![2.5]).unwrap();
        let batch: Vec<_> = [0, 2, 2, 1].iter().map(|&a| terminal_step(a, vec![0.0, 0.0], 0.3)).collect();
        let cfg = StageTwoConfig {
            lr: 0.05,
            w_max: f64::INFINITY,
            mode: DataMode::OnPolicy,
            normalize_advantages: false,
            normalize_weights: false,
        };
        let mut b2 = bank.clone();
        let stats = stage_two_actor_update(&mut b2, &ens, &batch, &lambdas, &cfg).unwrap();
        assert!((stats.mean_weight - 1.0).abs() < 1e-12);
        let mut bc = bank.main.clone();
        behavior_cloning_update(&mut bc, &batch, 0.05).unwrap();
        for (x, y) in b2.main.params().iter().zip(bc.params()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rcpo_scalar_reward_cases() {
        let l = |v: Vec<f64>| LagrangeWeights::new(v).unwrap();
        assert_eq!(rcpo_scalar_reward(&[3.0, 2.0], &l(vec![0.5])).unwrap(), 4.0);
        assert_eq!(rcpo_scalar_reward(&[3.0, 2.0], &l(vec![0.0])).unwrap(), 3.0);
        assert_eq!(rcpo_scalar_reward(&[1.0, 0.0, 2.0], &l(vec![2.0, 0.5])).unwrap(), 2.0);
        assert!(matches!(rcpo_scalar_reward(&[1.0], &l(vec![2.0])), Err(Error::Shape { .. })));
    }

    #[test]
    fn multi_critic_gradient_is_linear_in_channels() {
        // identical channels and identical critics, lambda = 1: step is twice
        // the channel-0 step
        let base = tabular_policy(&[0.1, -0.3, 0.5]);
        let spec = ResponseSpec::uniform(&["a", "b"], 0.9).unwrap();
        let critic = ValueFunction::from_network(Mlp::from_params(MlpSpec::linear(1, 1), vec![0.0, 0.4]).unwrap()).unwrap();
        let ens = CriticEnsemble::from_critics(spec, vec![critic.clone(), critic]).unwrap();
        let batch: Vec<_> = [(0, 1.0), (1, 0.0), (2, 2.0)]
            .iter()
            .map(|&(a, r)| terminal_step(a, vec![r, r], 1.0))
            .collect();
        let lr = 1e-3;
        let mut multi = base.clone();
        let mut e1 = ens.clone();
        rcpo_multi_critic_update(
            &mut multi,
            &mut e1,
            &batch,
            &LagrangeWeights::new(vec![1.0]).unwrap(),
            &RcpoConfig {
                lr_actor: lr,
                lr_critic: 0.01,
                normalize_advantages: false,
            },
        )
        .unwrap();
        let mut single = base.clone();
        stage_one_actor_update(&mut single, &ens, 0, &batch, &StageOneConfig::on_policy(lr)).unwrap();
        for ((m, s), b) in multi.params().iter().zip(single.params()).zip(base.params()) {
            assert!(((m - b) - 2.0 * (s - b)).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_cases() {
        assert_eq!(kernel_h(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 3.0);
        assert!((kernel_h(&[0.0], &[2f64.sqrt()]).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((kernel_h(&[0.36788], &[0.0]).unwrap() - kernel_h(&[0.0], &[0.36788]).unwrap()).abs() == 0.0);
        assert!(matches!(kernel_h(&[0.0], &[0.0, 1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn deterministic_objective_reductions() {
        let q = ActionValueFunction::new(3, 2, vec![8], 4).unwrap();
        let s = [0.1, -0.2, 0.3];
        let a = [0.5, -0.7];
        let qv = q.value(&s, &a).unwrap();
        let zero = LagrangeWeights::new(vec![0.0, 0.0]).unwrap();
        let (j, _) = deterministic_objective(&s, &a, &[vec![9.0, 9.0], vec![-3.0, 1.0]], &zero, &q).unwrap();
        assert_eq!(j, qv);
        let l = LagrangeWeights::new(vec![0.5, 1.5]).unwrap();
        let (j, _) = deterministic_objective(&s, &a, &[a.to_vec(), a.to_vec()], &l, &q).unwrap();
        assert!((j - 2f64.powf(2.0) * qv).abs() < 1e-12);
        let far = vec![1e6, -1e6];
        assert!(matches!(
            deterministic_objective(&s, &a, &[far, a.to_vec()], &l, &q),
            Err(Error::Underflow(_))
        ));
    }
}
