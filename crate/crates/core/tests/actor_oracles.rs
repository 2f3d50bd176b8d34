//! Policy updates against closed-form and brute-force oracles.

mod common;

use common::*;
use rand::Rng;
use tscac::actors::*;
use tscac::approx::{log_softmax, sample_action, softmax, MlpSpec, SoftmaxPolicy, StochasticPolicy, ValueFunction};
use tscac::cmdp::{ResponseSpec, Transition};
use tscac::critics::CriticEnsemble;
use tscac::seed;

#[test]
fn closed_form_matches_pgd_on_hand_case() {
    let aux = vec![vec![0.5, 0.5]];
    let adv = [2f64.ln(), 0.0];
    let pgd = pgd_minimizer(&adv, &aux, &[1.0]);
    assert!(linf(&pgd, &[2.0 / 3.0, 1.0 / 3.0]) < 1e-6);
    let cf = closed_form_target(&[vec![0.5f64.ln(); 2]], &LagrangeWeights::new(vec![1.0]).unwrap(), &adv).unwrap();
    assert!(linf(&cf.probs, &pgd) < 1e-6);
}

#[test]
fn closed_form_is_the_lagrangian_minimizer() {
    let mut rng = seed::rng(31);
    for _ in 0..10 {
        let n = rng.random_range(2..=5);
        let k = rng.random_range(1..=3);
        let aux: Vec<Vec<f64>> = (0..k)
            .map(|_| softmax(&(0..n).map(|_| rng.random_range(-1.5..1.5)).collect::<Vec<_>>()))
            .collect();
        let lambdas: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..2.0)).collect();
        let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let logs: Vec<Vec<f64>> = aux.iter().map(|q| q.iter().map(|p| p.ln()).collect()).collect();
        let cf = closed_form_target(&logs, &LagrangeWeights::new(lambdas.clone()).unwrap(), &adv).unwrap();
        let best = lagrangian(&cf.probs, &adv, &aux, &lambdas);
        // no random simplex point does better
        for _ in 0..200 {
            let p = softmax(&(0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
            assert!(lagrangian(&p, &adv, &aux, &lambdas) >= best - 1e-12);
        }
    }
}

#[test]
fn stage_one_bandit_finds_the_rewarding_arm() {
    let mut policy = tabular_policy(&[0.0, 0.0]);
    let mut ens = zero_ensemble(2);
    let cfg = StageOneConfig::on_policy(0.5);
    let mut rng = seed::rng(32);
    for _ in 0..400 {
        let probs = policy.probs(&[0.0]).unwrap();
        let batch: Vec<Transition> = (0..64)
            .map(|_| {
                let a = sample_action(&probs, &mut rng);
                terminal_step(a, vec![0.0, if a == 0 { 1.0 } else { 0.0 }], probs[a])
            })
            .collect();
        actor_critic_step(&mut policy, &mut ens, 1, &batch, &cfg, 0.1).unwrap();
    }
    assert!(policy.probs(&[0.0]).unwrap()[0] >= 0.99);
}

fn conflicting_bandit(lambda: f64, multi: bool) -> Vec<f64> {
    // arm 0 pays channel 0, arm 1 pays channel 1
    let mut policy = tabular_policy(&[0.0, 0.0]);
    let mut critic = ValueFunction::zeros(MlpSpec::linear(1, 1)).unwrap();
    let mut ens = zero_ensemble(2);
    let lambdas = LagrangeWeights::new(vec![lambda]).unwrap();
    let cfg = RcpoConfig {
        lr_actor: 0.2,
        lr_critic: 0.1,
        normalize_advantages: false,
    };
    let mut rng = seed::rng(33);
    for _ in 0..400 {
        let probs = policy.probs(&[0.0]).unwrap();
        let batch: Vec<Transition> = (0..64)
            .map(|_| {
                let a = sample_action(&probs, &mut rng);
                terminal_step(a, if a == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }, probs[a])
            })
            .collect();
        if multi {
            rcpo_multi_critic_update(&mut policy, &mut ens, &batch, &lambdas, &cfg).unwrap();
        } else {
            rcpo_update(&mut policy, &mut critic, &batch, &lambdas, 0.9, &cfg).unwrap();
        }
    }
    policy.probs(&[0.0]).unwrap()
}

#[test]
fn rcpo_bandit_follows_the_scalarized_values() {
    assert!(conflicting_bandit(10.0, false)[1] > 0.9);
    assert!(conflicting_bandit(0.1, false)[0] > 0.9);
    assert!(conflicting_bandit(10.0, true)[1] > 0.9);
    assert!(conflicting_bandit(0.1, true)[0] > 0.9);
}

fn exact_stage_two(aux_logits: &[Vec<f64>], lambdas: &[f64], adv: &[f64], iters: usize) -> (Vec<f64>, Vec<f64>) {
    let n = adv.len();
    let aux: Vec<SoftmaxPolicy> = aux_logits.iter().map(|l| tabular_policy(l)).collect();
    let lw = LagrangeWeights::new(lambdas.to_vec()).unwrap();
    let mut bank = PolicyBank::new(aux, tabular_policy(&vec![0.0; n]));
    let ens = zero_ensemble(lambdas.len() + 1);
    let batch: Vec<Transition> = (0..n)
        .map(|a| {
            let mut r = vec![0.0; lambdas.len() + 1];
            r[0] = adv[a];
            terminal_step(a, r, 1.0 / n as f64)
        })
        .collect();
    let cfg = StageTwoConfig {
        lr: 1.0,
        w_max: f64::INFINITY,
        mode: DataMode::Offline,
        normalize_advantages: false,
        normalize_weights: true,
    };
    for _ in 0..iters {
        stage_two_actor_update(&mut bank, &ens, &batch, &lw, &cfg).unwrap();
    }
    let target = closed_form_policy(&[0.0], &bank, &lw, adv).unwrap();
    (bank.main.probs(&[0.0]).unwrap(), target.probs)
}

#[test]
fn kl_projection_reaches_the_closed_form() {
    let mut rng = seed::rng(34);
    for _ in 0..5 {
        let n = rng.random_range(2..=5);
        let k = rng.random_range(1..=3);
        let logits: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let lambdas: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..2.0)).collect();
        let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (got, want) = exact_stage_two(&logits, &lambdas, &adv, 3000);
        assert!(linf(&got, &want) < 1e-3, "{got:?} vs {want:?}");
    }
}

#[test]
fn huge_multiplier_copies_the_auxiliary_policy() {
    let logits = vec![vec![0.7, -0.3, 0.1, 0.0]];
    let (got, _) = exact_stage_two(&logits, &[1e6], &[1.0, -1.0, 0.5, 0.0], 3000);
    assert!(linf(&got, &softmax(&logits[0])) < 1e-2);
}

#[test]
fn unclipped_raw_weights_also_converge() {
    let n = 3;
    let aux_logits = vec![0.2, -0.4, 0.3];
    let adv = [0.5, -0.2, 0.1];
    let lw = LagrangeWeights::new(vec![1.0]).unwrap();
    let mut bank = PolicyBank::new(vec![tabular_policy(&aux_logits)], tabular_policy(&[0.0; 3]));
    let ens = zero_ensemble(2);
    let batch: Vec<Transition> = (0..n).map(|a| terminal_step(a, vec![adv[a], 0.0], 1.0 / 3.0)).collect();
    let cfg = StageTwoConfig {
        lr: 0.5,
        w_max: f64::INFINITY,
        mode: DataMode::Offline,
        normalize_advantages: false,
        normalize_weights: false,
    };
    for _ in 0..5000 {
        stage_two_actor_update(&mut bank, &ens, &batch, &lw, &cfg).unwrap();
    }
    let want = closed_form_target(&[log_softmax(&aux_logits)], &lw, &adv).unwrap().probs;
    assert!(linf(&bank.main.probs(&[0.0]).unwrap(), &want) < 1e-6);
}

#[test]
fn behavior_cloning_matches_logged_frequencies() {
    let batch: Vec<Transition> = (0..100).map(|i| terminal_step(if i < 75 { 0 } else { 1 }, vec![0.0, 0.0], 0.5)).collect();
    let mut policy = tabular_policy(&[0.0, 0.0]);
    for _ in 0..2000 {
        behavior_cloning_update(&mut policy, &batch, 1.0).unwrap();
    }
    assert!(linf(&policy.probs(&[0.0]).unwrap(), &[0.75, 0.25]) < 1e-2);

    let uniform: Vec<Transition> = (0..90).map(|i| terminal_step(i % 3, vec![0.0, 0.0], 1.0 / 3.0)).collect();
    let mut policy = tabular_policy(&[1.0, -1.0, 0.5]);
    for _ in 0..2000 {
        behavior_cloning_update(&mut policy, &uniform, 1.0).unwrap();
    }
    assert!(linf(&policy.probs(&[0.0]).unwrap(), &[1.0 / 3.0; 3]) < 1e-3);
}

#[test]
fn behavior_cloning_recovers_a_deterministic_policy() {
    let teacher = |s: &[f64]| -> usize {
        let scores = [s[0] + s[1], s[1] - s[2], -s[0] + 0.5 * s[2]];
        (0..3).max_by(|a, b| scores[*a].partial_cmp(&scores[*b]).unwrap()).unwrap()
    };
    let mut rng = seed::rng(35);
    let mut draw = |n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect() };
    let train: Vec<Transition> = draw(2000)
        .into_iter()
        .map(|s| Transition {
            action: teacher(&s),
            state: s.clone(),
            reward: vec![0.0, 0.0],
            next_state: s,
            terminal: true,
            behavior_prob: 1.0,
        })
        .collect();
    let held_out = draw(500);
    let mut policy = SoftmaxPolicy::new(MlpSpec::standard(3, 3, 2)).unwrap();
    let mut rng = seed::rng(36);
    for _ in 0..3000 {
        let batch: Vec<Transition> = (0..64).map(|_| train[rng.random_range(0..train.len())].clone()).collect();
        behavior_cloning_update(&mut policy, &batch, 0.5).unwrap();
    }
    let hits = held_out
        .iter()
        .filter(|s| {
            let p = policy.action_probs(s).unwrap();
            let arg = (0..3).max_by(|a, b| p[*a].partial_cmp(&p[*b]).unwrap()).unwrap();
            arg == teacher(s)
        })
        .count();
    assert!(hits as f64 / held_out.len() as f64 >= 0.95, "{hits}/500");
}

#[test]
fn multi_critic_at_zero_multiplier_is_the_channel_zero_learner() {
    let spec = ResponseSpec::uniform(&["a", "b", "c"], 0.9).unwrap();
    let pspec = MlpSpec::standard(2, 3, 1);
    let mut p1 = SoftmaxPolicy::new(pspec).unwrap();
    let mut p2 = p1.clone();
    let mut e1 = CriticEnsemble::new(spec.clone(), &MlpSpec::standard(2, 1, 2)).unwrap();
    let mut e2 = e1.clone();
    let lambdas = LagrangeWeights::new(vec![0.0, 0.0]).unwrap();
    let mut rng = seed::rng(37);
    for _ in 0..30 {
        let batch: Vec<Transition> = (0..16)
            .map(|_| Transition {
                state: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                action: rng.random_range(0..3),
                reward: vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 1.0],
                next_state: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                terminal: rng.random_bool(0.2),
                behavior_prob: 1.0 / 3.0,
            })
            .collect();
        let cfg = RcpoConfig {
            lr_actor: 0.1,
            lr_critic: 0.05,
            normalize_advantages: true,
        };
        rcpo_multi_critic_update(&mut p1, &mut e1, &batch, &lambdas, &cfg).unwrap();
        let sc = StageOneConfig {
            lr: 0.1,
            correction: Correction::OnPolicy,
            normalize_advantages: true,
        };
        actor_critic_step(&mut p2, &mut e2, 0, &batch, &sc, 0.05).unwrap();
        assert_eq!(p1.params(), p2.params());
        assert_eq!(e1.critic(0).unwrap().params(), e2.critic(0).unwrap().params());
    }
}
