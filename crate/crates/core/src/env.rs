//! Seeded synthetic short-video environment.
//!
//! A catalog of `n_videos` items carries fixed random unit embeddings in
//! `R^n_topics`. Each session samples a latent user with a topic preference
//! vector and one affinity vector per sparse channel. Showing video `a`
//! yields
//!
//! ```text
//! watch  = watchtime_scale * softplus(pref . e_a + watchtime_noise * N(0, 1))
//! sparse_j ~ Bernoulli(sigmoid(logit(base_rate_j) + affinity_j . e_a))
//! ```
//!
//! and the session ends with probability `leave_prob` after each step, or
//! at `max_session_len`.
//!
//! State layout (all blocks concatenated):
//!
//! | block | width |
//! |---|---|
//! | user preference | `n_topics` |
//! | affinity per sparse channel | `n_sparse * n_topics` |
//! | embeddings of the last `history_len` videos, newest first | `history_len * n_topics` |
//! | catalog block: mean embedding, or every embedding when `catalog_features = full` | `n_topics` or `n_videos * n_topics` |

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{sample_action, softmax, StochasticPolicy};
use crate::cmdp::{write_sessions, Session, Transition};
use crate::error::{check_len, Error, Result};
use crate::seed;

/// Click, like and comment sparsity ratios of the KuaiRand log.
pub const TABLE1_BASE_RATES: [f64; 3] = [0.377, 0.0161, 0.0024];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CatalogFeatures {
    #[default]
    Summary,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    pub n_topics: usize,
    pub n_videos: usize,
    /// Must equal [`SimulatorConfig::layout_dim`]; 0 in a config file means
    /// "derive it".
    pub state_dim: usize,
    pub user_pref_scale: f64,
    pub watchtime_noise: f64,
    pub watchtime_scale: f64,
    pub interaction_base_rates: Vec<f64>,
    /// Affinity vectors are `affinity_scale * (mix * u_pref + sqrt(1 - mix^2) * u_own)`,
    /// with `u_pref = pref / user_pref_scale` and `u_own` uniform on `[-1, 1]^n_topics`.
    pub affinity_scale: f64,
    pub affinity_pref_mix: Vec<f64>,
    pub leave_prob: f64,
    pub max_session_len: usize,
    pub history_len: usize,
    pub catalog_features: CatalogFeatures,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        let mut cfg = SimulatorConfig {
            n_topics: 4,
            n_videos: 20,
            state_dim: 0,
            user_pref_scale: 1.0,
            watchtime_noise: 0.5,
            watchtime_scale: 0.001,
            interaction_base_rates: TABLE1_BASE_RATES.to_vec(),
            affinity_scale: 2.0,
            affinity_pref_mix: vec![0.3, 0.0, -0.5],
            leave_prob: 0.1,
            max_session_len: 20,
            history_len: 2,
            catalog_features: CatalogFeatures::Summary,
            seed: 0,
        };
        cfg.state_dim = cfg.layout_dim();
        cfg
    }
}

impl SimulatorConfig {
    pub fn n_sparse(&self) -> usize {
        self.interaction_base_rates.len()
    }

    /// Number of response channels: watch time plus one per sparse channel.
    pub fn m(&self) -> usize {
        1 + self.n_sparse()
    }

    pub fn layout_dim(&self) -> usize {
        let catalog = match self.catalog_features {
            CatalogFeatures::Summary => self.n_topics,
            CatalogFeatures::Full => self.n_videos * self.n_topics,
        };
        self.n_topics * (1 + self.n_sparse() + self.history_len) + catalog
    }

    /// Fill a zero `state_dim` from the layout, then validate.
    pub fn normalized(mut self) -> Result<Self> {
        if self.state_dim == 0 {
            self.state_dim = self.layout_dim();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("simulator.{f}");
        if self.n_topics == 0 {
            return Err(Error::config(field("n_topics"), "must be at least 1"));
        }
        if self.n_videos < 2 {
            return Err(Error::config(field("n_videos"), "must be at least 2"));
        }
        if self.state_dim != self.layout_dim() {
            return Err(Error::config(
                field("state_dim"),
                format!("is {} but the state layout has {} features", self.state_dim, self.layout_dim()),
            ));
        }
        if !(self.user_pref_scale >= 0.0 && self.user_pref_scale.is_finite()) {
            return Err(Error::config(field("user_pref_scale"), "must be finite and nonnegative"));
        }
        if !(self.watchtime_noise >= 0.0 && self.watchtime_noise.is_finite()) {
            return Err(Error::config(field("watchtime_noise"), "must be finite and nonnegative"));
        }
        if !(self.watchtime_scale > 0.0 && self.watchtime_scale.is_finite()) {
            return Err(Error::config(field("watchtime_scale"), "must be positive"));
        }
        if self.interaction_base_rates.is_empty() {
            return Err(Error::config(field("interaction_base_rates"), "need at least one sparse channel"));
        }
        for (i, r) in self.interaction_base_rates.iter().enumerate() {
            if !(*r > 0.0 && *r < 1.0) {
                return Err(Error::config(
                    field(&format!("interaction_base_rates[{i}]")),
                    format!("rate {r} must lie strictly inside (0, 1)"),
                ));
            }
        }
        if self.affinity_pref_mix.len() != self.n_sparse() {
            return Err(Error::config(
                field("affinity_pref_mix"),
                format!("needs {} entries, one per sparse channel", self.n_sparse()),
            ));
        }
        for (i, x) in self.affinity_pref_mix.iter().enumerate() {
            if !(x.abs() <= 1.0) {
                return Err(Error::config(field(&format!("affinity_pref_mix[{i}]")), "must lie in [-1, 1]"));
            }
        }
        if !(self.affinity_scale >= 0.0 && self.affinity_scale.is_finite()) {
            return Err(Error::config(field("affinity_scale"), "must be finite and nonnegative"));
        }
        if !(self.leave_prob > 0.0 && self.leave_prob < 1.0) {
            return Err(Error::config(field("leave_prob"), "must lie strictly inside (0, 1)"));
        }
        if self.max_session_len == 0 {
            return Err(Error::config(field("max_session_len"), "must be at least 1"));
        }
        Ok(())
    }

    /// Expected session length under the capped geometric law.
    pub fn expected_session_len(&self) -> f64 {
        let stay = 1.0 - self.leave_prob;
        (1.0 - stay.powi(self.max_session_len as i32)) / self.leave_prob
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentUser {
    pub pref: Vec<f64>,
    pub interaction_affinity: Vec<Vec<f64>>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: Vec<f64>,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Clone, Debug)]
pub struct Simulator {
    config: SimulatorConfig,
    catalog: Vec<Vec<f64>>,
    catalog_block: Vec<f64>,
}

impl Simulator {
    /// Catalog embeddings are drawn from `derive(config.seed, "catalog")`.
    pub fn new(config: SimulatorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::component_rng(config.seed, "catalog");
        let catalog = (0..config.n_videos)
            .map(|_| {
                let v: Vec<f64> = (0..config.n_topics).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        Simulator::with_catalog(config, catalog)
    }

    pub fn with_catalog(config: SimulatorConfig, catalog: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        check_len("catalog", config.n_videos, catalog.len())?;
        for e in &catalog {
            check_len("video embedding", config.n_topics, e.len())?;
        }
        let d = config.n_topics;
        let catalog_block = match config.catalog_features {
            CatalogFeatures::Summary => (0..d)
                .map(|k| catalog.iter().map(|e| e[k]).sum::<f64>() / catalog.len() as f64)
                .collect(),
            CatalogFeatures::Full => catalog.iter().flatten().cloned().collect(),
        };
        Ok(Simulator {
            config,
            catalog,
            catalog_block,
        })
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.config
    }

    pub fn catalog(&self) -> &[Vec<f64>] {
        &self.catalog
    }

    pub fn n_actions(&self) -> usize {
        self.config.n_videos
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    pub fn sample_user<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentUser {
        let c = &self.config;
        let s = c.user_pref_scale;
        let unit: Vec<f64> = (0..c.n_topics).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let pref = unit.iter().map(|u| u * s).collect();
        let interaction_affinity = c
            .affinity_pref_mix
            .iter()
            .map(|mix| {
                let own_w = (1.0 - mix * mix).max(0.0).sqrt();
                unit.iter()
                    .map(|u| {
                        let own: f64 = rng.random_range(-1.0..=1.0);
                        c.affinity_scale * (mix * u + own_w * own)
                    })
                    .collect()
            })
            .collect();
        LatentUser {
            pref,
            interaction_affinity,
        }
    }

    pub fn initial_state(&self, user: &LatentUser) -> Vec<f64> {
        let c = &self.config;
        let mut s = Vec::with_capacity(c.state_dim);
        s.extend_from_slice(&user.pref);
        for a in &user.interaction_affinity {
            s.extend_from_slice(a);
        }
        s.extend(std::iter::repeat_n(0.0, c.history_len * c.n_topics));
        s.extend_from_slice(&self.catalog_block);
        s
    }

    /// New session: a user and their initial state (empty history).
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (LatentUser, Vec<f64>) {
        let user = self.sample_user(rng);
        let state = self.initial_state(&user);
        (user, state)
    }

    fn history_range(&self) -> std::ops::Range<usize> {
        let c = &self.config;
        let start = c.n_topics * (1 + c.n_sparse());
        start..start + c.history_len * c.n_topics
    }

    /// Serve `action` at 0-based step `t` of the session.
    pub fn step<R: Rng + ?Sized>(
        &self,
        user: &LatentUser,
        state: &[f64],
        t: usize,
        action: usize,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let c = &self.config;
        check_len("state", c.state_dim, state.len())?;
        if action >= c.n_videos {
            return Err(Error::Index {
                what: "video",
                index: action,
                len: c.n_videos,
            });
        }
        let emb = &self.catalog[action];
        let noise: f64 = StandardNormal.sample(rng);
        let mut reward = Vec::with_capacity(c.m());
        reward.push(c.watchtime_scale * softplus(dot(&user.pref, emb) + c.watchtime_noise * noise));
        for (base, aff) in c.interaction_base_rates.iter().zip(&user.interaction_affinity) {
            let p = sigmoid(logit(*base) + dot(aff, emb));
            let hit: f64 = rng.random();
            reward.push(if hit < p { 1.0 } else { 0.0 });
        }

        let mut next_state = state.to_vec();
        let hist = self.history_range();
        let d = c.n_topics;
        if c.history_len > 0 {
            next_state.copy_within(hist.start..hist.end - d, hist.start + d);
            next_state[hist.start..hist.start + d].copy_from_slice(emb);
        }
        let leave: f64 = rng.random();
        let terminal = t + 1 >= c.max_session_len || leave < c.leave_prob;
        Ok(StepOutcome {
            reward,
            next_state,
            terminal,
        })
    }

    /// One session under `policy`, with all randomness from `seed`.
    pub fn run_session<P: StochasticPolicy + ?Sized>(&self, policy: &P, seed: u64, user_id: String) -> Result<Session> {
        let mut rng = seed::rng(seed);
        let (user, mut state) = self.reset(&mut rng);
        let mut transitions = Vec::new();
        for t in 0..self.config.max_session_len {
            let probs = policy.action_probs(&state)?;
            check_len("policy output", self.config.n_videos, probs.len())?;
            let action = sample_action(&probs, &mut rng);
            let out = self.step(&user, &state, t, action, &mut rng)?;
            let next = out.next_state;
            transitions.push(Transition {
                state: std::mem::replace(&mut state, next.clone()),
                action,
                reward: out.reward,
                next_state: next,
                terminal: out.terminal,
                behavior_prob: probs[action],
            });
            if out.terminal {
                break;
            }
        }
        Session::new(user_id, seed, transitions)
    }

    /// `n_sessions` sessions; session `i` uses seed
    /// `derive_indexed(seed, "session", i)`. Sessions are simulated in
    /// parallel and returned in index order.
    pub fn rollout<P>(&self, policy: &P, n_sessions: usize, seed: u64) -> Result<Vec<Session>>
    where
        P: StochasticPolicy + Sync + ?Sized,
    {
        (0..n_sessions)
            .into_par_iter()
            .map(|i| {
                let s = seed::derive_indexed(seed, "session", i as u64);
                self.run_session(policy, s, format!("u{seed:x}-{i}"))
            })
            .collect()
    }

    /// Logged sessions under a behavior policy, written as JSONL.
    pub fn generate_log<P>(&self, policy: &P, n_sessions: usize, seed: u64, path: &Path) -> Result<Vec<Session>>
    where
        P: StochasticPolicy + Sync + ?Sized,
    {
        let sessions = self.rollout(policy, n_sessions, seed)?;
        write_sessions(path, &sessions)?;
        Ok(sessions)
    }
}

/// Logging policy that reads the user preference block from the state and
/// plays `softmax(pref . e_a / temperature)`.
#[derive(Clone, Debug)]
pub struct PreferencePolicy {
    catalog: Vec<Vec<f64>>,
    n_topics: usize,
    pub temperature: f64,
}

impl PreferencePolicy {
    pub fn new(sim: &Simulator, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::config("temperature", "must be positive"));
        }
        Ok(PreferencePolicy {
            catalog: sim.catalog.clone(),
            n_topics: sim.config.n_topics,
            temperature,
        })
    }
}

impl StochasticPolicy for PreferencePolicy {
    fn n_actions(&self) -> usize {
        self.catalog.len()
    }

    fn action_probs(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() < self.n_topics {
            return Err(Error::Shape {
                what: "state",
                expected: self.n_topics,
                got: state.len(),
            });
        }
        let pref = &state[..self.n_topics];
        let logits: Vec<f64> = self.catalog.iter().map(|e| dot(pref, e) / self.temperature).collect();
        Ok(softmax(&logits))
    }
}
