//! Experiment orchestration: config, training schedules for every
//! algorithm, evaluation summaries, lambda sweeps and reports.
//!
//! Seeds: every random stream of a run is derived from the run seed and a
//! component name with [`seed::derive`]. Components: `policy_aux_{c}`,
//! `policy_main`, `critics`, `stage_one_{c}` (rollouts and replay sampling
//! of auxiliary channel `c`), `stage_two`, `train_log`, `bc`, `eval_log`,
//! `mc_eval`. The item catalog is fixed by `simulator.seed`.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actors::{
    actor_critic_step, behavior_cloning_update, rcpo_multi_critic_update, rcpo_update, stage_two_actor_update,
    ActorCriticStats, Correction, DataMode, LagrangeWeights, PolicyBank, RcpoConfig, StageOneConfig,
    StageTwoConfig,
};
use crate::approx::{sample_action, Activation, Mlp, MlpSpec, SoftmaxPolicy, StochasticPolicy, ValueFunction};
use crate::cmdp::{flatten, read_sessions, write_sessions, ResponseSpec, Session, Sparsity, Transition};
use crate::critics::CriticEnsemble;
use crate::env::{LatentUser, PreferencePolicy, Simulator, SimulatorConfig};
use crate::error::{Error, Result};
use crate::eval::{self, AlgorithmScores, ChannelColumn, EvalConfig, Report};
use crate::replay::ReplayBuffer;
use crate::seed;

/// Lambda values of the default sweep grid.
pub const DEFAULT_GRID: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Tscac,
    Rcpo,
    RcpoMulti,
    Bc,
    StageOneOnly,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Tscac,
        Algorithm::Rcpo,
        Algorithm::RcpoMulti,
        Algorithm::Bc,
        Algorithm::StageOneOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Tscac => "tscac",
            Algorithm::Rcpo => "rcpo",
            Algorithm::RcpoMulti => "rcpo_multi",
            Algorithm::Bc => "bc",
            Algorithm::StageOneOnly => "stage_one_only",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "algorithm",
                    format!("unknown algorithm `{s}` (expected tscac, rcpo, rcpo_multi, bc or stage_one_only)"),
                )
            })
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_scale: f64,
    /// Start every policy uniform and every critic at zero.
    pub zero_output_init: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![32],
            activation: Activation::Tanh,
            init_scale: 0.1,
            zero_output_init: true,
        }
    }
}

impl NetworkConfig {
    pub fn spec(&self, input_dim: usize, output_dim: usize, init_seed: u64) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden: self.hidden.clone(),
            output_dim,
            activation: self.activation,
            init_seed,
            init_scale: self.init_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Updates per stage. Each update collects `batch_size` fresh transitions.
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub w_max: f64,
    /// Off-policy corrections: clipped ratios in stage one, logged
    /// behavior probabilities in stage two.
    pub off_policy: bool,
    /// Ratio cap for the stage-one off-policy correction.
    pub cap_c: f64,
    /// Replay capacity; equal to `batch_size` means every batch is the
    /// freshly collected data.
    pub replay_capacity: usize,
    /// Standardize actor coefficients per batch in stage one, RCPO and
    /// RCPO with multiple critics. Stage two always uses raw advantages.
    pub normalize_advantages: bool,
    /// Divide stage-two weights by their batch mean.
    pub normalize_weights: bool,
    /// Decay the stage-two actor step linearly to zero over the run.
    pub anneal_stage_two: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            iterations: 3000,
            batch_size: 64,
            lr_actor: 0.3,
            lr_critic: 0.1,
            w_max: 20.0,
            off_policy: false,
            cap_c: 5.0,
            replay_capacity: 64,
            normalize_advantages: false,
            normalize_weights: true,
            anneal_stage_two: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    /// Temperature of the preference-following logging policy.
    pub temperature: f64,
    /// Sessions in each generated log (cloning data and evaluation data).
    pub log_sessions: usize,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        BehaviorConfig {
            temperature: 1.0,
            log_sessions: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub baseline: String,
    /// Channels where lower scores are better.
    pub lower_is_better: Vec<String>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            baseline: "bc".into(),
            lower_is_better: vec!["hate".into()],
        }
    }
}

fn default_channel_names(m: usize) -> Vec<String> {
    if m == 4 {
        return ["watch_time", "click", "like", "comment"].map(String::from).to_vec();
    }
    std::iter::once("watch_time".to_string())
        .chain((1..m).map(|i| format!("interaction_{i}")))
        .collect()
}

fn default_spec(m: usize) -> ResponseSpec {
    let names = default_channel_names(m);
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    ResponseSpec::uniform(&refs, 0.95).expect("default spec is valid")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub simulator: SimulatorConfig,
    pub response_spec: ResponseSpec,
    pub algorithm: Algorithm,
    /// One multiplier per auxiliary channel. A single value is broadcast
    /// to every auxiliary channel.
    pub lambdas: LagrangeWeights,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub behavior: BehaviorConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub sweep_grid: Vec<f64>,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let simulator = SimulatorConfig::default();
        let m = simulator.m();
        ExperimentConfig {
            simulator,
            response_spec: default_spec(m),
            algorithm: Algorithm::Tscac,
            lambdas: LagrangeWeights::uniform(m - 1, 1e-5).expect("valid"),
            network: NetworkConfig::default(),
            training: TrainingConfig::default(),
            behavior: BehaviorConfig::default(),
            eval: EvalConfig::default(),
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            sweep_grid: DEFAULT_GRID.to_vec(),
            report: ReportConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Json {
            context: "parsing experiment config".into(),
            source: e,
        })?;
        let spec_given = raw.get("response_spec").is_some();
        let mut cfg: ExperimentConfig = serde_json::from_value(raw).map_err(|e| Error::Json {
            context: "reading experiment config".into(),
            source: e,
        })?;
        if !spec_given {
            cfg.response_spec = default_spec(cfg.simulator.m());
        }
        cfg.normalize()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Derive `simulator.state_dim`, broadcast a scalar `lambdas`, validate.
    pub fn normalize(&mut self) -> Result<()> {
        self.simulator = self.simulator.clone().normalized()?;
        let k = self.response_spec.m().saturating_sub(1);
        if self.lambdas.len() == 1 && k > 1 {
            self.lambdas = LagrangeWeights::uniform(k, self.lambdas.as_slice()[0])?;
        }
        self.validate()
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        let mut c = self.clone();
        c.lambdas = LagrangeWeights::uniform(self.response_spec.m() - 1, lambda)
            .map_err(|e| Error::config("lambda", e.to_string()))?;
        Ok(c)
    }

    pub fn m(&self) -> usize {
        self.response_spec.m()
    }

    pub fn validate(&self) -> Result<()> {
        self.simulator.validate()?;
        let m = self.response_spec.m();
        if m != self.simulator.m() {
            return Err(Error::config(
                "response_spec.names",
                format!("{m} channels but the simulator emits {}", self.simulator.m()),
            ));
        }
        if self.lambdas.len() != m - 1 {
            return Err(Error::config(
                "lambdas",
                format!("needs {} multipliers (or one to broadcast), got {}", m - 1, self.lambdas.len()),
            ));
        }
        if self.algorithm == Algorithm::Tscac && !(self.lambdas.sum() > 0.0) {
            return Err(Error::config("lambdas", "tscac needs a positive multiplier sum"));
        }
        let t = &self.training;
        if t.iterations == 0 {
            return Err(Error::config("training.iterations", "must be at least 1"));
        }
        if t.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be at least 1"));
        }
        if t.replay_capacity < t.batch_size {
            return Err(Error::config("training.replay_capacity", "must be at least batch_size"));
        }
        for (name, v) in [("training.lr_actor", t.lr_actor), ("training.lr_critic", t.lr_critic)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be positive and finite"));
            }
        }
        if !(t.w_max > 0.0) {
            return Err(Error::config("training.w_max", "must be positive"));
        }
        if !(t.cap_c > 0.0) {
            return Err(Error::config("training.cap_c", "must be positive"));
        }
        if self.network.hidden.contains(&0) {
            return Err(Error::config("network.hidden", "layer widths must be positive"));
        }
        if !(self.behavior.temperature > 0.0) {
            return Err(Error::config("behavior.temperature", "must be positive"));
        }
        if self.behavior.log_sessions == 0 {
            return Err(Error::config("behavior.log_sessions", "must be at least 1"));
        }
        self.eval.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if let Some((i, l)) = self.sweep_grid.iter().enumerate().find(|(_, l)| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::config(format!("sweep_grid[{i}]"), format!("{l} must be positive")));
        }
        Ok(())
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Simulator::new(self.simulator.clone())
    }

    pub fn channel_columns(&self) -> Vec<ChannelColumn> {
        self.response_spec
            .names()
            .iter()
            .map(|n| {
                let lower = self.report.lower_is_better.iter().any(|x| x.eq_ignore_ascii_case(n));
                ChannelColumn::new(n.clone(), lower)
            })
            .collect()
    }

    fn policy_spec(&self, init_seed: u64) -> MlpSpec {
        self.network
            .spec(self.simulator.state_dim, self.simulator.n_videos, init_seed)
    }

    fn new_policy(&self, init_seed: u64) -> Result<SoftmaxPolicy> {
        let mut net = Mlp::new(self.policy_spec(init_seed))?;
        if self.network.zero_output_init {
            net.zero_output_layer();
        }
        Ok(SoftmaxPolicy::from_network(net))
    }

    fn new_ensemble(&self, run_seed: u64) -> Result<CriticEnsemble> {
        let ens = CriticEnsemble::new(self.response_spec.clone(), &self.critic_template(run_seed))?;
        if !self.network.zero_output_init {
            return Ok(ens);
        }
        let critics = ens
            .critics()
            .iter()
            .map(|c| {
                let mut net = c.network().clone();
                net.zero_output_layer();
                ValueFunction::from_network(net)
            })
            .collect::<Result<Vec<_>>>()?;
        CriticEnsemble::from_critics(self.response_spec.clone(), critics)
    }

    fn critic_template(&self, run_seed: u64) -> MlpSpec {
        self.network
            .spec(self.simulator.state_dim, 1, seed::derive(run_seed, "critics"))
    }
}

/// One row of the training metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub stage: String,
    pub iteration: usize,
    pub channel: usize,
    pub critic_loss: f64,
    pub mean_weight: f64,
    pub clipped_fraction: f64,
    pub mean_advantage: f64,
}

impl MetricRow {
    fn new(stage: &str, iteration: usize, channel: usize, s: &ActorCriticStats) -> Self {
        MetricRow {
            stage: stage.to_string(),
            iteration,
            channel,
            critic_loss: s.critic_loss,
            mean_weight: s.actor.mean_weight,
            clipped_fraction: s.actor.clipped_fraction,
            mean_advantage: s.actor.mean_advantage,
        }
    }
}

/// Runs sessions of the current policy and hands out transitions in
/// collection order. Sessions continue across calls.
pub struct Collector<'a> {
    sim: &'a Simulator,
    rng: ChaCha8Rng,
    live: Option<(LatentUser, Vec<f64>, usize)>,
}

impl<'a> Collector<'a> {
    pub fn new(sim: &'a Simulator, seed: u64) -> Self {
        Collector {
            sim,
            rng: ChaCha8Rng::seed_from_u64(seed),
            live: None,
        }
    }

    pub fn collect<P: StochasticPolicy + ?Sized>(&mut self, policy: &P, n: usize) -> Result<Vec<Transition>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let (user, state, t) = match self.live.take() {
                Some(x) => x,
                None => {
                    let (u, s) = self.sim.reset(&mut self.rng);
                    (u, s, 0)
                }
            };
            let probs = policy.action_probs(&state)?;
            let action = sample_action(&probs, &mut self.rng);
            let step = self.sim.step(&user, &state, t, action, &mut self.rng)?;
            if !step.terminal {
                self.live = Some((user, step.next_state.clone(), t + 1));
            }
            out.push(Transition {
                state,
                action,
                reward: step.reward,
                next_state: step.next_state,
                terminal: step.terminal,
                behavior_prob: probs[action],
            });
        }
        Ok(out)
    }
}

struct Feed<'a> {
    collector: Collector<'a>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    batch_size: usize,
}

impl<'a> Feed<'a> {
    fn new(sim: &'a Simulator, cfg: &TrainingConfig, stream_seed: u64) -> Result<Self> {
        Ok(Feed {
            collector: Collector::new(sim, seed::derive(stream_seed, "rollout")),
            buffer: ReplayBuffer::new(cfg.replay_capacity)?,
            rng: seed::component_rng(stream_seed, "replay"),
            batch_size: cfg.batch_size,
        })
    }

    fn next_batch(&mut self, policy: &SoftmaxPolicy) -> Result<Vec<Transition>> {
        let fresh = self.collector.collect(policy, self.batch_size)?;
        self.buffer.extend(fresh);
        self.buffer.sample(self.batch_size, &mut self.rng)
    }
}

fn at_iteration(stage: &str, k: usize, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("{stage} iteration {k}: {msg}")),
        other => other,
    }
}

fn check_loss(stage: &str, k: usize, stats: &ActorCriticStats) -> Result<()> {
    if stats.critic_loss.is_finite() && stats.actor.mean_advantage.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "{stage} iteration {k}: non-finite loss (critic {}, mean advantage {})",
            stats.critic_loss, stats.actor.mean_advantage
        )))
    }
}

/// Frozen auxiliary actors and their critics.
#[derive(Clone, Debug)]
pub struct StageOne {
    pub aux: Vec<SoftmaxPolicy>,
    pub ensemble: CriticEnsemble,
    pub metrics: Vec<MetricRow>,
}

fn stage_one_config(cfg: &ExperimentConfig) -> StageOneConfig {
    StageOneConfig {
        lr: cfg.training.lr_actor,
        correction: if cfg.training.off_policy {
            Correction::OffPolicy {
                clip_c: cfg.training.cap_c,
            }
        } else {
            Correction::OnPolicy
        },
        normalize_advantages: cfg.training.normalize_advantages,
    }
}

/// Train one actor-critic pair per auxiliary channel on its own rollouts.
pub fn train_stage_one(cfg: &ExperimentConfig, run_seed: u64) -> Result<StageOne> {
    let sim = cfg.simulator()?;
    let mut ensemble = cfg.new_ensemble(run_seed)?;
    let actor_cfg = stage_one_config(cfg);
    let mut aux = Vec::new();
    let mut metrics = Vec::new();
    for c in 1..cfg.m() {
        let stage = format!("aux_{c}");
        let mut policy = cfg.new_policy(seed::derive(run_seed, &format!("policy_aux_{c}")))?;
        let mut feed = Feed::new(&sim, &cfg.training, seed::derive(run_seed, &format!("stage_one_{c}")))?;
        for k in 0..cfg.training.iterations {
            let batch = feed.next_batch(&policy)?;
            let stats = actor_critic_step(&mut policy, &mut ensemble, c, &batch, &actor_cfg, cfg.training.lr_critic)
                .map_err(|e| at_iteration(&stage, k, e))?;
            check_loss(&stage, k, &stats)?;
            metrics.push(MetricRow::new(&stage, k, c, &stats));
        }
        aux.push(policy);
    }
    Ok(StageOne { aux, ensemble, metrics })
}

/// Train the main policy against frozen auxiliary actors.
pub fn train_stage_two(cfg: &ExperimentConfig, run_seed: u64, stage_one: &StageOne) -> Result<TrainedRun> {
    let sim = cfg.simulator()?;
    let main = cfg.new_policy(seed::derive(run_seed, "policy_main"))?;
    let mut bank = PolicyBank::new(stage_one.aux.clone(), main);
    let mut ensemble = stage_one.ensemble.clone();
    let actor_cfg = StageTwoConfig {
        lr: cfg.training.lr_actor,
        w_max: cfg.training.w_max,
        mode: if cfg.training.off_policy {
            DataMode::Offline
        } else {
            DataMode::OnPolicy
        },
        normalize_advantages: false,
        normalize_weights: cfg.training.normalize_weights,
    };
    let mut metrics = stage_one.metrics.clone();
    let mut feed = Feed::new(&sim, &cfg.training, seed::derive(run_seed, "stage_two"))?;
    for k in 0..cfg.training.iterations {
        let batch = feed.next_batch(&bank.main)?;
        let mut step_cfg = actor_cfg;
        if cfg.training.anneal_stage_two {
            step_cfg.lr *= 1.0 - k as f64 / cfg.training.iterations as f64;
        }
        let actor = stage_two_actor_update(&mut bank, &ensemble, &batch, &cfg.lambdas, &step_cfg)
            .map_err(|e| at_iteration("main", k, e))?;
        let critic_loss = ensemble
            .critic_update(0, &batch, cfg.training.lr_critic)
            .map_err(|e| at_iteration("main", k, e))?;
        let stats = ActorCriticStats { actor, critic_loss };
        check_loss("main", k, &stats)?;
        metrics.push(MetricRow::new("main", k, 0, &stats));
    }
    Ok(TrainedRun {
        algorithm: Algorithm::Tscac,
        seed: run_seed,
        aux: bank.aux().to_vec(),
        main: Some(bank.main),
        critics: ensemble.critics().to_vec(),
        metrics,
    })
}

/// Outcome of one training run.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub aux: Vec<SoftmaxPolicy>,
    /// Absent for `stage_one_only`.
    pub main: Option<SoftmaxPolicy>,
    pub critics: Vec<ValueFunction>,
    pub metrics: Vec<MetricRow>,
}

impl TrainedRun {
    pub fn bank(&self) -> Option<PolicyBank> {
        self.main.clone().map(|m| PolicyBank::new(self.aux.clone(), m))
    }

    /// Checkpoints (`aux_{c}.json`, `main.json`, `critic_{c}.json`) and
    /// `metrics.csv` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, p) in self.aux.iter().enumerate() {
            write_atomic(&dir.join(format!("aux_{}.json", i + 1)), &to_json(p)?)?;
        }
        if let Some(m) = &self.main {
            write_atomic(&dir.join("main.json"), &to_json(m)?)?;
        }
        for (i, c) in self.critics.iter().enumerate() {
            write_atomic(&dir.join(format!("critic_{i}.json")), &to_json(c)?)?;
        }
        write_atomic(&dir.join("metrics.csv"), &csv_bytes(&self.metrics)?)
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(value).map_err(|e| Error::Json {
        context: "serializing checkpoint".into(),
        source: e,
    })
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let ctx = |e| Error::Csv {
        context: "writing csv".into(),
        source: e,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(ctx)?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("flushing csv: {e}")))
}

/// Write through a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// The logging policy of the experiment.
pub fn behavior_policy(cfg: &ExperimentConfig, sim: &Simulator) -> Result<PreferencePolicy> {
    PreferencePolicy::new(sim, cfg.behavior.temperature)
}

/// Logged sessions of the behavior policy for `component` (`train_log` or
/// `eval_log`) of a run.
pub fn behavior_log(cfg: &ExperimentConfig, run_seed: u64, component: &str) -> Result<Vec<Session>> {
    let sim = cfg.simulator()?;
    let policy = behavior_policy(cfg, &sim)?;
    sim.rollout(&policy, cfg.behavior.log_sessions, seed::derive(run_seed, component))
}

/// Full two-stage run for algorithm `tscac`.
pub fn run_two_stage(cfg: &ExperimentConfig, run_seed: u64) -> Result<TrainedRun> {
    if cfg.algorithm != Algorithm::Tscac {
        return Err(Error::config("algorithm", "run_two_stage needs algorithm = tscac"));
    }
    let one = train_stage_one(cfg, run_seed)?;
    train_stage_two(cfg, run_seed, &one)
}

/// Train `cfg.algorithm` with `run_seed`.
pub fn train(cfg: &ExperimentConfig, run_seed: u64) -> Result<TrainedRun> {
    cfg.validate()?;
    match cfg.algorithm {
        Algorithm::Tscac => run_two_stage(cfg, run_seed),
        Algorithm::StageOneOnly => {
            let one = train_stage_one(cfg, run_seed)?;
            Ok(TrainedRun {
                algorithm: Algorithm::StageOneOnly,
                seed: run_seed,
                aux: one.aux,
                main: None,
                critics: one.ensemble.critics().to_vec(),
                metrics: one.metrics,
            })
        }
        Algorithm::Rcpo | Algorithm::RcpoMulti => train_rcpo(cfg, run_seed),
        Algorithm::Bc => train_bc(cfg, run_seed),
    }
}

fn train_rcpo(cfg: &ExperimentConfig, run_seed: u64) -> Result<TrainedRun> {
    let sim = cfg.simulator()?;
    let mut policy = cfg.new_policy(seed::derive(run_seed, "policy_main"))?;
    let mut ensemble = cfg.new_ensemble(run_seed)?;
    // the scalarized critic reuses the main-channel initialization
    let mut scalar_critic = ensemble.critic(0)?.clone();
    let gamma = cfg.response_spec.discount(0)?;
    let rates = RcpoConfig {
        lr_actor: cfg.training.lr_actor,
        lr_critic: cfg.training.lr_critic,
        normalize_advantages: cfg.training.normalize_advantages,
    };
    let mut feed = Feed::new(&sim, &cfg.training, seed::derive(run_seed, "stage_two"))?;
    let mut metrics = Vec::new();
    let stage = cfg.algorithm.name();
    for k in 0..cfg.training.iterations {
        let batch = feed.next_batch(&policy)?;
        let stats = match cfg.algorithm {
            Algorithm::Rcpo => rcpo_update(&mut policy, &mut scalar_critic, &batch, &cfg.lambdas, gamma, &rates),
            _ => rcpo_multi_critic_update(&mut policy, &mut ensemble, &batch, &cfg.lambdas, &rates),
        }
        .map_err(|e| at_iteration(stage, k, e))?;
        check_loss(stage, k, &stats)?;
        metrics.push(MetricRow::new(stage, k, 0, &stats));
    }
    let critics = match cfg.algorithm {
        Algorithm::Rcpo => vec![scalar_critic],
        _ => ensemble.critics().to_vec(),
    };
    Ok(TrainedRun {
        algorithm: cfg.algorithm,
        seed: run_seed,
        aux: Vec::new(),
        main: Some(policy),
        critics,
        metrics,
    })
}

fn train_bc(cfg: &ExperimentConfig, run_seed: u64) -> Result<TrainedRun> {
    let log = flatten(&behavior_log(cfg, run_seed, "train_log")?);
    let mut buffer = ReplayBuffer::new(log.len().max(1))?;
    buffer.extend(log);
    let mut rng = seed::component_rng(run_seed, "bc");
    let mut policy = cfg.new_policy(seed::derive(run_seed, "policy_main"))?;
    let batch_size = cfg.training.batch_size.min(buffer.len());
    let mut metrics = Vec::new();
    for k in 0..cfg.training.iterations {
        let batch = buffer.sample(batch_size, &mut rng)?;
        let nll = behavior_cloning_update(&mut policy, &batch, cfg.training.lr_actor).map_err(|e| at_iteration("bc", k, e))?;
        if !nll.is_finite() {
            return Err(Error::Numeric(format!("bc iteration {k}: non-finite loss {nll}")));
        }
        metrics.push(MetricRow {
            stage: "bc".into(),
            iteration: k,
            channel: 0,
            critic_loss: nll,
            mean_weight: 1.0,
            clipped_fraction: 0.0,
            mean_advantage: 0.0,
        });
    }
    Ok(TrainedRun {
        algorithm: Algorithm::Bc,
        seed: run_seed,
        aux: Vec::new(),
        main: Some(policy),
        critics: Vec::new(),
        metrics,
    })
}

/// One evaluated policy on one channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub seed: u64,
    pub lambda: f64,
    pub channel: String,
    pub mc_value: f64,
    pub ncis: f64,
    pub dcg: Option<f64>,
}

/// Monte-Carlo values from fresh sessions of `policy` (common user stream
/// `mc_eval` across algorithms) plus NCIS and DCG on the run's `eval_log`.
pub fn evaluate_policy<P: StochasticPolicy + Sync + ?Sized>(
    cfg: &ExperimentConfig,
    sim: &Simulator,
    policy: &P,
    eval_log: &[Session],
    run_seed: u64,
) -> Result<Vec<(f64, f64, Option<f64>)>> {
    let sessions = sim.rollout(policy, cfg.eval.mc_sessions, seed::derive(run_seed, "mc_eval"))?;
    let mc = eval::monte_carlo_values(&sessions, &cfg.response_spec)?;
    let ncis = eval::ncis_all(policy, eval_log, cfg.eval.cap_c)?;
    (0..cfg.m())
        .map(|c| {
            let dcg = if cfg.eval.dcg_enabled {
                Some(eval::dcg(policy, eval_log, c)?)
            } else {
                None
            };
            Ok((mc[c], ncis[c], dcg))
        })
        .collect()
}

fn lambda_label(cfg: &ExperimentConfig) -> f64 {
    let l = cfg.lambdas.as_slice();
    l.iter().sum::<f64>() / l.len().max(1) as f64
}

/// Summary rows for a trained run: the main policy, or each auxiliary
/// policy for `stage_one_only`.
pub fn summarize(cfg: &ExperimentConfig, run: &TrainedRun) -> Result<Vec<SummaryRow>> {
    let sim = cfg.simulator()?;
    let eval_log = behavior_log(cfg, run.seed, "eval_log")?;
    let mut targets: Vec<(String, &SoftmaxPolicy)> = Vec::new();
    match &run.main {
        Some(m) => targets.push((run.algorithm.name().to_string(), m)),
        None => {
            for (i, p) in run.aux.iter().enumerate() {
                targets.push((format!("aux_{}", cfg.response_spec.names()[i + 1]), p));
            }
        }
    }
    let mut rows = Vec::new();
    for (name, p) in targets {
        let vals = evaluate_policy(cfg, &sim, p, &eval_log, run.seed)?;
        for (c, (mc, ncis, dcg)) in vals.into_iter().enumerate() {
            rows.push(SummaryRow {
                algorithm: name.clone(),
                seed: run.seed,
                lambda: lambda_label(cfg),
                channel: cfg.response_spec.names()[c].clone(),
                mc_value: mc,
                ncis,
                dcg,
            });
        }
    }
    Ok(rows)
}

pub fn run_dir(out: &Path, algorithm: Algorithm, run_seed: u64) -> PathBuf {
    out.join(algorithm.name()).join(format!("seed_{run_seed}"))
}

/// Train, checkpoint and summarize every configured seed. Files go to
/// `<output_dir>/<algorithm>/seed_<s>/`.
pub fn run_training(cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    cfg.validate()?;
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&s| {
            let run = train(cfg, s)?;
            let dir = run_dir(&cfg.output_dir, cfg.algorithm, s);
            run.save(&dir)?;
            let rows = summarize(cfg, &run)?;
            write_atomic(&dir.join("summary.csv"), &csv_bytes(&rows)?)?;
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

/// One sweep row; `error` is set (and scores empty) for failed cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub seed: u64,
    pub channel: String,
    pub ncis: Option<f64>,
    pub mc_value: Option<f64>,
    pub error: Option<String>,
}

/// One TSCAC run per `(lambda, seed)` cell with the multiplier broadcast to
/// every auxiliary channel. Stage one does not depend on lambda and is
/// trained once per seed. Cells run in parallel; rows come back in grid
/// order, then seed order, then channel order.
pub fn run_sweep(cfg: &ExperimentConfig, grid: &[f64]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::config("sweep_grid", "grid must not be empty"));
    }
    let mut cfg = cfg.clone();
    cfg.algorithm = Algorithm::Tscac;
    cfg.validate()?;
    let stage_ones: Vec<(u64, Result<StageOne>)> = cfg
        .seeds
        .par_iter()
        .map(|&s| (s, train_stage_one(&cfg, s)))
        .collect();
    let cells: Vec<(f64, u64)> = grid
        .iter()
        .flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s)))
        .collect();
    let rows: Vec<Vec<SweepRow>> = cells
        .par_iter()
        .map(|&(lambda, s)| {
            let names = cfg.response_spec.names();
            let result = (|| {
                let one = stage_ones
                    .iter()
                    .find(|(seed, _)| *seed == s)
                    .map(|(_, r)| r)
                    .expect("stage one trained for every seed")
                    .as_ref()
                    .map_err(|e| Error::Data(format!("stage one failed: {e}")))?;
                let cell_cfg = cfg.with_lambda(lambda)?;
                let run = train_stage_two(&cell_cfg, s, one)?;
                let summary = summarize(&cell_cfg, &run)?;
                let dir = cfg.output_dir.join("sweep").join(format!("lambda_{lambda:e}")).join(format!("seed_{s}"));
                run.save(&dir)?;
                write_atomic(&dir.join("summary.csv"), &csv_bytes(&summary)?)?;
                Ok::<_, Error>(summary)
            })();
            match result {
                Ok(summary) => summary
                    .into_iter()
                    .map(|r| SweepRow {
                        lambda,
                        seed: s,
                        channel: r.channel,
                        ncis: Some(r.ncis),
                        mc_value: Some(r.mc_value),
                        error: None,
                    })
                    .collect(),
                Err(e) => names
                    .iter()
                    .map(|n| SweepRow {
                        lambda,
                        seed: s,
                        channel: n.clone(),
                        ncis: None,
                        mc_value: None,
                        error: Some(format!("{}: {e}", e.kind())),
                    })
                    .collect(),
            }
        })
        .collect();
    let rows: Vec<SweepRow> = rows.into_iter().flatten().collect();
    write_atomic(&cfg.output_dir.join("sweep.csv"), &csv_bytes(&rows)?)?;
    Ok(rows)
}

/// Mean and sample standard deviation of `mc_value` per `(lambda, channel)`.
pub fn sweep_means(rows: &[SweepRow], grid: &[f64], channels: &[String]) -> Vec<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&l| {
            channels
                .iter()
                .map(|c| {
                    let v: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.lambda == l && &r.channel == c)
                        .filter_map(|r| r.mc_value)
                        .collect();
                    mean_sd(&v)
                })
                .collect()
        })
        .collect()
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Evaluate a policy checkpoint on a session log; one row per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub channel: String,
    pub ncis: f64,
    pub dcg: Option<f64>,
    pub sessions: usize,
}

pub fn evaluate_log(cfg: &ExperimentConfig, policy: &SoftmaxPolicy, log: &[Session]) -> Result<Vec<EvaluationRow>> {
    let m = cfg.m();
    for s in log {
        s.validate(m)?;
    }
    let ncis = eval::ncis_all(policy, log, cfg.eval.cap_c)?;
    (0..m)
        .map(|c| {
            Ok(EvaluationRow {
                channel: cfg.response_spec.names()[c].clone(),
                ncis: ncis[c],
                dcg: if cfg.eval.dcg_enabled {
                    Some(eval::dcg(policy, log, c)?)
                } else {
                    None
                },
                sessions: log.len(),
            })
        })
        .collect()
}

/// Write a behavior-policy log for `run_seed` to `path`.
pub fn simulate_log(cfg: &ExperimentConfig, run_seed: u64, path: &Path) -> Result<Vec<Session>> {
    let sessions = behavior_log(cfg, run_seed, "eval_log")?;
    write_sessions(path, &sessions)?;
    Ok(sessions)
}

pub fn load_log(path: &Path) -> Result<Vec<Session>> {
    read_sessions(path)
}

/// Which metric a report compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportMetric {
    McValue,
    Ncis,
}

/// Mean over seeds of every `summary.csv` under `out`, compared against the
/// configured baseline.
pub fn build_report(cfg: &ExperimentConfig, out: &Path, metric: ReportMetric) -> Result<Report> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for algo in Algorithm::ALL {
        let dir = out.join(algo.name());
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path().join("summary.csv")))
            .filter(|p| p.exists())
            .collect();
        paths.sort();
        for p in paths {
            let mut r = csv::Reader::from_path(&p).map_err(|e| Error::Csv {
                context: p.display().to_string(),
                source: e,
            })?;
            for row in r.deserialize() {
                rows.push(row.map_err(|e| Error::Csv {
                    context: p.display().to_string(),
                    source: e,
                })?);
            }
        }
    }
    let names = cfg.response_spec.names();
    let mut algos: Vec<String> = Vec::new();
    for r in &rows {
        if !algos.contains(&r.algorithm) {
            algos.push(r.algorithm.clone());
        }
    }
    if algos.is_empty() {
        return Err(Error::InsufficientData(format!("no summary.csv files under {}", out.display())));
    }
    let results: Vec<AlgorithmScores> = algos
        .iter()
        .map(|a| AlgorithmScores {
            algorithm: a.clone(),
            scores: names
                .iter()
                .map(|c| {
                    let v: Vec<f64> = rows
                        .iter()
                        .filter(|r| &r.algorithm == a && &r.channel == c)
                        .map(|r| match metric {
                            ReportMetric::McValue => r.mc_value,
                            ReportMetric::Ncis => r.ncis,
                        })
                        .collect();
                    mean_sd(&v).0
                })
                .collect(),
        })
        .collect();
    let baseline = if algos.contains(&cfg.report.baseline) {
        cfg.report.baseline.clone()
    } else {
        algos[0].clone()
    };
    eval::compare_report(&results, &cfg.channel_columns(), &baseline)
}

/// Channels flagged sparse in the response spec.
pub fn sparse_channels(spec: &ResponseSpec) -> Vec<usize> {
    spec.sparsity()
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == Sparsity::Sparse)
        .map(|(i, _)| i)
        .collect()
}
