//! Vector-reward CMDP records: response channels, transitions, sessions and
//! the JSONL session log they are exchanged in.
//!
//! Channels are indexed from 0; channel 0 is the main response and channels
//! `1..m` are the auxiliary (constrained) responses.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    Dense,
    Sparse,
}

/// The `m` response channels of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawResponseSpec")]
pub struct ResponseSpec {
    names: Vec<String>,
    discounts: Vec<f64>,
    sparsity: Vec<Sparsity>,
    /// Lower bounds `C_i` for channels `1..m`. Reporting only.
    constraints: Vec<Option<f64>>,
}

#[derive(Deserialize)]
struct RawResponseSpec {
    names: Vec<String>,
    discounts: Vec<f64>,
    sparsity: Vec<Sparsity>,
    #[serde(default)]
    constraints: Option<Vec<Option<f64>>>,
}

impl TryFrom<RawResponseSpec> for ResponseSpec {
    type Error = Error;

    fn try_from(raw: RawResponseSpec) -> Result<Self> {
        let m = raw.names.len();
        let constraints = raw.constraints.unwrap_or_else(|| vec![None; m.saturating_sub(1)]);
        ResponseSpec::new(raw.names, raw.discounts, raw.sparsity, constraints)
    }
}

impl ResponseSpec {
    pub fn new(
        names: Vec<String>,
        discounts: Vec<f64>,
        sparsity: Vec<Sparsity>,
        constraints: Vec<Option<f64>>,
    ) -> Result<Self> {
        let m = names.len();
        if m < 2 {
            return Err(Error::config("response_spec.names", "need at least 2 channels"));
        }
        check_len("response_spec.discounts", m, discounts.len())?;
        check_len("response_spec.sparsity", m, sparsity.len())?;
        check_len("response_spec.constraints", m - 1, constraints.len())?;
        if let Some((i, g)) = discounts
            .iter()
            .enumerate()
            .find(|(_, g)| !(**g > 0.0 && **g < 1.0))
        {
            return Err(Error::config(
                format!("response_spec.discounts[{i}]"),
                format!("discount {g} must lie strictly inside (0, 1)"),
            ));
        }
        Ok(ResponseSpec {
            names,
            discounts,
            sparsity,
            constraints,
        })
    }

    /// Same discount on every channel, main channel dense, the rest sparse.
    pub fn uniform(names: &[&str], discount: f64) -> Result<Self> {
        let m = names.len();
        let sparsity = (0..m)
            .map(|i| if i == 0 { Sparsity::Dense } else { Sparsity::Sparse })
            .collect();
        ResponseSpec::new(
            names.iter().map(|s| s.to_string()).collect(),
            vec![discount; m],
            sparsity,
            vec![None; m.saturating_sub(1)],
        )
    }

    pub fn m(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn discounts(&self) -> &[f64] {
        &self.discounts
    }

    pub fn discount(&self, channel: usize) -> Result<f64> {
        self.check_channel(channel)?;
        Ok(self.discounts[channel])
    }

    pub fn sparsity(&self) -> &[Sparsity] {
        &self.sparsity
    }

    pub fn constraints(&self) -> &[Option<f64>] {
        &self.constraints
    }

    pub fn check_channel(&self, channel: usize) -> Result<()> {
        if channel < self.m() {
            Ok(())
        } else {
            Err(Error::Index {
                what: "channel",
                index: channel,
                len: self.m(),
            })
        }
    }
}

/// One interaction step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: Vec<f64>,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    /// Probability the acting (logging) policy gave to `action`.
    pub behavior_prob: f64,
}

impl Transition {
    pub fn validate(&self, m: usize) -> Result<()> {
        check_len("transition.reward", m, self.reward.len())?;
        check_behavior_prob(self.behavior_prob)
    }
}

pub(crate) fn check_behavior_prob(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Data(format!("behavior_prob {p} outside (0, 1]")))
    }
}

/// One user's episode, from app open to app leave.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub user_id: String,
    /// Seed that generated the session; 0 for externally logged data.
    pub seed: u64,
    pub transitions: Vec<Transition>,
}

impl Session {
    pub fn new(user_id: impl Into<String>, seed: u64, transitions: Vec<Transition>) -> Result<Self> {
        let session = Session {
            user_id: user_id.into(),
            seed,
            transitions,
        };
        session.check_terminal_flags()?;
        Ok(session)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    fn check_terminal_flags(&self) -> Result<()> {
        let n = self.transitions.len();
        if n == 0 {
            return Err(Error::Data(format!("session {} has no transitions", self.user_id)));
        }
        for (t, tr) in self.transitions.iter().enumerate() {
            if tr.terminal != (t + 1 == n) {
                return Err(Error::Data(format!(
                    "session {}: terminal flag at step {t} must be {}",
                    self.user_id,
                    t + 1 == n
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        self.check_terminal_flags()?;
        self.transitions.iter().try_for_each(|t| t.validate(m))
    }
}

/// Vector discounted return `R_t` from 0-based `step` to the end of the session.
///
/// Component `i` is `sum_{k >= step} gamma_i^(k - step) * r_i(k)`.
pub fn discounted_return(session: &Session, spec: &ResponseSpec, step: usize) -> Result<Vec<f64>> {
    let n = session.len();
    if step >= n {
        return Err(Error::Index {
            what: "session step",
            index: step,
            len: n,
        });
    }
    let m = spec.m();
    let mut ret = vec![0.0; m];
    for tr in session.transitions[step..].iter().rev() {
        check_len("transition.reward", m, tr.reward.len())?;
        for ((acc, r), g) in ret.iter_mut().zip(&tr.reward).zip(spec.discounts()) {
            *acc = r + g * *acc;
        }
    }
    Ok(ret)
}

/// `R_t` for every step of the session, by the backward recursion
/// `R_t = r_t + Gamma * R_{t+1}`.
pub fn returns_to_go(session: &Session, spec: &ResponseSpec) -> Result<Vec<Vec<f64>>> {
    let m = spec.m();
    let mut out = vec![vec![0.0; m]; session.len()];
    let mut next = vec![0.0; m];
    for (t, tr) in session.transitions.iter().enumerate().rev() {
        check_len("transition.reward", m, tr.reward.len())?;
        for i in 0..m {
            next[i] = tr.reward[i] + spec.discounts()[i] * next[i];
        }
        out[t].clone_from(&next);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSONL session log
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TransitionRecord {
    state: Vec<f64>,
    action: usize,
    reward: Vec<f64>,
    behavior_prob: f64,
    terminal: bool,
}

#[derive(Serialize, Deserialize)]
struct SessionRecord {
    user_id: String,
    transitions: Vec<TransitionRecord>,
}

/// One JSONL line for a session. `next_state` and `seed` are not part of the
/// log format.
pub fn session_to_json_line(session: &Session) -> Result<String> {
    let record = SessionRecord {
        user_id: session.user_id.clone(),
        transitions: session
            .transitions
            .iter()
            .map(|t| TransitionRecord {
                state: t.state.clone(),
                action: t.action,
                reward: t.reward.clone(),
                behavior_prob: t.behavior_prob,
                terminal: t.terminal,
            })
            .collect(),
    };
    serde_json::to_string(&record).map_err(|source| Error::Json {
        context: format!("encoding session {}", session.user_id),
        source,
    })
}

/// Parse one JSONL line. `next_state` is rebuilt from the following step's
/// state; the terminal step reuses its own state (it is never bootstrapped).
pub fn session_from_json_line(line: &str) -> Result<Session> {
    let record: SessionRecord = serde_json::from_str(line).map_err(|source| Error::Json {
        context: "decoding session line".into(),
        source,
    })?;
    let n = record.transitions.len();
    let states: Vec<Vec<f64>> = record.transitions.iter().map(|t| t.state.clone()).collect();
    let transitions = record
        .transitions
        .into_iter()
        .enumerate()
        .map(|(t, tr)| {
            check_behavior_prob(tr.behavior_prob)?;
            let next_state = if t + 1 < n {
                states[t + 1].clone()
            } else {
                tr.state.clone()
            };
            Ok(Transition {
                state: tr.state,
                action: tr.action,
                reward: tr.reward,
                next_state,
                terminal: tr.terminal,
                behavior_prob: tr.behavior_prob,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Session::new(record.user_id, 0, transitions)
}

pub fn write_sessions(path: &Path, sessions: &[Session]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in sessions {
        let line = session_to_json_line(s)?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sessions(path: &Path) -> Result<Vec<Session>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sessions = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let session = session_from_json_line(&line).map_err(|e| match e {
            Error::Json { source, .. } => Error::Json {
                context: format!("{}:{}", path.display(), lineno + 1),
                source,
            },
            other => other,
        })?;
        sessions.push(session);
    }
    Ok(sessions)
}

pub fn flatten(sessions: &[Session]) -> Vec<Transition> {
    sessions.iter().flat_map(|s| s.transitions.iter().cloned()).collect()
}
