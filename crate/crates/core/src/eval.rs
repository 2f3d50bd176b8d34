//! Offline evaluation over logged sessions: NCIS, DCG and Monte-Carlo
//! session returns, plus the comparison report.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::approx::StochasticPolicy;
use crate::cmdp::{check_behavior_prob, discounted_return, ResponseSpec, Session};
use crate::error::{Error, Result};

pub const DEFAULT_CAP: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub cap_c: f64,
    pub dcg_enabled: bool,
    /// Fresh on-policy sessions per seed for Monte-Carlo values.
    pub mc_sessions: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cap_c: DEFAULT_CAP,
            dcg_enabled: true,
            mc_sessions: 500,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cap_c > 0.0) {
            return Err(Error::config("eval.cap_c", "must be positive"));
        }
        if self.mc_sessions == 0 {
            return Err(Error::config("eval.mc_sessions", "must be at least 1"));
        }
        Ok(())
    }
}

/// Self-normalized capped estimate from precomputed ratios `pi / beta`.
pub fn ncis_from_ratios(ratios: &[f64], rewards: &[f64], cap_c: f64) -> Result<f64> {
    if !(cap_c > 0.0) {
        return Err(Error::config("cap_c", "must be positive"));
    }
    if ratios.len() != rewards.len() {
        return Err(Error::Shape {
            what: "ncis rewards",
            expected: ratios.len(),
            got: rewards.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (rho, r) in ratios.iter().zip(rewards) {
        if !(rho.is_finite() && *rho >= 0.0) {
            return Err(Error::Data(format!("importance ratio {rho} is not a finite nonnegative number")));
        }
        let w = rho.min(cap_c);
        num += w * r;
        den += w;
    }
    if den <= 0.0 {
        return Err(Error::DegenerateEvaluation(format!(
            "total importance weight is {den} over {} transitions",
            ratios.len()
        )));
    }
    Ok(num / den)
}

/// NCIS estimate of channel `channel`, summed over every logged transition.
pub fn ncis<P: StochasticPolicy + ?Sized>(
    policy: &P,
    sessions: &[Session],
    channel: usize,
    cap_c: f64,
) -> Result<f64> {
    Ok(ncis_all(policy, sessions, cap_c)?
        .get(channel)
        .copied()
        .ok_or(Error::Index {
            what: "channel",
            index: channel,
            len: sessions.first().map_or(0, |s| s.transitions[0].reward.len()),
        })?)
}

/// NCIS for every channel in one pass over the log.
pub fn ncis_all<P: StochasticPolicy + ?Sized>(policy: &P, sessions: &[Session], cap_c: f64) -> Result<Vec<f64>> {
    let mut ratios = Vec::new();
    let mut rewards: Vec<Vec<f64>> = Vec::new();
    for s in sessions {
        for tr in &s.transitions {
            check_behavior_prob(tr.behavior_prob)?;
            let probs = policy.action_probs(&tr.state)?;
            let pi = *probs.get(tr.action).ok_or(Error::Index {
                what: "logged action",
                index: tr.action,
                len: probs.len(),
            })?;
            if rewards.is_empty() {
                rewards = vec![Vec::new(); tr.reward.len()];
            }
            if tr.reward.len() != rewards.len() {
                return Err(Error::Shape {
                    what: "transition.reward",
                    expected: rewards.len(),
                    got: tr.reward.len(),
                });
            }
            ratios.push(pi / tr.behavior_prob);
            for (col, r) in rewards.iter_mut().zip(&tr.reward) {
                col.push(*r);
            }
        }
    }
    if ratios.is_empty() {
        return Err(Error::DegenerateEvaluation("log holds no transitions".into()));
    }
    rewards.iter().map(|r| ncis_from_ratios(&ratios, r, cap_c)).collect()
}

/// DCG of one list of rewards in the given order.
pub fn dcg_of_order(rewards: &[f64]) -> f64 {
    rewards
        .iter()
        .enumerate()
        .map(|(i, r)| r / ((i + 2) as f64).log2())
        .sum()
}

/// Mean over sessions of the DCG obtained by re-ranking each session's
/// logged items by `policy(a | s)` descending. Ties keep logged order.
pub fn dcg<P: StochasticPolicy + ?Sized>(policy: &P, sessions: &[Session], channel: usize) -> Result<f64> {
    if sessions.is_empty() {
        return Err(Error::InsufficientData("dcg needs at least one session".into()));
    }
    let mut total = 0.0;
    for s in sessions {
        let mut scored = Vec::with_capacity(s.len());
        for tr in &s.transitions {
            let probs = policy.action_probs(&tr.state)?;
            let p = *probs.get(tr.action).ok_or(Error::Index {
                what: "logged action",
                index: tr.action,
                len: probs.len(),
            })?;
            let r = *tr.reward.get(channel).ok_or(Error::Index {
                what: "channel",
                index: channel,
                len: tr.reward.len(),
            })?;
            scored.push((p, r));
        }
        // stable sort keeps logged order on ties
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let ordered: Vec<f64> = scored.iter().map(|x| x.1).collect();
        total += dcg_of_order(&ordered);
    }
    Ok(total / sessions.len() as f64)
}

/// Per-channel mean of the session return from the first step.
pub fn monte_carlo_values(sessions: &[Session], spec: &ResponseSpec) -> Result<Vec<f64>> {
    if sessions.is_empty() {
        return Err(Error::InsufficientData("no sessions to average".into()));
    }
    let mut acc = vec![0.0; spec.m()];
    for s in sessions {
        for (a, r) in acc.iter_mut().zip(discounted_return(s, spec, 0)?) {
            *a += r;
        }
    }
    let n = sessions.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelColumn {
    pub name: String,
    #[serde(default)]
    pub lower_is_better: bool,
}

impl ChannelColumn {
    pub fn new(name: impl Into<String>, lower_is_better: bool) -> Self {
        ChannelColumn {
            name: name.into(),
            lower_is_better,
        }
    }

    /// Header label, with `↓` on lower-is-better channels.
    pub fn label(&self) -> String {
        if self.lower_is_better {
            format!("{}↓", self.name)
        } else {
            self.name.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmScores {
    pub algorithm: String,
    pub scores: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gap {
    Percent(f64),
    /// Baseline score was zero, so only `score - baseline` is reported.
    Absolute(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportCell {
    pub algorithm: String,
    pub channel: ChannelColumn,
    pub score: f64,
    pub gap: Gap,
    pub best: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub baseline: String,
    pub channels: Vec<ChannelColumn>,
    pub algorithms: Vec<String>,
    /// Row-major: algorithm, then channel.
    pub cells: Vec<ReportCell>,
}

pub fn percent_gap(score: f64, baseline: f64) -> Gap {
    if baseline == 0.0 {
        Gap::Absolute(score - baseline)
    } else {
        Gap::Percent(100.0 * (score - baseline) / baseline.abs())
    }
}

pub fn compare_report(results: &[AlgorithmScores], channels: &[ChannelColumn], baseline: &str) -> Result<Report> {
    let base = results
        .iter()
        .find(|r| r.algorithm == baseline)
        .ok_or_else(|| Error::Data(format!("baseline `{baseline}` missing from results")))?;
    for r in results {
        if r.scores.len() != channels.len() {
            return Err(Error::Shape {
                what: "algorithm scores",
                expected: channels.len(),
                got: r.scores.len(),
            });
        }
    }
    let best: Vec<f64> = channels
        .iter()
        .enumerate()
        .map(|(c, col)| {
            let it = results.iter().map(|r| r.scores[c]);
            if col.lower_is_better {
                it.fold(f64::INFINITY, f64::min)
            } else {
                it.fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect();
    let mut cells = Vec::with_capacity(results.len() * channels.len());
    for r in results {
        for (c, col) in channels.iter().enumerate() {
            cells.push(ReportCell {
                algorithm: r.algorithm.clone(),
                channel: col.clone(),
                score: r.scores[c],
                gap: percent_gap(r.scores[c], base.scores[c]),
                best: r.scores[c] == best[c],
            });
        }
    }
    Ok(Report {
        baseline: baseline.to_string(),
        channels: channels.to_vec(),
        algorithms: results.iter().map(|r| r.algorithm.clone()).collect(),
        cells,
    })
}

impl Report {
    pub fn cell(&self, algorithm: &str, channel: &str) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.algorithm == algorithm && c.channel.name == channel)
    }

    /// CSV with columns `algorithm,channel,score,pct_gap,best_flag,gap_kind`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let ctx = |e| Error::Csv {
            context: "writing report".into(),
            source: e,
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["algorithm", "channel", "score", "pct_gap", "best_flag", "gap_kind"])
            .map_err(ctx)?;
        for c in &self.cells {
            let (gap, kind) = match c.gap {
                Gap::Percent(p) => (p, "pct"),
                Gap::Absolute(a) => (a, "abs"),
            };
            w.write_record([
                c.algorithm.clone(),
                c.channel.label(),
                format!("{}", c.score),
                format!("{gap}"),
                if c.best { "1" } else { "0" }.to_string(),
                kind.to_string(),
            ])
            .map_err(ctx)?;
        }
        w.flush().map_err(|e| Error::io("report csv", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Aligned text table. Best cells carry `*`; zero-baseline gaps show as
    /// `abs` differences.
    pub fn to_text(&self) -> String {
        let mut header = vec!["algorithm".to_string()];
        header.extend(self.channels.iter().map(|c| c.label()));
        let mut rows = vec![header];
        for a in &self.algorithms {
            let mut row = vec![a.clone()];
            for col in &self.channels {
                let c = self.cell(a, &col.name).expect("cell exists for every pair");
                let gap = match c.gap {
                    Gap::Percent(p) => format!("{p:+.2}%"),
                    Gap::Absolute(d) => format!("abs {d:+.4}"),
                };
                row.push(format!("{:.4} ({gap}){}", c.score, if c.best { " *" } else { "" }));
            }
            rows.push(row);
        }
        let ncol = rows[0].len();
        let widths: Vec<usize> = (0..ncol)
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        let _ = writeln!(out, "gaps relative to {}; DCG re-ranks logged items by policy probability", self.baseline);
        out
    }
}
