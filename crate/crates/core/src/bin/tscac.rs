use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tscac::approx::SoftmaxPolicy;
use tscac::experiment::{self, Algorithm, ExperimentConfig, ReportMetric};
use tscac::{Error, Result};

#[derive(Parser)]
#[command(name = "tscac", version, about = "Two-stage constrained actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write behavior-policy session logs as JSONL.
    Simulate(Common),
    /// Train one algorithm for every seed and summarize it.
    Train(Common),
    /// TSCAC over a grid of multipliers.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated multipliers; defaults to the config grid.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// NCIS and DCG of a policy checkpoint on a session log.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Compare trained algorithms under an output directory.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Metric::Mc)]
        metric: Metric,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seeds; may be repeated.
    #[arg(long)]
    seed: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algorithm>,
    /// Broadcast to every auxiliary channel.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Mc,
    Ncis,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if !self.seed.is_empty() {
            cfg.seeds = self.seed.clone();
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(a) = self.algo {
            cfg.algorithm = a;
        }
        if let Some(l) = self.lambda {
            cfg = cfg.with_lambda(l)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn csv_out<T: serde::Serialize>(rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Csv {
            context: "stdout".into(),
            source: e,
        })?;
    }
    w.flush().map_err(|e| Error::io("stdout", e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = common.config()?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
            for &s in &cfg.seeds {
                let path = cfg.output_dir.join(format!("log_seed_{s}.jsonl"));
                let sessions = experiment::simulate_log(&cfg, s, &path)?;
                let steps: usize = sessions.iter().map(|x| x.transitions.len()).sum();
                println!("{}\t{} sessions\t{} steps", path.display(), sessions.len(), steps);
            }
        }
        Command::Train(common) => {
            let cfg = common.config()?;
            let rows = experiment::run_training(&cfg)?;
            csv_out(&rows)?;
        }
        Command::Sweep { common, grid } => {
            let cfg = common.config()?;
            let grid = if grid.is_empty() { cfg.sweep_grid.clone() } else { grid };
            let rows = experiment::run_sweep(&cfg, &grid)?;
            let names = cfg.response_spec.names().to_vec();
            let means = experiment::sweep_means(&rows, &grid, &names);
            let mut out = std::io::stdout().lock();
            let header: Vec<String> = names.iter().map(|n| format!("{n:>22}")).collect();
            let _ = writeln!(out, "{:>8}{}", "lambda", header.join(""));
            for (l, row) in grid.iter().zip(means) {
                let cells: Vec<String> = row.iter().map(|(m, s)| format!("{:>22}", format!("{m:.5}±{s:.5}"))).collect();
                let _ = writeln!(out, "{l:>8.0e}{}", cells.join(""));
            }
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                eprintln!("{failed} sweep rows failed; see sweep.csv");
            }
        }
        Command::Evaluate { common, log, policy } => {
            let cfg = common.config()?;
            let sessions = experiment::load_log(&log)?;
            let policy = SoftmaxPolicy::load(&policy)?;
            let rows = experiment::evaluate_log(&cfg, &policy, &sessions)?;
            if common.out.is_some() {
                experiment::write_atomic(&cfg.output_dir.join("evaluation.csv"), &experiment::csv_bytes(&rows)?)?;
            }
            csv_out(&rows)?;
        }
        Command::Report { common, metric } => {
            let cfg = common.config()?;
            let metric = match metric {
                Metric::Mc => ReportMetric::McValue,
                Metric::Ncis => ReportMetric::Ncis,
            };
            let report = experiment::build_report(&cfg, &cfg.output_dir, metric)?;
            report.save_csv(&cfg.output_dir.join("report.csv"))?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn error_line(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            error_line("usage", e.to_string().lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_line(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
