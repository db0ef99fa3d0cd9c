mod commands;
mod error;
mod scenario;

use clap::{Args, Parser, Subcommand};
use error::{CliError, Result};
use fblq_core::blocklength::Task;
use fblq_core::par::Execution;
use scenario::{Quantity, Scenario};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

/// One-shot entropies, hierarchy checks and finite block length bounds.
#[derive(Parser)]
#[command(name = "fblq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relative entropy moments and conditional entropies as JSON.
    Entropy(Common),
    /// A smoothed one-shot quantity with its certificate.
    Oneshot {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        quantity: Option<Quantity>,
    },
    /// Runs the seeded inequality suite and writes one CSV row per check.
    Hierarchy(Common),
    /// Finite block length bound curves as CSV.
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Pauli source, p = 0.05, eps = 1e-6, n from 1e4 to 1e8.
        #[arg(long)]
        figure1: bool,
        #[arg(long)]
        task: Option<Task>,
        /// Exact binomial bounds (extraction, two-valued llr).
        #[arg(long)]
        exact: bool,
    },
    /// Builds the direct protocol and reports its achieved error.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        eta: Option<f64>,
        /// Monte Carlo samples for the compression error.
        #[arg(long)]
        samples: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML or JSON scenario file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    n_min: Option<u64>,
    #[arg(long)]
    n_max: Option<u64>,
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the worker pool.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        let mut s = match &self.scenario {
            Some(path) => Scenario::load(path)?,
            None => Scenario::default(),
        };
        let p = &mut s.params;
        p.epsilon = self.epsilon.or(p.epsilon);
        p.seed = self.seed.or(p.seed);
        if self.n_min.is_some() || self.n_max.is_some() {
            p.n = None;
            p.n_min = self.n_min.or(p.n_min);
            p.n_max = self.n_max.or(p.n_max);
        }
        p.n_points = self.n_points.or(p.n_points);
        Ok(s)
    }

    fn exec(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

fn run(cli: Cli) -> Result<(commands::Output, Option<PathBuf>)> {
    let (out, common) = match &cli.command {
        Command::Entropy(c) => (commands::entropy(&c.scenario()?)?, c),
        Command::Oneshot { common, quantity } => {
            let mut s = common.scenario()?;
            s.params.quantity = quantity.or(s.params.quantity);
            (commands::oneshot(&s)?, common)
        }
        Command::Hierarchy(c) => {
            let mut s = c.scenario()?;
            if let (Some(seed), Some(inst)) = (c.seed, s.suite.as_mut().and_then(|x| x.instance.as_mut())) {
                inst.seed = seed;
            }
            (commands::hierarchy(&s, c.exec())?, c)
        }
        Command::Bounds {
            common,
            figure1,
            task,
            exact,
        } => {
            let mut s = common.scenario()?;
            s.params.task = task.or(s.params.task);
            if *exact {
                s.params.exact = Some(true);
            }
            (commands::bounds(&s, *figure1, common.exec())?, common)
        }
        Command::Simulate {
            common,
            task,
            eta,
            samples,
        } => {
            let mut s = common.scenario()?;
            s.params.task = task.or(s.params.task);
            s.params.eta = eta.or(s.params.eta);
            s.params.samples = samples.or(s.params.samples);
            (commands::simulate(&s)?, common)
        }
    };
    Ok((out, common.out.clone()))
}

fn emit(text: &str, path: Option<&PathBuf>) -> Result<()> {
    let io = |source, path: String| CliError::Io { path, source };
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io(e, p.display().to_string())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| io(e, "stdout".into()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = run(cli).and_then(|(out, path)| {
        emit(&out.text, path.as_ref())?;
        if let Some(s) = &out.summary {
            eprintln!("{s}");
        }
        out.failure.map_or(Ok(()), Err)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
