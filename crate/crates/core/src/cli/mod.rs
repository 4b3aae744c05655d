//! Batch command-line front end.
//!
//! Subcommands: `synth`, `nc1`, `memcalc`, `llr`, `balance`, `sweep`,
//! `margin`, `svm-err`, `eval`. Outputs are machine-readable JSON or
//! schema-versioned CSV with an embedded provenance block; identical
//! flags and seeds produce byte-identical files. Exit codes: 0 success,
//! 2 input validation, 3 numerical failure (a JSON error object goes to
//! stderr).
//!
//! `COLLAPSE_LAB_THREADS` caps worker-pool parallelism; `--deterministic`
//! forces sequential execution.

mod analyze;
mod config;
mod data;
mod sweep;
mod train;

pub use sweep::{
    ratio_correlation_summary, run_sweep, PearsonRow, SweepAggregate, SweepOptions, SweepResult,
    SweepRow, SweepSource,
};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, ErrorKind};

pub(crate) use config::{
    emit_csv, emit_json, fmt_f64, parse_list, resolve, resolve_manifest, ConfigFile, Provenance,
};

#[derive(Parser)]
#[command(
    name = "collapse-lab",
    version,
    about = "Collapse diagnostics and last-layer retraining on embedding datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub(crate) struct Common {
    /// TOML file with key=value defaults for any long flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap worker-pool width (also via COLLAPSE_LAB_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Force sequential execution for bit-stable accumulation.
    #[arg(long, global = true, default_value_t = false)]
    deterministic: bool,
}

impl Common {
    pub(crate) fn config_file(&self) -> crate::error::Result<ConfigFile> {
        ConfigFile::load(self.config.as_deref())
    }

    /// Worker-pool width: `--deterministic` wins, then `--threads`, then
    /// the environment cap, then the rayon default.
    pub(crate) fn pool_width(&self) -> Option<usize> {
        if self.deterministic {
            return Some(1);
        }
        if let Some(t) = self.threads {
            return Some(t.max(1));
        }
        std::env::var("COLLAPSE_LAB_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .map(|t| t.max(1))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding dataset and write its manifest.
    Synth(data::SynthArgs),
    /// Compute the collapse metric, exactly or by stochastic estimate.
    Nc1(analyze::Nc1Args),
    /// Memory requirements of exact vs streaming metric computation.
    Memcalc(analyze::MemcalcArgs),
    /// Retrain the last layer on a held-out set and evaluate it.
    Llr(train::LlrArgs),
    /// Emit a balancing plan for a dataset.
    Balance(data::BalanceArgs),
    /// Factorial group-ratio sweep with correlation summary.
    Sweep(sweep::SweepArgs),
    /// Per-group minimum margins against test accuracy.
    Margin(train::MarginArgs),
    /// Directional-error trace of gradient descent toward the SVM.
    SvmErr(train::SvmErrArgs),
    /// Evaluate a saved classifier on a dataset.
    Eval(train::EvalArgs),
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/usage; map parse errors to 2
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Synth(args) => data::run_synth(args),
        Command::Nc1(args) => analyze::run_nc1(args),
        Command::Memcalc(args) => analyze::run_memcalc(args),
        Command::Llr(args) => train::run_llr(args),
        Command::Balance(args) => data::run_balance(args),
        Command::Sweep(args) => sweep::run_sweep_cmd(args),
        Command::Margin(args) => train::run_margin(args),
        Command::SvmErr(args) => train::run_svm_err(args),
        Command::Eval(args) => train::run_eval(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let kind = match e.kind() {
                ErrorKind::Validation => "validation",
                ErrorKind::Numerical => "numerical",
            };
            let obj = serde_json::json!({
                "error": { "kind": kind, "message": e.to_string() }
            });
            eprintln!("{obj}");
            match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Numerical => 3,
            }
        }
    }
}

/// Run a closure inside a rayon pool of the requested width.
pub(crate) fn with_pool<R: Send>(
    width: Option<usize>,
    f: impl FnOnce() -> R + Send,
) -> crate::error::Result<R> {
    match width {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidArg(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
