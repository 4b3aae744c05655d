//! `nc1` and `memcalc` commands.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::linalg::SolveMethod;
use crate::nc1::{memory_requirements, nc1_exact, nc1_hutchinson, HutchinsonOptions, Nc1Report, ProbeDist};

use super::{emit_json, resolve, resolve_manifest, Common, Provenance};

#[derive(Args, Debug)]
pub(crate) struct Nc1Args {
    /// Dataset manifest (or directory with --split).
    #[arg(long)]
    manifest: PathBuf,
    /// Split stem when --manifest is a directory; recorded in the report.
    #[arg(long)]
    split: Option<String>,
    /// "hutchinson" (default) or "exact".
    #[arg(long)]
    mode: Option<String>,
    /// Probe count K.
    #[arg(long)]
    probes: Option<usize>,
    /// "rademacher" (default) or "gaussian".
    #[arg(long)]
    dist: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// "gram" (default) or "iterative".
    #[arg(long)]
    solver: Option<String>,
    /// Relative tolerance of the iterative solve.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// One data pass per probe instead of one blocked pass.
    #[arg(long, default_value_t = false)]
    sequential: bool,
    /// Report destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct Nc1Out<'a> {
    #[serde(flatten)]
    report: &'a Nc1Report<f64>,
    split: &'a str,
}

pub(crate) fn run_nc1(args: Nc1Args) -> Result<()> {
    let file = args.common.config_file()?;
    let mode = resolve(&args.mode, file.string("mode"), "hutchinson".into());
    let probes = resolve(&args.probes, file.usize("probes"), 10);
    let dist_name = resolve(&args.dist, file.string("dist"), "rademacher".into());
    let seed = resolve(&args.seed, file.u64("seed"), 0);
    let solver_name = resolve(&args.solver, file.string("solver"), "gram".into());
    let tol = resolve(&args.tol, file.f64("tol"), crate::linalg::DEFAULT_SOLVE_TOL);
    let max_iter = resolve(&args.max_iter, file.usize("max-iter"), 0);
    let split = args.split.clone().unwrap_or_default();

    let manifest = resolve_manifest(&args.manifest, args.split.as_deref())?;
    let dataset = load_dataset::<f64>(&manifest)?;

    let mut provenance = Provenance::new("nc1");
    provenance
        .set("manifest", manifest.display())
        .set("mode", &mode)
        .set("split", &split);

    let report = match mode.as_str() {
        "exact" => nc1_exact(&dataset)?,
        "hutchinson" => {
            let dist = match dist_name.as_str() {
                "rademacher" => ProbeDist::Rademacher,
                "gaussian" => ProbeDist::Gaussian,
                other => {
                    return Err(Error::InvalidArg(format!(
                        "unknown probe distribution {other:?}"
                    )))
                }
            };
            let method = match solver_name.as_str() {
                "gram" => SolveMethod::GramExact,
                "iterative" => SolveMethod::Iterative,
                other => return Err(Error::InvalidArg(format!("unknown solver {other:?}"))),
            };
            provenance
                .set("probes", probes)
                .set("dist", &dist_name)
                .set("seed", seed)
                .set("solver", &solver_name)
                .set("tol", tol)
                .set("max-iter", max_iter)
                .set("sequential", args.sequential);
            let opts = HutchinsonOptions {
                probes,
                dist,
                seed,
                method,
                tol,
                max_iter,
                block: !args.sequential,
            };
            let report = nc1_hutchinson(&dataset, &opts)?;
            if let Some(diag) = &report.solver {
                if diag.converged < diag.solves {
                    return Err(Error::SolverDidNotConverge {
                        residual: diag.max_residual,
                        iterations: diag.max_iterations,
                    });
                }
            }
            report
        }
        other => {
            return Err(Error::InvalidArg(format!(
                "unknown mode {other:?}; expected exact or hutchinson"
            )))
        }
    };

    emit_json(
        &Nc1Out {
            report: &report,
            split: &split,
        },
        &provenance,
        args.out.as_deref(),
    )
}

#[derive(Args, Debug)]
pub(crate) struct MemcalcArgs {
    /// Feature dimension.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

pub(crate) fn run_memcalc(args: MemcalcArgs) -> Result<()> {
    let file = args.common.config_file()?;
    let n = resolve(&args.n, file.u64("n"), 0);
    if n == 0 {
        return Err(Error::InvalidArg("--n must be at least 1".into()));
    }
    let estimate = memory_requirements(n);
    let mut provenance = Provenance::new("memcalc");
    provenance.set("n", n);
    emit_json(&estimate, &provenance, args.out.as_deref())
}
