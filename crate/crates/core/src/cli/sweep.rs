//! Factorial group-ratio sweep.
//!
//! For every (erm_ratio, llr_ratio, seed) cell, a reference classifier is
//! trained on a training split at the ERM ratio and a retrained layer on
//! a held-out split at the LLR ratio; both are evaluated on a common
//! group-balanced test split. Splits come from the synthetic testbed (one
//! generation per cell) or from user manifests (ratio-subsampled per
//! cell). Cells run in a worker pool; all outputs are ordered by cell
//! index, so results are identical at any pool width.
//!
//! The correlation summary follows the ratio-averaging protocol: per LLR
//! ratio, the seed-mean ERM curve over ERM ratios is correlated with the
//! seed-mean LLR curve, and the defined coefficients are averaged.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{load_dataset, subsample_to_group_ratio, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::retrain::{evaluate, pearson, TrainConfig};
use crate::synth::{generate_spurious, GroupSizing, SpuriousSpec};

use super::train::{train_with_flags, ResolvedTrain, TrainFlags};
use super::{emit_csv, fmt_f64, parse_list, resolve, with_pool, Common, Provenance};

/// Where sweep cells get their data.
#[derive(Debug, Clone)]
pub enum SweepSource {
    /// Generate testbed datasets per cell at the cell's ratios.
    Synth { template: SpuriousSpec },
    /// Subsample the given splits to the cell's ratios.
    Manifests {
        train: PathBuf,
        heldout: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub erm_ratios: Vec<f64>,
    pub llr_ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub source: SweepSource,
    pub train: TrainConfig<f64>,
    /// Balancing applied to the retraining stage.
    pub balance: String,
    pub axis: String,
    pub pool_width: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            erm_ratios: vec![0.05],
            llr_ratios: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            seeds: vec![0, 1, 2],
            source: SweepSource::Synth {
                template: SpuriousSpec::testbed(1.0, 0),
            },
            train: TrainConfig {
                learning_rate: 0.01,
                steps: 1000,
                batch_size: 0,
                seed: 0,
            },
            balance: "none".into(),
            axis: "class".into(),
            pool_width: None,
        }
    }
}

/// One sweep cell: the ERM reference and the retrained layer side by side.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub erm_ratio: f64,
    pub llr_ratio: f64,
    pub method: String,
    pub seed: u64,
    pub status: String,
    pub erm_wga: Option<f64>,
    pub erm_aa: Option<f64>,
    pub llr_wga: Option<f64>,
    pub llr_aa: Option<f64>,
    pub llr_group_accuracy: Vec<Option<f64>>,
}

/// Seed-aggregated view of one (erm_ratio, llr_ratio) cell.
#[derive(Debug, Clone, Serialize)]
pub struct SweepAggregate {
    pub erm_ratio: f64,
    pub llr_ratio: f64,
    pub cells_ok: usize,
    pub mean_erm_wga: Option<f64>,
    pub std_erm_wga: Option<f64>,
    pub mean_llr_wga: Option<f64>,
    pub std_llr_wga: Option<f64>,
}

/// One correlation row; `llr_ratio` is `None` for the protocol average.
#[derive(Debug, Clone, Serialize)]
pub struct PearsonRow {
    pub llr_ratio: Option<f64>,
    pub pearson_r: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
    pub pearson: Vec<PearsonRow>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn cell_seed(seed: u64, role: u64, idx: usize) -> u64 {
    splitmix(splitmix(seed ^ (role << 56)) ^ idx as u64)
}

struct StageOutcome {
    wga: f64,
    aa: f64,
    group_acc: Vec<Option<f64>>,
}

fn run_stage(
    dataset: &EmbeddingDataset<f64>,
    test: &EmbeddingDataset<f64>,
    resolved: &ResolvedTrain,
) -> Result<StageOutcome> {
    let (clf, _) = train_with_flags(dataset, resolved)?;
    let report = evaluate(&clf, test)?;
    Ok(StageOutcome {
        wga: report.worst_group_accuracy,
        aa: report.average_accuracy,
        group_acc: report
            .per_group_accuracy
            .iter()
            .map(|a| a.as_ref().copied())
            .collect(),
    })
}

/// Run the factorial sweep. The ERM stage depends on (erm_ratio, seed)
/// and the retraining stage on (llr_ratio, seed); results are assembled
/// into the full grid with failed halves flagged per row.
pub fn run_sweep(opts: &SweepOptions) -> Result<SweepResult> {
    if opts.erm_ratios.is_empty() || opts.llr_ratios.is_empty() || opts.seeds.is_empty() {
        return Err(Error::InvalidArg(
            "sweep needs nonempty ratio and seed lists".into(),
        ));
    }
    for &r in opts.erm_ratios.iter().chain(&opts.llr_ratios) {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::InvalidArg(format!("ratio {r} not in (0, 1]")));
        }
    }
    let erm_plain = ResolvedTrain {
        balance: "none".into(),
        axis_name: "class".into(),
        afr_gamma: None,
        erm_checkpoint: None,
        cfg: opts.train.clone(),
    };
    let llr_resolved = ResolvedTrain {
        balance: opts.balance.clone(),
        axis_name: opts.axis.clone(),
        afr_gamma: None,
        erm_checkpoint: None,
        cfg: opts.train.clone(),
    };

    // source datasets for manifest mode, loaded once
    let manifest_data = match &opts.source {
        SweepSource::Manifests {
            train,
            heldout,
            test,
        } => Some((
            load_dataset::<f64>(train)?,
            load_dataset::<f64>(heldout)?,
            load_dataset::<f64>(test)?,
        )),
        SweepSource::Synth { .. } => None,
    };

    let make_split = |ratio: f64, role: u64, ratio_idx: usize, seed: u64| -> Result<EmbeddingDataset<f64>> {
        let derived = cell_seed(seed, role, ratio_idx);
        match (&opts.source, &manifest_data) {
            (SweepSource::Synth { template }, _) => {
                let majority = match template.sizing {
                    GroupSizing::Ratio { majority, .. } => majority,
                    GroupSizing::Counts { .. } => 500,
                };
                generate_spurious(&SpuriousSpec {
                    sizing: GroupSizing::Ratio { majority, ratio },
                    seed: derived,
                    ..template.clone()
                })
            }
            (SweepSource::Manifests { .. }, Some((train, heldout, test))) => match role {
                1 => subsample_to_group_ratio(train, ratio, derived),
                2 => subsample_to_group_ratio(heldout, ratio, derived),
                _ => Ok(test.clone()),
            },
            _ => unreachable!("manifest data loaded above"),
        }
    };

    let n_seeds = opts.seeds.len();
    let erm_jobs: Vec<(usize, usize)> = (0..opts.erm_ratios.len())
        .flat_map(|ri| (0..n_seeds).map(move |si| (ri, si)))
        .collect();
    let llr_jobs: Vec<(usize, usize)> = (0..opts.llr_ratios.len())
        .flat_map(|ri| (0..n_seeds).map(move |si| (ri, si)))
        .collect();

    let (erm_results, llr_results) = with_pool(opts.pool_width, || {
        let erm: Vec<std::result::Result<StageOutcome, String>> = erm_jobs
            .par_iter()
            .map(|&(ri, si)| {
                let seed = opts.seeds[si];
                let data = make_split(opts.erm_ratios[ri], 1, ri, seed)
                    .map_err(|e| e.to_string())?;
                let test = make_split(1.0, 3, 0, seed).map_err(|e| e.to_string())?;
                run_stage(&data, &test, &erm_plain).map_err(|e| e.to_string())
            })
            .collect();
        let llr: Vec<std::result::Result<StageOutcome, String>> = llr_jobs
            .par_iter()
            .map(|&(ri, si)| {
                let seed = opts.seeds[si];
                let data = make_split(opts.llr_ratios[ri], 2, ri, seed)
                    .map_err(|e| e.to_string())?;
                let test = make_split(1.0, 3, 0, seed).map_err(|e| e.to_string())?;
                run_stage(&data, &test, &llr_resolved).map_err(|e| e.to_string())
            })
            .collect();
        (erm, llr)
    })?;

    let method = if opts.balance == "none" {
        "none".to_string()
    } else {
        format!("{}-{}", opts.balance, opts.axis)
    };

    let mut rows = Vec::new();
    for (ei, &er) in opts.erm_ratios.iter().enumerate() {
        for (li, &lr) in opts.llr_ratios.iter().enumerate() {
            for (si, &seed) in opts.seeds.iter().enumerate() {
                let erm = &erm_results[ei * n_seeds + si];
                let llr = &llr_results[li * n_seeds + si];
                let mut status = String::from("ok");
                if let Err(e) = erm {
                    status = format!("erm_error:{}", e.replace([',', '\n'], ";"));
                }
                if let Err(e) = llr {
                    let msg = format!("llr_error:{}", e.replace([',', '\n'], ";"));
                    status = if status == "ok" {
                        msg
                    } else {
                        format!("{status}|{msg}")
                    };
                }
                rows.push(SweepRow {
                    erm_ratio: er,
                    llr_ratio: lr,
                    method: method.clone(),
                    seed,
                    status,
                    erm_wga: erm.as_ref().ok().map(|o| o.wga),
                    erm_aa: erm.as_ref().ok().map(|o| o.aa),
                    llr_wga: llr.as_ref().ok().map(|o| o.wga),
                    llr_aa: llr.as_ref().ok().map(|o| o.aa),
                    llr_group_accuracy: llr
                        .as_ref()
                        .ok()
                        .map(|o| o.group_acc.clone())
                        .unwrap_or_default(),
                });
            }
        }
    }

    let mean_std = |vals: &[f64]| -> (Option<f64>, Option<f64>) {
        if vals.is_empty() {
            return (None, None);
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let std = if vals.len() > 1 {
            Some(
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (vals.len() - 1) as f64)
                    .sqrt(),
            )
        } else {
            Some(0.0)
        };
        (Some(mean), std)
    };

    let mut aggregates = Vec::new();
    for (ei, &er) in opts.erm_ratios.iter().enumerate() {
        for (li, &lr) in opts.llr_ratios.iter().enumerate() {
            let erm_vals: Vec<f64> = (0..n_seeds)
                .filter_map(|si| erm_results[ei * n_seeds + si].as_ref().ok().map(|o| o.wga))
                .collect();
            let llr_vals: Vec<f64> = (0..n_seeds)
                .filter_map(|si| llr_results[li * n_seeds + si].as_ref().ok().map(|o| o.wga))
                .collect();
            let cells_ok = (0..n_seeds)
                .filter(|&si| {
                    erm_results[ei * n_seeds + si].is_ok()
                        && llr_results[li * n_seeds + si].is_ok()
                })
                .count();
            let (mean_erm, std_erm) = mean_std(&erm_vals);
            let (mean_llr, std_llr) = mean_std(&llr_vals);
            aggregates.push(SweepAggregate {
                erm_ratio: er,
                llr_ratio: lr,
                cells_ok,
                mean_erm_wga: mean_erm,
                std_erm_wga: std_erm,
                mean_llr_wga: mean_llr,
                std_llr_wga: std_llr,
            });
        }
    }

    // protocol input: seed-mean curves over the erm-ratio axis
    let erm_curve: Vec<Option<f64>> = (0..opts.erm_ratios.len())
        .map(|ei| {
            let vals: Vec<f64> = (0..n_seeds)
                .filter_map(|si| erm_results[ei * n_seeds + si].as_ref().ok().map(|o| o.wga))
                .collect();
            mean_std(&vals).0
        })
        .collect();
    let llr_grid: Vec<Vec<Option<f64>>> = (0..opts.llr_ratios.len())
        .map(|li| {
            let cell = {
                let vals: Vec<f64> = (0..n_seeds)
                    .filter_map(|si| {
                        llr_results[li * n_seeds + si].as_ref().ok().map(|o| o.wga)
                    })
                    .collect();
                mean_std(&vals).0
            };
            // the retraining stage is independent of the erm ratio here,
            // so the mean repeats along that axis
            vec![cell; opts.erm_ratios.len()]
        })
        .collect();
    let pearson = ratio_correlation_summary(&opts.llr_ratios, &erm_curve, &llr_grid);

    Ok(SweepResult {
        rows,
        aggregates,
        pearson,
    })
}

/// The ratio-averaging correlation protocol: one coefficient per LLR
/// ratio (ERM curve vs that row of the LLR grid, across ERM ratios),
/// then the average over defined coefficients.
pub fn ratio_correlation_summary(
    llr_ratios: &[f64],
    erm_curve: &[Option<f64>],
    llr_grid: &[Vec<Option<f64>>],
) -> Vec<PearsonRow> {
    let mut out = Vec::new();
    let mut defined = Vec::new();
    for (li, &lr) in llr_ratios.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = erm_curve
            .iter()
            .zip(&llr_grid[li])
            .filter_map(|(e, l)| match (e, l) {
                (Some(e), Some(l)) => Some((*e, *l)),
                _ => None,
            })
            .collect();
        let (r, status) = if pairs.len() < 2 {
            (None, "undefined:needs at least two erm ratios".to_string())
        } else {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            match pearson(&xs, &ys) {
                Ok(r) => (Some(r), "ok".to_string()),
                Err(e) => (None, format!("undefined:{}", e.to_string().replace(',', ";"))),
            }
        };
        if let Some(r) = r {
            defined.push(r);
        }
        out.push(PearsonRow {
            llr_ratio: Some(lr),
            pearson_r: r,
            status,
        });
    }
    let average = if defined.is_empty() {
        PearsonRow {
            llr_ratio: None,
            pearson_r: None,
            status: "undefined:no defined coefficients".into(),
        }
    } else {
        PearsonRow {
            llr_ratio: None,
            pearson_r: Some(defined.iter().sum::<f64>() / defined.len() as f64),
            status: "ok".into(),
        }
    };
    out.push(average);
    out
}

#[derive(Args, Debug)]
pub(crate) struct SweepArgs {
    /// Held-out (retraining) group ratios, comma separated.
    #[arg(long)]
    llr_ratios: Option<String>,
    /// Reference-stage group ratios; a single reference by default.
    #[arg(long)]
    erm_ratios: Option<String>,
    /// Seeds, comma separated.
    #[arg(long)]
    seeds: Option<String>,
    /// Manifest mode: training split to subsample per cell.
    #[arg(long, requires = "heldout", requires = "test")]
    train_manifest: Option<PathBuf>,
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Synth mode testbed overrides.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    majority: Option<usize>,
    #[arg(long)]
    core: Option<f64>,
    #[arg(long)]
    spurious: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[command(flatten)]
    train: TrainFlags,
    /// Tidy per-cell rows CSV.
    #[arg(long)]
    out: PathBuf,
    /// Aggregate/correlation summary CSV (default: <out>.summary.csv).
    #[arg(long)]
    summary_out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

pub(crate) fn run_sweep_cmd(args: SweepArgs) -> Result<()> {
    let file = args.common.config_file()?;
    let llr_ratios: Vec<f64> = parse_list(
        &resolve(
            &args.llr_ratios,
            file.string("llr-ratios"),
            "0.05,0.1,0.2,0.5,1.0".into(),
        ),
        "ratio",
    )?;
    let erm_ratios: Vec<f64> = parse_list(
        &resolve(&args.erm_ratios, file.string("erm-ratios"), "0.05".into()),
        "ratio",
    )?;
    let seeds: Vec<u64> = parse_list(
        &resolve(&args.seeds, file.string("seeds"), "0,1,2".into()),
        "seed",
    )?;
    let resolved = args.train.resolve(&file)?;
    if resolved.afr_gamma.is_some() {
        return Err(Error::InvalidArg(
            "loss-based weighting is not part of the ratio sweep".into(),
        ));
    }

    let source = match (&args.train_manifest, &args.heldout, &args.test) {
        (Some(train), Some(heldout), Some(test)) => SweepSource::Manifests {
            train: train.clone(),
            heldout: heldout.clone(),
            test: test.clone(),
        },
        (None, None, None) => {
            let mut template = SpuriousSpec::testbed(1.0, 0);
            template.dim = resolve(&args.dim, file.usize("dim"), template.dim);
            template.core_strength = resolve(&args.core, file.f64("core"), template.core_strength);
            template.spurious_strength =
                resolve(&args.spurious, file.f64("spurious"), template.spurious_strength);
            template.noise = resolve(&args.sigma, file.f64("sigma"), template.noise);
            if let Some(majority) = args.majority.or(file.usize("majority")) {
                template.sizing = GroupSizing::Ratio {
                    majority,
                    ratio: 1.0,
                };
            }
            SweepSource::Synth { template }
        }
        _ => {
            return Err(Error::InvalidArg(
                "manifest mode needs --train-manifest, --heldout and --test together".into(),
            ))
        }
    };

    let opts = SweepOptions {
        erm_ratios,
        llr_ratios,
        seeds,
        source,
        train: resolved.cfg.clone(),
        balance: resolved.balance.clone(),
        axis: resolved.axis_name.clone(),
        pool_width: args.common.pool_width(),
    };
    let result = run_sweep(&opts)?;

    let mut provenance = Provenance::new("sweep");
    provenance
        .set(
            "llr-ratios",
            opts.llr_ratios
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join(","),
        )
        .set(
            "erm-ratios",
            opts.erm_ratios
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join(","),
        )
        .set(
            "seeds",
            opts.seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        )
        .set("balance", &opts.balance)
        .set("axis", &opts.axis)
        .set("lr", opts.train.learning_rate)
        .set("steps", opts.train.steps)
        .set("batch", opts.train.batch_size)
        .set(
            "source",
            match &opts.source {
                SweepSource::Synth { .. } => "synth".to_string(),
                SweepSource::Manifests { train, .. } => format!("manifests:{}", train.display()),
            },
        );

    let opt_col = |v: &Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let rows: Vec<String> = result
        .rows
        .iter()
        .map(|r| {
            let accs = r
                .llr_group_accuracy
                .iter()
                .map(|a| a.map(fmt_f64).unwrap_or_default())
                .collect::<Vec<_>>()
                .join(";");
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(r.erm_ratio),
                fmt_f64(r.llr_ratio),
                r.method,
                r.seed,
                r.status,
                opt_col(&r.erm_wga),
                opt_col(&r.erm_aa),
                opt_col(&r.llr_wga),
                opt_col(&r.llr_aa),
                accs
            )
        })
        .collect();
    emit_csv(
        &args.out,
        &provenance,
        "erm_ratio,llr_ratio,method,seed,status,erm_wga,erm_aa,llr_wga,llr_aa,llr_group_accs",
        &rows,
    )?;

    let summary_path = args.summary_out.clone().unwrap_or_else(|| {
        let mut p = args.out.clone();
        p.set_extension("summary.csv");
        p
    });
    let mut summary_rows: Vec<String> = result
        .aggregates
        .iter()
        .map(|a| {
            format!(
                "aggregate,{},{},{},{},{},{},{},,ok",
                fmt_f64(a.erm_ratio),
                fmt_f64(a.llr_ratio),
                a.cells_ok,
                opt_col(&a.mean_erm_wga),
                opt_col(&a.std_erm_wga),
                opt_col(&a.mean_llr_wga),
                opt_col(&a.std_llr_wga),
            )
        })
        .collect();
    for p in &result.pearson {
        summary_rows.push(format!(
            "pearson,,{},,,,,,{},{}",
            p.llr_ratio.map(fmt_f64).unwrap_or_else(|| "average".into()),
            opt_col(&p.pearson_r),
            p.status
        ));
    }
    emit_csv(
        &summary_path,
        &provenance,
        "row,erm_ratio,llr_ratio,cells_ok,mean_erm_wga,std_erm_wga,mean_llr_wga,std_llr_wga,pearson_r,status",
        &summary_rows,
    )
}
