//! `llr`, `eval`, `margin` and `svm-err` commands.

use std::path::{Path, PathBuf};

use clap::Args;
use ndarray::Array2;

use crate::balancing::{
    afr_weights, plan_subsetting, plan_upsampling, plan_upweighting, BalancePlan,
};
use crate::dataset::{load_dataset, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::retrain::{
    evaluate, min_group_margins, pearson, train_linear, EvalReport, LinearClassifier,
    TrainConfig, TrainPlan,
};
use crate::scalar::Scalar;
use crate::svm::implicit_bias_trace;

use super::data::parse_axis;
use super::{emit_csv, emit_json, fmt_f64, parse_list, resolve, resolve_manifest, Common, Provenance};

#[derive(Args, Debug, Clone)]
pub(crate) struct TrainFlags {
    /// "none" (default), "subset", "upsample" or "upweight".
    #[arg(long)]
    balance: Option<String>,
    /// Balancing axis: "class" (default) or "group".
    #[arg(long)]
    axis: Option<String>,
    /// Loss-based example weighting with this inverse temperature;
    /// requires --balance none. Zero reduces to class upweighting.
    #[arg(long)]
    afr_gamma: Option<f64>,
    /// Classifier supplying correct-class probabilities for the weighting
    /// (required when --afr-gamma > 0).
    #[arg(long)]
    erm_checkpoint: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Batch size; 0 is full-batch descent.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

pub(crate) struct ResolvedTrain {
    pub balance: String,
    pub axis_name: String,
    pub afr_gamma: Option<f64>,
    pub erm_checkpoint: Option<PathBuf>,
    pub cfg: TrainConfig<f64>,
}

impl TrainFlags {
    pub(crate) fn resolve(&self, file: &super::ConfigFile) -> Result<ResolvedTrain> {
        let balance = resolve(&self.balance, file.string("balance"), "none".into());
        let axis_name = resolve(&self.axis, file.string("axis"), "class".into());
        let afr_gamma = self.afr_gamma.or(file.f64("afr-gamma"));
        let cfg = TrainConfig {
            learning_rate: resolve(&self.lr, file.f64("lr"), 0.01),
            steps: resolve(&self.steps, file.usize("steps"), 1000),
            batch_size: resolve(&self.batch, file.usize("batch"), 32),
            seed: resolve(&self.seed, file.u64("seed"), 0),
        };
        Ok(ResolvedTrain {
            balance,
            axis_name,
            afr_gamma,
            erm_checkpoint: self.erm_checkpoint.clone(),
            cfg,
        })
    }

    pub(crate) fn record(p: &mut Provenance, r: &ResolvedTrain) {
        p.set("balance", &r.balance)
            .set("axis", &r.axis_name)
            .set("lr", r.cfg.learning_rate)
            .set("steps", r.cfg.steps)
            .set("batch", r.cfg.batch_size)
            .set("seed", r.cfg.seed);
        if let Some(g) = r.afr_gamma {
            p.set("afr-gamma", g);
        }
        if let Some(ckpt) = &r.erm_checkpoint {
            p.set("erm-checkpoint", ckpt.display());
        }
    }
}

/// Train a classifier on `heldout` per the resolved flags. Returns the
/// classifier and, when the plan weighs examples, the normalized weights
/// that entered the loss (comparable across upweighting and loss-based
/// weighting).
pub(crate) fn train_with_flags(
    heldout: &EmbeddingDataset<f64>,
    resolved: &ResolvedTrain,
) -> Result<(LinearClassifier<f64>, Option<Vec<f64>>)> {
    let axis = parse_axis(&resolved.axis_name)?;
    let mut logged: Option<Vec<f64>> = None;

    let normalize = |w: &[f64]| -> Vec<f64> {
        let total: f64 = w.iter().sum();
        w.iter().map(|&x| x / total).collect()
    };

    enum Holder {
        None,
        Plan(BalancePlan<f64>),
        Afr(crate::balancing::AfrWeights<f64>),
    }
    let holder = if let Some(gamma) = resolved.afr_gamma {
        if resolved.balance != "none" {
            return Err(Error::InvalidArg(
                "--afr-gamma requires --balance none".into(),
            ));
        }
        let probs: Vec<f64> = match &resolved.erm_checkpoint {
            Some(path) => {
                let clf = LinearClassifier::<f64>::load(path)?;
                clf.correct_class_probs(heldout.features(), heldout.class_labels())?
            }
            None if gamma == 0.0 => vec![1.0; heldout.len()],
            None => {
                return Err(Error::InvalidArg(
                    "--afr-gamma > 0 needs --erm-checkpoint for correct-class probabilities"
                        .into(),
                ))
            }
        };
        let afr = afr_weights(&probs, heldout.class_labels(), heldout.n_classes(), gamma)?;
        logged = Some(afr.weights.clone());
        Holder::Afr(afr)
    } else {
        match resolved.balance.as_str() {
            "none" => Holder::None,
            "subset" => Holder::Plan(plan_subsetting(heldout, axis, resolved.cfg.seed)?),
            "upsample" => Holder::Plan(plan_upsampling(heldout, axis)?),
            "upweight" => {
                let plan = plan_upweighting(heldout, axis)?;
                if let BalancePlan::LossWeights { weights, .. } = &plan {
                    logged = Some(normalize(weights));
                }
                Holder::Plan(plan)
            }
            other => {
                return Err(Error::InvalidArg(format!(
                    "unknown balance method {other:?}"
                )))
            }
        }
    };

    let plan = match &holder {
        Holder::None => None,
        Holder::Plan(p) => Some(TrainPlan::from_balance_plan(p)),
        Holder::Afr(a) => Some(TrainPlan::from_afr(a)),
    };
    let (clf, _) = train_linear(
        heldout.features(),
        heldout.class_labels(),
        heldout.n_classes(),
        &resolved.cfg,
        plan.as_ref(),
    )?;
    Ok((clf, logged))
}

fn eval_csv_row<F: Scalar>(report: &EvalReport<F>) -> (String, String) {
    let k = report.per_group_accuracy.len();
    let mut header = String::from("wga,aa");
    for g in 0..k {
        header.push_str(&format!(",acc_group_{g}"));
    }
    for g in 0..k {
        header.push_str(&format!(",margin_group_{g}"));
    }
    let mut row = format!(
        "{},{}",
        fmt_f64(report.worst_group_accuracy.as_f64()),
        fmt_f64(report.average_accuracy.as_f64())
    );
    for acc in &report.per_group_accuracy {
        row.push(',');
        if let Some(a) = acc {
            row.push_str(&fmt_f64(a.as_f64()));
        }
    }
    for margin in &report.per_group_min_margin {
        row.push(',');
        if let Some(m) = margin {
            row.push_str(&fmt_f64(m.as_f64()));
        }
    }
    (header, row)
}

fn emit_eval_outputs(
    report: &EvalReport<f64>,
    provenance: &Provenance,
    out: Option<&Path>,
    csv: Option<&Path>,
) -> Result<()> {
    if let Some(csv_path) = csv {
        let (header, row) = eval_csv_row(report);
        emit_csv(csv_path, provenance, &header, &[row])?;
    }
    emit_json(report, provenance, out)
}

#[derive(Args, Debug)]
pub(crate) struct LlrArgs {
    /// Held-out dataset manifest to retrain on.
    #[arg(long)]
    heldout: PathBuf,
    /// Evaluation manifest; the held-out set is reused when absent.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[command(flatten)]
    train: TrainFlags,
    /// Report JSON destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// One-row CSV report destination.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Save the retrained classifier here.
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    /// Log the normalized example weights (CSV index,weight).
    #[arg(long)]
    weights_out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

pub(crate) fn run_llr(args: LlrArgs) -> Result<()> {
    let file = args.common.config_file()?;
    let resolved = args.train.resolve(&file)?;
    let heldout_path = resolve_manifest(&args.heldout, args.split.as_deref())?;
    let heldout: EmbeddingDataset<f64> = load_dataset(&heldout_path)?;

    let mut provenance = Provenance::new("llr");
    provenance.set("heldout", heldout_path.display());
    TrainFlags::record(&mut provenance, &resolved);

    let (clf, weights) = train_with_flags(&heldout, &resolved)?;

    if let Some(path) = &args.weights_out {
        let rows: Vec<String> = match &weights {
            Some(w) => w
                .iter()
                .enumerate()
                .map(|(i, v)| format!("{i},{}", fmt_f64(*v)))
                .collect(),
            None => (0..heldout.len())
                .map(|i| format!("{i},{}", fmt_f64(1.0 / heldout.len() as f64)))
                .collect(),
        };
        emit_csv(path, &provenance, "index,weight", &rows)?;
    }
    if let Some(path) = &args.checkpoint_out {
        clf.save(path)?;
    }

    let test: EmbeddingDataset<f64> = match &args.test {
        Some(p) => {
            let path = resolve_manifest(p, args.split.as_deref())?;
            provenance.set("test", path.display());
            load_dataset(&path)?
        }
        None => heldout,
    };
    let report = evaluate(&clf, &test)?;
    emit_eval_outputs(&report, &provenance, args.out.as_deref(), args.csv.as_deref())
}

#[derive(Args, Debug)]
pub(crate) struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

pub(crate) fn run_eval(args: EvalArgs) -> Result<()> {
    let manifest = resolve_manifest(&args.manifest, args.split.as_deref())?;
    let dataset: EmbeddingDataset<f64> = load_dataset(&manifest)?;
    let clf = LinearClassifier::<f64>::load(&args.checkpoint)?;
    let report = evaluate(&clf, &dataset)?;
    let mut provenance = Provenance::new("eval");
    provenance
        .set("checkpoint", args.checkpoint.display())
        .set("manifest", manifest.display());
    emit_eval_outputs(&report, &provenance, args.out.as_deref(), args.csv.as_deref())
}

#[derive(Args, Debug)]
pub(crate) struct MarginArgs {
    /// Held-out manifest: margins are measured here.
    #[arg(long)]
    heldout: PathBuf,
    /// Test manifest: per-group accuracy comes from here.
    #[arg(long)]
    test: PathBuf,
    /// Existing binary classifier; when absent, classifiers are trained
    /// per --seeds and the correlation runs across seeds per group.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training seeds for the multi-seed pipeline.
    #[arg(long)]
    seeds: Option<String>,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

pub(crate) fn run_margin(args: MarginArgs) -> Result<()> {
    let file = args.common.config_file()?;
    let heldout: EmbeddingDataset<f64> = load_dataset(&resolve_manifest(&args.heldout, None)?)?;
    let test: EmbeddingDataset<f64> = load_dataset(&resolve_manifest(&args.test, None)?)?;
    let n_groups = test.n_groups();

    let mut provenance = Provenance::new("margin");
    provenance
        .set("heldout", args.heldout.display())
        .set("test", args.test.display());

    // per classifier: margins on the held-out set, accuracies on test
    let mut margin_rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut acc_rows: Vec<Vec<Option<f64>>> = Vec::new();
    if let Some(ckpt) = &args.checkpoint {
        provenance.set("checkpoint", ckpt.display());
        let clf = LinearClassifier::<f64>::load(ckpt)?;
        margin_rows.push(min_group_margins(&clf, &heldout)?);
        acc_rows.push(
            evaluate(&clf, &test)?
                .per_group_accuracy
                .iter()
                .map(|a| a.as_ref().map(|v| v.as_f64()))
                .collect(),
        );
    } else {
        let seeds: Vec<u64> = parse_list(
            &resolve(&args.seeds, file.string("seeds"), "0,1,2".into()),
            "seed",
        )?;
        provenance.set("seeds", seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","));
        let mut resolved = args.train.resolve(&file)?;
        TrainFlags::record(&mut provenance, &resolved);
        for &seed in &seeds {
            resolved.cfg.seed = seed;
            let (clf, _) = train_with_flags(&heldout, &resolved)?;
            margin_rows.push(min_group_margins(&clf, &heldout)?);
            acc_rows.push(
                evaluate(&clf, &test)?
                    .per_group_accuracy
                    .iter()
                    .map(|a| a.as_ref().map(|v| v.as_f64()))
                    .collect(),
            );
        }
    }

    let runs = margin_rows.len();
    let mean_over = |rows: &[Vec<Option<f64>>], g: usize| -> Option<f64> {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r[g]).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    // correlation: across seeds per group when multiple runs exist,
    // otherwise across groups for the single classifier
    let per_group_r: Vec<Option<f64>> = if runs > 1 {
        (0..n_groups)
            .map(|g| {
                let pairs: Vec<(f64, f64)> = (0..runs)
                    .filter_map(|r| match (margin_rows[r][g], acc_rows[r][g]) {
                        (Some(m), Some(a)) => Some((m, a)),
                        _ => None,
                    })
                    .collect();
                if pairs.len() < 2 {
                    return None;
                }
                let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                pearson(&xs, &ys).ok()
            })
            .collect()
    } else {
        let pairs: Vec<(f64, f64)> = (0..n_groups)
            .filter_map(|g| match (margin_rows[0][g], acc_rows[0][g]) {
                (Some(m), Some(a)) => Some((m, a)),
                _ => None,
            })
            .collect();
        let r = if pairs.len() >= 2 {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            pearson(&xs, &ys).ok()
        } else {
            None
        };
        vec![r; n_groups]
    };

    let rows: Vec<String> = (0..n_groups)
        .map(|g| {
            let margin = mean_over(&margin_rows, g);
            let acc = mean_over(&acc_rows, g);
            format!(
                "{g},{},{},{}",
                margin.map(fmt_f64).unwrap_or_default(),
                acc.map(fmt_f64).unwrap_or_default(),
                per_group_r[g].map(fmt_f64).unwrap_or_default()
            )
        })
        .collect();
    emit_csv(
        &args.out,
        &provenance,
        "group,min_margin,test_accuracy,pearson_r",
        &rows,
    )
}

#[derive(Args, Debug)]
pub(crate) struct SvmErrArgs {
    /// Binary-classed dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: Option<String>,
    /// Gradient steps at which the directional error is recorded.
    #[arg(long)]
    checkpoints: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

pub(crate) fn run_svm_err(args: SvmErrArgs) -> Result<()> {
    let file = args.common.config_file()?;
    // unregularized SGD at 0.001 is the convergence-experiment default
    let lr = resolve(&args.lr, file.f64("lr"), 0.001);
    let checkpoints: Vec<usize> = parse_list(
        &resolve(
            &args.checkpoints,
            file.string("checkpoints"),
            "10,100,1000,10000,100000".into(),
        ),
        "checkpoint",
    )?;

    let manifest = resolve_manifest(&args.data, args.split.as_deref())?;
    let dataset: EmbeddingDataset<f64> = load_dataset(&manifest)?;
    if dataset.n_classes() != 2 {
        return Err(Error::InvalidArg(
            "directional-error traces require a binary task".into(),
        ));
    }
    let labels: Vec<i8> = dataset
        .class_labels()
        .iter()
        .map(|&y| if y == 1 { 1 } else { -1 })
        .collect();
    let features: Array2<f64> = dataset.features().to_owned();
    let cfg = TrainConfig {
        learning_rate: lr,
        steps: 0,
        batch_size: 0,
        seed: 0,
    };
    let trace = implicit_bias_trace(features.view(), &labels, &cfg, &checkpoints)?;

    let mut provenance = Provenance::new("svm-err");
    provenance
        .set("data", manifest.display())
        .set("lr", lr)
        .set(
            "checkpoints",
            checkpoints
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
    let rows: Vec<String> = trace
        .iter()
        .map(|p| {
            format!(
                "{},{},{}",
                p.step,
                fmt_f64(p.directional_error),
                fmt_f64(p.train_loss)
            )
        })
        .collect();
    emit_csv(
        &args.out,
        &provenance,
        "step,directional_error,train_loss",
        &rows,
    )
}
