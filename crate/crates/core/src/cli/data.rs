//! `synth` and `balance` commands.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use crate::balancing::{plan_subsetting, plan_upsampling, plan_upweighting, BalanceAxis};
use crate::dataset::{group_stats, load_dataset, write_dataset, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::synth::{generate_collapsed, generate_spurious, GroupSizing, SpuriousSpec};

use super::{emit_json, parse_list, resolve, Common, Provenance};

#[derive(Args, Debug)]
pub(crate) struct SynthArgs {
    /// Directory receiving the manifest and blobs.
    #[arg(long)]
    out_dir: PathBuf,
    /// File stem; the manifest lands at <out-dir>/<stem>.manifest.json.
    #[arg(long)]
    stem: Option<String>,
    /// Generator: "spurious" (default) or "collapsed".
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    groups_per_class: Option<usize>,
    /// Core-direction signal strength (spurious generator).
    #[arg(long)]
    core: Option<f64>,
    /// Spurious-direction signal strength.
    #[arg(long)]
    spurious: Option<f64>,
    /// Majority-group size per class (ratio sizing).
    #[arg(long)]
    majority: Option<usize>,
    /// Minority/majority group ratio in (0, 1].
    #[arg(long)]
    ratio: Option<f64>,
    /// Explicit per-group counts, comma separated (overrides ratio sizing).
    #[arg(long)]
    counts: Option<String>,
    /// Isotropic noise scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Jitter magnitude (collapsed generator).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Examples per class (collapsed generator).
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Blob precision: "f64" (default) or "f32".
    #[arg(long)]
    dtype: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct SynthSummary {
    manifest_path: String,
    name: String,
    m: usize,
    n: usize,
    classes: usize,
    groups: usize,
    group_counts: Vec<usize>,
}

pub(crate) fn run_synth(args: SynthArgs) -> Result<()> {
    let file = args.common.config_file()?;
    let kind = resolve(&args.kind, file.string("kind"), "spurious".into());
    let seed = resolve(&args.seed, file.u64("seed"), 0);
    let dim = resolve(&args.dim, file.usize("dim"), 64);
    let classes = resolve(&args.classes, file.usize("classes"), 2);
    let dtype = resolve(&args.dtype, file.string("dtype"), "f64".into());
    let stem = resolve(&args.stem, file.string("stem"), "data".into());

    let mut provenance = Provenance::new("synth");
    provenance
        .set("kind", &kind)
        .set("seed", seed)
        .set("dim", dim)
        .set("classes", classes)
        .set("dtype", &dtype)
        .set("stem", &stem);

    let dataset: EmbeddingDataset<f64> = match kind.as_str() {
        "spurious" => {
            let groups_per_class =
                resolve(&args.groups_per_class, file.usize("groups-per-class"), 2);
            let core = resolve(&args.core, file.f64("core"), 1.0);
            let spurious = resolve(&args.spurious, file.f64("spurious"), 3.0);
            let sigma = resolve(&args.sigma, file.f64("sigma"), 1.0);
            let sizing = match resolve(&args.counts, file.string("counts"), String::new()) {
                s if s.is_empty() => GroupSizing::Ratio {
                    majority: resolve(&args.majority, file.usize("majority"), 500),
                    ratio: resolve(&args.ratio, file.f64("ratio"), 1.0),
                },
                s => GroupSizing::Counts {
                    counts: parse_list(&s, "group count")?,
                },
            };
            provenance
                .set("groups-per-class", groups_per_class)
                .set("core", core)
                .set("spurious", spurious)
                .set("sigma", sigma)
                .set("sizing", format!("{sizing:?}"));
            generate_spurious(&SpuriousSpec {
                dim,
                classes,
                groups_per_class,
                core_strength: core,
                spurious_strength: spurious,
                sizing,
                noise: sigma,
                seed,
            })?
        }
        "collapsed" => {
            let per_class = resolve(&args.per_class, file.usize("per-class"), 100);
            let epsilon = resolve(&args.epsilon, file.f64("epsilon"), 0.0);
            provenance.set("per-class", per_class).set("epsilon", epsilon);
            generate_collapsed(dim, classes, per_class, epsilon, seed)?
        }
        other => {
            return Err(Error::InvalidArg(format!(
                "unknown generator {other:?}; expected spurious or collapsed"
            )))
        }
    };

    let manifest = write_dataset(&dataset, &args.out_dir, &stem, &dtype)?;
    let stats = group_stats(&dataset);
    let summary = SynthSummary {
        manifest_path: manifest.display().to_string(),
        name: dataset.name().to_string(),
        m: dataset.len(),
        n: dataset.dim(),
        classes: dataset.n_classes(),
        groups: dataset.n_groups(),
        group_counts: stats.group_counts,
    };
    emit_json(&summary, &provenance, None)
}

#[derive(Args, Debug)]
pub(crate) struct BalanceArgs {
    /// Dataset manifest (or directory with --split).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: Option<String>,
    /// "subset", "upsample" or "upweight".
    #[arg(long)]
    method: Option<String>,
    /// "class" (default) or "group".
    #[arg(long)]
    axis: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Plan JSON destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

pub(crate) fn parse_axis(s: &str) -> Result<BalanceAxis> {
    match s {
        "class" => Ok(BalanceAxis::Class),
        "group" => Ok(BalanceAxis::Group),
        other => Err(Error::InvalidArg(format!(
            "unknown axis {other:?}; expected class or group"
        ))),
    }
}

pub(crate) fn run_balance(args: BalanceArgs) -> Result<()> {
    let file = args.common.config_file()?;
    let method = resolve(&args.method, file.string("method"), "subset".into());
    let axis_name = resolve(&args.axis, file.string("axis"), "class".into());
    let axis = parse_axis(&axis_name)?;
    let seed = resolve(&args.seed, file.u64("seed"), 0);

    let manifest = super::resolve_manifest(&args.manifest, args.split.as_deref())?;
    let dataset: EmbeddingDataset<f64> = load_dataset(&manifest)?;
    let plan = match method.as_str() {
        "subset" => plan_subsetting(&dataset, axis, seed)?,
        "upsample" => plan_upsampling(&dataset, axis)?,
        "upweight" => plan_upweighting(&dataset, axis)?,
        other => {
            return Err(Error::InvalidArg(format!(
                "unknown method {other:?}; expected subset, upsample or upweight"
            )))
        }
    };

    let mut provenance = Provenance::new("balance");
    provenance
        .set("manifest", manifest.display())
        .set("method", &method)
        .set("axis", &axis_name)
        .set("seed", seed);

    #[derive(Serialize)]
    struct PlanOut<'a> {
        plan: &'a crate::balancing::BalancePlan<f64>,
    }
    emit_json(&PlanOut { plan: &plan }, &provenance, args.out.as_deref())
}
