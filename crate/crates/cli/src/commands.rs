use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::Args;
use kge_core::annotations::{load_detections, load_groundtruth, to_jsonl};
use kge_core::evaluation::{
    average_precision, category_confusion, confusion_matrix, error_distribution_comparison, ApOptions,
    ConfusionMatrix, Interpolation, DEFAULT_CONFUSION_IOU,
};
use kge_core::geometry::EmbeddingMap;
use kge_core::heads::{decode_keypoints, ProjectionHead};
use kge_core::knowledge_graph::{categorize as categorize_classes, load_graph, CategoryMap, Taxonomy, DEFAULT_WUP_THRESHOLD};
use kge_core::losses::LossKind;
use kge_core::prototypes::{
    build_cooccurrence_graph, build_graph_prototypes, labeled_matrix_csv, load_embedding_table,
    pairwise_distance_matrix, random_orthogonal_prototypes, select_prototypes, BackgroundPolicy, PrototypeSet,
    SpatialRules, DEFAULT_BACKGROUND_THRESHOLD,
};
use kge_core::trainer::{
    generate_dataset, gradient_check_loss, gradient_suite, learned_baseline_init, predict, train, GradcheckResult,
    Sample, GRADCHECK_LOSSES,
};
use kge_core::Metric;
use serde::Serialize;

use crate::config::{DerivedSeeds, ExperimentConfig, PrototypeSource};
use crate::{ClassList, CliError};

fn prepare_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))
}

fn write(out: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = out.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl ClassList {
    fn resolve(&self) -> Result<Vec<String>, CliError> {
        let classes: Vec<String> = match (&self.classes, &self.classes_file) {
            (Some(c), _) => c.iter().map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect(),
            (None, Some(p)) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_owned)
                .collect(),
            (None, None) => Vec::new(),
        };
        if classes.is_empty() {
            return Err(CliError::Config("no classes given".into()));
        }
        Ok(classes)
    }
}

fn parse_relation_weight(s: &str) -> Result<(String, f64), String> {
    let (rel, w) = s.split_once('=').ok_or_else(|| format!("expected RELATION=WEIGHT, got `{s}`"))?;
    let w: f64 = w.parse().map_err(|_| format!("bad weight in `{s}`"))?;
    Ok((rel.to_owned(), w))
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["graph", "table", "groundtruth"]))]
pub struct BuildArgs {
    /// Edge-list knowledge graph (PPMI + truncated SVD).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Whitespace-separated embedding table (`name v1 ... vD`).
    #[arg(long)]
    table: Option<PathBuf>,
    /// Groundtruth JSON lines; prototypes come from the spatial co-occurrence graph.
    #[arg(long)]
    groundtruth: Option<PathBuf>,
    #[command(flatten)]
    classes: ClassList,
    /// Embedding dimension; required for graph sources, checked against tables.
    #[arg(long)]
    dim: Option<usize>,
    /// Relation weight override, e.g. `isa=2`. Repeatable.
    #[arg(long = "relation-weight", value_parser = parse_relation_weight)]
    relation_weights: Vec<(String, f64)>,
    /// JSON object mapping class names to table keys.
    #[arg(long)]
    aliases: Option<PathBuf>,
    /// Require edge endpoints to be declared as nodes first.
    #[arg(long)]
    strict: bool,
    /// Stored background policy: `implicit` or `mean`.
    #[arg(long, default_value = "implicit")]
    background: String,
    /// Similarity threshold of the implicit background.
    #[arg(long, default_value_t = DEFAULT_BACKGROUND_THRESHOLD)]
    background_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct BuildReport {
    source: String,
    classes: Vec<String>,
    dim: usize,
    provenance: kge_core::prototypes::Provenance,
    warnings: Vec<String>,
}

pub fn build_prototypes(a: BuildArgs) -> Result<(), CliError> {
    let classes = a.classes.resolve()?;
    let weights: BTreeMap<String, f64> = a.relation_weights.iter().cloned().collect();
    let need_dim = || a.dim.ok_or_else(|| CliError::Config("--dim is required for graph sources".into()));
    let (protos, warnings, source) = if let Some(path) = &a.graph {
        let g = load_graph(path, a.strict)?;
        let b = build_graph_prototypes(&g, &classes, need_dim()?, &weights)?;
        (b.prototypes, b.warnings, format!("graph:{}", path.display()))
    } else if let Some(path) = &a.groundtruth {
        let gt = load_groundtruth(path)?;
        let g = build_cooccurrence_graph(&gt, &SpatialRules::default())?;
        let b = build_graph_prototypes(&g, &classes, need_dim()?, &weights)?;
        (b.prototypes, b.warnings, format!("groundtruth:{}", path.display()))
    } else if let Some(path) = &a.table {
        let table = load_embedding_table(path)?;
        if let Some(d) = a.dim {
            if d != table.dim() {
                return Err(CliError::Config(format!("--dim {d} differs from the table dimension {}", table.dim())));
            }
        }
        let aliases: BTreeMap<String, String> = match &a.aliases {
            Some(p) => read_json(p)?,
            None => BTreeMap::new(),
        };
        (select_prototypes(&table, &classes, &aliases)?, Vec::new(), format!("table:{}", path.display()))
    } else {
        unreachable!("clap enforces one source")
    };
    let protos = match a.background.as_str() {
        "implicit" => protos.with_background(BackgroundPolicy::Implicit {
            threshold: a.background_threshold,
        })?,
        "mean" => protos.with_mean_background()?,
        other => return Err(CliError::Config(format!("unknown background policy `{other}`"))),
    };

    prepare_out(&a.out)?;
    write(&a.out, "prototypes.json", &to_json(&protos)?)?;
    for metric in [Metric::Cosine, Metric::Manhattan] {
        let d = pairwise_distance_matrix(&protos, metric)?;
        write(&a.out, &format!("distances_{metric}.csv"), &labeled_matrix_csv(protos.classes(), &d))?;
    }
    let report = BuildReport {
        source,
        classes: protos.classes().to_vec(),
        dim: protos.dim(),
        provenance: protos.provenance(),
        warnings,
    };
    write(&a.out, "build_report.json", &to_json(&report)?)
}

#[derive(Args)]
pub struct CategorizeArgs {
    /// Edge list of `isa` links.
    #[arg(long)]
    taxonomy: PathBuf,
    #[command(flatten)]
    classes: ClassList,
    #[arg(long, default_value_t = DEFAULT_WUP_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

pub fn categorize(a: CategorizeArgs) -> Result<(), CliError> {
    let classes = a.classes.resolve()?;
    let t = Taxonomy::from_graph(&load_graph(&a.taxonomy, false)?)?;
    let map = categorize_classes(&t, &classes, a.threshold)?;
    prepare_out(&a.out)?;
    write(&a.out, "categories.json", &to_json(&map)?)
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    seeds: DerivedSeeds,
    config: &'a ExperimentConfig,
    train_samples: usize,
    holdout_samples: usize,
    evaluated_split: &'static str,
}

fn split_confusion(
    head: &ProjectionHead,
    protos: &PrototypeSet,
    kind: &LossKind,
    samples: &[Sample],
) -> Result<ConfusionMatrix, CliError> {
    let view = protos.view(head.metric);
    let mut m = ConfusionMatrix::zeros(protos.classes().to_vec());
    for s in samples.iter().filter(|s| s.label > 0) {
        let p = predict(head, protos, &view, kind, &s.feature)?;
        m.record(s.label - 1, p.checked_sub(1));
    }
    Ok(m)
}

pub fn train_head(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.optimizer.steps = s;
    }
    if let Some(lr) = a.lr {
        cfg.optimizer.lr = lr;
    }
    if let Some(b) = a.batch {
        cfg.optimizer.batch = b;
    }
    if let Some(o) = a.out {
        cfg.out = Some(o);
    }
    let seeds = DerivedSeeds::from_master(cfg.seed);
    cfg.dataset.seed = seeds.dataset;
    cfg.optimizer.seed = seeds.optimizer;
    cfg.validate()?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set `out`".into()))?;

    let mut protos = match &cfg.prototypes {
        PrototypeSource::File { path } => PrototypeSet::load(path)?,
        PrototypeSource::RandomOrthogonal { classes, dim } => random_orthogonal_prototypes(classes, *dim, seeds.prototypes)?,
        PrototypeSource::LearnedBaseline { classes, dim } => learned_baseline_init(classes.clone(), *dim, seeds.prototypes)?,
    };
    if let Some(bg) = &cfg.background {
        protos = bg.apply(protos)?;
    }
    let categories = cfg.categories.as_ref().map(CategoryMap::load).transpose()?;
    let data = generate_dataset(&cfg.dataset, &protos)?;
    let head = ProjectionHead::glorot(cfg.dataset.input_dim, protos.dim(), cfg.loss.metric, seeds.head);
    let outcome = train(head, &data, &cfg.loss, protos, &cfg.optimizer)?;
    log::info!("trained in {:.2} s", outcome.report.wall_clock_seconds);

    let (split, name) = if data.holdout.is_empty() {
        (&data.samples, "train")
    } else {
        (&data.holdout, "holdout")
    };
    let cm = split_confusion(&outcome.head, &outcome.prototypes, &cfg.loss.kind, split)?;

    prepare_out(&out)?;
    write(&out, "head.json", &to_json(&outcome.head)?)?;
    write(&out, "prototypes.json", &to_json(&outcome.prototypes)?)?;
    write(&out, "train_report.json", &to_json(&outcome.report)?)?;
    write(&out, "confusion.csv", &cm.to_csv()?)?;
    if let Some(cats) = &categories {
        write(&out, "category_confusion.json", &to_json(&category_confusion(&cm, cats)?)?)?;
    }
    let meta = RunMetadata {
        seeds,
        config: &cfg,
        train_samples: data.samples.len(),
        holdout_samples: data.holdout.len(),
        evaluated_split: name,
    };
    write(&out, "run.json", &to_json(&meta)?)?;
    println!(
        "final_loss={:.6} train_accuracy={:.4} holdout_accuracy={}",
        outcome.report.final_loss,
        outcome.report.train_accuracy,
        outcome.report.holdout_accuracy.map_or("n/a".to_owned(), |v| format!("{v:.4}"))
    );
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Detection JSON lines.
    #[arg(long)]
    dets: PathBuf,
    /// Groundtruth JSON lines.
    #[arg(long)]
    gts: PathBuf,
    /// JSON object mapping classes to categories.
    #[arg(long)]
    categories: Option<PathBuf>,
    /// `coco101` or `all-point`.
    #[arg(long, default_value = "coco101")]
    interpolation: Interpolation,
    /// IoU a detection needs to count in the confusion matrix.
    #[arg(long, default_value_t = DEFAULT_CONFUSION_IOU)]
    confusion_iou: f64,
    #[arg(long)]
    out: PathBuf,
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let dets = load_detections(&a.dets)?;
    let gts = load_groundtruth(&a.gts)?;
    let categories = a.categories.as_ref().map(CategoryMap::load).transpose()?;
    let opts = ApOptions {
        interpolation: a.interpolation,
        ..ApOptions::default()
    };
    let report = average_precision(&dets, &gts, categories.as_ref(), &opts)?;
    let classes: Vec<String> = gts
        .iter()
        .map(|g| g.class.clone())
        .chain(dets.iter().map(|d| d.class.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let cm = confusion_matrix(&dets, &gts, &classes, a.confusion_iou)?;

    prepare_out(&a.out)?;
    write(&a.out, "ap_report.json", &to_json(&report)?)?;
    write(&a.out, "confusion.csv", &cm.to_csv()?)?;
    if let Some(cats) = &categories {
        write(&a.out, "category_confusion.json", &to_json(&category_confusion(&cm, cats)?)?)?;
    }
    println!("AP={:.4} AP50={:.4} AP75={:.4}", report.ap, report.ap50, report.ap75);
    Ok(())
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    confusion_a: PathBuf,
    #[arg(long)]
    confusion_b: PathBuf,
    /// JSON object of per-class groundtruth counts used as weights.
    /// Defaults to the row totals of the first matrix.
    #[arg(long)]
    gt_counts: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn compare_errors(a: CompareArgs) -> Result<(), CliError> {
    let ma = ConfusionMatrix::load(&a.confusion_a)?;
    let mb = ConfusionMatrix::load(&a.confusion_b)?;
    let weights: Vec<f64> = match &a.gt_counts {
        Some(p) => {
            let counts: BTreeMap<String, f64> = read_json(p)?;
            ma.classes
                .iter()
                .map(|c| counts.get(c).copied().ok_or_else(|| CliError::Config(format!("no groundtruth count for `{c}`"))))
                .collect::<Result<_, _>>()?
        }
        None => (0..ma.num_classes())
            .map(|i| (ma.counts[i].iter().sum::<u64>() + ma.background[i]) as f64)
            .collect(),
    };
    let cmp = error_distribution_comparison(&ma, &mb, &weights)?;
    prepare_out(&a.out)?;
    write(&a.out, "js_comparison.csv", &cmp.to_csv()?)?;
    write(&a.out, "js_summary.json", &to_json(&cmp)?)?;
    match cmp.weighted_mean {
        Some(v) => println!("weighted_js={v:.6}"),
        None => println!("weighted_js=n/a"),
    }
    Ok(())
}

#[derive(Args)]
pub struct DecodeArgs {
    /// Embedding map JSON (`height`, `width`, `dim`, `data`).
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    prototypes: PathBuf,
    #[arg(long, default_value = "cosine")]
    metric: Metric,
    /// Largest prototype distance a peak may have; 0.9 is similarity 0.55.
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    image_id: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn decode_heatmap(a: DecodeArgs) -> Result<(), CliError> {
    let map: EmbeddingMap = read_json(&a.map)?;
    let protos = PrototypeSet::load(&a.prototypes)?;
    let dets = decode_keypoints(&map, &protos.view(a.metric), a.threshold)?;
    let records = dets
        .iter()
        .map(|d| d.to_record(a.image_id, protos.classes()))
        .collect::<Result<Vec<_>, _>>()?;
    prepare_out(&a.out)?;
    write(&a.out, "detections.jsonl", &to_jsonl(&records)?)?;
    println!("detections={}", records.len());
    Ok(())
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// `all`, or one of contrastive, focal, hinge, cross-entropy.
    #[arg(long, default_value = "all")]
    loss: String,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct GradcheckReport<'a> {
    seed: u64,
    results: &'a [GradcheckResult],
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let results = if a.loss == "all" {
        gradient_suite(a.instances, a.seed)?
    } else if GRADCHECK_LOSSES.contains(&a.loss.as_str()) {
        vec![gradient_check_loss(&a.loss, a.instances, a.seed)?]
    } else {
        return Err(CliError::Config(format!(
            "unknown loss `{}`; expected all or one of {}",
            a.loss,
            GRADCHECK_LOSSES.join(", ")
        )));
    };
    for r in &results {
        println!(
            "{:<14} instances={} max_rel_err={:.3e} tol={:.0e} {}",
            r.loss,
            r.instances,
            r.max_relative_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(out) = &a.out {
        prepare_out(out)?;
        write(out, "gradcheck.json", &to_json(&GradcheckReport { seed: a.seed, results: &results })?)?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.loss.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!("gradient check above tolerance: {}", failed.join(", "))))
    }
}
