//! Train → attribute → attack → evaluate → analyze, with deterministic reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    baseline_sanity_check, build_ranking, consistency_matrix, epsilon_sweep, mean_std,
    monotonicity, similarity_matrix, smoothness, top_k_summary, ConsistencyMatrix, RankRow,
    RankingTable, SanityCounts, SimilarityMatrix, SweepPoint,
};
use crate::attacks::{fgsm, pgd, AttackBudget, AttackResult};
use crate::attribution::{derive_seed, AttributionMap, AttributionMethod, BuiltinMethod};
use crate::error::{Error, Result};
use crate::harness::config::{DatasetSource, DatasetSpec, ExperimentConfig};
use crate::harness::dataset::{generate_shapes, load_idx_files};
use crate::metrics::{
    adcc, average_drop, coherency, complexity, deletion_curve, increase_in_confidence,
    insertion_blur_curve, insertion_curve, perturbation_curve, CurveMetric, Direction,
    ProbabilityCurve, Trend,
};
use crate::nn::arch::build_model;
use crate::nn::serialize::{read_model, write_model};
use crate::nn::train::{train, Sample, TrainConfig};
use crate::nn::Model;

/// Perturbation scored against PGD instead of FGSM adversarials.
pub const PGD_METRIC: &str = "perturbation_pgd";

/// Ranking direction and expected curve trend per metric id.
pub fn metric_registry(metric: &str) -> Option<(Direction, Trend)> {
    if metric == PGD_METRIC {
        return Some((Direction::HigherBetter, Trend::Increasing));
    }
    let m: CurveMetric = metric.parse().ok()?;
    Some((m.direction(), m.trend()))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Combo {
    pub label: String,
    pub dataset: String,
    pub architecture: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub combo: String,
    pub dataset: String,
    pub image_id: usize,
    pub method: String,
    pub metric: String,
    pub auc: f64,
    pub direction: Direction,
    pub monotonicity: f64,
    pub smoothness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarRecord {
    pub combo: String,
    pub image_id: usize,
    pub method: String,
    pub average_drop: f64,
    pub increase_in_confidence: u8,
    pub complexity: f64,
    pub coherency: f64,
    /// `None` where the harmonic mean is undefined.
    pub adcc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub combo: String,
    pub image_id: usize,
    pub label: usize,
    pub clean_class: usize,
    pub clean_probability: f64,
    pub correct: bool,
    pub fgsm_success: Option<bool>,
    pub fgsm_probability_drop: Option<f64>,
    pub pgd_success: Option<bool>,
}

/// `images_in = scored + misclassified + attack_failed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub combo: String,
    pub metric: String,
    pub images_in: usize,
    pub scored: usize,
    pub misclassified: usize,
    pub attack_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboInfo {
    #[serde(flatten)]
    pub combo: Combo,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
    pub model_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub combos: Vec<ComboInfo>,
    pub images: Vec<ImageRecord>,
    pub exclusions: Vec<Exclusion>,
    /// Relative paths of every emitted file, sorted.
    pub files: Vec<String>,
    pub partial: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveQuality {
    pub metric: String,
    pub curves: usize,
    pub mean_monotonicity: f64,
    pub mean_smoothness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub combo: String,
    pub attempted: usize,
    pub fgsm_success: usize,
    pub pgd_success: Option<usize>,
}

/// Everything derived from score records alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    /// combo → metric → ranking.
    pub rankings: BTreeMap<String, BTreeMap<String, RankingTable>>,
    /// Rankings over the scores of all combos pooled.
    pub suite_rankings: BTreeMap<String, RankingTable>,
    pub consistency: BTreeMap<String, ConsistencyMatrix>,
    pub sanity: BTreeMap<String, SanityCounts>,
    /// metric → dataset → best methods.
    pub top_k: BTreeMap<String, BTreeMap<String, Vec<RankRow>>>,
    /// Curve quality over the (combo, image, method) triples scored by every metric.
    pub quality: Vec<CurveQuality>,
    /// Whether the Perturbation ranking is unchanged under PGD, per combo and for the suite.
    pub pgd_ranking_matches: BTreeMap<String, bool>,
}

/// Rankings, consistency, sanity counts, top-k lists and curve quality from
/// score records. Combos are taken in label order.
pub fn analyze_scores(scores: &[ScoreRecord], top_k: usize) -> Result<AnalysisReport> {
    let mut by_combo: BTreeMap<&str, BTreeMap<&str, BTreeMap<String, Vec<f64>>>> = BTreeMap::new();
    let mut pooled: BTreeMap<&str, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    let mut dataset_of: BTreeMap<&str, &str> = BTreeMap::new();
    for s in scores {
        if metric_registry(&s.metric).is_none() {
            return Err(Error::Format(format!(
                "unknown metric `{}` in scores",
                s.metric
            )));
        }
        by_combo
            .entry(&s.combo)
            .or_default()
            .entry(&s.metric)
            .or_default()
            .entry(s.method.clone())
            .or_default()
            .push(s.auc);
        pooled
            .entry(&s.metric)
            .or_default()
            .entry(s.method.clone())
            .or_default()
            .push(s.auc);
        dataset_of.insert(&s.combo, &s.dataset);
    }
    let direction = |m: &str| metric_registry(m).expect("checked above").0;

    let mut rankings = BTreeMap::new();
    for (combo, metrics) in &by_combo {
        let mut tables = BTreeMap::new();
        for (metric, per_method) in metrics {
            tables.insert(
                metric.to_string(),
                build_ranking(metric, direction(metric), per_method)?,
            );
        }
        rankings.insert(combo.to_string(), tables);
    }
    let mut suite_rankings = BTreeMap::new();
    for (metric, per_method) in &pooled {
        suite_rankings.insert(
            metric.to_string(),
            build_ranking(metric, direction(metric), per_method)?,
        );
    }

    let mut consistency = BTreeMap::new();
    let mut sanity = BTreeMap::new();
    let mut top = BTreeMap::new();
    for metric in pooled.keys() {
        let (labels, tables): (Vec<String>, Vec<RankingTable>) = rankings
            .iter()
            .filter_map(|(c, t)| t.get(*metric).map(|t| (c.clone(), t.clone())))
            .unzip();
        let full_sets = tables.iter().all(|t| t.rows.len() == tables[0].rows.len());
        if tables.len() >= 2 && tables[0].rows.len() >= 2 && full_sets {
            consistency.insert(metric.to_string(), consistency_matrix(&labels, &tables)?);
        }
        if tables
            .iter()
            .all(|t| t.rank_of("uniform").is_some() && t.rank_of("canny").is_some())
        {
            sanity.insert(metric.to_string(), baseline_sanity_check(&tables)?);
        }
        let tagged: Vec<(String, RankingTable)> = labels
            .iter()
            .zip(tables)
            .map(|(c, t)| (dataset_of[c.as_str()].to_string(), t))
            .collect();
        let methods = tagged.iter().map(|(_, t)| t.rows.len()).min().unwrap_or(0);
        top.insert(
            metric.to_string(),
            top_k_summary(&tagged, top_k.min(methods).max(1))?,
        );
    }

    let mut pgd_ranking_matches = BTreeMap::new();
    let perturb = CurveMetric::Perturbation.name();
    let same = |a: Option<&RankingTable>, b: Option<&RankingTable>| match (a, b) {
        (Some(a), Some(b)) => Some(a.methods() == b.methods()),
        _ => None,
    };
    for (combo, t) in &rankings {
        if let Some(m) = same(t.get(perturb), t.get(PGD_METRIC)) {
            pgd_ranking_matches.insert(combo.clone(), m);
        }
    }
    if let Some(m) = same(suite_rankings.get(perturb), suite_rankings.get(PGD_METRIC)) {
        pgd_ranking_matches.insert("suite".into(), m);
    }

    Ok(AnalysisReport {
        rankings,
        suite_rankings,
        consistency,
        sanity,
        top_k: top,
        quality: curve_quality(scores),
        pgd_ranking_matches,
    })
}

fn curve_quality(scores: &[ScoreRecord]) -> Vec<CurveQuality> {
    let metrics: BTreeSet<&str> = scores.iter().map(|s| s.metric.as_str()).collect();
    let mut coverage: BTreeMap<(&str, usize, &str), usize> = BTreeMap::new();
    for s in scores {
        *coverage
            .entry((&s.combo, s.image_id, &s.method))
            .or_default() += 1;
    }
    let mut out = Vec::new();
    for metric in metrics {
        let (mono, smooth): (Vec<f64>, Vec<f64>) = scores
            .iter()
            .filter(|s| {
                s.metric == metric
                    && coverage[&(s.combo.as_str(), s.image_id, s.method.as_str())]
                        == metrics_len(scores)
            })
            .map(|s| (s.monotonicity, s.smoothness))
            .unzip();
        if let (Some((m, _)), Some((sm, _))) = (mean_std(&mono), mean_std(&smooth)) {
            out.push(CurveQuality {
                metric: metric.to_string(),
                curves: mono.len(),
                mean_monotonicity: m,
                mean_smoothness: sm,
            });
        }
    }
    out
}

fn metrics_len(scores: &[ScoreRecord]) -> usize {
    scores
        .iter()
        .map(|s| s.metric.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Train and test samples of one dataset.
pub fn load_dataset(spec: &DatasetSpec) -> Result<(Vec<Sample>, Vec<Sample>)> {
    match &spec.source {
        DatasetSource::Shapes {
            train,
            test,
            size,
            seed,
            style,
        } => Ok((
            generate_shapes(*train, *size, derive_seed(*seed, 0, "train"), style)?,
            generate_shapes(*test, *size, derive_seed(*seed, 1, "test"), style)?,
        )),
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            test_limit,
        } => {
            let tr = load_idx_files(train_images, train_labels)?;
            let mut te = load_idx_files(test_images, test_labels)?;
            if let Some(n) = test_limit {
                te.truncate(*n);
            }
            if tr.is_empty() || te.is_empty() {
                return Err(Error::EmptyDataset);
            }
            Ok((tr, te))
        }
    }
}

/// `[C, H, W]` of the first sample and the class count implied by the labels.
fn dataset_shape(train: &[Sample], test: &[Sample]) -> Result<(Vec<usize>, usize)> {
    let first = train.first().ok_or(Error::EmptyDataset)?;
    let shape = vec![
        first.image.channels(),
        first.image.height(),
        first.image.width(),
    ];
    if train
        .iter()
        .chain(test)
        .any(|s| !s.image.same_shape(&first.image))
    {
        return Err(Error::Format("dataset images differ in shape".into()));
    }
    let classes = train.iter().chain(test).map(|s| s.label).max().unwrap_or(0) + 1;
    Ok((shape, classes.max(2)))
}

pub fn combos(config: &ExperimentConfig) -> Vec<Combo> {
    let mut out = Vec::new();
    for d in &config.datasets {
        for a in &config.architectures {
            for &s in &config.model_seeds {
                out.push(Combo {
                    label: format!("{}-{}-s{s}", d.name, a.name),
                    dataset: d.name.clone(),
                    architecture: a.name.clone(),
                    seed: s,
                });
            }
        }
    }
    out.sort();
    out
}

pub struct TrainedCombo {
    pub combo: Combo,
    pub model: Model,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

pub fn train_combo(
    config: &ExperimentConfig,
    combo: &Combo,
    train_set: &[Sample],
    test_set: &[Sample],
) -> Result<TrainedCombo> {
    let arch = config
        .architectures
        .iter()
        .find(|a| a.name == combo.architecture)
        .ok_or_else(|| Error::Config(format!("unknown architecture `{}`", combo.architecture)))?;
    let (shape, classes) = dataset_shape(train_set, test_set)?;
    let key = format!("{}/{}", combo.dataset, combo.architecture);
    let init_seed = derive_seed(config.training.seed ^ combo.seed, 0, &format!("init/{key}"));
    let model = build_model(
        &shape,
        &arch.layers(classes)?,
        config.training.init_scale,
        init_seed,
    )?;
    let tc = TrainConfig {
        seed: derive_seed(
            config.training.seed ^ combo.seed,
            1,
            &format!("shuffle/{key}"),
        ),
        ..config.training.clone()
    };
    let out = train(model, train_set, test_set, &tc)?;
    Ok(TrainedCombo {
        combo: combo.clone(),
        model: out.model,
        train_accuracy: out.train_accuracy,
        test_accuracy: out.test_accuracy,
        final_loss: out.final_loss,
    })
}

struct CurveRow {
    method: String,
    metric: String,
    curve: ProbabilityCurve,
}

struct ImageOutcome {
    record: ImageRecord,
    scores: Vec<ScoreRecord>,
    scalars: Vec<ScalarRecord>,
    curves: Vec<CurveRow>,
    /// Normalized maps per method, when the image was scored.
    maps: Option<Vec<AttributionMap>>,
}

struct EvalContext<'a> {
    config: &'a ExperimentConfig,
    combo: &'a Combo,
    model: &'a Model,
    methods: Vec<BuiltinMethod>,
}

fn evaluate_image(ctx: &EvalContext, image_id: usize, sample: &Sample) -> Result<ImageOutcome> {
    let (cfg, model) = (ctx.config, ctx.model);
    let x = sample.image.to_tensor();
    let clean = model.predict(&x)?;
    let class = sample.label;
    let correct = clean.class == class;
    let mut record = ImageRecord {
        combo: ctx.combo.label.clone(),
        image_id,
        label: class,
        clean_class: clean.class,
        clean_probability: clean.probability,
        correct,
        fgsm_success: None,
        fgsm_probability_drop: None,
        pgd_success: None,
    };
    let mut out = ImageOutcome {
        record: record.clone(),
        scores: Vec::new(),
        scalars: Vec::new(),
        curves: Vec::new(),
        maps: None,
    };
    if !correct && !cfg.include_misclassified {
        return Ok(out);
    }

    let wants_perturb = cfg.metrics.contains(&CurveMetric::Perturbation);
    let mut attack_fgsm: Option<AttackResult> = None;
    let mut attack_pgd: Option<AttackResult> = None;
    if wants_perturb {
        let a = fgsm(
            model,
            &sample.image,
            &AttackBudget::fgsm(cfg.attack.eps_steps, class),
        )?;
        record.fgsm_success = Some(a.success);
        record.fgsm_probability_drop = Some(a.probability_drop);
        attack_fgsm = Some(a);
        if cfg.attack.pgd_iterations > 0 {
            let budget = AttackBudget::pgd(cfg.attack.eps_steps, cfg.attack.pgd_iterations, class);
            let a = pgd(model, &sample.image, &budget)?;
            record.pgd_success = Some(a.success);
            attack_pgd = Some(a);
        }
    }

    out.record = record.clone();
    // PGD-only successes still get their PGD curve.
    let base_metrics = !cfg.attacked_only || record.fgsm_success == Some(true);
    if !base_metrics && record.pgd_success != Some(true) {
        return Ok(out);
    }

    let mut maps = Vec::with_capacity(ctx.methods.len());
    for method in &ctx.methods {
        let seed = derive_seed(
            cfg.seed,
            image_id as u64,
            &format!("{}/{}", ctx.combo.label, method.name()),
        );
        let map = method.attribute(model, &x, class, seed)?.normalized()?;
        let mut push = |metric: &str, curve: ProbabilityCurve| -> Result<()> {
            let (direction, trend) = metric_registry(metric).expect("registered metric");
            out.scores.push(ScoreRecord {
                combo: ctx.combo.label.clone(),
                dataset: ctx.combo.dataset.clone(),
                image_id,
                method: method.name().to_string(),
                metric: metric.to_string(),
                auc: curve.auc(),
                direction,
                monotonicity: monotonicity(curve.y(), trend)?,
                smoothness: smoothness(curve.y())?,
            });
            if cfg.write_curves {
                out.curves.push(CurveRow {
                    method: method.name().to_string(),
                    metric: metric.to_string(),
                    curve,
                });
            }
            Ok(())
        };
        let img = &sample.image;
        for &metric in cfg.metrics.iter().filter(|_| base_metrics) {
            let curve = match metric {
                CurveMetric::Deletion => deletion_curve(model, img, &map, cfg.steps, class)?,
                CurveMetric::Insertion => insertion_curve(model, img, &map, cfg.steps, class)?,
                CurveMetric::InsertionBlur => {
                    insertion_blur_curve(model, img, &map, cfg.steps, class, cfg.blur_sigma)?
                }
                CurveMetric::Perturbation => match &attack_fgsm {
                    Some(a) if a.success => {
                        perturbation_curve(model, img, a, &map, cfg.steps, class)?
                    }
                    _ => continue,
                },
            };
            push(metric.name(), curve)?;
        }
        if let Some(a) = attack_pgd.as_ref().filter(|a| a.success) {
            push(
                PGD_METRIC,
                perturbation_curve(model, img, a, &map, cfg.steps, class)?,
            )?;
        }
        if cfg.scalar_metrics && base_metrics {
            let ad = average_drop(model, &x, &map, class)?;
            let cp = complexity(&map)?;
            let ch = coherency(model, &x, &map, method, class, seed)?;
            out.scalars.push(ScalarRecord {
                combo: ctx.combo.label.clone(),
                image_id,
                method: method.name().to_string(),
                average_drop: ad,
                increase_in_confidence: u8::from(increase_in_confidence(model, &x, &map, class)?),
                complexity: cp,
                coherency: ch,
                adcc: adcc(ad, cp, ch).ok(),
            });
        }
        maps.push(map);
    }
    out.maps = Some(maps);
    Ok(out)
}

fn exclusions(
    combo: &str,
    metrics: &[String],
    outcomes: &[ImageOutcome],
    include_misclassified: bool,
) -> Vec<Exclusion> {
    let misclassified = if include_misclassified {
        0
    } else {
        outcomes.iter().filter(|o| !o.record.correct).count()
    };
    metrics
        .iter()
        .map(|metric| {
            let scored: BTreeSet<usize> = outcomes
                .iter()
                .flat_map(|o| o.scores.iter())
                .filter(|s| &s.metric == metric)
                .map(|s| s.image_id)
                .collect();
            Exclusion {
                combo: combo.to_string(),
                metric: metric.clone(),
                images_in: outcomes.len(),
                scored: scored.len(),
                misclassified,
                attack_failed: outcomes.len() - scored.len() - misclassified,
            }
        })
        .collect()
}

/// Collected results of a run, in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub scores: Vec<ScoreRecord>,
    pub scalars: Vec<ScalarRecord>,
    pub analysis: AnalysisReport,
    pub similarity: BTreeMap<String, SimilarityMatrix>,
    /// combo → one point per budget; `"pooled"` concatenates all combos.
    pub sweep: BTreeMap<String, Vec<SweepPoint>>,
    pub attacks: Vec<AttackSummary>,
}

struct Writer {
    root: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut s =
            serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }
}

fn curves_csv(outcomes: &[ImageOutcome]) -> String {
    let mut s = String::from("image_id,method,metric,step,x,y\n");
    for o in outcomes {
        for c in &o.curves {
            for (i, (x, y)) in c.curve.x().iter().zip(c.curve.y()).enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{i},{x},{y}",
                    o.record.image_id, c.method, c.metric
                );
            }
        }
    }
    s
}

fn rankings_csv(report: &AnalysisReport) -> String {
    let mut s = String::from("scope,metric,rank,method,mean,std,count\n");
    let scopes = report
        .rankings
        .iter()
        .map(|(c, t)| (c.as_str(), t))
        .chain(std::iter::once(("suite", &report.suite_rankings)));
    for (scope, tables) in scopes {
        for (metric, t) in tables {
            for (i, r) in t.rows.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{scope},{metric},{},{},{},{},{}",
                    i + 1,
                    r.method,
                    r.mean,
                    r.std,
                    r.count
                );
            }
        }
    }
    s
}

/// Runs every stage and writes the reports under `config.output_dir`. On a
/// stage failure the manifest is still written, flagged partial, and the
/// stage-tagged error is returned.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let mut w = Writer {
        root: config.output_dir.clone(),
        files: Vec::new(),
    };
    let mut manifest = RunManifest {
        config_hash: config.hash(),
        combos: Vec::new(),
        images: Vec::new(),
        exclusions: Vec::new(),
        files: Vec::new(),
        partial: false,
        error: None,
    };
    match run_stages(config, &mut w, &mut manifest) {
        Ok(mut out) => {
            w.files.push("manifest.json".into());
            w.files.sort();
            manifest.files = w.files.clone();
            w.json("manifest.json", &manifest)?;
            out.manifest = manifest;
            Ok(out)
        }
        Err(e) => {
            manifest.partial = true;
            manifest.error = Some(e.to_string());
            w.files.push("manifest.json".into());
            w.files.sort();
            manifest.files = w.files.clone();
            let _ = w.json("manifest.json", &manifest);
            Err(e)
        }
    }
}

fn run_stages(
    config: &ExperimentConfig,
    w: &mut Writer,
    manifest: &mut RunManifest,
) -> Result<RunOutput> {
    w.write("config.toml", config.to_toml_portable()?.as_bytes())
        .map_err(|e| e.in_stage("report"))?;
    let methods: Vec<BuiltinMethod> = config
        .methods
        .iter()
        .map(|m| BuiltinMethod::from_name(m, &config.attribution))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("config"))?;
    let sweep_method = BuiltinMethod::from_name(&config.sweep.method, &config.attribution)
        .map_err(|e| e.in_stage("config"))?;
    let mut metric_ids: Vec<String> = config
        .metrics
        .iter()
        .map(|m| m.name().to_string())
        .collect();
    if config.metrics.contains(&CurveMetric::Perturbation) && config.attack.pgd_iterations > 0 {
        metric_ids.push(PGD_METRIC.into());
    }

    let mut datasets = BTreeMap::new();
    for d in &config.datasets {
        datasets.insert(
            d.name.clone(),
            load_dataset(d).map_err(|e| e.in_stage("dataset"))?,
        );
    }

    let mut scores = Vec::new();
    let mut scalars = Vec::new();
    let mut similarity = BTreeMap::new();
    let mut sweep = BTreeMap::new();
    let mut attacks = Vec::new();
    for combo in combos(config) {
        let (train_set, test_set) = &datasets[&combo.dataset];
        let trained =
            train_combo(config, &combo, train_set, test_set).map_err(|e| e.in_stage("train"))?;
        let model_rel = format!("models/{}.aemd", combo.label);
        let mut bytes = Vec::new();
        write_model(&trained.model, &mut bytes).map_err(|e| e.in_stage("train"))?;
        w.write(&model_rel, &bytes)
            .map_err(|e| e.in_stage("report"))?;
        // Evaluate the stored (f32) parameters so the saved file reproduces every score.
        let model = read_model(bytes.as_slice()).map_err(|e| e.in_stage("train"))?;
        manifest.combos.push(ComboInfo {
            combo: combo.clone(),
            train_accuracy: trained.train_accuracy,
            test_accuracy: trained.test_accuracy,
            final_loss: trained.final_loss,
            model_path: model_rel,
        });

        let ctx = EvalContext {
            config,
            combo: &combo,
            model: &model,
            methods: methods.clone(),
        };
        let outcomes: Vec<ImageOutcome> = test_set
            .par_iter()
            .enumerate()
            .map(|(i, s)| evaluate_image(&ctx, i, s))
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage("evaluate"))?;

        manifest.exclusions.extend(exclusions(
            &combo.label,
            &metric_ids,
            &outcomes,
            config.include_misclassified,
        ));
        let attempted: Vec<&ImageRecord> = outcomes
            .iter()
            .map(|o| &o.record)
            .filter(|r| r.fgsm_success.is_some())
            .collect();
        if config.metrics.contains(&CurveMetric::Perturbation) {
            attacks.push(AttackSummary {
                combo: combo.label.clone(),
                attempted: attempted.len(),
                fgsm_success: attempted
                    .iter()
                    .filter(|r| r.fgsm_success == Some(true))
                    .count(),
                pgd_success: (config.attack.pgd_iterations > 0).then(|| {
                    attempted
                        .iter()
                        .filter(|r| r.pgd_success == Some(true))
                        .count()
                }),
            });
        }
        let scored_maps: Vec<&Vec<AttributionMap>> =
            outcomes.iter().filter_map(|o| o.maps.as_ref()).collect();
        if !scored_maps.is_empty() {
            let per_method: Vec<Vec<AttributionMap>> = (0..methods.len())
                .map(|m| scored_maps.iter().map(|maps| maps[m].clone()).collect())
                .collect();
            similarity.insert(
                combo.label.clone(),
                similarity_matrix(&config.methods, &per_method)
                    .map_err(|e| e.in_stage("analyze"))?,
            );
        }
        if !config.sweep.eps_steps.is_empty() {
            let seed = derive_seed(config.seed, 0, &format!("sweep/{}", combo.label));
            let pts = epsilon_sweep(
                &model,
                test_set,
                &sweep_method,
                &config.sweep.eps_steps,
                config.steps,
                seed,
            )
            .map_err(|e| e.in_stage("evaluate"))?;
            sweep.insert(combo.label.clone(), pts);
        }
        if config.write_curves {
            w.write(
                &format!("curves/{}.csv", combo.label),
                curves_csv(&outcomes).as_bytes(),
            )
            .map_err(|e| e.in_stage("report"))?;
        }
        for o in outcomes {
            manifest.images.push(o.record);
            scores.extend(o.scores);
            scalars.extend(o.scalars);
        }
    }

    if !sweep.is_empty() {
        let mut pooled = Vec::new();
        for (i, &k) in config.sweep.eps_steps.iter().enumerate() {
            let pts: Vec<&SweepPoint> = sweep.values().map(|v: &Vec<SweepPoint>| &v[i]).collect();
            debug_assert!(pts.iter().all(|p| p.eps_steps == k));
            pooled.push(SweepPoint::pool(&pts).map_err(|e| e.in_stage("analyze"))?);
        }
        sweep.insert("pooled".into(), pooled);
    }
    let analysis = analyze_scores(&scores, config.top_k).map_err(|e| e.in_stage("analyze"))?;

    let report = |e: Error| e.in_stage("report");
    w.json("scores.json", &scores).map_err(report)?;
    if config.scalar_metrics {
        w.json("scalar_scores.json", &scalars).map_err(report)?;
    }
    write_analysis(w, &analysis).map_err(report)?;
    w.json("similarity.json", &similarity).map_err(report)?;
    if !sweep.is_empty() {
        w.json("sweep.json", &sweep).map_err(report)?;
    }
    if !attacks.is_empty() {
        w.json("attacks.json", &attacks).map_err(report)?;
    }

    Ok(RunOutput {
        manifest: manifest.clone(),
        scores,
        scalars,
        analysis,
        similarity,
        sweep,
        attacks,
    })
}

fn write_analysis(w: &mut Writer, a: &AnalysisReport) -> Result<()> {
    w.json("rankings.json", &(&a.rankings, &a.suite_rankings))?;
    w.write("rankings.csv", rankings_csv(a).as_bytes())?;
    w.json("consistency.json", &a.consistency)?;
    for (metric, m) in &a.consistency {
        w.write(&format!("consistency_{metric}.csv"), m.to_csv().as_bytes())?;
    }
    w.json("sanity.json", &a.sanity)?;
    w.json("top_k.json", &a.top_k)?;
    w.json("quality.json", &a.quality)?;
    w.json("pgd_ranking.json", &a.pgd_ranking_matches)?;
    Ok(())
}

/// Writes the analysis reports for an existing `scores.json` into `out_dir`.
pub fn analyze_file(scores_path: &Path, out_dir: &Path, top_k: usize) -> Result<AnalysisReport> {
    let text = std::fs::read_to_string(scores_path)?;
    let scores: Vec<ScoreRecord> =
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let report = analyze_scores(&scores, top_k)?;
    let mut w = Writer {
        root: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    write_analysis(&mut w, &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(combo: &str, image: usize, method: &str, metric: &str, auc: f64) -> ScoreRecord {
        let (direction, _) = metric_registry(metric).unwrap();
        ScoreRecord {
            combo: combo.into(),
            dataset: "d".into(),
            image_id: image,
            method: method.into(),
            metric: metric.into(),
            auc,
            direction,
            monotonicity: auc,
            smoothness: 1.0 - auc,
        }
    }

    #[test]
    fn analysis_is_order_independent() {
        let mut scores = Vec::new();
        for (c, combo) in ["a", "b", "c"].iter().enumerate() {
            for i in 0..4 {
                for (m, method) in ["ig", "uniform", "canny", "gradients"].iter().enumerate() {
                    for metric in ["deletion", "perturbation", PGD_METRIC] {
                        let v = ((c * 7 + i * 3 + m * 5) % 11) as f64 / 11.0;
                        scores.push(rec(combo, i, method, metric, v));
                    }
                }
            }
        }
        let a = analyze_scores(&scores, 2).unwrap();
        scores.reverse();
        let b = analyze_scores(&scores, 2).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.consistency["deletion"].labels, ["a", "b", "c"]);
        assert_eq!(a.sanity["perturbation"].tables, 3);
        assert_eq!(a.top_k["deletion"]["d"].len(), 2);
        assert_eq!(a.pgd_ranking_matches["suite"], true);
        assert_eq!(a.quality.len(), 3);
        assert!(analyze_scores(&[rec("a", 0, "ig", "deletion", 0.1)], 1)
            .unwrap()
            .consistency
            .is_empty());
    }

    #[test]
    fn combos_cover_the_grid_in_label_order() {
        let mut c = ExperimentConfig::default();
        c.model_seeds = vec![3, 1];
        c.architectures
            .push(crate::harness::config::ArchitectureSpec {
                name: "wide2".into(),
                preset: Some("wide2".into()),
                layers: None,
            });
        let labels: Vec<String> = combos(&c).into_iter().map(|c| c.label).collect();
        assert_eq!(
            labels,
            [
                "shapes-conv2-s1",
                "shapes-conv2-s3",
                "shapes-wide2-s1",
                "shapes-wide2-s3"
            ]
        );
    }
}
