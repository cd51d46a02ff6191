//! End-to-end command pipelines: train, predict, evaluate, benchmark, sweep.
//!
//! The CLI crate is a thin flag parser over these functions; keeping them
//! here lets the test suites drive the exact production paths in-process.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{
    self, AnnotationError, NodeAttributeTable, OccurrenceMatrix, SignatureMatrix,
};
use crate::baselines::{self, BaselineError};
use crate::classifier::{self, ModelBank, TrainConfig, TrainError};
use crate::dataset::{AnnotationMode, Dataset, DatasetError};
use crate::eval::{self, EvalError, EvalReport};
use crate::hashutil::keyed_hash;
use crate::ingestion::{self, IngestError, SplitSpec};
use crate::supportsets::SupportError;
use crate::synth::{self, SynthError, SynthSpec};
use crate::taxonomy::{Taxonomy, TaxonomyError};
use crate::transfer::{self, ScoreTable, TransferError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// Input/configuration problems versus failures while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Validation(_)
                | PipelineError::Taxonomy(_)
                | PipelineError::Annotation(_)
                | PipelineError::Dataset(_)
                | PipelineError::Ingest(_)
                | PipelineError::Synth(_)
        )
    }
}

/// Prediction method selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hat,
    Dap,
    Ens,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Hat, Method::Dap, Method::Ens];

    pub fn name(self) -> &'static str {
        match self {
            Method::Hat => "hat",
            Method::Dap => "dap",
            Method::Ens => "ens",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hat" => Ok(Method::Hat),
            "dap" => Ok(Method::Dap),
            "ens" => Ok(Method::Ens),
            other => Err(format!("unknown method `{other}` (hat|dap|ens)")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Run `f` on a dedicated rayon pool of `workers` threads (None = default).
/// Results must not depend on the worker count; the pipelines only
/// parallelize order-independent per-item work.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        None | Some(0) => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
    }
}

// ------------------------------------------------------------------- train

/// Where class-level attribute descriptions come from.
pub enum AttributeInput {
    /// Binary class-attribute matrix, used as-is.
    Signature(SignatureMatrix),
    /// Real-valued occurrences, binarized at the overall mean.
    Occurrence(OccurrenceMatrix),
    /// Per-image labels attached to the dataset; class-level occurrences are
    /// computed and binarized.
    PerImage,
}

/// Everything produced by training.
#[derive(Debug)]
pub struct TrainedModel {
    /// The pruned taxonomy actually used for training.
    pub taxonomy: Taxonomy,
    pub signatures: SignatureMatrix,
    pub table: NodeAttributeTable,
    pub bank: ModelBank,
}

fn prepare_signature(
    pruned: &Taxonomy,
    data: Option<&Dataset>,
    attrs: AttributeInput,
    mode: AnnotationMode,
) -> Result<SignatureMatrix, PipelineError> {
    match (mode, attrs) {
        (AnnotationMode::PerImage, AttributeInput::PerImage) => {
            let data = data.ok_or_else(|| {
                PipelineError::Validation("per-image mode needs a dataset".into())
            })?;
            let occurrence = annotation::class_occurrence(data, &pruned.seen_leaves())?;
            Ok(annotation::binarize_occurrence(&occurrence)?)
        }
        (AnnotationMode::PerClass, AttributeInput::Signature(sig)) => Ok(sig),
        (AnnotationMode::PerClass, AttributeInput::Occurrence(occ)) => {
            Ok(annotation::binarize_occurrence(&occ)?)
        }
        (AnnotationMode::PerImage, _) => Err(PipelineError::Validation(
            "per-image mode takes its labels from the per-image attribute file".into(),
        )),
        (AnnotationMode::PerClass, AttributeInput::PerImage) => Err(PipelineError::Validation(
            "per-class mode needs a class-attribute file".into(),
        )),
    }
}

/// Full training pipeline: prune, derive signatures, propagate, train.
pub fn train(
    taxonomy: &Taxonomy,
    data: &Dataset,
    attrs: AttributeInput,
    config: &TrainConfig,
) -> Result<TrainedModel, PipelineError> {
    let pruned = taxonomy.prune_single_child();

    let seen: BTreeSet<String> = pruned.seen_leaves().into_iter().collect();
    for class in data.distinct_classes() {
        if !seen.contains(&class) {
            return Err(PipelineError::Validation(format!(
                "training sample class `{class}` is not a seen leaf of the taxonomy"
            )));
        }
    }
    for leaf in &seen {
        if data.rows_of_class(leaf).is_empty() {
            return Err(PipelineError::Validation(format!(
                "seen leaf `{leaf}` has no training samples"
            )));
        }
    }

    let signatures = prepare_signature(&pruned, Some(data), attrs, config.annotation_mode)?;
    let table = annotation::propagate(&pruned, &signatures)?;
    let bank = classifier::train_model_bank(&pruned, &table, &signatures, data, config)?;
    Ok(TrainedModel {
        taxonomy: pruned,
        signatures,
        table,
        bank,
    })
}

/// Standalone propagate: prune, derive signatures, build the node table.
pub fn propagate_only(
    taxonomy: &Taxonomy,
    data: Option<&Dataset>,
    attrs: AttributeInput,
    mode: AnnotationMode,
) -> Result<(Taxonomy, SignatureMatrix, NodeAttributeTable), PipelineError> {
    let pruned = taxonomy.prune_single_child();
    let signatures = prepare_signature(&pruned, data, attrs, mode)?;
    let table = annotation::propagate(&pruned, &signatures)?;
    Ok((pruned, signatures, table))
}

// ----------------------------------------------------------------- predict

/// Rebuild the node activation table a bank was trained against: a pair is
/// active exactly when the bank either trained it or recorded a skip for it.
pub fn table_from_bank(
    bank: &ModelBank,
    taxonomy: &Taxonomy,
) -> Result<NodeAttributeTable, PipelineError> {
    if !taxonomy.contains(bank.root()) || taxonomy.root() != bank.root() {
        return Err(PipelineError::Validation(format!(
            "bank was trained with root `{}`, taxonomy has `{}`",
            bank.root(),
            taxonomy.root()
        )));
    }
    let mut attrs: BTreeSet<String> = bank.classifiers().map(|c| c.attribute.clone()).collect();
    attrs.extend(bank.skipped().iter().map(|s| s.attribute.clone()));
    let attributes: Vec<String> = attrs.into_iter().collect();
    let nodes: Vec<String> = taxonomy.node_ids().map(str::to_string).collect();
    let mut values = vec![false; nodes.len() * attributes.len()];
    for (i, node) in nodes.iter().enumerate() {
        for active in bank.active_attributes_at(node) {
            if let Some(a) = attributes.iter().position(|x| *x == active) {
                values[i * attributes.len() + a] = true;
            }
        }
    }
    Ok(NodeAttributeTable::new(nodes, attributes, values))
}

/// Where unseen-class descriptions come from at prediction time.
pub enum SignatureSource {
    /// Declared class-attribute rows (must cover every unseen class).
    Declared(SignatureMatrix),
    /// Copy each unseen class's parent activation row.
    ParentFallback,
}

#[derive(Debug)]
pub struct Prediction {
    /// Raw method scores before any normalization.
    pub raw: ScoreTable,
    /// The table predictions were taken from (normalized when applicable).
    pub scores: ScoreTable,
    pub predictions: Vec<(String, String)>,
    pub normalized: bool,
    /// Declared attributes the model never learned (absent from every seen
    /// class at training time); they carry no transferable classifier and
    /// are dropped from the unseen descriptions.
    pub dropped_attributes: Vec<String>,
    /// Per-class active attributes skipped during hierarchical scoring
    /// because no ancestor holds a trained classifier for them.
    pub skipped_transfers: Vec<(String, Vec<String>)>,
}

/// Project declared signatures onto the bank's attribute universe, keeping
/// only unseen-class rows. Attribute columns the bank has never seen are
/// dropped (returned separately); attributes the bank knows but the file
/// omits count as inactive.
fn project_signatures(
    declared: &SignatureMatrix,
    table: &NodeAttributeTable,
    unseen: &[String],
) -> Result<(SignatureMatrix, Vec<String>), PipelineError> {
    let known: BTreeSet<&String> = table.attributes().iter().collect();
    let dropped: Vec<String> = declared
        .attributes()
        .iter()
        .filter(|a| !known.contains(a))
        .cloned()
        .collect();
    if dropped.len() == declared.attributes().len() {
        return Err(PipelineError::Validation(
            "signature file shares no attribute with the model bank".into(),
        ));
    }
    let attributes = table.attributes().to_vec();
    let mut values = Vec::with_capacity(unseen.len() * attributes.len());
    for class in unseen {
        if !declared.has_row(class) {
            return Err(PipelineError::Validation(format!(
                "unseen class `{class}` has no row in the signature file"
            )));
        }
        for attribute in &attributes {
            values.push(
                declared
                    .value(class, attribute)
                    .unwrap_or(false),
            );
        }
    }
    Ok((
        SignatureMatrix::new(unseen.to_vec(), attributes, values),
        dropped,
    ))
}

/// Score a test set against the taxonomy's unseen classes.
///
/// HAT and ENS scores are batch-normalized per class column unless
/// `no_normalize` is set; DAP log-scores are always left raw.
pub fn predict(
    bank: &ModelBank,
    taxonomy: &Taxonomy,
    test: &Dataset,
    source: SignatureSource,
    method: Method,
    no_normalize: bool,
) -> Result<Prediction, PipelineError> {
    let t = taxonomy.prune_single_child();
    let unseen = t.unseen_leaves();
    if unseen.is_empty() {
        return Err(PipelineError::Validation(
            "taxonomy has no unseen leaves to predict".into(),
        ));
    }
    if test.dim() != bank.dim() {
        return Err(PipelineError::Validation(format!(
            "test features have dimension {}, bank expects {}",
            test.dim(),
            bank.dim()
        )));
    }
    let table = table_from_bank(bank, &t)?;

    let (signatures, dropped_attributes) = match source {
        SignatureSource::Declared(declared) => project_signatures(&declared, &table, &unseen)?,
        SignatureSource::ParentFallback => {
            let attributes = table.attributes().to_vec();
            let mut values = Vec::with_capacity(unseen.len() * attributes.len());
            for class in &unseen {
                values.extend(annotation::parent_signature_fallback(&t, &table, class)?);
            }
            (SignatureMatrix::new(unseen.clone(), attributes, values), Vec::new())
        }
    };

    let mut skipped_transfers = Vec::new();
    let raw = match method {
        Method::Hat => {
            skipped_transfers =
                transfer::untransferable_attributes(bank, &table, &t, &signatures, &unseen)?;
            transfer::score_batch(bank, &table, &t, &signatures, &unseen, test)?
        }
        Method::Dap => baselines::dap_scores(bank, &signatures, &unseen, test)?,
        Method::Ens => baselines::ens_scores(bank, &signatures, &unseen, test)?,
    };

    let normalize = matches!(method, Method::Hat | Method::Ens) && !no_normalize;
    let scores = if normalize {
        transfer::normalize_class_scores(&raw)?
    } else {
        raw.clone()
    };
    let predictions = transfer::classify(&scores)?;
    Ok(Prediction {
        raw,
        scores,
        predictions,
        normalized: normalize,
        dropped_attributes,
        skipped_transfers,
    })
}

// -------------------------------------------------------------------- eval

/// Optional extras that enrich the report with attribute-level diagnostics.
#[derive(Default)]
pub struct EvalExtras<'a> {
    pub bank: Option<&'a ModelBank>,
    pub taxonomy: Option<&'a Taxonomy>,
    /// Held-out features with attribute ground truth (per-image labels or
    /// class signatures via `signatures`).
    pub data: Option<&'a Dataset>,
    pub signatures: Option<&'a SignatureMatrix>,
}



/// Score predictions against ground-truth labels.
pub fn evaluate(
    predictions: &[(String, String)],
    scores: &ScoreTable,
    gt_labels: &[(String, String)],
    extras: &EvalExtras,
) -> Result<EvalReport, PipelineError> {
    let gt_by_id: std::collections::BTreeMap<&str, &str> = gt_labels
        .iter()
        .map(|(id, class)| (id.as_str(), class.as_str()))
        .collect();
    let mut preds = Vec::with_capacity(predictions.len());
    let mut gt = Vec::with_capacity(predictions.len());
    for (id, pred) in predictions {
        let actual = gt_by_id.get(id.as_str()).ok_or_else(|| {
            PipelineError::Validation(format!("sample `{id}` missing from ground-truth labels"))
        })?;
        preds.push(pred.clone());
        gt.push(actual.to_string());
    }

    let classes = scores.targets().to_vec();
    let (accuracy, per_class_accuracy, confusion) =
        eval::multiclass_accuracy(&preds, &gt, &classes)?;
    let plain = eval::plain_accuracy(&preds, &gt)?;
    let class_auc = Some(eval::mean_class_auc(scores, &gt)?);

    let mut attribute_auc = None;
    let mut level_diagnostics = None;
    if let (Some(bank), Some(data)) = (extras.bank, extras.data) {
        let attr_scores = baselines::root_attribute_scores(bank, data)?;
        let gt_rows = attribute_gt_rows(data, attr_scores.targets(), extras.signatures)?;
        attribute_auc = Some(eval::mean_attribute_auc(&attr_scores, &gt_rows)?);
        if let Some(taxonomy) = extras.taxonomy {
            level_diagnostics = Some(eval::level_diagnostics(
                bank,
                taxonomy,
                data,
                extras.signatures,
            )?);
        }
    }

    Ok(EvalReport {
        accuracy,
        plain_accuracy: plain,
        per_class_accuracy,
        confusion,
        class_auc,
        attribute_auc,
        level_diagnostics,
        skipped: extras.bank.map(|b| b.skipped().to_vec()).unwrap_or_default(),
    })
}

/// Attribute ground truth per sample: per-image labels when present, else
/// the class signature row of the sample's class.
fn attribute_gt_rows(
    data: &Dataset,
    attributes: &[String],
    signatures: Option<&SignatureMatrix>,
) -> Result<Vec<Vec<bool>>, PipelineError> {
    let mut rows = Vec::with_capacity(data.len());
    for r in 0..data.len() {
        let mut row = Vec::with_capacity(attributes.len());
        for attribute in attributes {
            let v = if let Some(table) = data.image_attributes() {
                match table.attr_index(attribute) {
                    Some(col) => table.value(r, col),
                    None => lookup_sig(signatures, data.class_of(r), attribute, data.sample_id(r))?,
                }
            } else {
                lookup_sig(signatures, data.class_of(r), attribute, data.sample_id(r))?
            };
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn lookup_sig(
    signatures: Option<&SignatureMatrix>,
    class: &str,
    attribute: &str,
    sample: &str,
) -> Result<bool, PipelineError> {
    signatures
        .and_then(|s| s.value(class, attribute).ok())
        .ok_or_else(|| EvalError::MissingAttributeGt(sample.to_string()).into())
}

// ------------------------------------------------------------------- bench

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub accuracy: f64,
    pub mean_class_auc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: SynthSpec,
    pub n_seen: usize,
    pub n_unseen: usize,
    /// Chance-level accuracy: one over the number of unseen classes.
    pub chance: f64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "benchmark: {} seen / {} unseen classes, chance = {:.4}\n",
            self.n_seen, self.n_unseen, self.chance
        ));
        out.push_str("method               accuracy   mean-class-AUC\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{:<20} {:>8.4}   {:>8.4}\n",
                row.method, row.accuracy, row.mean_class_auc
            ));
        }
        out
    }
}

/// Write the standard benchmark file set so the data can flow back through
/// the file-driven commands.
pub fn write_benchmark_files(
    bench: &synth::SynthBenchmark,
    dir: &Path,
    format: ingestion::FeatureFormat,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(IngestError::Io)?;
    ingestion::save_taxonomy(&dir.join("taxonomy.json"), &bench.taxonomy)?;
    ingestion::save_signature_csv(&dir.join("signatures.csv"), &bench.signatures)?;
    ingestion::save_split(
        &dir.join("split.json"),
        &SplitSpec {
            seen: bench.seen.clone(),
            unseen: bench.unseen.clone(),
        },
    )?;
    for (name, data) in [("train_features", &bench.train), ("test_features", &bench.test)] {
        match format {
            ingestion::FeatureFormat::Csv => {
                ingestion::save_features_csv(&dir.join(format!("{name}.csv")), data)?
            }
            ingestion::FeatureFormat::Binary => {
                ingestion::save_features_binary(&dir.join(format!("{name}.zsf")), data)?
            }
        }
    }
    ingestion::save_labels_csv(&dir.join("train_labels.csv"), &bench.train)?;
    ingestion::save_labels_csv(&dir.join("test_labels.csv"), &bench.test)?;
    Ok(())
}

fn gt_pairs(data: &Dataset) -> Vec<(String, String)> {
    (0..data.len())
        .map(|r| (data.sample_id(r).to_string(), data.class_of(r).to_string()))
        .collect()
}

/// Generate the synthetic benchmark, train once, and compare HAT against the
/// global baselines (plus HAT with parent-fallback descriptions). Writes the
/// generated data, the bank, per-method predictions and reports, and a
/// comparison table under `out_dir`.
pub fn bench_run(
    spec: &SynthSpec,
    out_dir: &Path,
    workers: Option<usize>,
) -> Result<BenchReport, PipelineError> {
    with_workers(workers, || bench_inner(spec, out_dir))
}

fn bench_inner(spec: &SynthSpec, out_dir: &Path) -> Result<BenchReport, PipelineError> {
    let bench = synth::generate(spec)?;
    write_benchmark_files(&bench, &out_dir.join("data"), ingestion::FeatureFormat::Csv)?;

    let config = TrainConfig {
        seed: spec.seed,
        annotation_mode: AnnotationMode::PerClass,
        ..TrainConfig::default()
    };
    let model = train(
        &bench.taxonomy,
        &bench.train,
        AttributeInput::Signature(bench.signatures.clone()),
        &config,
    )?;
    ingestion::save_model_bank(&out_dir.join("bank.json"), &model.bank)?;

    let gt = gt_pairs(&bench.test);
    let extras = EvalExtras {
        bank: Some(&model.bank),
        taxonomy: Some(&model.taxonomy),
        data: Some(&bench.test),
        signatures: Some(&bench.signatures),
    };

    let mut rows = Vec::new();
    let mut run = |label: &str,
                   method: Method,
                   source: SignatureSource|
     -> Result<(), PipelineError> {
        let pred = predict(&model.bank, &bench.taxonomy, &bench.test, source, method, false)?;
        ingestion::save_predictions(
            &out_dir.join(format!("predictions_{label}.csv")),
            &pred.predictions,
            &pred.scores,
        )?;
        let report = evaluate(&pred.predictions, &pred.scores, &gt, &extras)?;
        std::fs::write(
            out_dir.join(format!("report_{label}.json")),
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )
        .map_err(IngestError::Io)?;
        rows.push(BenchRow {
            method: label.to_string(),
            accuracy: report.accuracy,
            mean_class_auc: report.class_auc.as_ref().map(|a| a.mean).unwrap_or(f64::NAN),
        });
        Ok(())
    };

    for method in Method::ALL {
        run(
            method.name(),
            method,
            SignatureSource::Declared(bench.signatures.clone()),
        )?;
    }
    run("hat-parent-fallback", Method::Hat, SignatureSource::ParentFallback)?;

    let report = BenchReport {
        spec: spec.clone(),
        n_seen: bench.seen.len(),
        n_unseen: bench.unseen.len(),
        chance: 1.0 / bench.unseen.len() as f64,
        rows,
    };
    std::fs::write(
        out_dir.join("comparison.json"),
        serde_json::to_string_pretty(&report).expect("serializes"),
    )
    .map_err(IngestError::Io)?;
    let mut csv = String::from("method,accuracy,mean_class_auc\n");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{}\n",
            row.method,
            ingestion::fmt_sig9(row.accuracy),
            ingestion::fmt_sig9(row.mean_class_auc)
        ));
    }
    std::fs::write(out_dir.join("comparison.csv"), csv).map_err(IngestError::Io)?;
    Ok(report)
}

// ------------------------------------------------------------------- sweep

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub source_size: usize,
    pub n_unseen: usize,
    pub repeats: usize,
    pub accuracy: f64,
    pub mean_class_auc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn accuracy(&self, method: &str, size: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.source_size == size)
            .map(|r| r.accuracy)
    }
}

/// The source-set-complexity protocol: for growing source sizes, train on a
/// random subset of classes and zero-shot the rest. Class subsets are nested
/// per repeat (the order is one seeded shuffle), so each curve watches the
/// same pool of knowledge grow.
pub fn sweep_run(
    spec: &SynthSpec,
    sizes: &[usize],
    repeats: usize,
    seed: u64,
    out_dir: &Path,
    workers: Option<usize>,
) -> Result<SweepReport, PipelineError> {
    with_workers(workers, || sweep_inner(spec, sizes, repeats, seed, out_dir))
}

fn sweep_inner(
    spec: &SynthSpec,
    sizes: &[usize],
    repeats: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<SweepReport, PipelineError> {
    if sizes.is_empty() {
        return Err(PipelineError::Validation("no source sizes given".into()));
    }
    if repeats == 0 {
        return Err(PipelineError::Validation("repeats must be >= 1".into()));
    }
    let bench = synth::generate(spec)?;
    let pooled = bench.train.concat(&bench.test)?;
    let leaves = bench.taxonomy.leaves();
    for &size in sizes {
        if size < 2 || size + 2 > leaves.len() {
            return Err(PipelineError::Validation(format!(
                "source size {size} must leave >= 2 seen and >= 2 unseen of {} classes",
                leaves.len()
            )));
        }
    }
    let config = TrainConfig {
        seed: spec.seed,
        annotation_mode: AnnotationMode::PerClass,
        ..TrainConfig::default()
    };

    // accumulated accuracy / auc per (method label, size)
    let mut acc: std::collections::BTreeMap<(String, usize), (f64, f64)> =
        std::collections::BTreeMap::new();
    for rep in 0..repeats {
        // one nested shuffle per repeat
        let mut order = leaves.clone();
        let mut rng_state = keyed_hash(seed, &["sweep", &rep.to_string()]);
        for i in (1..order.len()).rev() {
            // xorshift on the keyed hash; cheap and stable
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            order.swap(i, (rng_state % (i as u64 + 1)) as usize);
        }
        for &size in sizes {
            let source: Vec<String> = {
                let mut s = order[..size].to_vec();
                s.sort();
                s
            };
            let target: Vec<String> = {
                let mut t = order[size..].to_vec();
                t.sort();
                t
            };
            let taxonomy = bench.taxonomy.apply_split(&source, &target)?;
            let train_data = pooled.filter_by_class(|c| source.binary_search_by(|s| s.as_str().cmp(c)).is_ok())?;
            let test_data = pooled.filter_by_class(|c| target.binary_search_by(|s| s.as_str().cmp(c)).is_ok())?;
            let model = train(
                &taxonomy,
                &train_data,
                AttributeInput::Signature(bench.signatures.clone()),
                &config,
            )?;
            let gt = gt_pairs(&test_data);
            for method in Method::ALL {
                let pred = predict(
                    &model.bank,
                    &taxonomy,
                    &test_data,
                    SignatureSource::Declared(bench.signatures.clone()),
                    method,
                    false,
                )?;
                let report = evaluate(&pred.predictions, &pred.scores, &gt, &EvalExtras::default())?;
                let entry = acc.entry((method.name().to_string(), size)).or_insert((0.0, 0.0));
                entry.0 += report.accuracy;
                entry.1 += report.class_auc.as_ref().map(|a| a.mean).unwrap_or(f64::NAN);
            }
        }
    }

    let n_leaves = leaves.len();
    let mut rows: Vec<SweepRow> = acc
        .into_iter()
        .map(|((method, size), (a, auc))| SweepRow {
            method,
            source_size: size,
            n_unseen: n_leaves - size,
            repeats,
            accuracy: a / repeats as f64,
            mean_class_auc: auc / repeats as f64,
        })
        .collect();
    rows.sort_by(|a, b| (&a.method, a.source_size).cmp(&(&b.method, b.source_size)));

    std::fs::create_dir_all(out_dir).map_err(IngestError::Io)?;
    let mut csv = String::from("method,source_size,n_unseen,repeats,accuracy,mean_class_auc\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.method,
            row.source_size,
            row.n_unseen,
            row.repeats,
            ingestion::fmt_sig9(row.accuracy),
            ingestion::fmt_sig9(row.mean_class_auc)
        ));
    }
    std::fs::write(out_dir.join("sweep.csv"), csv).map_err(IngestError::Io)?;
    let report = SweepReport { rows };
    std::fs::write(
        out_dir.join("sweep.json"),
        serde_json::to_string_pretty(&report).expect("serializes"),
    )
    .map_err(IngestError::Io)?;
    Ok(report)
}

/// Generate and persist a synthetic benchmark without running anything.
pub fn synth_write(
    spec: &SynthSpec,
    out_dir: &Path,
    format: ingestion::FeatureFormat,
) -> Result<PathBuf, PipelineError> {
    let bench = synth::generate(spec)?;
    write_benchmark_files(&bench, out_dir, format)?;
    Ok(out_dir.to_path_buf())
}

/// Re-kind a taxonomy's leaves from a split file, verifying the split names
/// real leaves and covers the given dataset classes.
pub fn apply_split_spec(
    taxonomy: &Taxonomy,
    split: &SplitSpec,
    dataset_classes: &[String],
) -> Result<Taxonomy, PipelineError> {
    split.validate()?;
    split.check_covers(dataset_classes)?;
    Ok(taxonomy.apply_split(&split.seen, &split.unseen)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{node, NodeKind};

    #[test]
    fn method_parses() {
        assert_eq!("hat".parse::<Method>().unwrap(), Method::Hat);
        assert_eq!("dap".parse::<Method>().unwrap(), Method::Dap);
        assert!("svm".parse::<Method>().is_err());
    }

    #[test]
    fn train_rejects_unknown_training_class() {
        let t = Taxonomy::from_parts(
            vec![
                node("root", NodeKind::Internal),
                node("a", NodeKind::Seen),
                node("b", NodeKind::Seen),
            ],
            vec![("root".into(), "a".into()), ("root".into(), "b".into())],
        )
        .unwrap();
        let data = Dataset::new(
            vec!["s0".into()],
            vec![0.0],
            1,
            vec!["ghost".into()],
        )
        .unwrap();
        let sig = SignatureMatrix::new(
            vec!["a".into(), "b".into()],
            vec!["m".into()],
            vec![true, false],
        );
        let err = train(
            &t,
            &data,
            AttributeInput::Signature(sig),
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::Validation(_)));
        assert!(err.is_validation());
    }

    #[test]
    fn table_from_bank_checks_root() {
        let bank = ModelBank::from_json(
            &serde_json::json!({
                "meta": {"root": "other", "d": 1, "c_grid": [1.0], "folds": 2,
                          "seed": 0, "annotation_mode": "per-class"},
                "skipped": [],
                "classifiers": []
            })
            .to_string(),
        )
        .unwrap();
        let t = Taxonomy::from_parts(
            vec![node("root", NodeKind::Internal), node("a", NodeKind::Seen)],
            vec![("root".into(), "a".into())],
        )
        .unwrap();
        assert!(table_from_bank(&bank, &t).is_err());
    }
}
