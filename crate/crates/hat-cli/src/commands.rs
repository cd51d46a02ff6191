//! Command implementations: merge flags with the optional config file, load
//! inputs, call into the core pipelines, write outputs.

use std::path::{Path, PathBuf};

use hat_core::classifier::TrainConfig;
use hat_core::dataset::{AnnotationMode, Dataset};
use hat_core::eval::ConfusionMatrix;
use hat_core::ingestion::{self, FeatureFormat};
use hat_core::pipeline::{
    self, AttributeInput, EvalExtras, PipelineError, SignatureSource,
};
use hat_core::synth::SynthSpec;
use serde::de::DeserializeOwned;

use crate::args::{
    AttrMode, AttrValues, BenchArgs, EvalArgs, Format, PredictArgs, PropagateArgs, SweepArgs,
    SynthArgs, SynthSpecArgs, TrainArgs,
};

pub type CmdResult = Result<(), PipelineError>;

fn validation(msg: impl Into<String>) -> PipelineError {
    PipelineError::Validation(msg.into())
}

/// The parsed `--config` JSON object, `{}` when absent.
fn load_config(path: &Option<PathBuf>) -> Result<serde_json::Value, PipelineError> {
    match path {
        None => Ok(serde_json::Value::Object(Default::default())),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(ingestion::IngestError::Io)?;
            serde_json::from_str(&text)
                .map_err(|e| validation(format!("config {}: {e}", p.display())))
        }
    }
}

fn cfg_get<T: DeserializeOwned>(
    cfg: &serde_json::Value,
    key: &str,
) -> Result<Option<T>, PipelineError> {
    match cfg.get(key) {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| validation(format!("config key `{key}`: {e}"))),
    }
}

/// Flag wins, then config file, then the given default.
macro_rules! resolve {
    ($args:expr, $cfg:expr, $field:ident) => {
        match $args.$field.clone() {
            Some(v) => Some(v),
            None => cfg_get(&$cfg, stringify!($field))?,
        }
    };
    ($args:expr, $cfg:expr, $field:ident, required) => {
        resolve!($args, $cfg, $field).ok_or_else(|| {
            validation(format!(
                "missing --{} (flag or config key)",
                stringify!($field).replace('_', "-")
            ))
        })?
    };
    ($args:expr, $cfg:expr, $field:ident, flag) => {
        $args.$field || cfg_get::<bool>(&$cfg, stringify!($field))?.unwrap_or(false)
    };
}

fn ensure_out_dir(out: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out).map_err(ingestion::IngestError::Io)?;
    Ok(())
}

fn load_data(
    features: &Path,
    format: FeatureFormat,
    labels: &Path,
    image_attrs: Option<&Path>,
    l2: bool,
) -> Result<Dataset, PipelineError> {
    Ok(ingestion::load_dataset(
        features,
        format,
        labels,
        image_attrs,
        l2,
    )?)
}

/// Class-attribute input per the declared cell interpretation.
fn load_class_attributes(
    path: &Path,
    values: AttrValues,
) -> Result<AttributeInput, PipelineError> {
    Ok(match values {
        AttrValues::Binary => AttributeInput::Signature(ingestion::load_signature_csv(path)?),
        AttrValues::Occurrence => {
            AttributeInput::Occurrence(ingestion::load_occurrence_csv(path)?)
        }
    })
}

fn save_confusion_csv(path: &Path, confusion: &ConfusionMatrix) -> Result<(), PipelineError> {
    let mut out = String::from("gt\\pred");
    for c in &confusion.classes {
        out.push_str(&format!(",{c}"));
    }
    out.push('\n');
    let k = confusion.classes.len();
    for (i, gt) in confusion.classes.iter().enumerate() {
        out.push_str(gt);
        for j in 0..k {
            out.push_str(&format!(",{}", confusion.counts[i * k + j]));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(ingestion::IngestError::Io)?;
    Ok(())
}

// ------------------------------------------------------------------- train

pub fn run_train(args: TrainArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let taxonomy_path = resolve!(args, cfg, taxonomy, required);
    let features = resolve!(args, cfg, features, required);
    let labels = resolve!(args, cfg, labels, required);
    let attributes = resolve!(args, cfg, attributes, required);
    let out = resolve!(args, cfg, out, required);
    let format: FeatureFormat = resolve!(args, cfg, feature_format)
        .unwrap_or(Format::Csv)
        .into();
    let attr_mode = resolve!(args, cfg, attr_mode).unwrap_or(AttrMode::PerClass);
    let attr_values = resolve!(args, cfg, attr_values).unwrap_or(AttrValues::Binary);
    let l2 = resolve!(args, cfg, l2_normalize, flag);
    let split = resolve!(args, cfg, split);
    let workers = resolve!(args, cfg, workers);

    let mut config = TrainConfig {
        annotation_mode: AnnotationMode::from(attr_mode),
        ..TrainConfig::default()
    };
    if let Some(grid) = resolve!(args, cfg, c_grid) {
        config.c_grid = grid;
    }
    if let Some(folds) = resolve!(args, cfg, folds) {
        config.folds = folds;
    }
    if let Some(seed) = resolve!(args, cfg, seed) {
        config.seed = seed;
    }

    let mut taxonomy = ingestion::load_taxonomy(&taxonomy_path)?;
    let per_image = attr_mode == AttrMode::PerImage;
    let data = load_data(
        &features,
        format,
        &labels,
        per_image.then_some(attributes.as_path()),
        l2,
    )?;
    if let Some(split_path) = split {
        let split = ingestion::load_split(&split_path)?;
        taxonomy = pipeline::apply_split_spec(&taxonomy, &split, &data.distinct_classes())?;
    }
    let attrs = if per_image {
        AttributeInput::PerImage
    } else {
        load_class_attributes(&attributes, attr_values)?
    };

    let dump_support_sizes = resolve!(args, cfg, dump_support_sizes, flag);
    let model = pipeline::with_workers(workers, || pipeline::train(&taxonomy, &data, attrs, &config))?;

    ensure_out_dir(&out)?;
    ingestion::save_model_bank(&out.join("bank.json"), &model.bank)?;
    ingestion::save_node_table_csv(&out.join("node_table.csv"), &model.table)?;
    ingestion::save_signature_csv(&out.join("signatures_used.csv"), &model.signatures)?;
    if dump_support_sizes {
        let index = hat_core::supportsets::SupportIndex::build(
            &model.taxonomy,
            &model.table,
            &data,
            &model.signatures,
            config.annotation_mode,
        )?;
        ingestion::save_support_sizes_csv(
            &out.join("support_sizes.csv"),
            &index.support_sizes(),
        )?;
    }
    eprintln!(
        "trained {} classifiers over {} nodes ({} pairs skipped) -> {}",
        model.bank.len(),
        model.taxonomy.len(),
        model.bank.skipped().len(),
        out.join("bank.json").display()
    );
    Ok(())
}

// ----------------------------------------------------------------- predict

pub fn run_predict(args: PredictArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let bank_path = resolve!(args, cfg, bank, required);
    let taxonomy_path = resolve!(args, cfg, taxonomy, required);
    let features = resolve!(args, cfg, features, required);
    let labels = resolve!(args, cfg, labels, required);
    let out = resolve!(args, cfg, out, required);
    let format: FeatureFormat = resolve!(args, cfg, feature_format)
        .unwrap_or(Format::Csv)
        .into();
    let attr_values = resolve!(args, cfg, attr_values).unwrap_or(AttrValues::Binary);
    let method = resolve!(args, cfg, method).map(Into::into).unwrap_or(pipeline::Method::Hat);
    let no_normalize = resolve!(args, cfg, no_normalize, flag);
    let fallback = resolve!(args, cfg, fallback_parent, flag);
    let l2 = resolve!(args, cfg, l2_normalize, flag);
    let workers = resolve!(args, cfg, workers);
    let attributes = resolve!(args, cfg, attributes);
    let split = resolve!(args, cfg, split);

    let bank = ingestion::load_model_bank(&bank_path)?;
    let mut taxonomy = ingestion::load_taxonomy(&taxonomy_path)?;
    if let Some(split_path) = split {
        let split = ingestion::load_split(&split_path)?;
        split.validate()?;
        taxonomy = taxonomy.apply_split(&split.seen, &split.unseen)?;
    }
    let data = load_data(&features, format, &labels, None, l2)?;

    let source = if fallback {
        SignatureSource::ParentFallback
    } else {
        let path = attributes.ok_or_else(|| {
            validation("--attributes is required unless --fallback-parent is set")
        })?;
        match load_class_attributes(&path, attr_values)? {
            AttributeInput::Signature(sig) => SignatureSource::Declared(sig),
            AttributeInput::Occurrence(occ) => SignatureSource::Declared(
                hat_core::annotation::binarize_occurrence(&occ)?,
            ),
            AttributeInput::PerImage => unreachable!("load_class_attributes is class-level"),
        }
    };

    let prediction = pipeline::with_workers(workers, || {
        pipeline::predict(&bank, &taxonomy, &data, source, method, no_normalize)
    })?;

    ensure_out_dir(&out)?;
    let path = out.join("predictions.csv");
    ingestion::save_predictions(&path, &prediction.predictions, &prediction.scores)?;
    if !prediction.dropped_attributes.is_empty() {
        eprintln!(
            "warning: {} declared attribute(s) unknown to the bank were dropped: {}",
            prediction.dropped_attributes.len(),
            prediction.dropped_attributes.join(", ")
        );
    }
    for (class, attrs) in &prediction.skipped_transfers {
        eprintln!(
            "note: class `{class}`: no ancestor classifier for {}; skipped in its score",
            attrs.join(", ")
        );
    }
    eprintln!(
        "scored {} samples against {} classes with {} ({}normalized) -> {}",
        prediction.scores.n_samples(),
        prediction.scores.targets().len(),
        method,
        if prediction.normalized { "" } else { "un" },
        path.display()
    );
    Ok(())
}

// -------------------------------------------------------------------- eval

pub fn run_eval(args: EvalArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let predictions_path = resolve!(args, cfg, predictions, required);
    let labels_path = resolve!(args, cfg, labels, required);
    let out = resolve!(args, cfg, out, required);
    let bank_path = resolve!(args, cfg, bank);
    let taxonomy_path = resolve!(args, cfg, taxonomy);
    let features = resolve!(args, cfg, features);
    let format: FeatureFormat = resolve!(args, cfg, feature_format)
        .unwrap_or(Format::Csv)
        .into();
    let attributes = resolve!(args, cfg, attributes);
    let attr_mode = resolve!(args, cfg, attr_mode).unwrap_or(AttrMode::PerClass);
    let l2 = resolve!(args, cfg, l2_normalize, flag);

    let (predictions, scores) = ingestion::load_predictions(&predictions_path)?;
    let gt = ingestion::load_labels_csv(&labels_path)?;

    let bank = bank_path.map(|p| ingestion::load_model_bank(&p)).transpose()?;
    let taxonomy = taxonomy_path
        .map(|p| Ok::<_, PipelineError>(ingestion::load_taxonomy(&p)?.prune_single_child()))
        .transpose()?;
    let per_image = attr_mode == AttrMode::PerImage;
    let image_attr_path = if per_image {
        Some(attributes.as_deref().ok_or_else(|| {
            validation("--attributes is required with --attr-mode per-image")
        })?)
    } else {
        None
    };
    let data = features
        .map(|f| load_data(&f, format, &labels_path, image_attr_path, l2))
        .transpose()?;
    let signatures = if per_image {
        None
    } else {
        attributes
            .as_deref()
            .map(ingestion::load_signature_csv)
            .transpose()?
    };

    let extras = EvalExtras {
        bank: bank.as_ref(),
        taxonomy: taxonomy.as_ref(),
        data: data.as_ref(),
        signatures: signatures.as_ref(),
    };
    let report = pipeline::evaluate(&predictions, &scores, &gt, &extras)?;

    ensure_out_dir(&out)?;
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(ingestion::IngestError::Io)?;
    save_confusion_csv(&out.join("confusion.csv"), &report.confusion)?;
    print!("{}", report.render_text());
    Ok(())
}

// ------------------------------------------------------- synth-backed runs

fn resolve_spec(args: &SynthSpecArgs, cfg: &serde_json::Value) -> Result<SynthSpec, PipelineError> {
    let mut spec = SynthSpec::default();
    if let Some(v) = resolve!(args, cfg, depth) {
        spec.depth = v;
    }
    if let Some(v) = resolve!(args, cfg, branching) {
        spec.branching = v;
    }
    if let Some(v) = resolve!(args, cfg, feature_dim) {
        spec.feature_dim = v;
    }
    if let Some(v) = resolve!(args, cfg, n_attributes) {
        spec.n_attributes = v;
    }
    if let Some(v) = resolve!(args, cfg, samples_per_class) {
        spec.samples_per_class = v;
    }
    if let Some(v) = resolve!(args, cfg, subtree_shift_scale) {
        spec.subtree_shift_scale = v;
    }
    if let Some(v) = resolve!(args, cfg, noise_sigma) {
        spec.noise_sigma = v;
    }
    if let Some(v) = resolve!(args, cfg, unseen_fraction) {
        spec.unseen_fraction = v;
    }
    if let Some(v) = resolve!(args, cfg, seed) {
        spec.seed = v;
    }
    Ok(spec)
}

pub fn run_bench(args: BenchArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let out = resolve!(args, cfg, out, required);
    let workers = resolve!(args, cfg, workers);
    let spec = resolve_spec(&args.spec, &cfg)?;
    ensure_out_dir(&out)?;
    let report = pipeline::bench_run(&spec, &out, workers)?;
    print!("{}", report.render_text());
    Ok(())
}

pub fn run_sweep(args: SweepArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let out = resolve!(args, cfg, out, required);
    let sizes = resolve!(args, cfg, sizes, required);
    let repeats = resolve!(args, cfg, repeats).unwrap_or(2);
    let sweep_seed = resolve!(args, cfg, sweep_seed).unwrap_or(0);
    let workers = resolve!(args, cfg, workers);
    let spec = resolve_spec(&args.spec, &cfg)?;
    let report = pipeline::sweep_run(&spec, &sizes, repeats, sweep_seed, &out, workers)?;
    println!("method  size  n_unseen  accuracy  mean_class_auc");
    for row in &report.rows {
        println!(
            "{:<7} {:>4}  {:>8}  {:>8.4}  {:>8.4}",
            row.method, row.source_size, row.n_unseen, row.accuracy, row.mean_class_auc
        );
    }
    Ok(())
}

pub fn run_synth(args: SynthArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let out = resolve!(args, cfg, out, required);
    let format: FeatureFormat = resolve!(args, cfg, feature_format)
        .unwrap_or(Format::Csv)
        .into();
    let spec = resolve_spec(&args.spec, &cfg)?;
    let dir = pipeline::synth_write(&spec, &out, format)?;
    eprintln!("wrote benchmark files to {}", dir.display());
    Ok(())
}

// --------------------------------------------------------------- propagate

pub fn run_propagate(args: PropagateArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let taxonomy_path = resolve!(args, cfg, taxonomy, required);
    let attributes = resolve!(args, cfg, attributes, required);
    let out = resolve!(args, cfg, out, required);
    let attr_mode = resolve!(args, cfg, attr_mode).unwrap_or(AttrMode::PerClass);
    let attr_values = resolve!(args, cfg, attr_values).unwrap_or(AttrValues::Binary);
    let split = resolve!(args, cfg, split);

    let mut taxonomy = ingestion::load_taxonomy(&taxonomy_path)?;
    let per_image = attr_mode == AttrMode::PerImage;
    let data = if per_image {
        let features = resolve!(args, cfg, features, required);
        let labels = resolve!(args, cfg, labels, required);
        let format: FeatureFormat = resolve!(args, cfg, feature_format)
            .unwrap_or(Format::Csv)
            .into();
        Some(load_data(&features, format, &labels, Some(&attributes), false)?)
    } else {
        None
    };
    if let Some(split_path) = split {
        let split = ingestion::load_split(&split_path)?;
        split.validate()?;
        taxonomy = taxonomy.apply_split(&split.seen, &split.unseen)?;
    }
    let attrs = if per_image {
        AttributeInput::PerImage
    } else {
        load_class_attributes(&attributes, attr_values)?
    };

    let (_, signatures, table) =
        pipeline::propagate_only(&taxonomy, data.as_ref(), attrs, AnnotationMode::from(attr_mode))?;

    ensure_out_dir(&out)?;
    ingestion::save_node_table_csv(&out.join("node_table.csv"), &table)?;
    ingestion::save_signature_csv(&out.join("signatures_used.csv"), &signatures)?;
    eprintln!(
        "propagated {} attributes over {} nodes -> {}",
        table.attributes().len(),
        table.nodes().len(),
        out.join("node_table.csv").display()
    );
    Ok(())
}
