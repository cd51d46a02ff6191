//! Attribute classifiers over the hierarchy and the model bank that holds
//! them.
//!
//! Every attribute active at the root gets a 1-vs-all classifier (the usual
//! global attribute model); every other node where the attribute is active
//! gets a child-vs-parent classifier. The regularization cost is picked per
//! classifier by stratified k-fold cross-validation with deterministic,
//! id-hash-based fold assignment.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{NodeAttributeTable, SignatureMatrix};
use crate::dataset::{AnnotationMode, Dataset};
use crate::hashutil::keyed_hash;
use crate::solver::{self, SolverError};
use crate::supportsets::{SampleSet, SupportError, SupportIndex, TrainingSets};
use crate::taxonomy::{NodeKind, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("cross-validation grid is empty")]
    EmptyGrid,
    #[error("grid cost must be positive, got {0}")]
    InvalidGridValue(f64),
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("too few samples for {folds} stratified folds ({positives} positives, {negatives} negatives)")]
    FallbackCost {
        folds: usize,
        positives: usize,
        negatives: usize,
    },
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Annotation(#[from] crate::annotation::AnnotationError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("input has dimension {got}, classifier expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// How a classifier's training sets were formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    OneVsAll,
    ChildVsParent,
}

/// A linear attribute scorer attached to one (node, attribute) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeClassifier {
    pub node: String,
    #[serde(rename = "attr")]
    pub attribute: String,
    pub scheme: Scheme,
    pub cost: f64,
    pub bias: f64,
    pub weights: Vec<f64>,
}

impl AttributeClassifier {
    /// Probability-like attribute score: sigmoid of the decision value.
    pub fn score(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.weights.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(solver::sigmoid(solver::decision(&self.weights, self.bias, x)))
    }
}

/// Why a (node, attribute) pair produced no classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    /// Parent support equals child support; nothing to contrast against.
    NoContrast,
    /// The attribute is active but no positively labeled sample exists.
    EmptyPositives,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub node: String,
    #[serde(rename = "attr")]
    pub attribute: String,
    pub reason: SkipReason,
}

/// Training configuration; the snapshot stored in the bank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub c_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub annotation_mode: AnnotationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c_grid: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            folds: 5,
            seed: 0,
            annotation_mode: AnnotationMode::PerClass,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BankMeta {
    root: String,
    #[serde(rename = "d")]
    dim: usize,
    #[serde(flatten)]
    config: TrainConfig,
}

/// All trained classifiers keyed by (node, attribute), plus the skip report.
#[derive(Debug, Clone)]
pub struct ModelBank {
    root: String,
    dim: usize,
    config: TrainConfig,
    classifiers: BTreeMap<(String, String), AttributeClassifier>,
    skipped: Vec<SkipRecord>,
}

impl ModelBank {
    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.classifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classifiers.is_empty()
    }

    pub fn get(&self, node: &str, attribute: &str) -> Option<&AttributeClassifier> {
        self.classifiers
            .get(&(node.to_string(), attribute.to_string()))
    }

    pub fn classifiers(&self) -> impl Iterator<Item = &AttributeClassifier> {
        self.classifiers.values()
    }

    pub fn skipped(&self) -> &[SkipRecord] {
        &self.skipped
    }

    /// Attributes for which a root (global) classifier exists.
    pub fn root_attributes(&self) -> Vec<String> {
        self.classifiers
            .values()
            .filter(|c| c.node == self.root)
            .map(|c| c.attribute.clone())
            .collect()
    }

    /// Attributes that were active at `node` during training: both trained
    /// pairs and skipped pairs count. This reconstructs the node's activation
    /// row without needing the training annotations.
    pub fn active_attributes_at(&self, node: &str) -> Vec<String> {
        let mut attrs: Vec<String> = self
            .classifiers
            .values()
            .filter(|c| c.node == node)
            .map(|c| c.attribute.clone())
            .chain(
                self.skipped
                    .iter()
                    .filter(|s| s.node == node)
                    .map(|s| s.attribute.clone()),
            )
            .collect();
        attrs.sort();
        attrs.dedup();
        attrs
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            meta: BankMeta,
            skipped: &'a [SkipRecord],
            classifiers: Vec<&'a AttributeClassifier>,
        }
        serde_json::to_string_pretty(&Doc {
            meta: BankMeta {
                root: self.root.clone(),
                dim: self.dim,
                config: self.config.clone(),
            },
            skipped: &self.skipped,
            classifiers: self.classifiers.values().collect(),
        })
        .expect("bank serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, crate::ingestion::IngestError> {
        #[derive(Deserialize)]
        struct Doc {
            meta: BankMeta,
            skipped: Vec<SkipRecord>,
            classifiers: Vec<AttributeClassifier>,
        }
        let doc: Doc = serde_json::from_str(text)
            .map_err(|e| crate::ingestion::IngestError::Parse(format!("model bank: {e}")))?;
        let mut classifiers = BTreeMap::new();
        for c in doc.classifiers {
            if c.weights.len() != doc.meta.dim {
                return Err(crate::ingestion::IngestError::Schema(format!(
                    "classifier ({}, {}) has {} weights, bank dimension is {}",
                    c.node,
                    c.attribute,
                    c.weights.len(),
                    doc.meta.dim
                )));
            }
            classifiers.insert((c.node.clone(), c.attribute.clone()), c);
        }
        Ok(ModelBank {
            root: doc.meta.root,
            dim: doc.meta.dim,
            config: doc.meta.config,
            skipped: doc.skipped,
            classifiers,
        })
    }
}

/// Deterministic stratified fold assignment: within one stratum, samples are
/// ranked by a stable hash of (seed, sample id) and dealt round-robin, so
/// every fold receives an equal share regardless of iteration order.
pub fn assign_folds(
    stratum: &SampleSet,
    data: &Dataset,
    seed: u64,
    folds: usize,
) -> BTreeMap<usize, usize> {
    let mut keyed: Vec<(u64, &str, usize)> = stratum
        .iter()
        .map(|&row| {
            let id = data.sample_id(row);
            (keyed_hash(seed, &["fold", id]), id, row)
        })
        .collect();
    keyed.sort();
    keyed
        .into_iter()
        .enumerate()
        .map(|(rank, (_, _, row))| (row, rank % folds))
        .collect()
}

fn rows_for<'d>(data: &'d Dataset, set: &SampleSet) -> Vec<&'d [f64]> {
    set.iter().map(|&r| data.row(r)).collect()
}

/// Gradient tolerance and iteration cap for cross-validation fold models;
/// fold accuracy has granularity 1/|fold|, so these are deliberately looser
/// than the final-fit settings.
pub const CV_GRAD_TOL: f64 = 1e-4;
pub const CV_MAX_ITERS: usize = 1000;

/// Pick the grid cost maximizing mean validation accuracy over stratified
/// folds; ties go to the smaller cost.
pub fn select_cost(
    data: &Dataset,
    sets: &TrainingSets,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    if grid.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    if let Some(&bad) = grid.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
        return Err(TrainError::InvalidGridValue(bad));
    }
    if folds < 2 {
        return Err(TrainError::TooFewFolds(folds));
    }
    if sets.positives.len() < folds || sets.negatives.len() < folds {
        return Err(TrainError::FallbackCost {
            folds,
            positives: sets.positives.len(),
            negatives: sets.negatives.len(),
        });
    }

    let pos_fold = assign_folds(&sets.positives, data, seed, folds);
    let neg_fold = assign_folds(&sets.negatives, data, seed, folds);

    let mut sorted_grid = grid.to_vec();
    sorted_grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));

    let mut best: Option<(f64, f64)> = None; // (mean accuracy, cost)
    for &cost in &sorted_grid {
        let mut acc_sum = 0.0;
        for k in 0..folds {
            let split = |assign: &BTreeMap<usize, usize>| {
                let mut train = SampleSet::new();
                let mut validate = SampleSet::new();
                for (&row, &fold) in assign {
                    if fold == k {
                        validate.insert(row);
                    } else {
                        train.insert(row);
                    }
                }
                (train, validate)
            };
            let (train_pos, val_pos) = split(&pos_fold);
            let (train_neg, val_neg) = split(&neg_fold);
            let out = solver::fit_with_tolerance(
                &rows_for(data, &train_pos),
                &rows_for(data, &train_neg),
                cost,
                CV_GRAD_TOL,
                CV_MAX_ITERS,
            )?;
            let correct = val_pos
                .iter()
                .filter(|&&r| solver::decision(&out.weights, out.bias, data.row(r)) > 0.0)
                .count()
                + val_neg
                    .iter()
                    .filter(|&&r| solver::decision(&out.weights, out.bias, data.row(r)) <= 0.0)
                    .count();
            acc_sum += correct as f64 / (val_pos.len() + val_neg.len()) as f64;
        }
        let mean_acc = acc_sum / folds as f64;
        if best.map(|(a, _)| mean_acc > a).unwrap_or(true) {
            best = Some((mean_acc, cost));
        }
    }
    Ok(best.expect("grid nonempty").1)
}

/// Cost used when a pair has too few samples for cross-validation.
pub const FALLBACK_COST: f64 = 1.0;

fn fit_pair(
    data: &Dataset,
    sets: &TrainingSets,
    config: &TrainConfig,
    node: &str,
    attribute: &str,
    scheme: Scheme,
) -> Result<AttributeClassifier, TrainError> {
    let cost = match select_cost(data, sets, &config.c_grid, config.folds, config.seed) {
        Ok(c) => c,
        Err(TrainError::FallbackCost { .. }) => FALLBACK_COST,
        Err(e) => return Err(e),
    };
    let out = solver::fit(
        &rows_for(data, &sets.positives),
        &rows_for(data, &sets.negatives),
        cost,
    )?;
    Ok(AttributeClassifier {
        node: node.to_string(),
        attribute: attribute.to_string(),
        scheme,
        cost,
        bias: out.bias,
        weights: out.weights,
    })
}

/// Train the full bank: 1-vs-all at the root, child-vs-parent everywhere
/// else the attribute is active. Pairs without contrast or positives are
/// recorded in the skip report instead of failing the run.
///
/// Distinct pairs train in parallel; the result is merged in key order and
/// is byte-stable across worker counts.
pub fn train_model_bank(
    t: &Taxonomy,
    table: &NodeAttributeTable,
    sig: &SignatureMatrix,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<ModelBank, TrainError> {
    let index = SupportIndex::build(t, table, data, sig, config.annotation_mode)?;

    let mut tasks: Vec<(String, String, Scheme)> = Vec::new();
    for attribute in table.active_attributes(t.root())? {
        tasks.push((t.root().to_string(), attribute, Scheme::OneVsAll));
    }
    for node in t.node_ids() {
        if node == t.root() || t.kind(node)? == NodeKind::Unseen {
            // Unseen leaves have no training samples by definition.
            continue;
        }
        for attribute in table.active_attributes(node)? {
            tasks.push((node.to_string(), attribute, Scheme::ChildVsParent));
        }
    }

    let results: Vec<Result<Result<AttributeClassifier, SkipRecord>, TrainError>> = tasks
        .par_iter()
        .map(|(node, attribute, scheme)| {
            let sets = match *scheme {
                Scheme::OneVsAll => index.root_training_sets(attribute),
                Scheme::ChildVsParent => index.training_sets(node, attribute),
            };
            let sets = match sets {
                Ok(s) => s,
                Err(SupportError::NoContrast { .. }) => {
                    return Ok(Err(SkipRecord {
                        node: node.clone(),
                        attribute: attribute.clone(),
                        reason: SkipReason::NoContrast,
                    }))
                }
                Err(SupportError::EmptyPositives { .. }) => {
                    return Ok(Err(SkipRecord {
                        node: node.clone(),
                        attribute: attribute.clone(),
                        reason: SkipReason::EmptyPositives,
                    }))
                }
                Err(e) => return Err(e.into()),
            };
            Ok(Ok(fit_pair(data, &sets, config, node, attribute, *scheme)?))
        })
        .collect();

    let mut classifiers = BTreeMap::new();
    let mut skipped = Vec::new();
    for result in results {
        match result? {
            Ok(c) => {
                classifiers.insert((c.node.clone(), c.attribute.clone()), c);
            }
            Err(skip) => skipped.push(skip),
        }
    }
    skipped.sort_by(|a, b| (&a.node, &a.attribute).cmp(&(&b.node, &b.attribute)));

    Ok(ModelBank {
        root: t.root().to_string(),
        dim: data.dim(),
        config: config.clone(),
        classifiers,
        skipped,
    })
}
