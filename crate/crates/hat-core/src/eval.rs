//! Evaluation: balanced multi-class accuracy, ROC AUC by rank statistic, and
//! per-level precision/recall diagnostics of the attribute classifiers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::SignatureMatrix;
use crate::classifier::{ModelBank, SkipRecord};
use crate::dataset::Dataset;
use crate::taxonomy::Taxonomy;
use crate::transfer::ScoreTable;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("prediction and ground-truth lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class `{0}` has no ground-truth samples")]
    EmptyGtClass(String),
    #[error("ground truth contains class `{0}` that is not being evaluated")]
    UnknownGtClass(String),
    #[error("labels are degenerate: need at least one positive and one negative")]
    DegenerateLabels,
    #[error("score at position {0} is not finite")]
    NonFiniteScore(usize),
    #[error("no attribute ground truth available for sample `{0}`")]
    MissingAttributeGt(String),
}

/// Row-per-gt-class, column-per-predicted-class counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// row-major counts, rows = ground truth
    pub counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn count(&self, gt: &str, pred: &str) -> usize {
        let r = self.classes.iter().position(|c| c == gt).expect("gt class");
        let c = self
            .classes
            .iter()
            .position(|c| c == pred)
            .expect("pred class");
        self.counts[r * self.classes.len() + c]
    }
}

/// Balanced (class-mean) multi-class accuracy over the given class set.
///
/// Every class in `classes` must appear in the ground truth; per-class
/// accuracy is the fraction of that class's samples predicted correctly and
/// the overall value is their unweighted mean.
pub fn multiclass_accuracy(
    preds: &[String],
    gt: &[String],
    classes: &[String],
) -> Result<(f64, BTreeMap<String, f64>, ConfusionMatrix), EvalError> {
    if preds.len() != gt.len() {
        return Err(EvalError::LengthMismatch(preds.len(), gt.len()));
    }
    let index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let k = classes.len();
    let mut counts = vec![0usize; k * k];
    let mut totals = vec![0usize; k];
    for (p, g) in preds.iter().zip(gt) {
        let gi = *index
            .get(g.as_str())
            .ok_or_else(|| EvalError::UnknownGtClass(g.clone()))?;
        totals[gi] += 1;
        if let Some(&pi) = index.get(p.as_str()) {
            counts[gi * k + pi] += 1;
        }
        // predictions outside the class set count as errors but are not
        // representable in the confusion matrix columns
    }
    let mut per_class = BTreeMap::new();
    let mut sum = 0.0;
    for (i, class) in classes.iter().enumerate() {
        if totals[i] == 0 {
            return Err(EvalError::EmptyGtClass(class.clone()));
        }
        let acc = counts[i * k + i] as f64 / totals[i] as f64;
        per_class.insert(class.clone(), acc);
        sum += acc;
    }
    Ok((
        sum / k as f64,
        per_class,
        ConfusionMatrix {
            classes: classes.to_vec(),
            counts,
        },
    ))
}

/// Plain (sample-weighted) accuracy, for comparison with the balanced one.
pub fn plain_accuracy(preds: &[String], gt: &[String]) -> Result<f64, EvalError> {
    if preds.len() != gt.len() {
        return Err(EvalError::LengthMismatch(preds.len(), gt.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::LengthMismatch(0, 0));
    }
    let correct = preds.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// ROC AUC as the Mann-Whitney rank statistic with half credit for ties,
/// computed from a single sort.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // average ranks within tie groups (1-based ranks)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Mean AUC and the per-target breakdown; targets whose ground truth is
/// degenerate on the batch are excluded and listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub mean: f64,
    pub per_target: BTreeMap<String, f64>,
    pub excluded: Vec<String>,
}

/// Mean AUC of attribute predictions. `gt` is row-aligned with the score
/// table's samples and column-aligned with its targets.
pub fn mean_attribute_auc(scores: &ScoreTable, gt: &[Vec<bool>]) -> Result<AucSummary, EvalError> {
    if gt.len() != scores.n_samples() {
        return Err(EvalError::LengthMismatch(gt.len(), scores.n_samples()));
    }
    summarize_auc(scores, |col| gt.iter().map(|row| row[col]).collect())
}

/// Mean AUC of class predictions: one-vs-rest labels from the ground truth.
pub fn mean_class_auc(scores: &ScoreTable, gt: &[String]) -> Result<AucSummary, EvalError> {
    if gt.len() != scores.n_samples() {
        return Err(EvalError::LengthMismatch(gt.len(), scores.n_samples()));
    }
    summarize_auc(scores, |col| {
        let target = &scores.targets()[col];
        gt.iter().map(|g| g == target).collect()
    })
}

fn summarize_auc<F: Fn(usize) -> Vec<bool>>(
    scores: &ScoreTable,
    labels_for: F,
) -> Result<AucSummary, EvalError> {
    let mut per_target = BTreeMap::new();
    let mut excluded = Vec::new();
    for (col, target) in scores.targets().iter().enumerate() {
        let column: Vec<f64> = (0..scores.n_samples())
            .map(|r| scores.row(r)[col])
            .collect();
        match roc_auc(&column, &labels_for(col)) {
            Ok(auc) => {
                per_target.insert(target.clone(), auc);
            }
            Err(EvalError::DegenerateLabels) => excluded.push(target.clone()),
            Err(e) => return Err(e),
        }
    }
    if per_target.is_empty() {
        return Err(EvalError::DegenerateLabels);
    }
    let mean = per_target.values().sum::<f64>() / per_target.len() as f64;
    Ok(AucSummary {
        mean,
        per_target,
        excluded,
    })
}

/// Precision/recall of one hierarchy level's classifiers at threshold 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub depth: usize,
    pub n_classifiers: usize,
    /// mean over classifiers with at least one predicted positive
    pub precision: Option<f64>,
    /// mean over classifiers with at least one actual positive
    pub recall: Option<f64>,
}

/// Per-depth precision/recall of the bank's classifiers on held-out data.
/// Attribute ground truth comes from per-image labels when the dataset has
/// them, falling back to the class signature of each sample's class.
pub fn level_diagnostics(
    bank: &ModelBank,
    taxonomy: &Taxonomy,
    data: &Dataset,
    signatures: Option<&SignatureMatrix>,
) -> Result<Vec<LevelDiagnostics>, EvalError> {
    let gt = |row: usize, attribute: &str| -> Result<bool, EvalError> {
        if let Some(table) = data.image_attributes() {
            if let Some(col) = table.attr_index(attribute) {
                return Ok(table.value(row, col));
            }
        }
        if let Some(sig) = signatures {
            if let Ok(v) = sig.value(data.class_of(row), attribute) {
                return Ok(v);
            }
        }
        Err(EvalError::MissingAttributeGt(
            data.sample_id(row).to_string(),
        ))
    };

    // depth -> accumulated per-classifier precision/recall
    let mut per_depth: BTreeMap<usize, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for c in bank.classifiers() {
        let depth = taxonomy
            .depth(&c.node)
            .map_err(|_| EvalError::UnknownGtClass(c.node.clone()))?;
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for row in 0..data.len() {
            let predicted = c.score(data.row(row)).expect("dimensions validated") > 0.5;
            let actual = gt(row, &c.attribute)?;
            match (predicted, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let entry = per_depth.entry(depth).or_insert((Vec::new(), Vec::new(), 0));
        entry.2 += 1;
        if tp + fp > 0 {
            entry.0.push(tp as f64 / (tp + fp) as f64);
        }
        if tp + fn_ > 0 {
            entry.1.push(tp as f64 / (tp + fn_) as f64);
        }
    }

    Ok(per_depth
        .into_iter()
        .map(|(depth, (precisions, recalls, n))| LevelDiagnostics {
            depth,
            n_classifiers: n,
            precision: mean_opt(&precisions),
            recall: mean_opt(&recalls),
        })
        .collect())
}

fn mean_opt(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// For each target column, the `k` highest-scoring sample ids, descending;
/// score ties break by ascending sample id.
pub fn top_ranked(scores: &ScoreTable, k: usize) -> Vec<(String, Vec<String>)> {
    scores
        .targets()
        .iter()
        .enumerate()
        .map(|(col, target)| {
            let mut ranked: Vec<(f64, &String)> = (0..scores.n_samples())
                .map(|r| (scores.row(r)[col], &scores.sample_ids()[r]))
                .collect();
            ranked.sort_by(|(sa, ia), (sb, ib)| {
                sb.partial_cmp(sa).expect("finite scores").then(ia.cmp(ib))
            });
            (
                target.clone(),
                ranked.into_iter().take(k).map(|(_, id)| id.clone()).collect(),
            )
        })
        .collect()
}

/// Everything the evaluation harness reports for one prediction run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub plain_accuracy: f64,
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub confusion: ConfusionMatrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_auc: Option<AucSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribute_auc: Option<AucSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level_diagnostics: Option<Vec<LevelDiagnostics>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkipRecord>,
}

impl EvalReport {
    /// Compact fixed-width table for terminal output.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "balanced accuracy : {:.4}\nplain accuracy    : {:.4}\n",
            self.accuracy, self.plain_accuracy
        ));
        if let Some(auc) = &self.class_auc {
            out.push_str(&format!("mean class AUC    : {:.4}\n", auc.mean));
        }
        if let Some(auc) = &self.attribute_auc {
            out.push_str(&format!("mean attr AUC     : {:.4}\n", auc.mean));
        }
        out.push_str("per-class accuracy:\n");
        for (class, acc) in &self.per_class_accuracy {
            out.push_str(&format!("  {class:<24} {acc:.4}\n"));
        }
        if let Some(levels) = &self.level_diagnostics {
            out.push_str("per-level precision/recall (threshold 0.5):\n");
            for l in levels {
                let p = l.precision.map_or("-".to_string(), |v| format!("{v:.4}"));
                let r = l.recall.map_or("-".to_string(), |v| format!("{v:.4}"));
                out.push_str(&format!(
                    "  depth {:<2} n={:<4} precision={p} recall={r}\n",
                    l.depth, l.n_classifiers
                ));
            }
        }
        if !self.skipped.is_empty() {
            out.push_str(&format!("skipped pairs     : {}\n", self.skipped.len()));
        }
        out
    }
}
