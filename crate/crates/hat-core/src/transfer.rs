//! Hierarchy-guided scoring of unseen classes.
//!
//! An unseen class inherits each of its active attributes from its ancestor
//! chain: the attribute score is the mean over the ancestors at which the
//! attribute is active and a trained classifier exists, and the class score
//! is the mean of those attribute scores over the class's active attributes.
//! Batch scores can be standardized per class column, which makes scores
//! comparable across classes but requires the whole test batch up front.

use rayon::prelude::*;
use thiserror::Error;

use crate::annotation::{AnnotationError, NodeAttributeTable, SignatureMatrix};
use crate::classifier::{ModelBank, ModelError};
use crate::dataset::Dataset;
use crate::taxonomy::{Taxonomy, TaxonomyError};

#[derive(Debug, Error, PartialEq)]
pub enum TransferError {
    #[error("attribute `{attribute}` of `{class}` has no trained ancestor classifier")]
    AttributeUntransferable { class: String, attribute: String },
    #[error("class `{class}` has no transferable attribute")]
    ClassUnscorable { class: String },
    #[error("need at least 2 samples to normalize, got {0}")]
    TooFewSamples(usize),
    #[error("score table is already normalized")]
    AlreadyNormalized,
    #[error("score table has no target columns")]
    EmptyTable,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

/// Samples-by-targets score matrix. Targets are kept sorted so output files
/// and argmax tie-breaks are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    sample_ids: Vec<String>,
    targets: Vec<String>,
    values: Vec<f64>,
    normalized: bool,
}

impl ScoreTable {
    /// `values` is row-major over (sample, target) with targets already in
    /// the given order; the constructor sorts columns by target id.
    pub fn new(sample_ids: Vec<String>, targets: Vec<String>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), sample_ids.len() * targets.len());
        let mut order: Vec<usize> = (0..targets.len()).collect();
        order.sort_by(|&a, &b| targets[a].cmp(&targets[b]));
        let sorted_targets: Vec<String> = order.iter().map(|&i| targets[i].clone()).collect();
        let mut sorted_values = Vec::with_capacity(values.len());
        for row in 0..sample_ids.len() {
            for &col in &order {
                sorted_values.push(values[row * targets.len() + col]);
            }
        }
        ScoreTable {
            sample_ids,
            targets: sorted_targets,
            values: sorted_values,
            normalized: false,
        }
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let m = self.targets.len();
        &self.values[row * m..(row + 1) * m]
    }

    pub fn value(&self, row: usize, target: &str) -> Option<f64> {
        let col = self.targets.iter().position(|t| t == target)?;
        Some(self.row(row)[col])
    }

    pub fn column(&self, target: &str) -> Option<Vec<f64>> {
        let col = self.targets.iter().position(|t| t == target)?;
        Some(
            (0..self.sample_ids.len())
                .map(|r| self.values[r * self.targets.len() + col])
                .collect(),
        )
    }
}

/// Scoring context: everything needed to transfer attribute classifiers to
/// unseen classes.
pub struct HatScorer<'a> {
    bank: &'a ModelBank,
    table: &'a NodeAttributeTable,
    taxonomy: &'a Taxonomy,
}

impl<'a> HatScorer<'a> {
    pub fn new(bank: &'a ModelBank, table: &'a NodeAttributeTable, taxonomy: &'a Taxonomy) -> Self {
        HatScorer {
            bank,
            table,
            taxonomy,
        }
    }

    /// The ancestor classifiers contributing to (unseen, attribute): every
    /// ancestor at which the attribute is active and trained.
    fn transfer_sources(
        &self,
        unseen: &str,
        attribute: &str,
    ) -> Result<Vec<&'a crate::classifier::AttributeClassifier>, TransferError> {
        let mut sources = Vec::new();
        for ancestor in self.taxonomy.ancestors(unseen)? {
            if self.table.value(&ancestor, attribute)? {
                if let Some(c) = self.bank.get(&ancestor, attribute) {
                    sources.push(c);
                }
            }
        }
        Ok(sources)
    }

    /// Mean ancestor score for one active attribute of an unseen class.
    pub fn attribute_score(
        &self,
        unseen: &str,
        attribute: &str,
        x: &[f64],
    ) -> Result<f64, TransferError> {
        let sources = self.transfer_sources(unseen, attribute)?;
        if sources.is_empty() {
            return Err(TransferError::AttributeUntransferable {
                class: unseen.to_string(),
                attribute: attribute.to_string(),
            });
        }
        let mut sum = 0.0;
        for c in &sources {
            sum += c.score(x)?;
        }
        Ok(sum / sources.len() as f64)
    }

    /// Mean over the class's active attributes, skipping untransferable ones.
    pub fn class_score(
        &self,
        unseen: &str,
        active_attributes: &[String],
        x: &[f64],
    ) -> Result<f64, TransferError> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for attribute in active_attributes {
            match self.attribute_score(unseen, attribute, x) {
                Ok(s) => {
                    sum += s;
                    count += 1;
                }
                Err(TransferError::AttributeUntransferable { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        if count == 0 {
            return Err(TransferError::ClassUnscorable {
                class: unseen.to_string(),
            });
        }
        Ok(sum / count as f64)
    }
}

/// Active attributes of each unseen class that no ancestor classifier can
/// serve; these drop out of the class score. Transferability is
/// sample-independent, so this is knowable before scoring.
pub fn untransferable_attributes(
    bank: &ModelBank,
    table: &NodeAttributeTable,
    taxonomy: &Taxonomy,
    signatures: &SignatureMatrix,
    unseen: &[String],
) -> Result<Vec<(String, Vec<String>)>, TransferError> {
    let scorer = HatScorer::new(bank, table, taxonomy);
    let mut out = Vec::new();
    for class in unseen {
        let skipped: Vec<String> = signatures
            .active_attributes(class)?
            .into_iter()
            .filter(|attribute| {
                scorer
                    .transfer_sources(class, attribute)
                    .map(|s| s.is_empty())
                    .unwrap_or(true)
            })
            .collect();
        if !skipped.is_empty() {
            out.push((class.clone(), skipped));
        }
    }
    Ok(out)
}

/// Score every test sample against every unseen class. `signatures` must
/// have a row for each id in `unseen`. Transferability is sample-independent,
/// so a class with no transferable attribute fails the whole batch.
pub fn score_batch(
    bank: &ModelBank,
    table: &NodeAttributeTable,
    taxonomy: &Taxonomy,
    signatures: &SignatureMatrix,
    unseen: &[String],
    test: &Dataset,
) -> Result<ScoreTable, TransferError> {
    let scorer = HatScorer::new(bank, table, taxonomy);

    // (class, active attributes kept transferable)
    let mut columns: Vec<(String, Vec<String>)> = Vec::with_capacity(unseen.len());
    for class in unseen {
        let active = signatures.active_attributes(class)?;
        let transferable: Vec<String> = active
            .into_iter()
            .filter(|attribute| {
                scorer
                    .transfer_sources(class, attribute)
                    .map(|s| !s.is_empty())
                    .unwrap_or(false)
            })
            .collect();
        if transferable.is_empty() {
            return Err(TransferError::ClassUnscorable {
                class: class.clone(),
            });
        }
        columns.push((class.clone(), transferable));
    }

    let rows: Result<Vec<Vec<f64>>, TransferError> = (0..test.len())
        .into_par_iter()
        .map(|r| {
            let x = test.row(r);
            columns
                .iter()
                .map(|(class, attrs)| scorer.class_score(class, attrs, x))
                .collect()
        })
        .collect();
    let values: Vec<f64> = rows?.into_iter().flatten().collect();

    Ok(ScoreTable::new(
        test.sample_ids().to_vec(),
        columns.into_iter().map(|(c, _)| c).collect(),
        values,
    ))
}

/// Standardize each target column over the batch (population statistics).
/// Zero-spread columns become all-zeros.
pub fn normalize_class_scores(table: &ScoreTable) -> Result<ScoreTable, TransferError> {
    if table.normalized {
        return Err(TransferError::AlreadyNormalized);
    }
    let n = table.sample_ids.len();
    if n < 2 {
        return Err(TransferError::TooFewSamples(n));
    }
    let m = table.targets.len();
    let mut values = table.values.clone();
    for col in 0..m {
        let mean = (0..n).map(|r| values[r * m + col]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|r| {
                let d = values[r * m + col] - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        for r in 0..n {
            let v = &mut values[r * m + col];
            *v = if std == 0.0 { 0.0 } else { (*v - mean) / std };
        }
    }
    Ok(ScoreTable {
        sample_ids: table.sample_ids.clone(),
        targets: table.targets.clone(),
        values,
        normalized: true,
    })
}

/// Per-sample argmax over target columns; ties go to the lexicographically
/// smallest target id (columns are sorted, so the first maximum wins).
pub fn classify(table: &ScoreTable) -> Result<Vec<(String, String)>, TransferError> {
    if table.targets.is_empty() {
        return Err(TransferError::EmptyTable);
    }
    Ok((0..table.sample_ids.len())
        .map(|r| {
            let row = table.row(r);
            let mut best = 0;
            for (col, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = col;
                }
            }
            (
                table.sample_ids[r].clone(),
                table.targets[best].clone(),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::propagate;
    use crate::classifier::{train_model_bank, TrainConfig};
    use crate::taxonomy::{node, NodeKind};

    fn sig(rows: &[(&str, &[bool])], attrs: &[&str]) -> SignatureMatrix {
        SignatureMatrix::new(
            rows.iter().map(|(c, _)| c.to_string()).collect(),
            attrs.iter().map(|a| a.to_string()).collect(),
            rows.iter().flat_map(|(_, v)| v.iter().copied()).collect(),
        )
    }

    /// root -> {g -> {a, b, z(unseen)}, c}; 2-D features.
    fn fixture() -> (Taxonomy, Dataset, SignatureMatrix) {
        let t = Taxonomy::from_parts(
            vec![
                node("root", NodeKind::Internal),
                node("g", NodeKind::Internal),
                node("a", NodeKind::Seen),
                node("b", NodeKind::Seen),
                node("c", NodeKind::Seen),
                node("z", NodeKind::Unseen),
            ],
            vec![
                ("root".into(), "g".into()),
                ("g".into(), "a".into()),
                ("g".into(), "b".into()),
                ("root".into(), "c".into()),
                ("g".into(), "z".into()),
            ],
        )
        .unwrap();
        let mut ids = Vec::new();
        let mut feats = Vec::new();
        let mut classes = Vec::new();
        let blobs = [("a", [2.0, 0.0]), ("b", [0.0, 2.0]), ("c", [-2.0, -2.0])];
        for (class, center) in blobs {
            for i in 0..8 {
                ids.push(format!("{class}{i}"));
                feats.push(center[0] + 0.1 * (i % 3) as f64);
                feats.push(center[1] - 0.1 * (i % 2) as f64);
                classes.push(class.to_string());
            }
        }
        let data = Dataset::new(ids, feats, 2, classes).unwrap();
        // m3 is active only outside z's subtree (at c); m4 is declared by
        // the unseen class but active for no seen class.
        let s = sig(
            &[
                ("a", &[true, true, false, false]),
                ("b", &[true, false, false, false]),
                ("c", &[false, true, true, false]),
                ("z", &[true, true, true, true]),
            ],
            &["m1", "m2", "m3", "m4"],
        );
        (t, data, s)
    }

    #[test]
    fn attribute_score_is_mean_of_matching_ancestors() {
        let (t, data, s) = fixture();
        let table = propagate(&t, &s).unwrap();
        let config = TrainConfig {
            folds: 2,
            ..TrainConfig::default()
        };
        let bank = train_model_bank(&t, &table, &s, &data, &config).unwrap();
        let scorer = HatScorer::new(&bank, &table, &t);

        let x = [1.0, 1.0];
        // m1 is active at root and g; score must average exactly those two.
        let mut expected = Vec::new();
        for n in ["root", "g"] {
            if let Some(c) = bank.get(n, "m1") {
                expected.push(c.score(&x).unwrap());
            }
        }
        let got = scorer.attribute_score("z", "m1", &x).unwrap();
        let mean = expected.iter().sum::<f64>() / expected.len() as f64;
        assert!((got - mean).abs() < 1e-12);
        assert!(got >= expected.iter().cloned().fold(f64::INFINITY, f64::min));
        assert!(got <= expected.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn class_score_is_mean_over_active_attributes() {
        let (t, data, s) = fixture();
        let table = propagate(&t, &s).unwrap();
        let config = TrainConfig {
            folds: 2,
            ..TrainConfig::default()
        };
        let bank = train_model_bank(&t, &table, &s, &data, &config).unwrap();
        let scorer = HatScorer::new(&bank, &table, &t);
        let x = [0.5, -0.5];
        let active = s.active_attributes("z").unwrap();
        let per_attr: Vec<f64> = active
            .iter()
            .filter_map(|m| scorer.attribute_score("z", m, &x).ok())
            .collect();
        let got = scorer.class_score("z", &active, &x).unwrap();
        let mean = per_attr.iter().sum::<f64>() / per_attr.len() as f64;
        assert!((got - mean).abs() < 1e-12, "untransferable attributes are skipped");
    }

    #[test]
    fn untransferable_attribute_errors() {
        let (t, data, s) = fixture();
        let table = propagate(&t, &s).unwrap();
        let config = TrainConfig {
            folds: 2,
            ..TrainConfig::default()
        };
        let bank = train_model_bank(&t, &table, &s, &data, &config).unwrap();
        let scorer = HatScorer::new(&bank, &table, &t);
        // m4 is absent from every seen class, so no ancestor ever trained it.
        let err = scorer.attribute_score("z", "m4", &[0.0, 0.0]).unwrap_err();
        assert_eq!(
            err,
            TransferError::AttributeUntransferable {
                class: "z".into(),
                attribute: "m4".into()
            }
        );
        // class score still works: the untransferable attribute is skipped
        let active = s.active_attributes("z").unwrap();
        assert!(scorer.class_score("z", &active, &[0.0, 0.0]).is_ok());
        // an attribute unknown to the table is an annotation error instead
        let err = scorer.attribute_score("z", "m9", &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, TransferError::Annotation(_)));
    }

    #[test]
    fn untransferable_report_names_orphan_attributes() {
        let (t, data, s) = fixture();
        let table = propagate(&t, &s).unwrap();
        let config = TrainConfig {
            folds: 2,
            ..TrainConfig::default()
        };
        let bank = train_model_bank(&t, &table, &s, &data, &config).unwrap();
        let skips =
            untransferable_attributes(&bank, &table, &t, &s, &["z".to_string()]).unwrap();
        assert_eq!(skips, vec![("z".to_string(), vec!["m4".to_string()])]);
    }

    #[test]
    fn batch_matches_per_sample_loop_and_is_deterministic() {
        let (t, data, s) = fixture();
        let table = propagate(&t, &s).unwrap();
        let config = TrainConfig {
            folds: 2,
            ..TrainConfig::default()
        };
        let bank = train_model_bank(&t, &table, &s, &data, &config).unwrap();
        let test = Dataset::new(
            vec!["t0".into(), "t1".into(), "t2".into()],
            vec![2.0, 0.1, 0.0, 2.0, 2.0, 0.1],
            2,
            vec!["z".into(), "z".into(), "z".into()],
        )
        .unwrap();
        let unseen = vec!["z".to_string()];
        let batch = score_batch(&bank, &table, &t, &s, &unseen, &test).unwrap();
        let scorer = HatScorer::new(&bank, &table, &t);
        let active = s.active_attributes("z").unwrap();
        for r in 0..test.len() {
            let expected = scorer.class_score("z", &active, test.row(r)).unwrap();
            assert_eq!(batch.value(r, "z").unwrap(), expected);
        }
        // duplicate feature rows produce duplicate score rows
        assert_eq!(batch.value(0, "z"), batch.value(2, "z"));
    }

    #[test]
    fn class_score_invariant_under_attribute_permutation() {
        let (t, data, s) = fixture();
        let table = propagate(&t, &s).unwrap();
        let config = TrainConfig {
            folds: 2,
            ..TrainConfig::default()
        };
        let bank = train_model_bank(&t, &table, &s, &data, &config).unwrap();
        let scorer = HatScorer::new(&bank, &table, &t);
        let x = [1.5, -0.25];
        let active = s.active_attributes("z").unwrap();
        let mut shuffled = active.clone();
        shuffled.reverse();
        assert_eq!(
            scorer.class_score("z", &active, &x).unwrap(),
            scorer.class_score("z", &shuffled, &x).unwrap()
        );
    }

    #[test]
    fn attribute_score_ignores_inactive_ancestors() {
        let (t, data, s) = fixture();
        let table = propagate(&t, &s).unwrap();
        let config = TrainConfig {
            folds: 2,
            ..TrainConfig::default()
        };
        let bank = train_model_bank(&t, &table, &s, &data, &config).unwrap();
        let scorer = HatScorer::new(&bank, &table, &t);
        let x = [0.3, 0.9];
        let before = scorer.attribute_score("z", "m3", &x).unwrap();

        // m3 is inactive at g (no seen leaf under g carries it); graft a
        // bogus classifier for (g, m3) into the bank and verify the ancestor
        // average still skips the pair because the table says inactive.
        let mut doc: serde_json::Value = serde_json::from_str(&bank.to_json()).unwrap();
        assert!(!table.value("g", "m3").unwrap());
        doc["classifiers"].as_array_mut().unwrap().push(serde_json::json!({
            "node": "g", "attr": "m3", "scheme": "child-vs-parent",
            "cost": 1.0, "bias": 50.0, "weights": [9.0, -9.0]
        }));
        let perturbed = crate::classifier::ModelBank::from_json(&doc.to_string()).unwrap();
        let scorer2 = HatScorer::new(&perturbed, &table, &t);
        assert_eq!(scorer2.attribute_score("z", "m3", &x).unwrap(), before);
    }

    #[test]
    fn normalization_standardizes_columns() {
        let table = ScoreTable::new(
            vec!["s0".into(), "s1".into()],
            vec!["b".into(), "a".into()],
            vec![0.0, 5.0, 1.0, 5.0],
        );
        // columns sorted: a first
        assert_eq!(table.targets(), &["a", "b"]);
        let norm = normalize_class_scores(&table).unwrap();
        assert_eq!(norm.column("b").unwrap(), vec![-1.0, 1.0]);
        assert_eq!(norm.column("a").unwrap(), vec![0.0, 0.0], "constant column zeroed");
        assert!(norm.is_normalized());
        assert_eq!(
            normalize_class_scores(&norm).unwrap_err(),
            TransferError::AlreadyNormalized
        );
    }

    #[test]
    fn normalization_needs_two_samples() {
        let table = ScoreTable::new(vec!["s0".into()], vec!["a".into()], vec![1.0]);
        assert_eq!(
            normalize_class_scores(&table).unwrap_err(),
            TransferError::TooFewSamples(1)
        );
    }

    #[test]
    fn classify_breaks_ties_lexicographically() {
        let table = ScoreTable::new(
            vec!["s0".into(), "s1".into()],
            vec!["b".into(), "a".into()],
            vec![0.9, 0.1, 0.4, 0.4],
        );
        let preds = classify(&table).unwrap();
        assert_eq!(preds[0], ("s0".to_string(), "b".to_string()));
        assert_eq!(preds[1], ("s1".to_string(), "a".to_string()), "tie -> smaller id");
    }
}
