//! Global-attribute baselines trained on the root's 1-vs-all classifiers.
//!
//! DAP forms a MAP-style log-posterior from the attribute probabilities with
//! flat 0.5 priors; ENS simply averages the root scores of a class's active
//! attributes (the same sum form the hierarchical class score uses, collapsed
//! to a single level).

use rayon::prelude::*;
use thiserror::Error;

use crate::annotation::{AnnotationError, SignatureMatrix};
use crate::classifier::{ModelBank, ModelError};
use crate::dataset::Dataset;
use crate::transfer::ScoreTable;

/// Attribute probabilities are clamped into this range before taking logs so
/// a saturated classifier cannot contribute an infinite term.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("no root classifier for attribute `{0}`")]
    MissingRootClassifier(String),
    #[error("class `{0}` has no active attribute")]
    NoActiveAttributes(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

/// Root (global) attribute scores for every sample: samples x attributes.
pub fn root_attribute_scores(
    bank: &ModelBank,
    data: &Dataset,
) -> Result<ScoreTable, BaselineError> {
    let attributes = bank.root_attributes();
    let classifiers: Vec<_> = attributes
        .iter()
        .map(|a| bank.get(bank.root(), a).expect("root attribute"))
        .collect();
    let rows: Result<Vec<Vec<f64>>, BaselineError> = (0..data.len())
        .into_par_iter()
        .map(|r| {
            classifiers
                .iter()
                .map(|c| c.score(data.row(r)).map_err(BaselineError::from))
                .collect()
        })
        .collect();
    Ok(ScoreTable::new(
        data.sample_ids().to_vec(),
        attributes,
        rows?.into_iter().flatten().collect(),
    ))
}

fn check_signature_coverage(
    bank: &ModelBank,
    signatures: &SignatureMatrix,
    unseen: &[String],
) -> Result<(), BaselineError> {
    let root_attrs = bank.root_attributes();
    for class in unseen {
        for attribute in signatures.active_attributes(class)? {
            if !root_attrs.contains(&attribute) {
                return Err(BaselineError::MissingRootClassifier(attribute));
            }
        }
    }
    Ok(())
}

/// DAP log-scores: sum over attributes of log p(a_m = a_m^z | x) minus the
/// flat-prior term, computed in log space with clamped probabilities.
pub fn dap_scores(
    bank: &ModelBank,
    signatures: &SignatureMatrix,
    unseen: &[String],
    test: &Dataset,
) -> Result<ScoreTable, BaselineError> {
    check_signature_coverage(bank, signatures, unseen)?;
    let attributes = bank.root_attributes();
    let classifiers: Vec<_> = attributes
        .iter()
        .map(|a| bank.get(bank.root(), a).expect("root attribute"))
        .collect();
    // a_m^z per class, aligned with `attributes`
    let mut class_rows: Vec<Vec<bool>> = Vec::with_capacity(unseen.len());
    for class in unseen {
        class_rows.push(
            attributes
                .iter()
                .map(|a| signatures.value(class, a))
                .collect::<Result<_, _>>()?,
        );
    }
    // flat prior p(a_m) = 0.5: a class-independent -M*log(0.5) offset
    let prior_term = -(attributes.len() as f64) * 0.5f64.ln();

    let rows: Result<Vec<Vec<f64>>, BaselineError> = (0..test.len())
        .into_par_iter()
        .map(|r| {
            let x = test.row(r);
            let mut log_p = Vec::with_capacity(classifiers.len());
            let mut log_not_p = Vec::with_capacity(classifiers.len());
            for c in &classifiers {
                let p = c.score(x)?.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                log_p.push(p.ln());
                log_not_p.push((1.0 - p).ln());
            }
            Ok(class_rows
                .iter()
                .map(|row| {
                    let sum: f64 = row
                        .iter()
                        .enumerate()
                        .map(|(a, &active)| if active { log_p[a] } else { log_not_p[a] })
                        .sum();
                    sum + prior_term
                })
                .collect())
        })
        .collect();

    Ok(ScoreTable::new(
        test.sample_ids().to_vec(),
        unseen.to_vec(),
        rows?.into_iter().flatten().collect(),
    ))
}

/// ENS scores: per class, the mean root score of its active attributes.
/// Active attributes without a trained root classifier (skipped for lack of
/// contrast, or never seen in training) drop out of the mean, mirroring the
/// hierarchical scorer's handling of untrained ancestors.
pub fn ens_scores(
    bank: &ModelBank,
    signatures: &SignatureMatrix,
    unseen: &[String],
    test: &Dataset,
) -> Result<ScoreTable, BaselineError> {
    let mut class_attrs: Vec<(String, Vec<&crate::classifier::AttributeClassifier>)> =
        Vec::with_capacity(unseen.len());
    for class in unseen {
        let active = signatures.active_attributes(class)?;
        let classifiers: Vec<_> = active
            .iter()
            .filter_map(|a| bank.get(bank.root(), a))
            .collect();
        if classifiers.is_empty() {
            return Err(BaselineError::NoActiveAttributes(class.clone()));
        }
        class_attrs.push((class.clone(), classifiers));
    }

    let rows: Result<Vec<Vec<f64>>, BaselineError> = (0..test.len())
        .into_par_iter()
        .map(|r| {
            let x = test.row(r);
            class_attrs
                .iter()
                .map(|(_, classifiers)| {
                    let mut sum = 0.0;
                    for c in classifiers {
                        sum += c.score(x)?;
                    }
                    Ok(sum / classifiers.len() as f64)
                })
                .collect()
        })
        .collect();

    Ok(ScoreTable::new(
        test.sample_ids().to_vec(),
        unseen.to_vec(),
        rows?.into_iter().flatten().collect(),
    ))
}
