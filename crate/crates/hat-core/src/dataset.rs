//! Feature matrices with per-sample class labels and optional per-image
//! attribute annotations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whether attribute ground truth is declared per image or per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationMode {
    PerImage,
    PerClass,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DatasetError {
    #[error("duplicate sample id `{0}`")]
    DuplicateSampleId(String),
    #[error("sample `{0}` has {1} features, expected {2}")]
    DimensionMismatch(String, usize, usize),
    #[error("sample `{0}` has a non-finite feature value")]
    NonFiniteFeature(String),
    #[error("unknown sample `{0}`")]
    UnknownSample(String),
    #[error("sample count mismatch: {0} ids vs {1} rows")]
    LengthMismatch(usize, usize),
    #[error("dataset is empty")]
    Empty,
}

/// Binary per-image attribute labels, row-aligned with a [`Dataset`].
#[derive(Debug, Clone)]
pub struct ImageAttributeTable {
    attributes: Vec<String>,
    attr_index: BTreeMap<String, usize>,
    values: Vec<bool>,
}

impl ImageAttributeTable {
    pub fn new(attributes: Vec<String>, values: Vec<bool>, n_samples: usize) -> Self {
        assert_eq!(values.len(), attributes.len() * n_samples);
        let attr_index = attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        ImageAttributeTable {
            attributes,
            attr_index,
            values,
        }
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn attr_index(&self, attribute: &str) -> Option<usize> {
        self.attr_index.get(attribute).copied()
    }

    pub fn value(&self, sample_row: usize, attr_col: usize) -> bool {
        self.values[sample_row * self.attributes.len() + attr_col]
    }
}

/// An immutable feature matrix (row per sample) plus per-sample class ids.
#[derive(Debug, Clone)]
pub struct Dataset {
    sample_ids: Vec<String>,
    index: BTreeMap<String, usize>,
    features: Vec<f64>,
    dim: usize,
    classes: Vec<String>,
    image_attributes: Option<ImageAttributeTable>,
}

impl Dataset {
    /// Validate and assemble a dataset. `features` is row-major `n * dim`.
    pub fn new(
        sample_ids: Vec<String>,
        features: Vec<f64>,
        dim: usize,
        classes: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if sample_ids.is_empty() {
            return Err(DatasetError::Empty);
        }
        if classes.len() != sample_ids.len() {
            return Err(DatasetError::LengthMismatch(sample_ids.len(), classes.len()));
        }
        if features.len() != sample_ids.len() * dim {
            return Err(DatasetError::LengthMismatch(
                sample_ids.len(),
                features.len().checked_div(dim).unwrap_or(0),
            ));
        }
        let mut index = BTreeMap::new();
        for (i, id) in sample_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateSampleId(id.clone()));
            }
            if features[i * dim..(i + 1) * dim].iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::NonFiniteFeature(id.clone()));
            }
        }
        Ok(Dataset {
            sample_ids,
            index,
            features,
            dim,
            classes,
            image_attributes: None,
        })
    }

    pub fn with_image_attributes(mut self, table: ImageAttributeTable) -> Self {
        assert_eq!(
            table.values.len(),
            self.len() * table.attributes.len(),
            "image attribute table must be row-aligned with the dataset"
        );
        self.image_attributes = Some(table);
        self
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn sample_id(&self, row: usize) -> &str {
        &self.sample_ids[row]
    }

    pub fn index_of(&self, sample_id: &str) -> Result<usize, DatasetError> {
        self.index
            .get(sample_id)
            .copied()
            .ok_or_else(|| DatasetError::UnknownSample(sample_id.to_string()))
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.features[row * self.dim..(row + 1) * self.dim]
    }

    pub fn class_of(&self, row: usize) -> &str {
        &self.classes[row]
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Distinct class ids present, lexicographic.
    pub fn distinct_classes(&self) -> Vec<String> {
        let mut seen: Vec<String> = self.classes.clone();
        seen.sort();
        seen.dedup();
        seen
    }

    /// Row indices of all samples labeled with `class`, ascending.
    pub fn rows_of_class(&self, class: &str) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.classes[i] == class).collect()
    }

    pub fn image_attributes(&self) -> Option<&ImageAttributeTable> {
        self.image_attributes.as_ref()
    }

    /// Scale every feature row to unit L2 norm (zero rows left untouched).
    pub fn l2_normalized(mut self) -> Self {
        for i in 0..self.sample_ids.len() {
            let row = &mut self.features[i * self.dim..(i + 1) * self.dim];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        self
    }

    /// New dataset with only the samples whose class satisfies `keep`.
    pub fn filter_by_class<F: Fn(&str) -> bool>(&self, keep: F) -> Result<Self, DatasetError> {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.classes[i])).collect();
        self.select_rows(&rows)
    }

    fn select_rows(&self, rows: &[usize]) -> Result<Self, DatasetError> {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        let mut out = Dataset::new(
            rows.iter().map(|&r| self.sample_ids[r].clone()).collect(),
            features,
            self.dim,
            rows.iter().map(|&r| self.classes[r].clone()).collect(),
        )?;
        if let Some(table) = &self.image_attributes {
            let m = table.attributes.len();
            let mut values = Vec::with_capacity(rows.len() * m);
            for &r in rows {
                values.extend_from_slice(&table.values[r * m..(r + 1) * m]);
            }
            let table = ImageAttributeTable::new(table.attributes.clone(), values, rows.len());
            out = out.with_image_attributes(table);
        }
        Ok(out)
    }

    /// Concatenate two datasets with the same dimension (ids must stay unique).
    pub fn concat(&self, other: &Dataset) -> Result<Self, DatasetError> {
        if self.dim != other.dim {
            return Err(DatasetError::DimensionMismatch(
                other.sample_ids.first().cloned().unwrap_or_default(),
                other.dim,
                self.dim,
            ));
        }
        let mut ids = self.sample_ids.clone();
        ids.extend(other.sample_ids.iter().cloned());
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut classes = self.classes.clone();
        classes.extend(other.classes.iter().cloned());
        let mut out = Dataset::new(ids, features, self.dim, classes)?;
        match (&self.image_attributes, &other.image_attributes) {
            (Some(a), Some(b)) if a.attributes == b.attributes => {
                let mut values = a.values.clone();
                values.extend_from_slice(&b.values);
                let n = out.len();
                let table = ImageAttributeTable::new(a.attributes.clone(), values, n);
                out = out.with_image_attributes(table);
            }
            _ => {}
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::new(
            vec!["s1".into(), "s2".into(), "s3".into()],
            vec![1.0, 0.0, 0.0, 2.0, 3.0, 4.0],
            2,
            vec!["a".into(), "a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn basic_accessors() {
        let d = small();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.row(1), &[0.0, 2.0]);
        assert_eq!(d.class_of(2), "b");
        assert_eq!(d.rows_of_class("a"), vec![0, 1]);
        assert_eq!(d.distinct_classes(), vec!["a", "b"]);
    }

    #[test]
    fn rejects_non_finite() {
        let err = Dataset::new(
            vec!["s1".into()],
            vec![f64::NAN, 0.0],
            2,
            vec!["a".into()],
        )
        .unwrap_err();
        assert_eq!(err, DatasetError::NonFiniteFeature("s1".into()));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err = Dataset::new(
            vec!["s".into(), "s".into()],
            vec![0.0, 0.0],
            1,
            vec!["a".into(), "a".into()],
        )
        .unwrap_err();
        assert_eq!(err, DatasetError::DuplicateSampleId("s".into()));
    }

    #[test]
    fn l2_normalization() {
        let d = Dataset::new(
            vec!["s1".into(), "s2".into()],
            vec![3.0, 4.0, 0.0, 0.0],
            2,
            vec!["a".into(), "a".into()],
        )
        .unwrap()
        .l2_normalized();
        assert!((d.row(0)[0] - 0.6).abs() < 1e-12);
        assert!((d.row(0)[1] - 0.8).abs() < 1e-12);
        assert_eq!(d.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn filter_and_concat() {
        let d = small();
        let a = d.filter_by_class(|c| c == "a").unwrap();
        let b = d.filter_by_class(|c| c == "b").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(b.len(), 1);
        let whole = a.concat(&b).unwrap();
        assert_eq!(whole.len(), 3);
        assert_eq!(whole.row(2), d.row(2));
    }
}
