//! File ingestion and persistence.
//!
//! All CSVs are UTF-8 with a header row. Features travel either as CSV
//! (`sample_id,<f0>,...`) or as the compact binary format: magic `ZSF1`,
//! little-endian u32 sample count and dimension, then row-major f32 values.
//! Sample ids and class labels always live in a sidecar CSV
//! (`sample_id,class_id`), row-aligned for binary features and joined by id
//! for CSV features.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{NodeAttributeTable, OccurrenceMatrix, SignatureMatrix};
use crate::classifier::ModelBank;
use crate::dataset::{Dataset, DatasetError, ImageAttributeTable};
use crate::taxonomy::{Taxonomy, TaxonomyError};
use crate::transfer::ScoreTable;

pub const FEATURE_MAGIC: &[u8; 4] = b"ZSF1";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("non-finite feature in `{0}`")]
    NonFiniteFeature(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    Csv,
    Binary,
}

impl std::str::FromStr for FeatureFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(FeatureFormat::Csv),
            "binary" | "zsf" => Ok(FeatureFormat::Binary),
            other => Err(format!("unknown feature format `{other}` (csv|binary)")),
        }
    }
}

/// Scores and other reals destined for CSV cells: 9 significant digits.
pub fn fmt_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, IngestError> {
    // flexible: arity is validated per file kind for better messages
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| IngestError::Parse(format!("{}: {e}", path.display())))
}

fn parse_cell_f64(cell: &str, context: &str) -> Result<f64, IngestError> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| IngestError::Parse(format!("{context}: bad number `{cell}`")))
}

fn parse_cell_binary(cell: &str, context: &str) -> Result<bool, IngestError> {
    match cell.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(IngestError::Parse(format!(
            "{context}: expected 0 or 1, got `{other}`"
        ))),
    }
}

// ---------------------------------------------------------------- features

fn load_features_csv(path: &Path) -> Result<(Vec<String>, Vec<f64>, usize), IngestError> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Parse(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 {
        return Err(IngestError::Schema(format!(
            "{}: need `sample_id` plus at least one feature column",
            path.display()
        )));
    }
    let dim = headers.len() - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Parse(format!("{}: {e}", path.display())))?;
        if record.len() != dim + 1 {
            return Err(IngestError::DimensionMismatch(format!(
                "{}: row `{}` has {} feature cells, expected {dim}",
                path.display(),
                record.get(0).unwrap_or("?"),
                record.len() - 1
            )));
        }
        let id = record[0].to_string();
        for cell in record.iter().skip(1) {
            let v = parse_cell_f64(cell, &format!("{}[{id}]", path.display()))?;
            if !v.is_finite() {
                return Err(IngestError::NonFiniteFeature(id));
            }
            values.push(v);
        }
        ids.push(id);
    }
    Ok((ids, values, dim))
}

fn load_features_binary(path: &Path) -> Result<(usize, usize, Vec<f64>), IngestError> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(IngestError::Parse(format!(
            "{}: bad magic, not a ZSF1 feature file",
            path.display()
        )));
    }
    let mut header = [0u8; 8];
    file.read_exact(&mut header)?;
    let n = u32::from_le_bytes(header[0..4].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let mut body = Vec::new();
    file.read_to_end(&mut body)?;
    if body.len() != n * d * 4 {
        return Err(IngestError::Parse(format!(
            "{}: expected {} bytes of f32 data, found {}",
            path.display(),
            n * d * 4,
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(IngestError::NonFiniteFeature(format!("row {}", i / d)));
    }
    Ok((n, d, values))
}

/// `sample_id,class_id` rows, in file order.
pub fn load_labels_csv(path: &Path) -> Result<Vec<(String, String)>, IngestError> {
    let mut reader = csv_reader(path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Parse(format!("{}: {e}", path.display())))?;
        if record.len() < 2 {
            return Err(IngestError::Schema(format!(
                "{}: labels need `sample_id,class_id`",
                path.display()
            )));
        }
        out.push((record[0].to_string(), record[1].to_string()));
    }
    Ok(out)
}

/// Load a feature matrix plus its labels sidecar into a dataset, optionally
/// attaching per-image attribute labels and L2-normalizing rows.
pub fn load_dataset(
    features_path: &Path,
    format: FeatureFormat,
    labels_path: &Path,
    image_attr_path: Option<&Path>,
    l2_normalize: bool,
) -> Result<Dataset, IngestError> {
    let labels = load_labels_csv(labels_path)?;
    let (ids, values, dim) = match format {
        FeatureFormat::Csv => {
            let (ids, values, dim) = load_features_csv(features_path)?;
            let by_id: BTreeMap<&str, &str> = labels
                .iter()
                .map(|(id, class)| (id.as_str(), class.as_str()))
                .collect();
            let classes: Result<Vec<String>, IngestError> = ids
                .iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|c| c.to_string())
                        .ok_or_else(|| {
                            IngestError::Schema(format!("sample `{id}` missing from labels file"))
                        })
                })
                .collect();
            return finalize_dataset(ids, values, dim, classes?, image_attr_path, l2_normalize);
        }
        FeatureFormat::Binary => {
            let (n, d, values) = load_features_binary(features_path)?;
            if labels.len() != n {
                return Err(IngestError::Schema(format!(
                    "labels file has {} rows, binary features have {n}",
                    labels.len()
                )));
            }
            (
                labels.iter().map(|(id, _)| id.clone()).collect::<Vec<_>>(),
                values,
                d,
            )
        }
    };
    let classes = labels.into_iter().map(|(_, c)| c).collect();
    finalize_dataset(ids, values, dim, classes, image_attr_path, l2_normalize)
}

fn finalize_dataset(
    ids: Vec<String>,
    values: Vec<f64>,
    dim: usize,
    classes: Vec<String>,
    image_attr_path: Option<&Path>,
    l2_normalize: bool,
) -> Result<Dataset, IngestError> {
    let mut data = Dataset::new(ids, values, dim, classes)?;
    if l2_normalize {
        data = data.l2_normalized();
    }
    if let Some(path) = image_attr_path {
        let (attr_ids, attributes, rows) = load_image_attributes_csv(path)?;
        let by_id: BTreeMap<&str, usize> = attr_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let m = attributes.len();
        let n = data.len();
        let mut aligned = vec![false; n * m];
        for row in 0..n {
            let id = data.sample_id(row);
            let src = *by_id.get(id).ok_or_else(|| {
                IngestError::Schema(format!("sample `{id}` missing from image attribute file"))
            })?;
            aligned[row * m..(row + 1) * m].copy_from_slice(&rows[src * m..(src + 1) * m]);
        }
        data = data.with_image_attributes(ImageAttributeTable::new(attributes, aligned, n));
    }
    Ok(data)
}

pub fn save_features_csv(path: &Path, data: &Dataset) -> Result<(), IngestError> {
    let mut out = String::new();
    out.push_str("sample_id");
    for j in 0..data.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for r in 0..data.len() {
        out.push_str(data.sample_id(r));
        for v in data.row(r) {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn save_features_binary(path: &Path, data: &Dataset) -> Result<(), IngestError> {
    let mut file = fs::File::create(path)?;
    file.write_all(FEATURE_MAGIC)?;
    file.write_all(&(data.len() as u32).to_le_bytes())?;
    file.write_all(&(data.dim() as u32).to_le_bytes())?;
    let mut body = Vec::with_capacity(data.len() * data.dim() * 4);
    for r in 0..data.len() {
        for &v in data.row(r) {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    file.write_all(&body)?;
    Ok(())
}

pub fn save_labels_csv(path: &Path, data: &Dataset) -> Result<(), IngestError> {
    let mut out = String::from("sample_id,class_id\n");
    for r in 0..data.len() {
        out.push_str(&format!("{},{}\n", data.sample_id(r), data.class_of(r)));
    }
    fs::write(path, out)?;
    Ok(())
}

// ------------------------------------------------------------- annotations

/// (row ids, attribute ids, cells) straight out of an attribute CSV.
type RawAttributeCsv = (Vec<String>, Vec<String>, Vec<String>);

fn load_attribute_csv_raw(path: &Path) -> Result<RawAttributeCsv, IngestError> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Parse(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 {
        return Err(IngestError::Schema(format!(
            "{}: need an id column plus at least one attribute column",
            path.display()
        )));
    }
    let attributes: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Parse(format!("{}: {e}", path.display())))?;
        if record.len() != attributes.len() + 1 {
            return Err(IngestError::DimensionMismatch(format!(
                "{}: row `{}` has {} cells, expected {}",
                path.display(),
                record.get(0).unwrap_or("?"),
                record.len() - 1,
                attributes.len()
            )));
        }
        rows.push(record[0].to_string());
        cells.extend(record.iter().skip(1).map(str::to_string));
    }
    Ok((rows, attributes, cells))
}

/// Class-attribute CSV with binary cells.
pub fn load_signature_csv(path: &Path) -> Result<SignatureMatrix, IngestError> {
    let (rows, attributes, cells) = load_attribute_csv_raw(path)?;
    let values: Result<Vec<bool>, IngestError> = cells
        .iter()
        .map(|c| parse_cell_binary(c, &path.display().to_string()))
        .collect();
    Ok(SignatureMatrix::new(rows, attributes, values?))
}

/// Class-attribute CSV with real cells in [0, 1].
pub fn load_occurrence_csv(path: &Path) -> Result<OccurrenceMatrix, IngestError> {
    let (rows, attributes, cells) = load_attribute_csv_raw(path)?;
    let mut values = Vec::with_capacity(cells.len());
    for cell in &cells {
        let v = parse_cell_f64(cell, &path.display().to_string())?;
        if !(0.0..=1.0).contains(&v) {
            return Err(IngestError::Schema(format!(
                "{}: occurrence {v} outside [0, 1]",
                path.display()
            )));
        }
        values.push(v);
    }
    Ok(OccurrenceMatrix::new(rows, attributes, values))
}

/// (sample ids, attribute ids, binary cells) of a per-image attribute CSV.
pub type ImageAttributeRows = (Vec<String>, Vec<String>, Vec<bool>);

/// Per-image attribute CSV: `sample_id,<attr...>` with binary cells.
pub fn load_image_attributes_csv(path: &Path) -> Result<ImageAttributeRows, IngestError> {
    let (rows, attributes, cells) = load_attribute_csv_raw(path)?;
    let values: Result<Vec<bool>, IngestError> = cells
        .iter()
        .map(|c| parse_cell_binary(c, &path.display().to_string()))
        .collect();
    Ok((rows, attributes, values?))
}

pub fn save_signature_csv(path: &Path, sig: &SignatureMatrix) -> Result<(), IngestError> {
    let mut out = String::from("class_id");
    for a in sig.attributes() {
        out.push_str(&format!(",{a}"));
    }
    out.push('\n');
    for class in sig.classes() {
        out.push_str(class);
        for &v in sig.row(class).expect("row exists") {
            out.push_str(if v { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn save_occurrence_csv(path: &Path, occ: &OccurrenceMatrix) -> Result<(), IngestError> {
    let mut out = String::from("class_id");
    for a in occ.attributes() {
        out.push_str(&format!(",{a}"));
    }
    out.push('\n');
    for class in occ.rows() {
        out.push_str(class);
        for a in occ.attributes() {
            out.push_str(&format!(",{}", occ.value(class, a).expect("cell exists")));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Support-set size diagnostics: `node_id,attribute,support_size`.
pub fn save_support_sizes_csv(
    path: &Path,
    sizes: &[(String, String, usize)],
) -> Result<(), IngestError> {
    let mut out = String::from("node_id,attribute,support_size\n");
    for (node, attribute, size) in sizes {
        out.push_str(&format!("{node},{attribute},{size}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Node activation table as CSV: `node_id,<attr...>` with binary cells.
pub fn save_node_table_csv(path: &Path, table: &NodeAttributeTable) -> Result<(), IngestError> {
    let mut out = String::from("node_id");
    for a in table.attributes() {
        out.push_str(&format!(",{a}"));
    }
    out.push('\n');
    for node in table.nodes() {
        out.push_str(node);
        for &v in table.row(node).expect("row exists") {
            out.push_str(if v { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ------------------------------------------------------------------ splits

/// Declared seen/unseen class split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.seen.is_empty() {
            return Err(IngestError::Schema("split has no seen classes".into()));
        }
        if self.unseen.is_empty() {
            return Err(IngestError::Schema("split has no unseen classes".into()));
        }
        let seen: std::collections::BTreeSet<&String> = self.seen.iter().collect();
        if let Some(dup) = self.unseen.iter().find(|u| seen.contains(u)) {
            return Err(IngestError::Schema(format!(
                "class `{dup}` is both seen and unseen"
            )));
        }
        Ok(())
    }

    /// Check the split covers every class the dataset references.
    pub fn check_covers(&self, classes: &[String]) -> Result<(), IngestError> {
        for class in classes {
            if !self.seen.contains(class) && !self.unseen.contains(class) {
                return Err(IngestError::Schema(format!(
                    "class `{class}` referenced by the dataset is in neither split list"
                )));
            }
        }
        Ok(())
    }
}

pub fn load_split(path: &Path) -> Result<SplitSpec, IngestError> {
    let text = fs::read_to_string(path)?;
    let split: SplitSpec = serde_json::from_str(&text)
        .map_err(|e| IngestError::Parse(format!("{}: {e}", path.display())))?;
    split.validate()?;
    Ok(split)
}

pub fn save_split(path: &Path, split: &SplitSpec) -> Result<(), IngestError> {
    fs::write(path, serde_json::to_string_pretty(split).expect("serializes"))?;
    Ok(())
}

// ------------------------------------------------------------- predictions

/// `sample_id,predicted_class,<one score column per target>`, scores with 9
/// significant digits.
pub fn save_predictions(
    path: &Path,
    predictions: &[(String, String)],
    scores: &ScoreTable,
) -> Result<(), IngestError> {
    assert_eq!(predictions.len(), scores.n_samples());
    let mut out = String::from("sample_id,predicted_class");
    for t in scores.targets() {
        out.push_str(&format!(",{t}"));
    }
    out.push('\n');
    for (r, (id, pred)) in predictions.iter().enumerate() {
        out.push_str(&format!("{id},{pred}"));
        for v in scores.row(r) {
            out.push_str(&format!(",{}", fmt_sig9(*v)));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_predictions(path: &Path) -> Result<(Vec<(String, String)>, ScoreTable), IngestError> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Parse(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 3 || &headers[0] != "sample_id" || &headers[1] != "predicted_class" {
        return Err(IngestError::Schema(format!(
            "{}: expected header `sample_id,predicted_class,<classes...>`",
            path.display()
        )));
    }
    let targets: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let mut predictions = Vec::new();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Parse(format!("{}: {e}", path.display())))?;
        if record.len() != targets.len() + 2 {
            return Err(IngestError::DimensionMismatch(format!(
                "{}: row `{}` has wrong arity",
                path.display(),
                record.get(0).unwrap_or("?")
            )));
        }
        ids.push(record[0].to_string());
        predictions.push((record[0].to_string(), record[1].to_string()));
        for cell in record.iter().skip(2) {
            values.push(parse_cell_f64(cell, &path.display().to_string())?);
        }
    }
    Ok((predictions, ScoreTable::new(ids, targets, values)))
}

// -------------------------------------------------------------- model bank

pub fn save_model_bank(path: &Path, bank: &ModelBank) -> Result<(), IngestError> {
    fs::write(path, bank.to_json())?;
    Ok(())
}

pub fn load_model_bank(path: &Path) -> Result<ModelBank, IngestError> {
    ModelBank::from_json(&fs::read_to_string(path)?)
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy, IngestError> {
    Taxonomy::parse_json(&fs::read_to_string(path)?)
}

pub fn save_taxonomy(path: &Path, t: &Taxonomy) -> Result<(), IngestError> {
    fs::write(path, t.to_json())?;
    Ok(())
}
