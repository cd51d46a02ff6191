//! Class-level attribute signatures and their bottom-up propagation through
//! the taxonomy.
//!
//! Seen-leaf signatures are pushed towards the root so that an attribute is
//! active at a node exactly when some seen leaf below it carries the
//! attribute. Propagation only reads seen classes: a declared unseen-class
//! row is carried along for later transfer but never feeds upward.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dataset::Dataset;
use crate::taxonomy::{NodeKind, Taxonomy, TaxonomyError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("class `{0}` has no samples")]
    EmptyClass(String),
    #[error("seen leaf `{0}` has no signature row")]
    MissingSignature(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("node `{0}` is not an unseen leaf")]
    NotUnseenLeaf(String),
    #[error("dataset carries no per-image attribute labels")]
    NoImageAnnotations,
    #[error("occurrence matrix is empty")]
    EmptyOccurrence,
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// Row-id × attribute matrix of reals in [0, 1]: the fraction of a class's
/// samples labeled with each attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct OccurrenceMatrix {
    rows: Vec<String>,
    row_index: BTreeMap<String, usize>,
    attributes: Vec<String>,
    attr_index: BTreeMap<String, usize>,
    values: Vec<f64>,
}

impl OccurrenceMatrix {
    pub fn new(rows: Vec<String>, attributes: Vec<String>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows.len() * attributes.len());
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        let row_index = rows.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
        let attr_index = attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        OccurrenceMatrix {
            rows,
            row_index,
            attributes,
            attr_index,
            values,
        }
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn value(&self, row: &str, attribute: &str) -> Option<f64> {
        let r = self.row_index.get(row)?;
        let a = self.attr_index.get(attribute)?;
        Some(self.values[r * self.attributes.len() + a])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Binary class × attribute description matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureMatrix {
    rows: Vec<String>,
    row_index: BTreeMap<String, usize>,
    attributes: Vec<String>,
    attr_index: BTreeMap<String, usize>,
    values: Vec<bool>,
}

impl SignatureMatrix {
    pub fn new(rows: Vec<String>, attributes: Vec<String>, values: Vec<bool>) -> Self {
        assert_eq!(values.len(), rows.len() * attributes.len());
        let row_index = rows.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
        let attr_index = attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        SignatureMatrix {
            rows,
            row_index,
            attributes,
            attr_index,
            values,
        }
    }

    pub fn classes(&self) -> &[String] {
        &self.rows
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn has_row(&self, class: &str) -> bool {
        self.row_index.contains_key(class)
    }

    pub fn attr_col(&self, attribute: &str) -> Result<usize, AnnotationError> {
        self.attr_index
            .get(attribute)
            .copied()
            .ok_or_else(|| AnnotationError::UnknownAttribute(attribute.to_string()))
    }

    pub fn value(&self, class: &str, attribute: &str) -> Result<bool, AnnotationError> {
        let r = self
            .row_index
            .get(class)
            .ok_or_else(|| AnnotationError::UnknownClass(class.to_string()))?;
        let a = self.attr_col(attribute)?;
        Ok(self.values[r * self.attributes.len() + a])
    }

    pub fn row(&self, class: &str) -> Result<&[bool], AnnotationError> {
        let r = self
            .row_index
            .get(class)
            .ok_or_else(|| AnnotationError::UnknownClass(class.to_string()))?;
        let m = self.attributes.len();
        Ok(&self.values[r * m..(r + 1) * m])
    }

    /// Attribute ids active for `class`, in attribute-column order.
    pub fn active_attributes(&self, class: &str) -> Result<Vec<String>, AnnotationError> {
        let row = self.row(class)?;
        Ok(self
            .attributes
            .iter()
            .zip(row)
            .filter(|(_, &v)| v)
            .map(|(a, _)| a.clone())
            .collect())
    }

    /// Keep only the rows named in `keep` (order of `keep` is preserved).
    pub fn select_rows(&self, keep: &[String]) -> Result<SignatureMatrix, AnnotationError> {
        let m = self.attributes.len();
        let mut values = Vec::with_capacity(keep.len() * m);
        for class in keep {
            values.extend_from_slice(self.row(class)?);
        }
        Ok(SignatureMatrix::new(
            keep.to_vec(),
            self.attributes.clone(),
            values,
        ))
    }
}

/// Binary node × attribute activation table over all nodes of a taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeAttributeTable {
    nodes: Vec<String>,
    node_index: BTreeMap<String, usize>,
    attributes: Vec<String>,
    attr_index: BTreeMap<String, usize>,
    values: Vec<bool>,
}

impl NodeAttributeTable {
    /// Assemble a table from row-major values; rows follow `nodes` order.
    pub fn new(nodes: Vec<String>, attributes: Vec<String>, values: Vec<bool>) -> Self {
        assert_eq!(values.len(), nodes.len() * attributes.len());
        let node_index = nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let attr_index = attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        NodeAttributeTable {
            nodes,
            node_index,
            attributes,
            attr_index,
            values,
        }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn value(&self, node: &str, attribute: &str) -> Result<bool, AnnotationError> {
        let r = self
            .node_index
            .get(node)
            .ok_or_else(|| TaxonomyError::UnknownNode(node.to_string()))?;
        let a = self
            .attr_index
            .get(attribute)
            .copied()
            .ok_or_else(|| AnnotationError::UnknownAttribute(attribute.to_string()))?;
        Ok(self.values[r * self.attributes.len() + a])
    }

    pub fn row(&self, node: &str) -> Result<&[bool], AnnotationError> {
        let r = self
            .node_index
            .get(node)
            .ok_or_else(|| TaxonomyError::UnknownNode(node.to_string()))?;
        let m = self.attributes.len();
        Ok(&self.values[r * m..(r + 1) * m])
    }

    /// Attribute ids active at `node`, in attribute-column order.
    pub fn active_attributes(&self, node: &str) -> Result<Vec<String>, AnnotationError> {
        let row = self.row(node)?;
        Ok(self
            .attributes
            .iter()
            .zip(row)
            .filter(|(_, &v)| v)
            .map(|(a, _)| a.clone())
            .collect())
    }
}

/// Per-class attribute occurrence: row (class, attribute) holds the mean of
/// that attribute's per-image labels over the class's samples.
///
/// `required_classes` lists the classes that must be present; passing the
/// taxonomy's seen leaves catches classes that lost all their samples.
pub fn class_occurrence(
    data: &Dataset,
    required_classes: &[String],
) -> Result<OccurrenceMatrix, AnnotationError> {
    let table = data
        .image_attributes()
        .ok_or(AnnotationError::NoImageAnnotations)?;
    let mut classes = data.distinct_classes();
    for class in required_classes {
        if !classes.iter().any(|c| c == class) {
            return Err(AnnotationError::EmptyClass(class.clone()));
        }
    }
    classes.sort();

    let m = table.attributes().len();
    let mut values = Vec::with_capacity(classes.len() * m);
    for class in &classes {
        let rows = data.rows_of_class(class);
        if rows.is_empty() {
            return Err(AnnotationError::EmptyClass(class.clone()));
        }
        for a in 0..m {
            let positive = rows.iter().filter(|&&r| table.value(r, a)).count();
            values.push(positive as f64 / rows.len() as f64);
        }
    }
    Ok(OccurrenceMatrix::new(
        classes,
        table.attributes().to_vec(),
        values,
    ))
}

/// Threshold an occurrence matrix at the mean of all its entries.
/// Strictly-above becomes 1; ties at the mean become 0.
pub fn binarize_occurrence(o: &OccurrenceMatrix) -> Result<SignatureMatrix, AnnotationError> {
    if o.values().is_empty() {
        return Err(AnnotationError::EmptyOccurrence);
    }
    let theta = o.values().iter().sum::<f64>() / o.values().len() as f64;
    Ok(SignatureMatrix::new(
        o.rows().to_vec(),
        o.attributes().to_vec(),
        o.values().iter().map(|&v| v > theta).collect(),
    ))
}

/// Push seen-leaf signatures bottom-up: a node's row is the OR over the rows
/// of its seen-leaf descendants (or its own signature row if it is a seen
/// leaf). Declared unseen rows are copied verbatim and never propagated.
pub fn propagate(t: &Taxonomy, sig: &SignatureMatrix) -> Result<NodeAttributeTable, AnnotationError> {
    let attributes = sig.attributes().to_vec();
    let m = attributes.len();
    let nodes: Vec<String> = t.node_ids().map(str::to_string).collect();
    let node_index: BTreeMap<String, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    let mut values = vec![false; nodes.len() * m];

    for id in t.bottom_up_order() {
        let row_at = node_index[&id] * m;
        match t.kind(&id)? {
            NodeKind::Seen => {
                let row = sig
                    .row(&id)
                    .map_err(|_| AnnotationError::MissingSignature(id.clone()))?;
                values[row_at..row_at + m].copy_from_slice(row);
            }
            NodeKind::Unseen => {
                if sig.has_row(&id) {
                    let row = sig.row(&id)?;
                    values[row_at..row_at + m].copy_from_slice(row);
                }
            }
            NodeKind::Internal => {
                for child in t.children(&id)? {
                    // Unseen children never feed upward.
                    if t.kind(child)? == NodeKind::Unseen {
                        continue;
                    }
                    let child_at = node_index[child] * m;
                    for a in 0..m {
                        let v = values[child_at + a];
                        values[row_at + a] |= v;
                    }
                }
            }
        }
    }

    let attr_index = attributes
        .iter()
        .enumerate()
        .map(|(i, a)| (a.clone(), i))
        .collect();
    Ok(NodeAttributeTable {
        nodes,
        node_index,
        attributes,
        attr_index,
        values,
    })
}

/// Signature used for an unseen class whose own description is unknown:
/// a copy of its parent's activation row.
pub fn parent_signature_fallback(
    t: &Taxonomy,
    table: &NodeAttributeTable,
    unseen: &str,
) -> Result<Vec<bool>, AnnotationError> {
    if t.kind(unseen)? != NodeKind::Unseen {
        return Err(AnnotationError::NotUnseenLeaf(unseen.to_string()));
    }
    let parent = t
        .parent_of(unseen)?
        .ok_or_else(|| AnnotationError::NotUnseenLeaf(unseen.to_string()))?;
    Ok(table.row(parent)?.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ImageAttributeTable;
    use crate::taxonomy::{node, NodeKind};

    fn sig(rows: &[(&str, &[bool])], attrs: &[&str]) -> SignatureMatrix {
        SignatureMatrix::new(
            rows.iter().map(|(c, _)| c.to_string()).collect(),
            attrs.iter().map(|a| a.to_string()).collect(),
            rows.iter().flat_map(|(_, v)| v.iter().copied()).collect(),
        )
    }

    fn taxonomy(edges: &[(&str, &str)], internal: &[&str], seen: &[&str], unseen: &[&str]) -> Taxonomy {
        let mut nodes = Vec::new();
        nodes.extend(internal.iter().map(|id| node(id, NodeKind::Internal)));
        nodes.extend(seen.iter().map(|id| node(id, NodeKind::Seen)));
        nodes.extend(unseen.iter().map(|id| node(id, NodeKind::Unseen)));
        Taxonomy::from_parts(
            nodes,
            edges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn occurrence_is_per_class_mean() {
        let data = Dataset::new(
            vec!["s1".into(), "s2".into(), "s3".into()],
            vec![0.0, 0.0, 0.0],
            1,
            vec!["c".into(), "c".into(), "c".into()],
        )
        .unwrap()
        .with_image_attributes(ImageAttributeTable::new(
            vec!["m".into()],
            vec![true, true, false],
            3,
        ));
        let occ = class_occurrence(&data, &[]).unwrap();
        assert!((occ.value("c", "m").unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn occurrence_all_positive_is_one() {
        let data = Dataset::new(
            vec!["s1".into(), "s2".into()],
            vec![0.0, 0.0],
            1,
            vec!["c".into(), "c".into()],
        )
        .unwrap()
        .with_image_attributes(ImageAttributeTable::new(
            vec!["m".into()],
            vec![true, true],
            2,
        ));
        let occ = class_occurrence(&data, &[]).unwrap();
        assert_eq!(occ.value("c", "m").unwrap(), 1.0);
    }

    #[test]
    fn occurrence_requires_all_required_classes() {
        let data = Dataset::new(
            vec!["s1".into()],
            vec![0.0],
            1,
            vec!["c".into()],
        )
        .unwrap()
        .with_image_attributes(ImageAttributeTable::new(vec!["m".into()], vec![true], 1));
        let err = class_occurrence(&data, &["ghost".into()]).unwrap_err();
        assert_eq!(err, AnnotationError::EmptyClass("ghost".into()));
    }

    #[test]
    fn binarize_thresholds_at_overall_mean() {
        // mean of [0.9, 0.1, 0.5, 0.3] = 0.45
        let o = OccurrenceMatrix::new(
            vec!["c1".into(), "c2".into()],
            vec!["m1".into(), "m2".into()],
            vec![0.9, 0.1, 0.5, 0.3],
        );
        let s = binarize_occurrence(&o).unwrap();
        assert_eq!(s.row("c1").unwrap(), &[true, false]);
        assert_eq!(s.row("c2").unwrap(), &[true, false]);
    }

    #[test]
    fn binarize_constant_matrix_is_all_zero() {
        let o = OccurrenceMatrix::new(
            vec!["c1".into(), "c2".into()],
            vec!["m".into()],
            vec![0.4, 0.4],
        );
        let s = binarize_occurrence(&o).unwrap();
        assert_eq!(s.row("c1").unwrap(), &[false]);
        assert_eq!(s.row("c2").unwrap(), &[false]);
    }

    #[test]
    fn propagate_single_leaf() {
        let t = taxonomy(&[("root", "a")], &["root"], &["a"], &[]);
        let s = sig(&[("a", &[true, false])], &["m1", "m2"]);
        let table = propagate(&t, &s).unwrap();
        assert_eq!(table.row("a").unwrap(), &[true, false]);
        assert_eq!(table.row("root").unwrap(), &[true, false]);
    }

    #[test]
    fn propagate_is_or_semantics() {
        let t = taxonomy(&[("root", "a"), ("root", "b")], &["root"], &["a", "b"], &[]);
        let s = sig(&[("a", &[true, false]), ("b", &[false, true])], &["m1", "m2"]);
        let table = propagate(&t, &s).unwrap();
        assert_eq!(table.row("root").unwrap(), &[true, true]);
    }

    #[test]
    fn propagate_ignores_unseen_rows_upward_but_copies_them() {
        let t = taxonomy(
            &[("root", "a"), ("root", "z")],
            &["root"],
            &["a"],
            &["z"],
        );
        let s = sig(&[("a", &[true, false]), ("z", &[false, true])], &["m1", "m2"]);
        let table = propagate(&t, &s).unwrap();
        assert_eq!(table.row("z").unwrap(), &[false, true]);
        // z's declared attribute does not reach the root
        assert_eq!(table.row("root").unwrap(), &[true, false]);
    }

    #[test]
    fn propagate_missing_seen_signature_errors() {
        let t = taxonomy(&[("root", "a"), ("root", "b")], &["root"], &["a", "b"], &[]);
        let s = sig(&[("a", &[true])], &["m1"]);
        let err = propagate(&t, &s).unwrap_err();
        assert_eq!(err, AnnotationError::MissingSignature("b".into()));
    }

    #[test]
    fn fallback_copies_parent_row() {
        let t = taxonomy(
            &[("root", "g"), ("g", "a"), ("g", "b"), ("g", "z")],
            &["root", "g"],
            &["a", "b"],
            &["z"],
        );
        let s = sig(
            &[("a", &[true, true, false]), ("b", &[false, true, false])],
            &["m1", "m2", "m3"],
        );
        let table = propagate(&t, &s).unwrap();
        let row = parent_signature_fallback(&t, &table, "z").unwrap();
        assert_eq!(row, vec![true, true, false]);

        let err = parent_signature_fallback(&t, &table, "a").unwrap_err();
        assert_eq!(err, AnnotationError::NotUnseenLeaf("a".into()));
    }

    #[test]
    fn fallback_under_root_is_or_of_all_seen() {
        let t = taxonomy(
            &[("root", "a"), ("root", "b"), ("root", "z")],
            &["root"],
            &["a", "b"],
            &["z"],
        );
        let s = sig(&[("a", &[true, false]), ("b", &[false, true])], &["m1", "m2"]);
        let table = propagate(&t, &s).unwrap();
        let row = parent_signature_fallback(&t, &table, "z").unwrap();
        assert_eq!(row, vec![true, true]);
    }
}
