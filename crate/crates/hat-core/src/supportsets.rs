//! Attribute support sets and the child-vs-parent training sets derived from
//! them.
//!
//! The support of an attribute at a node is every training sample that gives
//! evidence of the attribute inside that node's subtree: the node's own
//! labeled samples (for seen leaves) plus, recursively, the supports of the
//! children at which the attribute is active. A non-root node's classifier is
//! trained with its support as positives against the rest of its parent's
//! support; the root uses the plain 1-vs-all complement.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::annotation::{AnnotationError, NodeAttributeTable, SignatureMatrix};
use crate::dataset::{AnnotationMode, Dataset};
use crate::taxonomy::{NodeKind, Taxonomy, TaxonomyError};

/// Sample rows of the training [`Dataset`], ascending.
pub type SampleSet = BTreeSet<usize>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SupportError {
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("attribute `{attribute}` is not active at node `{node}`")]
    InactivePair { node: String, attribute: String },
    #[error("no contrast for `{attribute}` at `{node}`: parent support equals child support")]
    NoContrast { node: String, attribute: String },
    #[error("no positive samples for `{attribute}` at `{node}`")]
    EmptyPositives { node: String, attribute: String },
    #[error("node `{0}` is the root; use the 1-vs-all scheme")]
    RootHasNoParent(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

/// Positive / negative sample rows for one (node, attribute) classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSets {
    pub positives: SampleSet,
    pub negatives: SampleSet,
}

/// Samples providing direct label evidence of `attribute` at `node`.
///
/// Seen leaves contribute their positively labeled images (per-image mode)
/// or all of their samples when the class signature is active (per-class
/// mode). Internal and unseen nodes have no labels of their own.
pub fn label_set(
    node: &str,
    attribute: &str,
    t: &Taxonomy,
    data: &Dataset,
    sig: &SignatureMatrix,
    mode: AnnotationMode,
) -> Result<SampleSet, SupportError> {
    if t.kind(node)? != NodeKind::Seen {
        return Ok(SampleSet::new());
    }
    match mode {
        AnnotationMode::PerImage => {
            let table = data
                .image_attributes()
                .ok_or(AnnotationError::NoImageAnnotations)?;
            let col = table
                .attr_index(attribute)
                .ok_or_else(|| SupportError::UnknownAttribute(attribute.to_string()))?;
            Ok(data
                .rows_of_class(node)
                .into_iter()
                .filter(|&r| table.value(r, col))
                .collect())
        }
        AnnotationMode::PerClass => {
            if sig.value(node, attribute)? {
                Ok(data.rows_of_class(node).into_iter().collect())
            } else {
                Ok(SampleSet::new())
            }
        }
    }
}

/// Memoized support sets for every (node, attribute) pair of a taxonomy,
/// computed in one bottom-up pass before training starts.
#[derive(Debug, Clone)]
pub struct SupportIndex {
    nodes: Vec<String>,
    node_index: BTreeMap<String, usize>,
    attributes: Vec<String>,
    attr_index: BTreeMap<String, usize>,
    parent: BTreeMap<String, String>,
    root: String,
    /// node-major, attribute-minor
    supports: Vec<SampleSet>,
    active: Vec<bool>,
    all_samples: SampleSet,
}

impl SupportIndex {
    pub fn build(
        t: &Taxonomy,
        table: &NodeAttributeTable,
        data: &Dataset,
        sig: &SignatureMatrix,
        mode: AnnotationMode,
    ) -> Result<Self, SupportError> {
        let nodes: Vec<String> = t.node_ids().map(str::to_string).collect();
        let node_index: BTreeMap<String, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let attributes = table.attributes().to_vec();
        let m = attributes.len();

        let mut active = vec![false; nodes.len() * m];
        for (i, node) in nodes.iter().enumerate() {
            active[i * m..(i + 1) * m].copy_from_slice(table.row(node)?);
        }

        let mut supports: Vec<SampleSet> = vec![SampleSet::new(); nodes.len() * m];
        for id in t.bottom_up_order() {
            let at = node_index[&id] * m;
            for (a, attribute) in attributes.iter().enumerate() {
                let mut set = label_set(&id, attribute, t, data, sig, mode)?;
                for child in t.children(&id)? {
                    let child_slot = node_index[child] * m + a;
                    // Only children sharing the attribute contribute.
                    if active[child_slot] {
                        set.extend(supports[child_slot].iter().copied());
                    }
                }
                supports[at + a] = set;
            }
        }

        let attr_index = attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        let parent = nodes
            .iter()
            .filter_map(|n| {
                t.parent_of(n)
                    .expect("node exists")
                    .map(|p| (n.clone(), p.to_string()))
            })
            .collect();
        Ok(SupportIndex {
            nodes,
            node_index,
            attributes,
            attr_index,
            parent,
            root: t.root().to_string(),
            supports,
            active,
            all_samples: (0..data.len()).collect(),
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    fn slot(&self, node: &str, attribute: &str) -> Result<usize, SupportError> {
        let n = self
            .node_index
            .get(node)
            .ok_or_else(|| TaxonomyError::UnknownNode(node.to_string()))?;
        let a = self
            .attr_index
            .get(attribute)
            .ok_or_else(|| SupportError::UnknownAttribute(attribute.to_string()))?;
        Ok(n * self.attributes.len() + a)
    }

    /// Whether the attribute is active at the node (from the propagated table).
    pub fn is_active(&self, node: &str, attribute: &str) -> Result<bool, SupportError> {
        Ok(self.active[self.slot(node, attribute)?])
    }

    /// The memoized support set of (node, attribute).
    pub fn support(&self, node: &str, attribute: &str) -> Result<&SampleSet, SupportError> {
        Ok(&self.supports[self.slot(node, attribute)?])
    }

    /// Support-set sizes for every (node, attribute) pair, for diagnostics.
    pub fn support_sizes(&self) -> Vec<(String, String, usize)> {
        let m = self.attributes.len();
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(i, node)| {
                self.attributes.iter().enumerate().map(move |(a, attribute)| {
                    (node.clone(), attribute.clone(), self.supports[i * m + a].len())
                })
            })
            .collect()
    }

    /// Child-vs-parent training sets: the node's support as positives, the
    /// remainder of its parent's support as negatives.
    pub fn training_sets(&self, node: &str, attribute: &str) -> Result<TrainingSets, SupportError> {
        let slot = self.slot(node, attribute)?;
        if !self.active[slot] {
            return Err(SupportError::InactivePair {
                node: node.to_string(),
                attribute: attribute.to_string(),
            });
        }
        let parent = self
            .parent
            .get(node)
            .ok_or_else(|| SupportError::RootHasNoParent(node.to_string()))?;
        let positives = self.supports[slot].clone();
        let parent_support = self.support(parent, attribute)?;
        let negatives: SampleSet = parent_support.difference(&positives).copied().collect();
        self.check_contrast(node, attribute, positives, negatives)
    }

    /// 1-vs-all training sets for a root attribute: the root's support
    /// against every other training sample.
    pub fn root_training_sets(&self, attribute: &str) -> Result<TrainingSets, SupportError> {
        let root = self.root.clone();
        let slot = self.slot(&root, attribute)?;
        if !self.active[slot] {
            return Err(SupportError::InactivePair {
                node: root,
                attribute: attribute.to_string(),
            });
        }
        let positives = self.supports[slot].clone();
        let negatives: SampleSet = self.all_samples.difference(&positives).copied().collect();
        self.check_contrast(&root, attribute, positives, negatives)
    }

    fn check_contrast(
        &self,
        node: &str,
        attribute: &str,
        positives: SampleSet,
        negatives: SampleSet,
    ) -> Result<TrainingSets, SupportError> {
        if positives.is_empty() {
            return Err(SupportError::EmptyPositives {
                node: node.to_string(),
                attribute: attribute.to_string(),
            });
        }
        if negatives.is_empty() {
            return Err(SupportError::NoContrast {
                node: node.to_string(),
                attribute: attribute.to_string(),
            });
        }
        Ok(TrainingSets {
            positives,
            negatives,
        })
    }
}
