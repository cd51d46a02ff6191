//! Zero-shot classification by hierarchical transfer of semantic attributes.
//!
//! Classes are organized in a taxonomy. Binary attribute signatures of the
//! seen (training) classes are propagated bottom-up so that every node of the
//! hierarchy knows which attributes are active somewhere below it. Attribute
//! classifiers are then trained at every level: the root gets the usual
//! 1-vs-all "global" classifiers, while every other node gets a
//! child-vs-parent classifier that captures how the attribute looks inside
//! that subtree compared to the rest of its parent's support. An unseen class
//! placed in the taxonomy is scored by averaging the classifiers of its
//! ancestors that share each of its attributes, then averaging over its
//! active attributes.
//!
//! The crate also ships the two standard global-attribute baselines (DAP and
//! ENS), an evaluation harness (balanced multi-class accuracy, ROC AUC,
//! per-level precision/recall diagnostics), a deterministic synthetic
//! benchmark generator, and file ingestion for taxonomies, features,
//! annotations, splits, model banks and predictions.
//!
//! See the `hat` CLI crate for the command-line front end; the [`pipeline`]
//! module holds the command implementations it wraps.

pub mod annotation;
pub mod baselines;
pub mod classifier;
pub mod dataset;
pub mod eval;
pub mod ingestion;
pub mod pipeline;
pub mod solver;
pub mod supportsets;
pub mod synth;
pub mod taxonomy;
pub mod testkit;
pub mod transfer;

mod hashutil;

pub use annotation::{NodeAttributeTable, OccurrenceMatrix, SignatureMatrix};
pub use classifier::{AttributeClassifier, ModelBank, Scheme, TrainConfig};
pub use dataset::{AnnotationMode, Dataset};
pub use eval::EvalReport;
pub use ingestion::SplitSpec;
pub use synth::SynthSpec;
pub use taxonomy::{NodeKind, Taxonomy};
pub use transfer::ScoreTable;
