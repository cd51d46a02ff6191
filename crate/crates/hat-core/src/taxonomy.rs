//! The category hierarchy: a rooted tree over internal nodes, seen leaves
//! (classes with training data) and unseen leaves (zero-shot targets).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What role a node plays in the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Internal,
    /// Leaf class with training samples.
    Seen,
    /// Leaf class recognized zero-shot.
    Unseen,
}

impl NodeKind {
    pub fn is_leaf(self) -> bool {
        matches!(self, NodeKind::Seen | NodeKind::Unseen)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub label: String,
    pub kind: NodeKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy has no nodes")]
    Empty,
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("edge endpoint `{0}` is not in the node list")]
    DanglingEdge(String),
    #[error("node `{0}` has more than one parent")]
    MultipleParents(String),
    #[error("multiple roots: `{0}` and `{1}` both have no parent")]
    MultipleRoots(String, String),
    #[error("cycle detected involving node `{0}`")]
    CycleDetected(String),
    #[error("leaf node `{0}` has children")]
    LeafWithChildren(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` is a `{1:?}` leaf and cannot take children")]
    InvalidParentKind(String, NodeKind),
    #[error("node `{0}` is not a leaf")]
    NotALeaf(String),
}

/// A validated rooted tree over category nodes.
///
/// Immutable after construction; mutating operations return a new value.
/// All iteration orders are lexicographic by node id so that downstream
/// computations are deterministic.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    nodes: BTreeMap<String, Node>,
    parent: BTreeMap<String, String>,
    children: BTreeMap<String, Vec<String>>,
    root: String,
}

/// On-disk form: `{"nodes":[{id,label,kind}...],"edges":[[parent,child]...]}`.
/// The root is inferred as the unique parentless node.
#[derive(Debug, Serialize, Deserialize)]
struct TaxonomyDoc {
    nodes: Vec<Node>,
    edges: Vec<(String, String)>,
}

impl Taxonomy {
    /// Build and validate a taxonomy from node records and (parent, child) edges.
    pub fn from_parts(
        nodes: Vec<Node>,
        edges: Vec<(String, String)>,
    ) -> Result<Self, TaxonomyError> {
        if nodes.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        let mut node_map = BTreeMap::new();
        for node in nodes {
            if node_map.contains_key(&node.id) {
                return Err(TaxonomyError::DuplicateNode(node.id));
            }
            node_map.insert(node.id.clone(), node);
        }

        let mut parent: BTreeMap<String, String> = BTreeMap::new();
        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (from, to) in &edges {
            for endpoint in [from, to] {
                if !node_map.contains_key(endpoint) {
                    return Err(TaxonomyError::DanglingEdge(endpoint.clone()));
                }
            }
            if parent.insert(to.clone(), from.clone()).is_some() {
                return Err(TaxonomyError::MultipleParents(to.clone()));
            }
            children.entry(from.clone()).or_default().push(to.clone());
        }
        for kids in children.values_mut() {
            kids.sort();
        }

        let mut roots = node_map.keys().filter(|id| !parent.contains_key(*id));
        let root = match (roots.next(), roots.next()) {
            (Some(r), None) => r.clone(),
            (Some(a), Some(b)) => {
                return Err(TaxonomyError::MultipleRoots(a.clone(), b.clone()));
            }
            // Every node has a parent, so following parent links must loop.
            (None, _) => {
                let start = node_map.keys().next().expect("nonempty").clone();
                return Err(TaxonomyError::CycleDetected(start));
            }
        };

        // Reachability from the root; an unreachable node sits on a cycle
        // (it has a parent, and so does everything above it).
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([root.clone()]);
        while let Some(id) = queue.pop_front() {
            if !seen.insert(id.clone()) {
                continue;
            }
            if let Some(kids) = children.get(&id) {
                queue.extend(kids.iter().cloned());
            }
        }
        if seen.len() != node_map.len() {
            let stray = node_map
                .keys()
                .find(|id| !seen.contains(*id))
                .expect("unreachable node exists");
            return Err(TaxonomyError::CycleDetected(stray.clone()));
        }

        for (id, node) in &node_map {
            if node.kind.is_leaf() && children.get(id).is_some_and(|c| !c.is_empty()) {
                return Err(TaxonomyError::LeafWithChildren(id.clone()));
            }
        }

        Ok(Taxonomy {
            nodes: node_map,
            parent,
            children,
            root,
        })
    }

    /// Parse the JSON taxonomy document format.
    pub fn parse_json(text: &str) -> Result<Self, crate::ingestion::IngestError> {
        let doc: TaxonomyDoc = serde_json::from_str(text)
            .map_err(|e| crate::ingestion::IngestError::Parse(format!("taxonomy: {e}")))?;
        Ok(Self::from_parts(doc.nodes, doc.edges)?)
    }

    /// Serialize to the JSON taxonomy document format.
    pub fn to_json(&self) -> String {
        let doc = TaxonomyDoc {
            nodes: self.nodes.values().cloned().collect(),
            edges: self
                .nodes
                .keys()
                .filter_map(|id| self.parent.get(id).map(|p| (p.clone(), id.clone())))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("taxonomy serializes")
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node(&self, id: &str) -> Result<&Node, TaxonomyError> {
        self.nodes
            .get(id)
            .ok_or_else(|| TaxonomyError::UnknownNode(id.to_string()))
    }

    pub fn kind(&self, id: &str) -> Result<NodeKind, TaxonomyError> {
        self.node(id).map(|n| n.kind)
    }

    /// All node ids, lexicographic.
    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn parent_of(&self, id: &str) -> Result<Option<&str>, TaxonomyError> {
        self.node(id)?;
        Ok(self.parent.get(id).map(String::as_str))
    }

    /// Direct children, lexicographic by id.
    pub fn children(&self, id: &str) -> Result<&[String], TaxonomyError> {
        self.node(id)?;
        Ok(self.children.get(id).map(Vec::as_slice).unwrap_or(&[]))
    }

    /// Strict ancestors of `id`, ordered root-first. The root gets `[]`.
    pub fn ancestors(&self, id: &str) -> Result<Vec<String>, TaxonomyError> {
        self.node(id)?;
        let mut chain = Vec::new();
        let mut cursor = id;
        while let Some(p) = self.parent.get(cursor) {
            chain.push(p.clone());
            cursor = p;
        }
        chain.reverse();
        Ok(chain)
    }

    /// Strict descendants of `id` (the subtree below it, excluding `id`).
    pub fn descendants(&self, id: &str) -> Result<BTreeSet<String>, TaxonomyError> {
        self.node(id)?;
        let mut out = BTreeSet::new();
        let mut queue: VecDeque<&str> = self
            .children(id)?
            .iter()
            .map(String::as_str)
            .collect();
        while let Some(next) = queue.pop_front() {
            if out.insert(next.to_string()) {
                queue.extend(self.children(next)?.iter().map(String::as_str));
            }
        }
        Ok(out)
    }

    /// Number of edges on the path from the root (root is depth 0).
    pub fn depth(&self, id: &str) -> Result<usize, TaxonomyError> {
        Ok(self.ancestors(id)?.len())
    }

    /// Leaf ids of the given kind, lexicographic.
    pub fn leaves_of_kind(&self, kind: NodeKind) -> Vec<String> {
        self.nodes
            .values()
            .filter(|n| n.kind == kind)
            .map(|n| n.id.clone())
            .collect()
    }

    pub fn seen_leaves(&self) -> Vec<String> {
        self.leaves_of_kind(NodeKind::Seen)
    }

    pub fn unseen_leaves(&self) -> Vec<String> {
        self.leaves_of_kind(NodeKind::Unseen)
    }

    /// All leaf ids (seen and unseen), lexicographic.
    pub fn leaves(&self) -> Vec<String> {
        self.nodes
            .values()
            .filter(|n| n.kind.is_leaf())
            .map(|n| n.id.clone())
            .collect()
    }

    /// Node ids in an order where every child appears before its parent.
    pub fn bottom_up_order(&self) -> Vec<String> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root.clone()];
        while let Some(id) = stack.pop() {
            stack.extend(self.children.get(&id).into_iter().flatten().cloned());
            order.push(id);
        }
        order.reverse();
        order
    }

    /// Splice out every non-root internal node that has exactly one child,
    /// repeatedly, until no such node remains. Leaves and the root survive.
    pub fn prune_single_child(&self) -> Taxonomy {
        let mut parent: BTreeMap<String, String> = self.parent.clone();
        let mut alive: BTreeSet<String> = self.nodes.keys().cloned().collect();

        loop {
            let mut child_count: BTreeMap<&str, usize> = BTreeMap::new();
            for p in parent.values() {
                *child_count.entry(p.as_str()).or_insert(0) += 1;
            }
            let splice: Vec<String> = alive
                .iter()
                .filter(|id| {
                    *id != &self.root
                        && self.nodes[id.as_str()].kind == NodeKind::Internal
                        && child_count.get(id.as_str()).copied().unwrap_or(0) == 1
                })
                .cloned()
                .collect();
            if splice.is_empty() {
                break;
            }
            for victim in &splice {
                // Non-root, so a grandparent always exists.
                let grandparent = parent
                    .get(victim)
                    .cloned()
                    .expect("spliced node is not the root");
                let orphans: Vec<String> = parent
                    .iter()
                    .filter(|(_, p)| *p == victim)
                    .map(|(c, _)| c.clone())
                    .collect();
                for orphan in orphans {
                    parent.insert(orphan, grandparent.clone());
                }
                parent.remove(victim);
                alive.remove(victim);
            }
        }

        let nodes: Vec<Node> = alive.iter().map(|id| self.nodes[id.as_str()].clone()).collect();
        let edges: Vec<(String, String)> = nodes
            .iter()
            .filter_map(|n| parent.get(&n.id).map(|p| (p.clone(), n.id.clone())))
            .collect();
        Taxonomy::from_parts(nodes, edges).expect("pruning preserves validity")
    }

    /// Add a new unseen leaf under an internal node.
    pub fn attach_unseen(
        &self,
        id: &str,
        label: &str,
        parent_id: &str,
    ) -> Result<Taxonomy, TaxonomyError> {
        if self.nodes.contains_key(id) {
            return Err(TaxonomyError::DuplicateNode(id.to_string()));
        }
        let parent = self.node(parent_id)?;
        if parent.kind != NodeKind::Internal {
            return Err(TaxonomyError::InvalidParentKind(
                parent_id.to_string(),
                parent.kind,
            ));
        }
        let mut next = self.clone();
        next.nodes.insert(
            id.to_string(),
            Node {
                id: id.to_string(),
                label: label.to_string(),
                kind: NodeKind::Unseen,
            },
        );
        next.parent.insert(id.to_string(), parent_id.to_string());
        let kids = next.children.entry(parent_id.to_string()).or_default();
        kids.push(id.to_string());
        kids.sort();
        Ok(next)
    }

    /// Re-kind leaves according to an explicit seen/unseen split.
    ///
    /// Ids in the split must name leaves of this taxonomy; leaves not
    /// mentioned keep their current kind.
    pub fn apply_split(
        &self,
        seen: &[String],
        unseen: &[String],
    ) -> Result<Taxonomy, TaxonomyError> {
        let mut next = self.clone();
        for (ids, kind) in [(seen, NodeKind::Seen), (unseen, NodeKind::Unseen)] {
            for id in ids {
                let node = self.node(id)?;
                if !node.kind.is_leaf() {
                    return Err(TaxonomyError::NotALeaf(id.clone()));
                }
                next.nodes.get_mut(id).expect("checked").kind = kind;
            }
        }
        Ok(next)
    }
}

/// Convenience constructor used throughout the test suites.
pub fn node(id: &str, kind: NodeKind) -> Node {
    Node {
        id: id.to_string(),
        label: id.to_string(),
        kind,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    fn three_node() -> Taxonomy {
        Taxonomy::from_parts(
            vec![
                node("root", NodeKind::Internal),
                node("a", NodeKind::Seen),
                node("b", NodeKind::Seen),
            ],
            vec![edge("root", "a"), edge("root", "b")],
        )
        .unwrap()
    }

    #[test]
    fn minimal_valid_tree() {
        let t = three_node();
        assert_eq!(t.root(), "root");
        assert_eq!(t.len(), 3);
        assert_eq!(t.children("root").unwrap(), &["a", "b"]);
    }

    #[test]
    fn cycle_is_rejected() {
        let err = Taxonomy::from_parts(
            vec![node("root", NodeKind::Internal), node("a", NodeKind::Internal)],
            vec![edge("a", "root"), edge("root", "a")],
        )
        .unwrap_err();
        assert!(matches!(err, TaxonomyError::CycleDetected(_)));
    }

    #[test]
    fn detached_cycle_is_rejected() {
        let err = Taxonomy::from_parts(
            vec![
                node("root", NodeKind::Internal),
                node("a", NodeKind::Seen),
                node("x", NodeKind::Internal),
                node("y", NodeKind::Internal),
            ],
            vec![edge("root", "a"), edge("x", "y"), edge("y", "x")],
        )
        .unwrap_err();
        assert!(matches!(err, TaxonomyError::CycleDetected(_)));
    }

    #[test]
    fn two_parentless_nodes_reject() {
        let err = Taxonomy::from_parts(
            vec![
                node("r1", NodeKind::Internal),
                node("r2", NodeKind::Internal),
                node("a", NodeKind::Seen),
            ],
            vec![edge("r1", "a")],
        )
        .unwrap_err();
        assert!(matches!(err, TaxonomyError::MultipleRoots(_, _)));
    }

    #[test]
    fn dangling_edge_rejected() {
        let err = Taxonomy::from_parts(
            vec![node("root", NodeKind::Internal)],
            vec![edge("root", "ghost")],
        )
        .unwrap_err();
        assert_eq!(err, TaxonomyError::DanglingEdge("ghost".into()));
    }

    #[test]
    fn leaf_with_children_rejected() {
        let err = Taxonomy::from_parts(
            vec![
                node("root", NodeKind::Internal),
                node("a", NodeKind::Seen),
                node("b", NodeKind::Seen),
            ],
            vec![edge("root", "a"), edge("a", "b")],
        )
        .unwrap_err();
        assert_eq!(err, TaxonomyError::LeafWithChildren("a".into()));
    }

    #[test]
    fn multiple_parents_rejected() {
        let err = Taxonomy::from_parts(
            vec![
                node("root", NodeKind::Internal),
                node("m", NodeKind::Internal),
                node("a", NodeKind::Seen),
            ],
            vec![edge("root", "m"), edge("root", "a"), edge("m", "a")],
        )
        .unwrap_err();
        assert_eq!(err, TaxonomyError::MultipleParents("a".into()));
    }

    #[test]
    fn ancestors_root_first() {
        let t = Taxonomy::from_parts(
            vec![
                node("root", NodeKind::Internal),
                node("a", NodeKind::Internal),
                node("leaf", NodeKind::Seen),
            ],
            vec![edge("root", "a"), edge("a", "leaf")],
        )
        .unwrap();
        assert_eq!(t.ancestors("leaf").unwrap(), vec!["root", "a"]);
        assert!(t.ancestors("root").unwrap().is_empty());
        assert!(matches!(
            t.ancestors("nope"),
            Err(TaxonomyError::UnknownNode(_))
        ));
    }

    #[test]
    fn descendants_and_children() {
        let t = three_node();
        assert!(t.descendants("a").unwrap().is_empty());
        let d: Vec<_> = t.descendants("root").unwrap().into_iter().collect();
        assert_eq!(d, vec!["a", "b"]);
    }

    #[test]
    fn prune_splices_chain_once() {
        // root -> a -> b -> {c, d}  =>  root -> b -> {c, d}
        let t = Taxonomy::from_parts(
            vec![
                node("root", NodeKind::Internal),
                node("a", NodeKind::Internal),
                node("b", NodeKind::Internal),
                node("c", NodeKind::Seen),
                node("d", NodeKind::Seen),
            ],
            vec![edge("root", "a"), edge("a", "b"), edge("b", "c"), edge("b", "d")],
        )
        .unwrap();
        let p = t.prune_single_child();
        assert!(!p.contains("a"));
        assert_eq!(p.ancestors("c").unwrap(), vec!["root", "b"]);
        assert_eq!(p.len(), 4);
    }

    #[test]
    fn prune_keeps_root_even_with_one_child() {
        // root -> a -> b -> c  =>  root -> c
        let t = Taxonomy::from_parts(
            vec![
                node("root", NodeKind::Internal),
                node("a", NodeKind::Internal),
                node("b", NodeKind::Internal),
                node("c", NodeKind::Seen),
            ],
            vec![edge("root", "a"), edge("a", "b"), edge("b", "c")],
        )
        .unwrap();
        let p = t.prune_single_child();
        assert_eq!(p.len(), 2);
        assert_eq!(p.ancestors("c").unwrap(), vec!["root"]);
    }

    #[test]
    fn prune_is_identity_on_bushy_tree() {
        let t = three_node();
        let p = t.prune_single_child();
        assert_eq!(p.len(), t.len());
        assert_eq!(p.to_json(), t.to_json());
    }

    #[test]
    fn attach_unseen_basics() {
        let t = Taxonomy::from_parts(
            vec![
                node("root", NodeKind::Internal),
                node("cat", NodeKind::Internal),
                node("tabby", NodeKind::Seen),
                node("lion", NodeKind::Seen),
            ],
            vec![edge("root", "cat"), edge("cat", "tabby"), edge("cat", "lion")],
        )
        .unwrap();
        let t2 = t.attach_unseen("persian-cat", "Persian cat", "cat").unwrap();
        assert_eq!(t2.kind("persian-cat").unwrap(), NodeKind::Unseen);
        assert_eq!(t2.parent_of("persian-cat").unwrap(), Some("cat"));
        assert_eq!(t2.unseen_leaves(), vec!["persian-cat"]);

        let err = t.attach_unseen("x", "x", "tabby").unwrap_err();
        assert!(matches!(err, TaxonomyError::InvalidParentKind(_, _)));
        let err = t.attach_unseen("lion", "lion", "cat").unwrap_err();
        assert!(matches!(err, TaxonomyError::DuplicateNode(_)));
        let err = t.attach_unseen("x", "x", "ghost").unwrap_err();
        assert!(matches!(err, TaxonomyError::UnknownNode(_)));
    }

    #[test]
    fn json_round_trip() {
        let t = three_node();
        let t2 = Taxonomy::parse_json(&t.to_json()).unwrap();
        assert_eq!(t.to_json(), t2.to_json());
    }

    #[test]
    fn apply_split_rekinds_leaves() {
        let t = three_node();
        let t2 = t.apply_split(&["a".into()], &["b".into()]).unwrap();
        assert_eq!(t2.kind("b").unwrap(), NodeKind::Unseen);
        assert_eq!(t2.seen_leaves(), vec!["a"]);
        assert!(t.apply_split(&["root".into()], &[]).is_err());
    }
}
