//! Test support: seeded random instances and independent brute-force
//! reference implementations.
//!
//! Everything here exists to check the production code paths from a second
//! angle — naive traversals, pairwise counting, a dense Newton solver — and
//! is used by the unit, property and acceptance suites. Nothing in the
//! modeling pipeline calls into this module.

use rand::Rng;

use crate::annotation::SignatureMatrix;
use crate::dataset::{AnnotationMode, Dataset};
use crate::solver;
use crate::supportsets::SampleSet;
use crate::taxonomy::{Node, NodeKind, Taxonomy};

/// Draw a standard normal via Box-Muller.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A random rooted tree with `n_nodes` nodes and depth at most `max_depth`.
/// Childless nodes become leaves; each leaf is unseen with probability
/// `unseen_prob`, but at least one seen leaf is guaranteed.
pub fn random_taxonomy<R: Rng>(
    rng: &mut R,
    n_nodes: usize,
    max_depth: usize,
    unseen_prob: f64,
) -> Taxonomy {
    assert!(n_nodes >= 2 && max_depth >= 1);
    let ids: Vec<String> = (0..n_nodes).map(|i| format!("n{i:03}")).collect();
    let mut depth = vec![0usize; n_nodes];
    let mut parent = vec![usize::MAX; n_nodes];
    for i in 1..n_nodes {
        // Pick any earlier node that still has headroom below the depth cap.
        let candidates: Vec<usize> = (0..i).filter(|&p| depth[p] < max_depth).collect();
        let p = candidates[rng.gen_range(0..candidates.len())];
        parent[i] = p;
        depth[i] = depth[p] + 1;
    }
    let has_children: Vec<bool> = (0..n_nodes)
        .map(|i| parent.contains(&i))
        .collect();
    let mut nodes: Vec<Node> = Vec::with_capacity(n_nodes);
    let mut seen_present = false;
    for i in 0..n_nodes {
        let kind = if has_children[i] || i == 0 {
            NodeKind::Internal
        } else if rng.gen_bool(unseen_prob) {
            NodeKind::Unseen
        } else {
            seen_present = true;
            NodeKind::Seen
        };
        nodes.push(Node {
            id: ids[i].clone(),
            label: ids[i].clone(),
            kind,
        });
    }
    if !seen_present {
        let leaf = nodes
            .iter_mut()
            .rev()
            .find(|n| n.kind == NodeKind::Unseen)
            .expect("a tree with >= 2 nodes has a leaf");
        leaf.kind = NodeKind::Seen;
    }
    let edges = (1..n_nodes).map(|i| (ids[parent[i]].clone(), ids[i].clone())).collect();
    Taxonomy::from_parts(nodes, edges).expect("generated tree is valid")
}

/// Random binary signatures for the given classes.
pub fn random_signature<R: Rng>(
    rng: &mut R,
    classes: &[String],
    n_attributes: usize,
    active_prob: f64,
) -> SignatureMatrix {
    let attributes: Vec<String> = (0..n_attributes).map(|a| format!("a{a:02}")).collect();
    let values = (0..classes.len() * n_attributes)
        .map(|_| rng.gen_bool(active_prob))
        .collect();
    SignatureMatrix::new(classes.to_vec(), attributes, values)
}

/// Reference propagation: walk up from every seen leaf instead of sweeping
/// bottom-up. Returns (node id, attribute id) -> active.
pub fn propagate_oracle(
    t: &Taxonomy,
    sig: &SignatureMatrix,
) -> std::collections::BTreeMap<(String, String), bool> {
    let mut out = std::collections::BTreeMap::new();
    for node in t.node_ids() {
        for attr in sig.attributes() {
            out.insert((node.to_string(), attr.clone()), false);
        }
    }
    for leaf in t.seen_leaves() {
        let row = sig.row(&leaf).expect("seen leaf has a row");
        let mut chain = t.ancestors(&leaf).expect("leaf exists");
        chain.push(leaf.clone());
        for (attr, &v) in sig.attributes().iter().zip(row) {
            if v {
                for node in &chain {
                    out.insert((node.clone(), attr.clone()), true);
                }
            }
        }
    }
    for leaf in t.unseen_leaves() {
        if let Ok(row) = sig.row(&leaf) {
            for (attr, &v) in sig.attributes().iter().zip(row) {
                if v {
                    out.insert((leaf.clone(), attr.clone()), true);
                }
            }
        }
    }
    out
}

/// Reference support set: flat filter over all samples. A sample of seen
/// leaf `l` supports (node, attr) when it is positively labeled for the
/// attribute and the attribute is active at every node on the path from `l`
/// up to (but excluding) `node`.
pub fn support_oracle(
    node: &str,
    attribute: &str,
    t: &Taxonomy,
    data: &Dataset,
    sig: &SignatureMatrix,
    mode: AnnotationMode,
    active: &std::collections::BTreeMap<(String, String), bool>,
) -> SampleSet {
    let mut out = SampleSet::new();
    for row in 0..data.len() {
        let leaf = data.class_of(row);
        if t.kind(leaf).map(|k| k != NodeKind::Seen).unwrap_or(true) {
            continue;
        }
        // leaf must be node itself or a descendant of node
        let chain = {
            let mut c = t.ancestors(leaf).expect("leaf exists");
            c.push(leaf.to_string());
            c
        };
        let Some(pos) = chain.iter().position(|n| n == node) else {
            continue;
        };
        // nodes strictly below `node` on the path, leaf inclusive
        if !chain[pos + 1..]
            .iter()
            .all(|n| active[&(n.clone(), attribute.to_string())])
        {
            continue;
        }
        let labeled = match mode {
            AnnotationMode::PerImage => {
                let table = data.image_attributes().expect("per-image labels");
                let col = table.attr_index(attribute).expect("attribute exists");
                table.value(row, col)
            }
            AnnotationMode::PerClass => sig.value(leaf, attribute).expect("row exists"),
        };
        if labeled {
            out.insert(row);
        }
    }
    out
}

/// O(pos * neg) pairwise AUC with half credit for ties.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    assert!(!pos.is_empty() && !neg.is_empty());
    let mut num = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                num += 1.0;
            } else if p == n {
                num += 0.5;
            }
        }
    }
    num / (pos.len() as f64 * neg.len() as f64)
}

/// Independent reference optimizer for the regularized logistic objective:
/// damped Newton with an explicit dense Hessian, run to `tol` on the
/// gradient norm. Returns (weights, bias).
pub fn reference_fit(
    positives: &[&[f64]],
    negatives: &[&[f64]],
    cost: f64,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let dim = positives[0].len();
    let n_params = dim + 1;
    let rows: Vec<(&[f64], f64)> = positives
        .iter()
        .map(|&x| (x, 1.0))
        .chain(negatives.iter().map(|&x| (x, -1.0)))
        .collect();

    let obj = |theta: &[f64]| -> f64 {
        let (w, b) = (&theta[..dim], theta[dim]);
        0.5 * w.iter().map(|v| v * v).sum::<f64>()
            + cost
                * rows
                    .iter()
                    .map(|&(x, y)| solver::log1p_exp_neg(y * solver::decision(w, b, x)))
                    .sum::<f64>()
    };

    let mut theta = vec![0.0; n_params];
    for _ in 0..max_iter {
        let (w, b) = (&theta[..dim], theta[dim]);
        // gradient
        let mut grad = vec![0.0; n_params];
        grad[..dim].copy_from_slice(w);
        for &(x, y) in &rows {
            let coeff = cost * -y * solver::sigmoid(-y * solver::decision(w, b, x));
            for (g, &v) in grad[..dim].iter_mut().zip(x) {
                *g += coeff * v;
            }
            grad[dim] += coeff;
        }
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() <= tol {
            break;
        }
        // Hessian: regularizer block plus cost * sum p(1-p) [x;1][x;1]^T
        let mut hess = vec![0.0; n_params * n_params];
        for j in 0..dim {
            hess[j * n_params + j] = 1.0;
        }
        hess[dim * n_params + dim] = 1e-10;
        for &(x, _) in &rows {
            let p = solver::sigmoid(solver::decision(w, b, x));
            let c = cost * p * (1.0 - p);
            for j in 0..n_params {
                let uj = if j < dim { x[j] } else { 1.0 };
                for k in 0..n_params {
                    let uk = if k < dim { x[k] } else { 1.0 };
                    hess[j * n_params + k] += c * uj * uk;
                }
            }
        }
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        let step = solve_dense(&mut hess, neg_grad, n_params);

        // Backtracking to keep Newton globally convergent.
        let f0 = obj(&theta);
        let slope: f64 = grad.iter().zip(&step).map(|(g, d)| g * d).sum();
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, d)| t + alpha * d).collect();
            if obj(&trial) <= f0 + 1e-4 * alpha * slope {
                theta = trial;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let bias = theta[dim];
    theta.truncate(dim);
    (theta, bias)
}

/// Gaussian elimination with partial pivoting; consumes the matrix.
fn solve_dense(a: &mut [f64], mut b: Vec<f64>, n: usize) -> Vec<f64> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[i * n + col]
                    .abs()
                    .partial_cmp(&a[j * n + col].abs())
                    .expect("finite")
            })
            .expect("nonempty");
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    x
}

/// A random two-blob binary classification problem.
pub struct RandomProblem {
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
    pub cost: f64,
}

impl RandomProblem {
    pub fn generate<R: Rng>(rng: &mut R, max_dim: usize, max_per_side: usize) -> Self {
        let dim = rng.gen_range(1..=max_dim);
        let n_pos = rng.gen_range(1..=max_per_side);
        let n_neg = rng.gen_range(1..=max_per_side);
        let separation = rng.gen_range(0.2..2.5);
        let center: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        let blob = |rng: &mut R, sign: f64, n: usize, center: &[f64]| {
            (0..n)
                .map(|_| {
                    center
                        .iter()
                        .map(|&c| sign * separation * c + standard_normal(rng))
                        .collect()
                })
                .collect::<Vec<Vec<f64>>>()
        };
        let positives = blob(rng, 1.0, n_pos, &center);
        let negatives = blob(rng, -1.0, n_neg, &center);
        let cost = 10f64.powf(rng.gen_range(-2.0..2.0));
        RandomProblem {
            positives,
            negatives,
            cost,
        }
    }

    pub fn positive_rows(&self) -> Vec<&[f64]> {
        self.positives.iter().map(Vec::as_slice).collect()
    }

    pub fn negative_rows(&self) -> Vec<&[f64]> {
        self.negatives.iter().map(Vec::as_slice).collect()
    }
}
