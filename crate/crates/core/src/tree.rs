//! Finite filtrations as scenario trees.
//!
//! Level `k` of the tree is the information available after `k` steps. Each
//! non-leaf node carries a nonempty list of transition laws over its
//! children; the conditional upper expectation is the nodewise maximum of
//! the member means, applied by backward induction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ambiguity::AmbiguitySet;
use crate::error::{Error, Result};

type Points = Vec<Vec<f64>>;

const PROB_TOL: f64 = 1e-12;
/// Tolerance used by [`verify_operator_laws`].
pub const LAW_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<usize>,
    pub level: usize,
    /// Label of the edge from the parent; zero vector at the root.
    pub increment: Vec<f64>,
    pub children: Vec<usize>,
    /// Transition members: probability vectors over `children`.
    pub members: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    dim: usize,
    depth: usize,
    nodes: Vec<Node>,
    levels: Vec<Vec<usize>>,
    level_pos: Vec<usize>,
}

/// Serialized form: a node list in which every parent precedes its
/// children. Children of a node are ordered by their position in the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub dim: usize,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    pub increment: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<Vec<f64>>,
}

impl ScenarioTree {
    pub fn from_document(doc: &TreeDocument) -> Result<Self> {
        let dim = doc.dim;
        if dim == 0 {
            return Err(Error::InvalidTree("dimension must be positive".into()));
        }
        if doc.nodes.is_empty() {
            return Err(Error::InvalidTree("no nodes".into()));
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(doc.nodes.len());
        for (i, rec) in doc.nodes.iter().enumerate() {
            if rec.increment.len() != dim {
                return Err(Error::InvalidTree(format!(
                    "node {i}: increment has dimension {}",
                    rec.increment.len()
                )));
            }
            if rec.increment.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidTree(format!("node {i}: non-finite increment")));
            }
            let level = match rec.parent {
                None if i == 0 => 0,
                None => return Err(Error::InvalidTree(format!("node {i}: second root"))),
                Some(p) if p < i => nodes[p].level + 1,
                Some(p) => {
                    return Err(Error::InvalidTree(format!(
                        "node {i}: parent {p} does not precede it"
                    )))
                }
            };
            if i == 0 && rec.parent.is_some() {
                return Err(Error::InvalidTree("node 0 must be the root".into()));
            }
            if let Some(p) = rec.parent {
                nodes[p].children.push(i);
            }
            nodes.push(Node {
                parent: rec.parent,
                level,
                increment: if i == 0 {
                    vec![0.0; dim]
                } else {
                    rec.increment.clone()
                },
                children: Vec::new(),
                members: rec.members.clone(),
            });
        }
        Self::assemble(dim, nodes)
    }

    fn assemble(dim: usize, nodes: Vec<Node>) -> Result<Self> {
        let mut depth = None;
        for (i, node) in nodes.iter().enumerate() {
            if node.children.is_empty() {
                if !node.members.is_empty() {
                    return Err(Error::InvalidTree(format!("leaf {i} carries members")));
                }
                match depth {
                    None => depth = Some(node.level),
                    Some(d) if d != node.level => {
                        return Err(Error::InvalidTree(format!(
                            "leaf {i} at level {} but other leaves at level {d}",
                            node.level
                        )))
                    }
                    _ => {}
                }
                continue;
            }
            if node.members.is_empty() {
                return Err(Error::InvalidTree(format!("node {i} has no transition members")));
            }
            let mut reachable = vec![false; node.children.len()];
            for (m, probs) in node.members.iter().enumerate() {
                if probs.len() != node.children.len() {
                    return Err(Error::InvalidTree(format!(
                        "node {i} member {m}: {} probabilities for {} children",
                        probs.len(),
                        node.children.len()
                    )));
                }
                if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(Error::InvalidTree(format!(
                        "node {i} member {m}: negative probability"
                    )));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidTree(format!(
                        "node {i} member {m}: probabilities sum to {total}"
                    )));
                }
                for (r, p) in reachable.iter_mut().zip(probs) {
                    *r |= *p > 0.0;
                }
            }
            if let Some(c) = reachable.iter().position(|r| !r) {
                return Err(Error::InvalidTree(format!(
                    "child {} of node {i} has zero probability under every member",
                    node.children[c]
                )));
            }
        }
        let depth = depth.expect("a finite tree has leaves");
        if depth == 0 {
            return Err(Error::InvalidTree("depth must be at least 1".into()));
        }
        let mut levels = vec![Vec::new(); depth + 1];
        let mut level_pos = vec![0; nodes.len()];
        // breadth-first order so that each level is grouped by parent
        let mut frontier = vec![0usize];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &id in &frontier {
                let l = nodes[id].level;
                level_pos[id] = levels[l].len();
                levels[l].push(id);
                next.extend_from_slice(&nodes[id].children);
            }
            frontier = next;
        }
        Ok(Self {
            dim,
            depth,
            nodes,
            levels,
            level_pos,
        })
    }

    pub fn to_document(&self) -> TreeDocument {
        TreeDocument {
            dim: self.dim,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    parent: n.parent,
                    increment: n.increment.clone(),
                    members: n.members.clone(),
                })
                .collect(),
        }
    }

    /// Full tree of `depth` independent steps with law `law` scaled by
    /// `scale`; every node carries the same transition ambiguity.
    pub fn iid(law: &AmbiguitySet, depth: usize, scale: f64) -> Result<Self> {
        Self::independent(&vec![law; depth], scale)
    }

    /// Full tree whose level-`k` transitions follow `laws[k-1]`.
    pub fn independent(laws: &[&AmbiguitySet], scale: f64) -> Result<Self> {
        if laws.is_empty() {
            return Err(Error::InvalidTree("depth must be at least 1".into()));
        }
        let dim = laws[0].dim();
        let steps: Vec<(Points, Points)> = laws
            .iter()
            .map(|law| {
                let mut points: Vec<Vec<f64>> = Vec::new();
                for m in law.members() {
                    for (z, &p) in m.support().iter().zip(m.probs()) {
                        if p > 0.0 && !points.contains(z) {
                            points.push(z.clone());
                        }
                    }
                }
                let members = law
                    .members()
                    .iter()
                    .map(|m| {
                        points
                            .iter()
                            .map(|pt| {
                                m.support()
                                    .iter()
                                    .position(|z| z == pt)
                                    .map_or(0.0, |i| m.probs()[i])
                            })
                            .collect()
                    })
                    .collect();
                let scaled = points
                    .into_iter()
                    .map(|z| z.into_iter().map(|x| x * scale).collect())
                    .collect();
                (scaled, members)
            })
            .collect();
        let mut nodes = vec![Node {
            parent: None,
            level: 0,
            increment: vec![0.0; dim],
            children: Vec::new(),
            members: Vec::new(),
        }];
        let mut frontier = vec![0usize];
        for (points, members) in &steps {
            let mut next = Vec::with_capacity(frontier.len() * points.len());
            for &id in &frontier {
                for z in points {
                    let child = nodes.len();
                    nodes.push(Node {
                        parent: Some(id),
                        level: nodes[id].level + 1,
                        increment: z.clone(),
                        children: Vec::new(),
                        members: Vec::new(),
                    });
                    nodes[id].children.push(child);
                    next.push(child);
                }
                nodes[id].members = members.clone();
            }
            frontier = next;
        }
        Self::assemble(dim, nodes)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn level(&self, l: usize) -> &[usize] {
        &self.levels[l]
    }

    pub fn position(&self, id: usize) -> usize {
        self.level_pos[id]
    }

    /// Increments along the path to `id`, root excluded.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes[id].level);
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(cur);
            cur = p;
        }
        out.reverse();
        out
    }

    /// The ancestor of `id` at level `level` (itself if equal).
    pub fn ancestor(&self, mut id: usize, level: usize) -> usize {
        while self.nodes[id].level > level {
            id = self.nodes[id].parent.expect("non-root has parent");
        }
        id
    }

    pub fn variable(&self, level: usize, f: impl Fn(usize) -> f64) -> TreeRandomVariable {
        TreeRandomVariable {
            level,
            values: self.levels[level].iter().map(|&id| f(id)).collect(),
        }
    }

    pub fn constant(&self, level: usize, c: f64) -> TreeRandomVariable {
        self.variable(level, |_| c)
    }

    /// Leaf-level variable computed from the path of node ids below the root.
    pub fn path_variable(&self, f: impl Fn(&[usize]) -> f64) -> TreeRandomVariable {
        self.variable(self.depth, |leaf| f(&self.path(leaf)))
    }

    /// Views a level-`l` variable as a variable at a finer level.
    pub fn lift(&self, x: &TreeRandomVariable, level: usize) -> Result<TreeRandomVariable> {
        if level < x.level || level > self.depth {
            return Err(Error::LevelMismatch(format!(
                "cannot lift level {} to level {level}",
                x.level
            )));
        }
        Ok(self.variable(level, |id| x.values[self.level_pos[self.ancestor(id, x.level)]]))
    }

    fn check_var(&self, x: &TreeRandomVariable) -> Result<()> {
        if x.level > self.depth || x.values.len() != self.levels[x.level].len() {
            return Err(Error::LevelMismatch(format!(
                "variable at level {} with {} values does not fit the tree",
                x.level,
                x.values.len()
            )));
        }
        Ok(())
    }

    /// `E[X | level k]` for `k ≤ level(X)` by backward induction.
    pub fn cond_expect(&self, x: &TreeRandomVariable, k: usize) -> Result<TreeRandomVariable> {
        self.check_var(x)?;
        if k > x.level {
            return Err(Error::LevelMismatch(format!(
                "conditioning level {k} exceeds variable level {}",
                x.level
            )));
        }
        let mut values = x.values.clone();
        for l in (k..x.level).rev() {
            values = self.levels[l]
                .iter()
                .map(|&id| self.node_upper(id, |c| values[self.level_pos[c]]))
                .collect();
        }
        Ok(TreeRandomVariable { level: k, values })
    }

    /// `E[X | level k]` for any `k`: lifts when `X` is already measurable.
    pub fn cond_expect_any(&self, x: &TreeRandomVariable, k: usize) -> Result<TreeRandomVariable> {
        if k >= x.level {
            self.lift(x, k)
        } else {
            self.cond_expect(x, k)
        }
    }

    /// `-E[-X | level k]`.
    pub fn cond_expect_lower(&self, x: &TreeRandomVariable, k: usize) -> Result<TreeRandomVariable> {
        Ok(self.cond_expect(&x.neg(), k)?.neg())
    }

    /// Unconditional upper expectation.
    pub fn expect(&self, x: &TreeRandomVariable) -> Result<f64> {
        Ok(self.cond_expect(x, 0)?.values[0])
    }

    /// `max_P Σ_c P(c)·f(c)` over the transition members of `id`.
    pub fn node_upper(&self, id: usize, f: impl Fn(usize) -> f64) -> f64 {
        let node = &self.nodes[id];
        let vals: Vec<f64> = node.children.iter().map(|&c| f(c)).collect();
        node.members
            .iter()
            .map(|m| m.iter().zip(&vals).map(|(p, v)| p * v).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn node_lower(&self, id: usize, f: impl Fn(usize) -> f64) -> f64 {
        -self.node_upper(id, |c| -f(c))
    }
}

/// A real random variable measurable with respect to one tree level.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeRandomVariable {
    pub level: usize,
    /// Values in level order (see [`ScenarioTree::level`]).
    pub values: Vec<f64>,
}

impl TreeRandomVariable {
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            level: self.level,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        self.map(|v| -v)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.level, other.level, "level mismatch");
        Self {
            level: self.level,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Edge-labelled `d`-vectors `Z_{n,k}`, indexed by node id (the label of
/// node `v` is the increment on the edge into `v`).
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleArray {
    dim: usize,
    values: Vec<Vec<f64>>,
}

impl MartingaleArray {
    pub fn from_tree(tree: &ScenarioTree) -> Self {
        Self {
            dim: tree.dim,
            values: tree.nodes.iter().map(|n| n.increment.clone()).collect(),
        }
    }

    pub fn new(tree: &ScenarioTree, f: impl Fn(usize) -> Vec<f64>) -> Result<Self> {
        let values: Vec<Vec<f64>> = (0..tree.len()).map(f).collect();
        let dim = values[0].len();
        if values
            .iter()
            .any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::InvalidTree("ragged or non-finite increments".into()));
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, node: usize) -> &[f64] {
        &self.values[node]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| x * c).collect())
                .collect(),
        }
    }
}

/// A sum over steps of nodewise conditional expectations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalStat {
    /// The conditional term at every non-leaf node (zero at leaves).
    pub node_terms: Vec<f64>,
    /// Path sums on the leaf level.
    pub path_sum: TreeRandomVariable,
    /// Upper expectation of the path sum.
    pub upper: f64,
}

fn check_array(tree: &ScenarioTree, z: &MartingaleArray) -> Result<()> {
    if z.values.len() != tree.len() {
        return Err(Error::InvalidTree(format!(
            "array has {} labels for {} nodes",
            z.values.len(),
            tree.len()
        )));
    }
    Ok(())
}

/// Sums `term(node)` over the non-leaf nodes along each path, for steps
/// `k ≤ checkpoint` (the term at a level-`k-1` node belongs to step `k`).
fn accumulate(
    tree: &ScenarioTree,
    checkpoint: usize,
    term: impl Fn(usize) -> f64,
) -> Result<ConditionalStat> {
    let node_terms: Vec<f64> = tree
        .nodes
        .iter()
        .enumerate()
        .map(|(id, n)| if n.children.is_empty() { 0.0 } else { term(id) })
        .collect();
    let mut acc = vec![0.0; tree.len()];
    for l in 1..=tree.depth {
        for &id in &tree.levels[l] {
            let p = tree.nodes[id].parent.unwrap();
            acc[id] = acc[p] + if l <= checkpoint { node_terms[p] } else { 0.0 };
        }
    }
    let path_sum = tree.variable(tree.depth, |id| acc[id]);
    let upper = tree.expect(&path_sum)?;
    Ok(ConditionalStat {
        node_terms,
        path_sum,
        upper,
    })
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `Σ_k E[(|Z_k|² - ε)⁺ | level k-1]`.
pub fn lindeberg_stat(tree: &ScenarioTree, z: &MartingaleArray, eps: f64) -> Result<ConditionalStat> {
    check_array(tree, z)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    accumulate(tree, tree.depth, |id| {
        tree.node_upper(id, |c| (norm_sq(z.get(c)) - eps).max(0.0))
    })
}

/// `Σ_k E[|Z_k|^p | level k-1]`.
pub fn moment_stat(tree: &ScenarioTree, z: &MartingaleArray, p: f64) -> Result<ConditionalStat> {
    check_array(tree, z)?;
    accumulate(tree, tree.depth, |id| {
        tree.node_upper(id, |c| norm_sq(z.get(c)).sqrt().powf(p))
    })
}

/// Conditional upper and lower means of `Z_k` at a non-leaf node.
pub fn conditional_means(tree: &ScenarioTree, z: &MartingaleArray, id: usize) -> (Vec<f64>, Vec<f64>) {
    (0..z.dim)
        .map(|i| {
            (
                tree.node_upper(id, |c| z.get(c)[i]),
                tree.node_lower(id, |c| z.get(c)[i]),
            )
        })
        .unzip()
}

/// `Σ_k (|E[Z_k | level k-1]| + |Ê[Z_k | level k-1]|)`.
pub fn drift_stat(tree: &ScenarioTree, z: &MartingaleArray) -> Result<ConditionalStat> {
    check_array(tree, z)?;
    accumulate(tree, tree.depth, |id| {
        let (up, lo) = conditional_means(tree, z, id);
        norm_sq(&up).sqrt() + norm_sq(&lo).sqrt()
    })
}

/// `Σ_{k ≤ checkpoint} E[⟨Z_k A, Z_k⟩ | level k-1]`; `a` is row-major `d×d`.
pub fn quadratic_characteristic(
    tree: &ScenarioTree,
    z: &MartingaleArray,
    a: &[f64],
    checkpoint: usize,
) -> Result<ConditionalStat> {
    check_array(tree, z)?;
    let d = z.dim;
    if a.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            found: a.len(),
        });
    }
    let asym = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| (a[i * d + j] - a[j * d + i]).abs())
        .fold(0.0f64, f64::max);
    if asym > 1e-12 {
        return Err(Error::NotSymmetric(asym));
    }
    if checkpoint > tree.depth {
        return Err(Error::LevelMismatch(format!(
            "checkpoint {checkpoint} beyond depth {}",
            tree.depth
        )));
    }
    accumulate(tree, checkpoint, |id| {
        tree.node_upper(id, |c| quad_form(a, z.get(c)))
    })
}

fn quad_form(a: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += x[i] * a[i * d + j] * x[j];
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RosenthalFirst {
    /// `E[(max_k (S_n - S_k))²]`.
    pub lhs: f64,
    /// `E[Σ_k E[X_k² | level k-1]]`.
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RosenthalSecond {
    pub p: f64,
    /// `E[max_k |S_k|^p]`.
    pub lhs: f64,
    /// `E[Σ_k E[|X_k|^p | level k-1]]`.
    pub moment_term: f64,
    /// `E[(Σ_k E[X_k² | level k-1])^{p/2}]`.
    pub variance_term: f64,
    /// `E[(Σ_k (E[X_k|·]⁺ + Ê[X_k|·]⁻))^p]`.
    pub drift_term: f64,
    /// `lhs / (moment + variance + drift)`; zero when both sides vanish.
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RosenthalReport {
    pub first: RosenthalFirst,
    pub second: RosenthalSecond,
}

fn scalar_array(z: &MartingaleArray) -> Result<()> {
    if z.dim != 1 {
        return Err(Error::OneDimensionalOnly(z.dim));
    }
    Ok(())
}

/// Maximal inequality for arrays with nonpositive conditional upper means,
/// with constant 1. Fails with [`Error::ConditionalMeanSign`] when some
/// node has a positive conditional upper mean.
pub fn rosenthal_first(tree: &ScenarioTree, z: &MartingaleArray) -> Result<RosenthalFirst> {
    check_array(tree, z)?;
    scalar_array(z)?;
    for (id, n) in tree.nodes.iter().enumerate() {
        if n.children.is_empty() {
            continue;
        }
        let mean = tree.node_upper(id, |c| z.get(c)[0]);
        if mean > PROB_TOL {
            return Err(Error::ConditionalMeanSign { node: id, mean });
        }
    }
    let tail_max = tree.path_variable(|path| {
        // max over k of S_n - S_k, k = 0..n; k = n contributes 0
        let mut tail = 0.0f64;
        let mut best = 0.0f64;
        for &id in path.iter().rev() {
            tail += z.get(id)[0];
            best = best.max(tail);
        }
        best * best
    });
    let lhs = tree.expect(&tail_max)?;
    let rhs = quadratic_characteristic(tree, z, &[1.0], tree.depth)?.upper;
    Ok(RosenthalFirst {
        lhs,
        rhs,
        pass: lhs <= rhs + LAW_TOL,
    })
}

/// The three-term `p`-th moment bound. The constant is not asserted; the
/// ratio of the two sides is reported instead.
pub fn rosenthal_second(tree: &ScenarioTree, z: &MartingaleArray, p: f64) -> Result<RosenthalSecond> {
    check_array(tree, z)?;
    scalar_array(z)?;
    if !(p >= 2.0) {
        return Err(Error::InvalidArgument(format!("p must be at least 2, got {p}")));
    }
    let max_abs = tree.path_variable(|path| {
        let mut s = 0.0f64;
        let mut best = 0.0f64;
        for &id in path {
            s += z.get(id)[0];
            best = best.max(s.abs());
        }
        best.powf(p)
    });
    let lhs = tree.expect(&max_abs)?;
    let moment_term = moment_stat(tree, z, p)?.upper;
    let var = quadratic_characteristic(tree, z, &[1.0], tree.depth)?;
    let variance_term = tree.expect(&var.path_sum.map(|v| v.max(0.0).powf(p / 2.0)))?;
    let drift = accumulate(tree, tree.depth, |id| {
        let up = tree.node_upper(id, |c| z.get(c)[0]);
        let lo = tree.node_lower(id, |c| z.get(c)[0]);
        up.max(0.0) + (-lo).max(0.0)
    })?;
    let drift_term = tree.expect(&drift.path_sum.map(|v| v.powf(p)))?;
    let rhs = moment_term + variance_term + drift_term;
    let ratio = if lhs == 0.0 {
        0.0
    } else if rhs == 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    };
    Ok(RosenthalSecond {
        p,
        lhs,
        moment_term,
        variance_term,
        drift_term,
        ratio,
    })
}

pub fn rosenthal_check(tree: &ScenarioTree, z: &MartingaleArray, p: f64) -> Result<RosenthalReport> {
    Ok(RosenthalReport {
        first: rosenthal_first(tree, z)?,
        second: rosenthal_second(tree, z, p)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Law {
    /// Translation and product rule for level-measurable factors.
    Translation,
    Product,
    /// `E[E_k X] = E[X]`.
    Consistency,
    ConstantsAndHomogeneity,
    Monotonicity,
    SubadditivityOfDifferences,
    Tower,
    Boundedness,
}

impl Law {
    pub const ALL: [Law; 8] = [
        Law::Translation,
        Law::Product,
        Law::Consistency,
        Law::ConstantsAndHomogeneity,
        Law::Monotonicity,
        Law::SubadditivityOfDifferences,
        Law::Tower,
        Law::Boundedness,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Law::Translation => "translation",
            Law::Product => "product",
            Law::Consistency => "consistency",
            Law::ConstantsAndHomogeneity => "constants-homogeneity",
            Law::Monotonicity => "monotonicity",
            Law::SubadditivityOfDifferences => "subadditivity",
            Law::Tower => "tower",
            Law::Boundedness => "boundedness",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawCheck {
    pub law: Law,
    pub worst: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LawReport {
    pub checks: Vec<LawCheck>,
}

impl LawReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn worst(&self, law: Law) -> f64 {
        self.checks.iter().find(|c| c.law == law).map_or(0.0, |c| c.worst)
    }

    /// Combines reports by taking the worst violation per law.
    pub fn merge(&mut self, other: &LawReport) {
        for c in &mut self.checks {
            let w = other.worst(c.law);
            c.worst = c.worst.max(w);
            c.pass = c.worst <= LAW_TOL;
        }
    }
}

fn max_gap(a: &TreeRandomVariable, b: &TreeRandomVariable) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Checks the operator laws exactly on the given sample variables and on
/// variables derived from them (level-measurable factors are produced as
/// conditional expectations of the samples).
pub fn verify_operator_laws(tree: &ScenarioTree, samples: &[TreeRandomVariable]) -> Result<LawReport> {
    let mut worst = [0.0f64; 8];
    let mut bump = |law: Law, v: f64| {
        let slot = &mut worst[law as usize];
        *slot = slot.max(v);
    };
    for x in samples {
        tree.check_var(x)?;
    }
    let top = tree.depth;
    let lifted: Vec<TreeRandomVariable> = samples.iter().map(|x| tree.lift(x, top)).collect::<Result<_>>()?;

    for (xi, x) in samples.iter().enumerate() {
        let ex = tree.expect(x)?;
        let bound = x.max_abs();
        for k in 0..=x.level {
            let ek = tree.cond_expect(x, k)?;
            // (b)
            bump(Law::Consistency, (tree.expect(&ek)? - ex).abs());
            // (c)
            let c = 1.0 + xi as f64 * 0.37;
            let ec = tree.cond_expect(&tree.constant(x.level, c), k)?;
            bump(
                Law::ConstantsAndHomogeneity,
                ec.values.iter().fold(0.0f64, |m, v| m.max((v - c).abs())),
            );
            for lambda in [0.0, 0.5, 3.0] {
                let lhs = tree.cond_expect(&x.map(|v| lambda * v), k)?;
                bump(
                    Law::ConstantsAndHomogeneity,
                    max_gap(&lhs, &ek.map(|v| lambda * v)),
                );
            }
            // (g)
            bump(Law::Boundedness, (ek.max_abs() - bound).max(0.0));
            // (f)
            for m in 0..=x.level {
                let inner = tree.cond_expect(x, m)?;
                let outer = tree.cond_expect_any(&inner, k)?;
                let direct = tree.cond_expect(x, m.min(k))?;
                let direct = tree.lift(&direct, outer.level)?;
                bump(Law::Tower, max_gap(&outer, &direct));
            }
        }
    }

    for (i, x) in lifted.iter().enumerate() {
        for (j, y) in lifted.iter().enumerate() {
            for k in 0..=top {
                let ex = tree.cond_expect(x, k)?;
                let ey = tree.cond_expect(y, k)?;
                // (d): Y' = X + Y² ≥ X
                let dominating = x.zip_with(y, |a, b| a + b * b);
                let ed = tree.cond_expect(&dominating, k)?;
                let viol = ex
                    .values
                    .iter()
                    .zip(&ed.values)
                    .fold(0.0f64, |m, (a, b)| m.max(a - b));
                bump(Law::Monotonicity, viol.max(0.0));
                // (e)
                let ediff = tree.cond_expect(&x.zip_with(y, |a, b| a - b), k)?;
                let viol = (0..ex.values.len())
                    .map(|p| ex.values[p] - ey.values[p] - ediff.values[p])
                    .fold(0.0f64, f64::max);
                bump(Law::SubadditivityOfDifferences, viol);
                if i == j {
                    continue;
                }
                // translation by the level-k factor E_k[Y]
                let factor = tree.lift(&ey, top)?;
                let sum = tree.cond_expect(&factor.zip_with(x, |a, b| a + b), k)?;
                let expected = ey.zip_with(&ex, |a, b| a + b);
                bump(Law::Translation, max_gap(&sum, &expected));
                let prod = tree.cond_expect(&factor.zip_with(x, |a, b| a * b), k)?;
                let eneg = tree.cond_expect(&x.neg(), k)?;
                let expected = TreeRandomVariable {
                    level: k,
                    values: (0..ey.values.len())
                        .map(|p| {
                            let f = ey.values[p];
                            f.max(0.0) * ex.values[p] + (-f).max(0.0) * eneg.values[p]
                        })
                        .collect(),
                };
                bump(Law::Product, max_gap(&prod, &expected));
            }
        }
    }
    Ok(LawReport {
        checks: Law::ALL
            .iter()
            .map(|&law| LawCheck {
                law,
                worst: worst[law as usize],
                pass: worst[law as usize] <= LAW_TOL,
            })
            .collect(),
    })
}

/// Sign constraint on the conditional means of generated increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanMode {
    Free,
    /// Every member has nonpositive mean at every node.
    Nonpositive,
    /// Every member has zero mean at every node.
    Zero,
}

/// Bounds for [`random_tree`]. Increments are one-dimensional multiples of
/// `1/8` in `[-1, 1]` before any mean shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeGen {
    pub min_depth: usize,
    pub max_depth: usize,
    pub max_children: usize,
    pub max_members: usize,
    pub mode: MeanMode,
}

impl Default for TreeGen {
    fn default() -> Self {
        Self {
            min_depth: 1,
            max_depth: 6,
            max_children: 4,
            max_members: 3,
            mode: MeanMode::Free,
        }
    }
}

impl TreeGen {
    pub fn with_mode(mode: MeanMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

fn random_probs(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
    let head: f64 = p[..n - 1].iter().sum();
    p[n - 1] = 1.0 - head;
    p
}

fn eighth(rng: &mut impl Rng, lo: i32, hi: i32) -> f64 {
    f64::from(rng.gen_range(lo..=hi)) / 8.0
}

/// Zero-mean members on nonzero increments: mixtures of two-point laws on
/// every (negative, positive) pair, so every child has positive mass.
fn zero_mean_members(rng: &mut impl Rng, incs: &[f64], members: usize) -> Vec<Vec<f64>> {
    let neg: Vec<usize> = (0..incs.len()).filter(|&i| incs[i] < 0.0).collect();
    let pos: Vec<usize> = (0..incs.len()).filter(|&i| incs[i] > 0.0).collect();
    (0..members)
        .map(|_| {
            let weights = random_probs(rng, neg.len() * pos.len());
            let mut p = vec![0.0; incs.len()];
            for (w, (&a, &b)) in weights
                .iter()
                .zip(neg.iter().flat_map(|a| pos.iter().map(move |b| (a, b))))
            {
                let (x, y) = (incs[a], incs[b]);
                p[a] += w * y / (y - x);
                p[b] += w * -x / (y - x);
            }
            p
        })
        .collect()
}

/// A seeded random one-dimensional tree within the bounds of `cfg`.
pub fn random_tree(cfg: &TreeGen, seed: u64) -> ScenarioTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(cfg.min_depth.max(1)..=cfg.max_depth.max(cfg.min_depth.max(1)));
    let mut nodes = vec![Node {
        parent: None,
        level: 0,
        increment: vec![0.0],
        children: Vec::new(),
        members: Vec::new(),
    }];
    let mut frontier = vec![0usize];
    for level in 1..=depth {
        let mut next = Vec::new();
        for &id in &frontier {
            let m = rng.gen_range(1..=cfg.max_members.max(1));
            let (incs, members) = match cfg.mode {
                MeanMode::Zero => {
                    let n = rng.gen_range(2..=cfg.max_children.max(2));
                    let mut incs = vec![eighth(&mut rng, -8, -1), eighth(&mut rng, 1, 8)];
                    for _ in 2..n {
                        let mag = eighth(&mut rng, 1, 8);
                        incs.push(if rng.gen_bool(0.5) { mag } else { -mag });
                    }
                    let members = zero_mean_members(&mut rng, &incs, m);
                    (incs, members)
                }
                MeanMode::Free | MeanMode::Nonpositive => {
                    let n = rng.gen_range(1..=cfg.max_children.max(1));
                    let mut incs: Vec<f64> = (0..n).map(|_| eighth(&mut rng, -8, 8)).collect();
                    let members: Vec<Vec<f64>> = (0..m).map(|_| random_probs(&mut rng, n)).collect();
                    if cfg.mode == MeanMode::Nonpositive {
                        let top = members
                            .iter()
                            .map(|p| p.iter().zip(&incs).map(|(a, b)| a * b).sum::<f64>())
                            .fold(f64::NEG_INFINITY, f64::max);
                        let slack = if rng.gen_bool(0.5) {
                            0.0
                        } else {
                            eighth(&mut rng, 0, 2)
                        };
                        for x in &mut incs {
                            *x -= top + slack;
                        }
                    }
                    (incs, members)
                }
            };
            for z in incs {
                let child = nodes.len();
                nodes.push(Node {
                    parent: Some(id),
                    level,
                    increment: vec![z],
                    children: Vec::new(),
                    members: Vec::new(),
                });
                nodes[id].children.push(child);
                next.push(child);
            }
            nodes[id].members = members;
        }
        frontier = next;
    }
    ScenarioTree::assemble(1, nodes).expect("generator produces valid trees")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band() -> AmbiguitySet {
        AmbiguitySet::bernoulli_band(0.5, 1.0).unwrap()
    }

    #[test]
    fn two_level_conditional_variance() {
        let tree = ScenarioTree::iid(&band(), 2, 1.0).unwrap();
        let z = MartingaleArray::from_tree(&tree);
        let x = tree.variable(2, |id| z.get(id)[0].powi(2));
        let e1 = tree.cond_expect(&x, 1).unwrap();
        assert!(e1.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn measurable_variables_are_fixed() {
        let tree = ScenarioTree::iid(&band(), 3, 1.0).unwrap();
        let x1 = tree.variable(1, |id| tree.node(id).increment[0] * 2.0 + 0.5);
        let lifted = tree.lift(&x1, 3).unwrap();
        assert_eq!(tree.cond_expect(&lifted, 1).unwrap(), x1);
    }

    #[test]
    fn tower_with_coarser_inner_level() {
        let tree = ScenarioTree::iid(&band(), 3, 1.0).unwrap();
        let x = tree.path_variable(|p| {
            let s: f64 = p.iter().map(|&id| tree.node(id).increment[0]).sum();
            s.max(0.0).powi(3) - s
        });
        // E_2[E_1[X]] = E_1[X]
        let e1 = tree.cond_expect(&x, 1).unwrap();
        let outer = tree.cond_expect_any(&e1, 2).unwrap();
        assert_eq!(outer, tree.lift(&e1, 2).unwrap());
    }

    #[test]
    fn lindeberg_examples() {
        let tree = ScenarioTree::iid(&band(), 3, 0.5).unwrap();
        let z = MartingaleArray::from_tree(&tree);
        assert_eq!(lindeberg_stat(&tree, &z, 0.25).unwrap().upper, 0.0);

        let doc = TreeDocument {
            dim: 1,
            nodes: vec![
                NodeRecord {
                    parent: None,
                    increment: vec![0.0],
                    members: vec![vec![1.0]],
                },
                NodeRecord {
                    parent: Some(0),
                    increment: vec![2.0],
                    members: vec![vec![1.0]],
                },
                NodeRecord {
                    parent: Some(1),
                    increment: vec![0.0],
                    members: vec![],
                },
            ],
        };
        let tree = ScenarioTree::from_document(&doc).unwrap();
        let z = MartingaleArray::from_tree(&tree);
        let stat = lindeberg_stat(&tree, &z, 1.0).unwrap();
        assert_eq!(stat.node_terms[0], 3.0);
        assert_eq!(stat.upper, 3.0);
    }

    #[test]
    fn drift_examples() {
        let tree = ScenarioTree::iid(&band(), 3, 1.0).unwrap();
        let z = MartingaleArray::from_tree(&tree);
        assert_eq!(drift_stat(&tree, &z).unwrap().upper, 0.0);

        let doc = TreeDocument {
            dim: 1,
            nodes: vec![
                NodeRecord {
                    parent: None,
                    increment: vec![0.0],
                    members: vec![vec![1.0]],
                },
                NodeRecord {
                    parent: Some(0),
                    increment: vec![-0.75],
                    members: vec![],
                },
            ],
        };
        let tree = ScenarioTree::from_document(&doc).unwrap();
        let z = MartingaleArray::from_tree(&tree);
        assert_eq!(drift_stat(&tree, &z).unwrap().upper, 1.5);
    }

    #[test]
    fn quadratic_characteristic_examples() {
        let n = 5;
        let tree = ScenarioTree::iid(&band(), n, 1.0 / (n as f64).sqrt()).unwrap();
        let z = MartingaleArray::from_tree(&tree);
        let up = quadratic_characteristic(&tree, &z, &[1.0], n).unwrap().upper;
        assert!((up - 1.0).abs() < 1e-12);
        let down = quadratic_characteristic(&tree, &z, &[-1.0], n).unwrap().upper;
        assert!((down + 0.5).abs() < 1e-12);
        assert_eq!(quadratic_characteristic(&tree, &z, &[0.0], n).unwrap().upper, 0.0);
        let half = quadratic_characteristic(&tree, &z, &[1.0], 2).unwrap().upper;
        assert!((half - 0.4).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let law = AmbiguitySet::peng_product(&band(), &band()).unwrap();
        let tree = ScenarioTree::iid(&law, 1, 1.0).unwrap();
        let z = MartingaleArray::from_tree(&tree);
        assert!(matches!(
            quadratic_characteristic(&tree, &z, &[1.0, 0.5, 0.0, 1.0], 1),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn rosenthal_zero_tree() {
        let tree = ScenarioTree::iid(&AmbiguitySet::point_mass(1), 3, 1.0).unwrap();
        let z = MartingaleArray::from_tree(&tree);
        let r = rosenthal_check(&tree, &z, 2.0).unwrap();
        assert_eq!((r.first.lhs, r.first.rhs, r.first.pass), (0.0, 0.0, true));
        assert_eq!(r.second.ratio, 0.0);
    }

    #[test]
    fn rosenthal_precondition() {
        let doc = TreeDocument {
            dim: 1,
            nodes: vec![
                NodeRecord {
                    parent: None,
                    increment: vec![0.0],
                    members: vec![vec![0.5, 0.5]],
                },
                NodeRecord {
                    parent: Some(0),
                    increment: vec![1.0],
                    members: vec![],
                },
                NodeRecord {
                    parent: Some(0),
                    increment: vec![0.0],
                    members: vec![],
                },
            ],
        };
        let tree = ScenarioTree::from_document(&doc).unwrap();
        let z = MartingaleArray::from_tree(&tree);
        assert!(matches!(
            rosenthal_first(&tree, &z),
            Err(Error::ConditionalMeanSign { node: 0, .. })
        ));
        assert!(rosenthal_second(&tree, &z, 3.0).is_ok());
    }

    #[test]
    fn rosenthal_band_depth_two_has_slack() {
        let tree = ScenarioTree::iid(&band(), 2, 1.0).unwrap();
        let z = MartingaleArray::from_tree(&tree);
        let r = rosenthal_first(&tree, &z).unwrap();
        assert!(r.pass);
        assert!(r.rhs - r.lhs > 0.0, "{r:?}");
    }

    #[test]
    fn document_validation() {
        let bad_sum = TreeDocument {
            dim: 1,
            nodes: vec![
                NodeRecord {
                    parent: None,
                    increment: vec![0.0],
                    members: vec![vec![0.5, 0.6]],
                },
                NodeRecord {
                    parent: Some(0),
                    increment: vec![1.0],
                    members: vec![],
                },
                NodeRecord {
                    parent: Some(0),
                    increment: vec![-1.0],
                    members: vec![],
                },
            ],
        };
        assert!(ScenarioTree::from_document(&bad_sum).is_err());
        let unreachable = TreeDocument {
            dim: 1,
            nodes: vec![
                NodeRecord {
                    parent: None,
                    increment: vec![0.0],
                    members: vec![vec![1.0, 0.0]],
                },
                NodeRecord {
                    parent: Some(0),
                    increment: vec![1.0],
                    members: vec![],
                },
                NodeRecord {
                    parent: Some(0),
                    increment: vec![-1.0],
                    members: vec![],
                },
            ],
        };
        assert!(ScenarioTree::from_document(&unreachable).is_err());
        let ragged = TreeDocument {
            dim: 1,
            nodes: vec![
                NodeRecord {
                    parent: None,
                    increment: vec![0.0],
                    members: vec![vec![0.5, 0.5]],
                },
                NodeRecord {
                    parent: Some(0),
                    increment: vec![1.0],
                    members: vec![vec![1.0]],
                },
                NodeRecord {
                    parent: Some(0),
                    increment: vec![-1.0],
                    members: vec![],
                },
                NodeRecord {
                    parent: Some(1),
                    increment: vec![1.0],
                    members: vec![],
                },
            ],
        };
        assert!(ScenarioTree::from_document(&ragged).is_err());
    }

    #[test]
    fn document_round_trip() {
        let tree = ScenarioTree::iid(&band(), 2, 0.5).unwrap();
        let back = ScenarioTree::from_document(&tree.to_document()).unwrap();
        assert_eq!(tree, back);
    }
}
