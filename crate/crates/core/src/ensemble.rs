//! Splitting a relation across several models.
//!
//! Each atomic group gets a resampled-ELBO score (reported as a loss: lower
//! is better). Scores of unions are bounded by the sum of member scores, and
//! dynamic programs choose the partition minimising the total score, either
//! as a cut of an OLAP hierarchy or as contiguous runs of ordered groups.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::relation::{EncodedDataset, Relation};
use crate::scalar::Scalar;
use crate::vae::{reparameterize, standard_normal, VaeParams};
use crate::vrs::{acceptance_from_ratio, log_ratio};

pub const MIN_R_ELBO_DRAWS: usize = 64;
/// Fraction of skipped tuples above which a score is flagged unreliable.
pub const UNRELIABLE_SKIP_FRACTION: f64 = 0.1;

/// Resampled ELBO of a model on a group of tuples.
#[derive(Clone, Debug, PartialEq)]
pub struct RElbo {
    /// Mean per-tuple resampled ELBO (log-likelihood scale, higher is better).
    pub mean: f64,
    /// Standard error of `mean` across tuples.
    pub std_error: f64,
    pub tuples: usize,
    /// Tuples with no accepted draw.
    pub skipped: usize,
    pub unreliable: bool,
}

impl RElbo {
    /// Per-tuple loss, the quantity partitions minimise.
    pub fn score(&self) -> f64 {
        -self.mean
    }

    /// Loss summed over the group's tuples.
    pub fn total(&self) -> f64 {
        self.score() * self.tuples as f64
    }
}

/// Monte Carlo resampled ELBO at threshold `T`.
///
/// Per tuple, `n_draws` latents from `q(z|x)` pass the acceptance test; over
/// the accepted ones the estimator averages
/// `log p(x, z) − log r̂(z|x)` with
/// `log r̂ = log q(z|x) + log a(z|x, T) − log Ẑ(x)` and `Ẑ` the observed
/// acceptance rate.
pub fn r_elbo<S: Scalar, R: Rng + ?Sized>(
    model: &VaeParams<S>,
    data: &EncodedDataset,
    t: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<RElbo> {
    if n_draws < MIN_R_ELBO_DRAWS {
        return Err(Error::InvalidArgument(format!("R-ELBO needs at least {MIN_R_ELBO_DRAWS} draws per tuple")));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("R-ELBO of an empty group".into()));
    }
    let mut values = Vec::with_capacity(data.len());
    let mut skipped = 0;
    let mut eps = vec![S::zero(); model.dims().latent];
    for x in data.rows() {
        let post = model.posterior_params(x)?;
        let mut accepted = 0usize;
        let mut sum = 0.0;
        for _ in 0..n_draws {
            standard_normal(rng, &mut eps);
            let z = reparameterize(&post, &eps);
            let r = log_ratio(model, x, &post, &z)?;
            let alp = acceptance_from_ratio(r, t);
            let u: f64 = rng.random();
            if u.ln() <= alp {
                accepted += 1;
                sum += r - alp;
            }
        }
        if accepted == 0 {
            skipped += 1;
            continue;
        }
        let log_z = (accepted as f64 / n_draws as f64).ln();
        values.push(sum / accepted as f64 + log_z);
    }
    let n = values.len();
    let unreliable = skipped as f64 > UNRELIABLE_SKIP_FRACTION * data.len() as f64;
    if n == 0 {
        return Ok(RElbo {
            mean: f64::NEG_INFINITY,
            std_error: f64::INFINITY,
            tuples: data.len(),
            skipped,
            unreliable: true,
        });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_error = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(RElbo { mean, std_error, tuples: data.len(), skipped, unreliable })
}

/// Bound on the score of a union of groups: the sum of member scores.
pub fn bound_sum(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("bound of an empty set of scores".into()));
    }
    Ok(scores.iter().sum())
}

/// Summary of an empirical check of [`bound_sum`].
#[derive(Clone, Debug, PartialEq)]
pub struct BoundValidation {
    pub evaluated: usize,
    pub holds: usize,
    /// Subsets whose union could not be scored.
    pub skipped: usize,
}

impl BoundValidation {
    pub fn fraction(&self) -> f64 {
        if self.evaluated == 0 {
            f64::NAN
        } else {
            self.holds as f64 / self.evaluated as f64
        }
    }
}

/// Draws `n_subsets` random subsets of at least two groups (size uniform on
/// `2..=l`) and checks whether the union's measured score is within the sum
/// of the member scores. `union_score` scores a subset of group ids.
pub fn validate_bound<R, F>(
    group_scores: &[f64],
    n_subsets: usize,
    rng: &mut R,
    mut union_score: F,
) -> Result<BoundValidation>
where
    R: Rng + ?Sized,
    F: FnMut(&[usize], &mut R) -> Result<f64>,
{
    let l = group_scores.len();
    if l < 2 {
        return Err(Error::InvalidArgument("bound validation needs at least two groups".into()));
    }
    let mut out = BoundValidation { evaluated: 0, holds: 0, skipped: 0 };
    for _ in 0..n_subsets {
        let size = rng.random_range(2..=l);
        let mut subset = index::sample(rng, l, size).into_vec();
        subset.sort_unstable();
        let bound = bound_sum(&subset.iter().map(|&g| group_scores[g]).collect::<Vec<_>>())?;
        match union_score(&subset, rng) {
            Ok(actual) if actual.is_finite() => {
                out.evaluated += 1;
                if actual <= bound {
                    out.holds += 1;
                }
            }
            _ => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Rows of `relation` grouped by the value of one attribute, ordered by
/// domain index. Values with no rows are omitted.
pub fn atomic_groups(relation: &Relation, attr: usize) -> Vec<(u32, Vec<usize>)> {
    let size = relation.schema()[attr].domain_size();
    let mut groups = vec![Vec::new(); size];
    for (i, row) in relation.rows().enumerate() {
        groups[row[attr] as usize].push(i);
    }
    groups.into_iter().enumerate().filter(|(_, g)| !g.is_empty()).map(|(v, g)| (v as u32, g)).collect()
}

/// A node of an OLAP hierarchy. Leaves name an atomic group.
#[derive(Clone, Debug, PartialEq)]
pub struct OlapNode {
    pub label: String,
    pub children: Vec<usize>,
    /// Atomic group id for leaves.
    pub group: Option<usize>,
}

/// Rooted, ordered tree over atomic groups; node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct OlapTree {
    pub nodes: Vec<OlapNode>,
}

impl OlapTree {
    /// Builds a tree from `(label, children)` pairs, root first; leaves get
    /// group ids in depth-first order.
    pub fn from_children(spec: Vec<(String, Vec<usize>)>) -> Result<Self> {
        if spec.is_empty() {
            return Err(Error::InvalidArgument("empty hierarchy".into()));
        }
        let n = spec.len();
        let mut seen = vec![false; n];
        for (_, ch) in &spec {
            for &c in ch {
                if c == 0 || c >= n || seen[c] {
                    return Err(Error::InvalidArgument(format!("node {c} is not a valid child")));
                }
                seen[c] = true;
            }
        }
        if (1..n).any(|i| !seen[i]) {
            return Err(Error::InvalidArgument("hierarchy is not a single rooted tree".into()));
        }
        let mut nodes: Vec<OlapNode> =
            spec.into_iter().map(|(label, children)| OlapNode { label, children, group: None }).collect();
        let mut next = 0;
        let mut stack = vec![0];
        while let Some(v) = stack.pop() {
            if nodes[v].children.is_empty() {
                nodes[v].group = Some(next);
                next += 1;
            } else {
                stack.extend(nodes[v].children.iter().rev());
            }
        }
        Ok(Self { nodes })
    }

    /// Parses an indented tree: one node per line, children indented deeper
    /// than their parent. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec: Vec<(String, Vec<usize>)> = Vec::new();
        let mut stack: Vec<(usize, usize)> = Vec::new(); // (indent, node)
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let indent = line.len() - line.trim_start().len();
            while stack.last().is_some_and(|&(i, _)| i >= indent) {
                stack.pop();
            }
            let id = spec.len();
            match stack.last() {
                Some(&(_, parent)) => spec[parent].1.push(id),
                None if id != 0 => {
                    return Err(Error::InvalidArgument(format!(
                        "line {}: second root node '{trimmed}'",
                        lineno + 1
                    )))
                }
                None => {}
            }
            spec.push((trimmed.to_string(), Vec::new()));
            stack.push((indent, id));
        }
        Self::from_children(spec)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.is_empty()).count()
    }

    /// Leaf nodes in group-id order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut leaves: Vec<(usize, usize)> =
            self.nodes.iter().enumerate().filter_map(|(i, n)| n.group.map(|g| (g, i))).collect();
        leaves.sort_unstable();
        leaves.into_iter().map(|(_, i)| i).collect()
    }

    /// Group ids under `node`.
    pub fn groups_under(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            match self.nodes[v].group {
                Some(g) => out.push(g),
                None => stack.extend(self.nodes[v].children.iter().rev()),
            }
        }
        out
    }

    /// Node scores with every internal node set to the sum of its leaves,
    /// unless `measured` supplies a value.
    pub fn node_scores(&self, group_scores: &[f64], measured: &[Option<f64>]) -> Vec<f64> {
        (0..self.nodes.len())
            .map(|v| {
                measured
                    .get(v)
                    .copied()
                    .flatten()
                    .unwrap_or_else(|| self.groups_under(v).iter().map(|&g| group_scores[g]).sum())
            })
            .collect()
    }
}

/// A chosen set of tree nodes forming a cut.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionPlan {
    /// Tree nodes whose subtrees form the partitions, in left-to-right order.
    pub nodes: Vec<usize>,
    /// Group ids of each partition.
    pub parts: Vec<Vec<usize>>,
    pub objective: f64,
    /// Requested budget exceeded the number of leaves.
    pub k_exceeds_leaves: bool,
}

/// DP entry: best objective, the number of parts achieving it, and the
/// choice that produced it (0 = keep the node whole, otherwise the budget
/// given to the left half of a child range).
#[derive(Clone, Copy, Debug)]
struct Cell {
    value: f64,
    parts: usize,
    choice: usize,
}

const UNREACHABLE: Cell = Cell { value: f64::INFINITY, parts: 0, choice: 0 };

impl Cell {
    /// Lower objective wins; near-ties go to the plan with more parts.
    fn better_than(&self, other: &Cell) -> bool {
        let tol = 1e-12 * other.value.abs().max(1.0);
        if !other.value.is_finite() {
            return self.value.is_finite();
        }
        self.value < other.value - tol || (self.value <= other.value + tol && self.parts > other.parts)
    }
}

/// Sub-problems are a whole node (`lo == WHOLE`) or a child range
/// `[lo, hi)` of a node.
const WHOLE: usize = usize::MAX;

struct HierarchyDp<'a> {
    tree: &'a OlapTree,
    scores: &'a [f64],
    k: usize,
    memo: std::collections::HashMap<(usize, usize, usize), Vec<Cell>>,
}

impl HierarchyDp<'_> {
    /// Best cells for budgets `0..=k` ("at most b parts").
    fn table(&mut self, node: usize, lo: usize, hi: usize) -> Vec<Cell> {
        if let Some(t) = self.memo.get(&(node, lo, hi)) {
            return t.clone();
        }
        let k = self.k;
        let mut t = vec![UNREACHABLE; k + 1];
        if lo == WHOLE {
            let own = Cell { value: self.scores[node], parts: 1, choice: 0 };
            let len = self.tree.nodes[node].children.len();
            let split = if len > 0 { Some(self.table(node, 0, len)) } else { None };
            for b in 1..=k {
                t[b] = own;
                if let Some(split) = &split {
                    if b >= 2 && split[b].better_than(&own) {
                        t[b] = Cell { choice: 1, ..split[b] };
                    }
                }
            }
        } else if hi - lo == 1 {
            let child = self.tree.nodes[node].children[lo];
            t = self.table(child, WHOLE, 0);
        } else {
            // a range of several children is not a tree node, so each half
            // needs its own budget
            let mid = lo + (hi - lo).div_ceil(2);
            let left = self.table(node, lo, mid);
            let right = self.table(node, mid, hi);
            for b in 2..=k {
                for i in 1..b {
                    let cand = Cell {
                        value: left[i].value + right[b - i].value,
                        parts: left[i].parts + right[b - i].parts,
                        choice: i,
                    };
                    if cand.better_than(&t[b]) {
                        t[b] = cand;
                    }
                }
            }
        }
        self.memo.insert((node, lo, hi), t.clone());
        t
    }

    fn backtrack(&mut self, node: usize, lo: usize, hi: usize, b: usize, out: &mut Vec<usize>) {
        let cell = self.table(node, lo, hi)[b];
        if lo == WHOLE {
            if cell.choice == 0 {
                out.push(node);
            } else {
                let len = self.tree.nodes[node].children.len();
                self.backtrack(node, 0, len, b, out);
            }
        } else if hi - lo == 1 {
            let child = self.tree.nodes[node].children[lo];
            self.backtrack(child, WHOLE, 0, b, out);
        } else {
            let mid = lo + (hi - lo).div_ceil(2);
            self.backtrack(node, lo, mid, cell.choice, out);
            self.backtrack(node, mid, hi, b - cell.choice, out);
        }
    }
}

/// Optimal cut of `tree` into at most `k` subtrees minimising the summed
/// node scores (`scores` indexed by node).
pub fn partition_hierarchy(tree: &OlapTree, k: usize, scores: &[f64]) -> Result<PartitionPlan> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if scores.len() != tree.nodes.len() {
        return Err(Error::Dimension { expected: tree.nodes.len(), actual: scores.len() });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("score of node {i} is not finite")));
    }
    let leaves = tree.leaf_count();
    let k_exceeds_leaves = k > leaves;
    let k = k.min(leaves);
    let mut dp = HierarchyDp { tree, scores, k, memo: Default::default() };
    let objective = dp.table(0, WHOLE, 0)[k].value;
    let mut nodes = Vec::new();
    dp.backtrack(0, WHOLE, 0, k, &mut nodes);
    let parts = nodes.iter().map(|&v| tree.groups_under(v)).collect();
    Ok(PartitionPlan { nodes, parts, objective, k_exceeds_leaves })
}

/// Contiguous runs of ordered groups.
#[derive(Clone, Debug, PartialEq)]
pub struct ContiguousPlan {
    /// `K + 1` offsets; run `i` covers groups `boundaries[i]..boundaries[i+1]`.
    pub boundaries: Vec<usize>,
    pub objective: f64,
    /// The requested K exceeded the number of groups and was reduced.
    pub k_reduced: bool,
}

/// Splits `l` ordered groups into exactly `k` contiguous runs minimising
/// `Σ run_score(start, end)` (half-open runs), by the quadratic DP.
pub fn partition_contiguous<F>(l: usize, k: usize, run_score: F) -> Result<ContiguousPlan>
where
    F: Fn(usize, usize) -> f64,
{
    if l == 0 || k == 0 {
        return Err(Error::InvalidArgument("need at least one group and K ≥ 1".into()));
    }
    let k_reduced = k > l;
    let k = k.min(l);
    let mut cost = vec![vec![f64::INFINITY; l + 1]; l + 1];
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate().skip(i + 1) {
            *c = run_score(i, j);
        }
    }
    // best[c][i]: first i groups in c runs
    let mut best = vec![vec![f64::INFINITY; l + 1]; k + 1];
    let mut arg = vec![vec![0usize; l + 1]; k + 1];
    best[0][0] = 0.0;
    for c in 1..=k {
        for i in c..=l {
            for j in (c - 1)..i {
                let v = best[c - 1][j] + cost[j][i];
                if v < best[c][i] {
                    best[c][i] = v;
                    arg[c][i] = j;
                }
            }
        }
    }
    let objective = best[k][l];
    if !objective.is_finite() {
        return Err(Error::InvalidArgument("run scores must be finite".into()));
    }
    let mut boundaries = vec![l];
    let mut i = l;
    for c in (1..=k).rev() {
        i = arg[c][i];
        boundaries.push(i);
    }
    boundaries.reverse();
    Ok(ContiguousPlan { boundaries, objective, k_reduced })
}
