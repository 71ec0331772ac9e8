//! Discrete Bayesian networks as an alternative generative backend.
//!
//! Structure is learned by greedy hill climbing on BIC from the empty graph;
//! conditional probability tables are Laplace-smoothed counts. Probabilities
//! are generic so the same network can be evaluated exactly over rationals.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::relation::{AttributeSchema, Relation};
use crate::scalar::Probability;

pub const DEFAULT_MAX_PARENTS: usize = 3;

/// Directed acyclic graph over attributes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BnGraph {
    /// Sorted parent list per node.
    parents: Vec<Vec<usize>>,
}

impl BnGraph {
    pub fn empty(n: usize) -> Self {
        Self { parents: vec![Vec::new(); n] }
    }

    /// Builds a graph from explicit parent lists, rejecting cycles.
    pub fn from_parents(mut parents: Vec<Vec<usize>>) -> Result<Self> {
        let n = parents.len();
        for (v, ps) in parents.iter_mut().enumerate() {
            ps.sort_unstable();
            ps.dedup();
            if ps.iter().any(|&p| p >= n || p == v) {
                return Err(Error::InvalidArgument(format!("invalid parent list for node {v}")));
            }
        }
        let g = Self { parents };
        if g.topological_order().is_none() {
            return Err(Error::InvalidArgument("graph has a cycle".into()));
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn parents(&self, v: usize) -> &[usize] {
        &self.parents[v]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.parents[to].binary_search(&from).is_ok()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> =
            self.parents.iter().enumerate().flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c))).collect();
        e.sort_unstable();
        e
    }

    fn add_edge(&mut self, from: usize, to: usize) {
        let ps = &mut self.parents[to];
        if let Err(pos) = ps.binary_search(&from) {
            ps.insert(pos, from);
        }
    }

    fn remove_edge(&mut self, from: usize, to: usize) {
        let ps = &mut self.parents[to];
        if let Ok(pos) = ps.binary_search(&from) {
            ps.remove(pos);
        }
    }

    /// Whether `to` is reachable from `from` along directed edges.
    fn reaches(&self, from: usize, to: usize) -> bool {
        let n = self.len();
        let mut children = vec![Vec::new(); n];
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                children[p].push(c);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![from];
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            if !std::mem::replace(&mut seen[v], true) {
                stack.extend(&children[v]);
            }
        }
        false
    }

    /// Kahn order with the smallest ready index first; `None` if cyclic.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut children = vec![Vec::new(); n];
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                children[p].push(c);
            }
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}

/// Family counts `N[parent configuration][value]` for one node.
fn family_counts(relation: &Relation, node: usize, parents: &[usize]) -> BTreeMap<usize, Vec<u64>> {
    let schema = relation.schema();
    let card = schema[node].domain_size();
    let mut counts: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for row in relation.rows() {
        let cfg = parents.iter().fold(0usize, |acc, &p| acc * schema[p].domain_size() + row[p] as usize);
        counts.entry(cfg).or_insert_with(|| vec![0; card])[row[node] as usize] += 1;
    }
    counts
}

/// BIC contribution of one node given its parents.
pub fn local_bic(relation: &Relation, node: usize, parents: &[usize]) -> f64 {
    let schema = relation.schema();
    let r = schema[node].domain_size() as f64;
    let q: f64 = parents.iter().map(|&p| schema[p].domain_size() as f64).product();
    let mut ll = 0.0;
    for counts in family_counts(relation, node, parents).values() {
        let total: u64 = counts.iter().sum();
        for &c in counts {
            if c > 0 {
                ll += c as f64 * (c as f64 / total as f64).ln();
            }
        }
    }
    let n = relation.len().max(1) as f64;
    ll - 0.5 * n.ln() * q * (r - 1.0)
}

/// Total BIC of a graph.
pub fn bic(relation: &Relation, graph: &BnGraph) -> f64 {
    (0..graph.len()).map(|v| local_bic(relation, v, graph.parents(v))).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

/// Greedy hill climbing on BIC from the empty graph over single-edge
/// additions, deletions, and reversals. Candidates are scanned in
/// lexicographic edge order and only a strictly better move replaces the
/// current best, so the result is deterministic.
pub fn learn_structure(relation: &Relation, max_parents: usize) -> BnGraph {
    let n = relation.arity();
    let mut graph = BnGraph::empty(n);
    let mut cache: HashMap<(usize, Vec<usize>), f64> = HashMap::new();
    let mut score = |v: usize, ps: &[usize]| -> f64 {
        *cache.entry((v, ps.to_vec())).or_insert_with(|| local_bic(relation, v, ps))
    };
    let with = |ps: &[usize], extra: usize| {
        let mut v = ps.to_vec();
        if let Err(pos) = v.binary_search(&extra) {
            v.insert(pos, extra);
        }
        v
    };
    let without = |ps: &[usize], gone: usize| ps.iter().copied().filter(|&p| p != gone).collect::<Vec<_>>();
    loop {
        let mut best: Option<(f64, Move)> = None;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut consider = |delta: f64, m: Move| {
                    // near ties (e.g. reversals within an equivalence class) keep the earlier move
                    if delta > 1e-9 && best.is_none_or(|(d, _)| delta > d + 1e-9) {
                        best = Some((delta, m));
                    }
                };
                if graph.has_edge(i, j) {
                    let pj = graph.parents(j).to_vec();
                    let pi = graph.parents(i).to_vec();
                    let old_j = score(j, &pj);
                    let new_j = score(j, &without(&pj, i));
                    consider(new_j - old_j, Move::Delete(i, j));
                    if pi.len() < max_parents {
                        let mut g = graph.clone();
                        g.remove_edge(i, j);
                        if !g.reaches(i, j) {
                            let old_i = score(i, &pi);
                            let new_i = score(i, &with(&pi, j));
                            consider(new_j - old_j + new_i - old_i, Move::Reverse(i, j));
                        }
                    }
                } else if !graph.has_edge(j, i) && graph.parents(j).len() < max_parents && !graph.reaches(j, i) {
                    let pj = graph.parents(j).to_vec();
                    let delta = score(j, &with(&pj, i)) - score(j, &pj);
                    consider(delta, Move::Add(i, j));
                }
            }
        }
        match best {
            None => return graph,
            Some((_, Move::Add(i, j))) => graph.add_edge(i, j),
            Some((_, Move::Delete(i, j))) => graph.remove_edge(i, j),
            Some((_, Move::Reverse(i, j))) => {
                graph.remove_edge(i, j);
                graph.add_edge(j, i);
            }
        }
    }
}

/// `P(node | parents)` as one probability row per parent configuration.
/// Configurations are mixed-radix numbers with the first parent most
/// significant.
#[derive(Clone, Debug, PartialEq)]
pub struct Cpt<P> {
    pub parents: Vec<usize>,
    pub parent_sizes: Vec<usize>,
    pub cardinality: usize,
    pub rows: Vec<Vec<P>>,
}

impl<P: Probability> Cpt<P> {
    pub fn config_index(&self, tuple: &[u32]) -> usize {
        self.parents.iter().zip(&self.parent_sizes).fold(0, |acc, (&p, &s)| acc * s + tuple[p] as usize)
    }

    pub fn probability(&self, tuple: &[u32], value: u32) -> P {
        self.rows[self.config_index(tuple)][value as usize]
    }
}

/// Maximum-likelihood CPTs with Laplace smoothing `alpha`; parent
/// configurations never observed get a uniform row.
pub fn fit_cpts<P: Probability>(relation: &Relation, graph: &BnGraph, alpha: P) -> Result<Vec<Cpt<P>>> {
    if graph.len() != relation.arity() {
        return Err(Error::Dimension { expected: relation.arity(), actual: graph.len() });
    }
    if alpha < P::zero() {
        return Err(Error::InvalidArgument("smoothing must be non-negative".into()));
    }
    let schema = relation.schema();
    let conv = |v: usize| P::from_usize(v).ok_or(Error::NonFinite("count conversion"));
    (0..graph.len())
        .map(|v| {
            let parents = graph.parents(v).to_vec();
            let parent_sizes: Vec<usize> = parents.iter().map(|&p| schema[p].domain_size()).collect();
            let configs: usize = parent_sizes.iter().product();
            let card = schema[v].domain_size();
            let counts = family_counts(relation, v, &parents);
            let uniform = vec![P::one() / conv(card)?; card];
            let mut rows = vec![uniform; configs];
            for (cfg, c) in counts {
                let total: u64 = c.iter().sum();
                let denom = conv(total as usize)? + alpha * conv(card)?;
                rows[cfg] = c.iter().map(|&k| Ok((conv(k as usize)? + alpha) / denom)).collect::<Result<_>>()?;
            }
            Ok(Cpt { parents, parent_sizes, cardinality: card, rows })
        })
        .collect()
}

/// A sample with its likelihood weight.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSample {
    pub tuple: Vec<u32>,
    pub weight: f64,
}

/// Graph plus CPTs.
#[derive(Clone, Debug, PartialEq)]
pub struct BayesNet<P> {
    schema: Vec<AttributeSchema>,
    graph: BnGraph,
    cpts: Vec<Cpt<P>>,
    order: Vec<usize>,
}

fn draw<P: Probability, R: Rng + ?Sized>(row: &[P], rng: &mut R) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return i as u32;
        }
    }
    // rounding left u above the total; take the last value with mass
    row.iter().rposition(|p| p.as_f64() > 0.0).unwrap_or(row.len() - 1) as u32
}

impl<P: Probability> BayesNet<P> {
    /// Assembles a network, checking that every CPT matches the graph and
    /// every row is a distribution.
    pub fn new(schema: Vec<AttributeSchema>, graph: BnGraph, cpts: Vec<Cpt<P>>) -> Result<Self> {
        if graph.len() != schema.len() || cpts.len() != schema.len() {
            return Err(Error::Dimension { expected: schema.len(), actual: cpts.len() });
        }
        let order = graph.topological_order().ok_or_else(|| Error::InvalidArgument("graph has a cycle".into()))?;
        for (v, cpt) in cpts.iter().enumerate() {
            let sizes: Vec<usize> = graph.parents(v).iter().map(|&p| schema[p].domain_size()).collect();
            let configs: usize = sizes.iter().product();
            if cpt.parents != graph.parents(v)
                || cpt.parent_sizes != sizes
                || cpt.cardinality != schema[v].domain_size()
                || cpt.rows.len() != configs
            {
                return Err(Error::InvalidArgument(format!("CPT of node {v} does not match the graph")));
            }
            for row in &cpt.rows {
                let sum: f64 = row.iter().map(|p| p.as_f64()).sum();
                if row.len() != cpt.cardinality || row.iter().any(|p| *p < P::zero()) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!("CPT row of node {v} is not a distribution")));
                }
            }
        }
        Ok(Self { schema, graph, cpts, order })
    }

    /// Learns structure and CPTs from a relation.
    pub fn fit(relation: &Relation, max_parents: usize, alpha: P) -> Result<Self> {
        let graph = learn_structure(relation, max_parents);
        let cpts = fit_cpts(relation, &graph, alpha)?;
        Self::new(relation.schema().to_vec(), graph, cpts)
    }

    pub fn schema(&self) -> &[AttributeSchema] {
        &self.schema
    }

    pub fn graph(&self) -> &BnGraph {
        &self.graph
    }

    pub fn cpts(&self) -> &[Cpt<P>] {
        &self.cpts
    }

    fn check_tuple(&self, tuple: &[u32]) -> Result<()> {
        if tuple.len() != self.schema.len() {
            return Err(Error::Dimension { expected: self.schema.len(), actual: tuple.len() });
        }
        for (a, (&v, s)) in tuple.iter().zip(&self.schema).enumerate() {
            if v as usize >= s.domain_size() {
                return Err(Error::Encoding { attribute: s.name.clone(), row: a, value: v });
            }
        }
        Ok(())
    }

    /// `Π_i P(A_i = t_i | parents)`.
    pub fn joint_probability(&self, tuple: &[u32]) -> Result<P> {
        self.check_tuple(tuple)?;
        Ok(self.cpts.iter().enumerate().fold(P::one(), |acc, (v, cpt)| acc * cpt.probability(tuple, tuple[v])))
    }

    /// Forward sampling in topological order.
    pub fn ancestral_sample(&self, n: usize, seed: u64) -> Result<Relation> {
        let samples = self.likelihood_weighted_sample(&[], n, seed)?;
        let rows = samples.into_iter().map(|s| s.tuple).collect();
        Relation::new(self.schema.clone(), rows)
    }

    /// Samples with `evidence` clamped; each sample is weighted by the
    /// product of the evidence values' conditional probabilities.
    pub fn likelihood_weighted_sample(
        &self,
        evidence: &[(usize, u32)],
        n: usize,
        seed: u64,
    ) -> Result<Vec<WeightedSample>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        let mut clamp: Vec<Option<u32>> = vec![None; self.schema.len()];
        for &(a, v) in evidence {
            let s = self.schema.get(a).ok_or_else(|| Error::UnknownAttribute(format!("#{a}")))?;
            if v as usize >= s.domain_size() {
                return Err(Error::Encoding { attribute: s.name.clone(), row: 0, value: v });
            }
            clamp[a] = Some(v);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let mut tuple = vec![0u32; self.schema.len()];
        for _ in 0..n {
            let mut weight = 1.0;
            for &v in &self.order {
                let cpt = &self.cpts[v];
                let row = &cpt.rows[cpt.config_index(&tuple)];
                match clamp[v] {
                    Some(val) => {
                        tuple[v] = val;
                        weight *= row[val as usize].as_f64();
                    }
                    None => tuple[v] = draw(row, &mut rng),
                }
            }
            out.push(WeightedSample { tuple: tuple.clone(), weight });
        }
        Ok(out)
    }

    /// Plain-text export: a schema line, then one block per node listing its
    /// parents and CPT rows.
    pub fn to_text(&self) -> Result<String> {
        let mut s = String::from("bayesnet 1\n");
        let _ = writeln!(s, "schema {}", serde_json::to_string(&self.schema)?);
        for (v, cpt) in self.cpts.iter().enumerate() {
            let ps: Vec<String> = cpt.parents.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "node {v} parents {}", ps.join(" ")).map(|_| ());
            for row in &cpt.rows {
                let vals: Vec<String> = row.iter().map(|p| p.to_string()).collect();
                let _ = writeln!(s, "row {}", vals.join(" "));
            }
        }
        Ok(s)
    }

    /// Parses the format written by [`to_text`](Self::to_text).
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Artifact(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, "bayesnet 1")) => {}
            Some((i, _)) => return Err(bad(i, "expected 'bayesnet 1' header")),
            None => return Err(Error::Artifact("empty network file".into())),
        }
        let schema: Vec<AttributeSchema> = match lines.next() {
            Some((_, l)) if l.starts_with("schema ") => serde_json::from_str(&l[7..])?,
            Some((i, _)) => return Err(bad(i, "expected schema line")),
            None => return Err(Error::Artifact("missing schema".into())),
        };
        let mut parents: Vec<Vec<usize>> = Vec::new();
        let mut rows: Vec<Vec<Vec<P>>> = Vec::new();
        for (i, l) in lines {
            if let Some(rest) = l.strip_prefix("node ") {
                let mut it = rest.split_whitespace();
                let id: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(i, "bad node id"))?;
                if id != parents.len() || it.next() != Some("parents") {
                    return Err(bad(i, "nodes must be listed in order as 'node <id> parents ...'"));
                }
                let ps = it.map(|t| t.parse::<usize>().map_err(|_| bad(i, "bad parent id"))).collect::<Result<_>>()?;
                parents.push(ps);
                rows.push(Vec::new());
            } else if let Some(rest) = l.strip_prefix("row ") {
                let row = rest
                    .split_whitespace()
                    .map(|t| t.parse::<P>().map_err(|_| bad(i, "bad probability")))
                    .collect::<Result<Vec<P>>>()?;
                rows.last_mut().ok_or_else(|| bad(i, "row before any node"))?.push(row);
            } else {
                return Err(bad(i, "unrecognised line"));
            }
        }
        if parents.len() != schema.len() {
            return Err(Error::Artifact(format!("{} nodes for {} attributes", parents.len(), schema.len())));
        }
        let graph = BnGraph::from_parents(parents).map_err(|e| Error::Artifact(e.to_string()))?;
        let cpts = rows
            .into_iter()
            .enumerate()
            .map(|(v, rows)| Cpt {
                parents: graph.parents(v).to_vec(),
                parent_sizes: graph.parents(v).iter().map(|&p| schema[p].domain_size()).collect(),
                cardinality: schema[v].domain_size(),
                rows,
            })
            .collect();
        Self::new(schema, graph, cpts)
    }
}

/// Weighted estimate of `P(attr = value)` from likelihood-weighted samples.
pub fn weighted_probability(samples: &[WeightedSample], attr: usize, value: u32) -> f64 {
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    if total == 0.0 {
        return f64::NAN;
    }
    samples.iter().filter(|s| s.tuple[attr] == value).map(|s| s.weight).sum::<f64>() / total
}
