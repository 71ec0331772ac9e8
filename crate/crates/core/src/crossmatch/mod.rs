//! Exact minimum-weight perfect matching and the cross-match two-sample test.
//!
//! The union of two point sets is matched into pairs of nearest neighbours;
//! the statistic is the number of pairs with one point from each set. Under
//! the null hypothesis that both sets come from the same distribution the
//! statistic has a closed-form distribution depending only on the set sizes.

pub mod blossom;

use rand::Rng;

use crate::error::{Error, Result};

/// Largest instance accepted by [`crossmatch_test`].
pub const MAX_TEST_POINTS: usize = 512;

/// Distances are mapped onto `[0, 2^40]` before matching so that the blossom
/// algorithm runs on exact integers.
const QUANT_SCALE: f64 = (1u64 << 40) as f64;

#[derive(Clone, Debug, PartialEq)]
pub struct MatchingResult {
    /// Pairs `(i, j)` with `i < j`, sorted by `i`.
    pub pairs: Vec<(usize, usize)>,
    pub total_weight: f64,
}

/// Pair counts by label composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairCounts {
    pub dd: usize,
    pub mm: usize,
    pub dm: usize,
}

impl MatchingResult {
    /// Counts pairs by label; `is_d[v]` marks points of the first sample.
    pub fn pair_counts(&self, is_d: &[bool]) -> PairCounts {
        let mut c = PairCounts { dd: 0, mm: 0, dm: 0 };
        for &(i, j) in &self.pairs {
            match (is_d[i], is_d[j]) {
                (true, true) => c.dd += 1,
                (false, false) => c.mm += 1,
                _ => c.dm += 1,
            }
        }
        c
    }
}

/// Minimum-total-weight perfect matching on the complete graph with edge
/// weights `dist[i][j]`.
pub fn min_weight_perfect_matching(dist: &[Vec<f64>]) -> Result<MatchingResult> {
    let n = dist.len();
    if n < 2 || n % 2 == 1 {
        return Err(Error::InvalidArgument(format!(
            "perfect matching needs an even number of at least 2 points, got {n}"
        )));
    }
    let mut max = 0.0f64;
    for (i, row) in dist.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Dimension { expected: n, actual: row.len() });
        }
        for (j, &d) in row.iter().enumerate() {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::InvalidArgument(format!("distance ({i}, {j}) is {d}")));
            }
            if d != dist[j][i] {
                return Err(Error::InvalidArgument(format!("distance matrix asymmetric at ({i}, {j})")));
            }
            max = max.max(d);
        }
        if row[i] != 0.0 {
            return Err(Error::InvalidArgument(format!("non-zero diagonal at {i}")));
        }
    }
    let quant = |d: f64| if max > 0.0 { (d / max * QUANT_SCALE).round() as i64 } else { 0 };
    // maximise Σ (C − q) over maximum-cardinality matchings = minimise Σ q
    let c = QUANT_SCALE as i64 + 1;
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push((i, j, c - quant(dist[i][j])));
        }
    }
    let mate = blossom::max_weight_matching(&edges, true);
    let mut pairs = Vec::with_capacity(n / 2);
    for (i, m) in mate.iter().enumerate() {
        let j = m.expect("complete graph on an even vertex count has a perfect matching");
        if i < j {
            pairs.push((i, j));
        }
    }
    let total_weight = pairs.iter().map(|&(i, j)| dist[i][j]).sum();
    Ok(MatchingResult { pairs, total_weight })
}

/// `ln k!` for `k = 0..=n`.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    t.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        t.push(acc);
    }
    t
}

fn ln_pmf(lf: &[f64], n: usize, n_d: usize, a: usize) -> Option<f64> {
    if n % 2 == 1 || n_d > n || a > n_d.min(n - n_d) || (n_d - a) % 2 == 1 {
        return None;
    }
    let ln_binom = lf[n] - lf[n_d] - lf[n - n_d];
    Some(
        a as f64 * std::f64::consts::LN_2 + lf[n / 2]
            - ln_binom
            - lf[(n_d - a) / 2]
            - lf[a]
            - lf[(n - n_d - a) / 2],
    )
}

/// Null probability of exactly `a` cross pairs among `n` points of which `n_d`
/// carry the first label. Zero for infeasible `a`.
pub fn crossmatch_null_pmf(n: usize, n_d: usize, a: usize) -> f64 {
    let lf = ln_factorials(n);
    ln_pmf(&lf, n, n_d, a).map_or(0.0, f64::exp)
}

/// `P(A ≤ a)` under the null.
pub fn crossmatch_lower_tail(n: usize, n_d: usize, a: usize) -> f64 {
    let lf = ln_factorials(n);
    let p: f64 = (0..=a).filter_map(|k| ln_pmf(&lf, n, n_d, k)).map(f64::exp).sum();
    p.clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossMatchOutcome {
    /// Number of pairs joining the two samples.
    pub statistic: usize,
    pub p_value: f64,
    pub reject: bool,
    pub counts: PairCounts,
    /// Index into the second sample of the point dropped to make the total
    /// even, if any.
    pub dropped: Option<usize>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Cross-match test of `d` against `m` at level `alpha`. Small statistics
/// are evidence that the samples differ, so the p-value is the lower tail.
pub fn crossmatch_test<R: Rng + ?Sized>(
    d: &[Vec<f64>],
    m: &[Vec<f64>],
    alpha: f64,
    rng: &mut R,
) -> Result<CrossMatchOutcome> {
    if d.is_empty() || m.is_empty() {
        return Err(Error::InvalidArgument("both samples must be non-empty".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let dim = d[0].len();
    if let Some(p) = d.iter().chain(m).find(|p| p.len() != dim) {
        return Err(Error::Dimension { expected: dim, actual: p.len() });
    }
    let dropped = if (d.len() + m.len()) % 2 == 1 { Some(rng.random_range(0..m.len())) } else { None };
    let points: Vec<&[f64]> = d
        .iter()
        .map(Vec::as_slice)
        .chain(m.iter().enumerate().filter(|&(i, _)| Some(i) != dropped).map(|(_, p)| p.as_slice()))
        .collect();
    let n = points.len();
    if n > MAX_TEST_POINTS {
        return Err(Error::InvalidArgument(format!(
            "cross-match instance of {n} points exceeds the cap of {MAX_TEST_POINTS}"
        )));
    }
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = euclidean(points[i], points[j]);
            dist[i][j] = v;
            dist[j][i] = v;
        }
    }
    let matching = min_weight_perfect_matching(&dist)?;
    let is_d: Vec<bool> = (0..n).map(|i| i < d.len()).collect();
    let counts = matching.pair_counts(&is_d);
    let p_value = crossmatch_lower_tail(n, d.len(), counts.dm);
    Ok(CrossMatchOutcome { statistic: counts.dm, p_value, reject: p_value < alpha, counts, dropped })
}
