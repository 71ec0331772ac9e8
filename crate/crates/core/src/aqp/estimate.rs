use std::collections::BTreeMap;

use super::query::{Aggregate, BoundQuery};
use crate::error::{Error, Result};
use crate::relation::Relation;

/// Values of the `GROUP BY` attributes; empty for ungrouped queries.
pub type GroupKey = Vec<u32>;

/// Exact aggregate per non-empty group.
pub type ExactResult = BTreeMap<GroupKey, f64>;

const Z_95: f64 = 1.96;

#[derive(Clone, Copy, Default)]
struct Acc {
    count: f64,
    sum: f64,
    sum_sq: f64,
}

fn accumulate<'a>(rows: impl Iterator<Item = &'a [u32]>, q: &BoundQuery) -> BTreeMap<GroupKey, Acc> {
    let mut groups: BTreeMap<GroupKey, Acc> = BTreeMap::new();
    for row in rows {
        if q.filter.matches(row) {
            let m = q.measure_of(row);
            let g = groups.entry(q.group_key(row)).or_default();
            g.count += 1.0;
            g.sum += m;
            g.sum_sq += m * m;
        }
    }
    groups
}

/// Full-scan ground truth. Groups without satisfying rows are omitted.
pub fn evaluate_exact(relation: &Relation, q: &BoundQuery) -> ExactResult {
    accumulate(relation.rows(), q)
        .into_iter()
        .map(|(k, a)| {
            let v = match q.aggregate {
                Aggregate::Count => a.count,
                Aggregate::Sum => a.sum,
                Aggregate::Avg => a.sum / a.count,
            };
            (k, v)
        })
        .collect()
}

/// Fraction of rows satisfying the filter.
pub fn selectivity(relation: &Relation, q: &BoundQuery) -> f64 {
    if relation.is_empty() {
        return 0.0;
    }
    relation.rows().filter(|r| q.filter.matches(r)).count() as f64 / relation.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupEstimate {
    pub estimate: f64,
    /// Satisfying sample rows in the group.
    pub support: usize,
    /// Normal-approximation 95% half-width; infinite with fewer than two
    /// contributing rows.
    pub half_width: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateEstimate {
    pub groups: BTreeMap<GroupKey, GroupEstimate>,
    pub sample_size: usize,
}

impl AggregateEstimate {
    pub fn values(&self) -> BTreeMap<GroupKey, f64> {
        self.groups.iter().map(|(k, g)| (k.clone(), g.estimate)).collect()
    }
}

fn half_width(n: f64, sum: f64, sum_sq: f64) -> f64 {
    if n < 2.0 {
        return f64::INFINITY;
    }
    let var = ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0);
    Z_95 * (var / n).sqrt()
}

/// Estimates the query from a uniform sample of a population of
/// `population_n` rows. COUNT and SUM scale the sample mean of
/// `measure · indicator` by the population size; AVG is the mean over
/// satisfying rows.
pub fn estimate_from_sample(sample: &Relation, q: &BoundQuery, population_n: usize) -> Result<AggregateEstimate> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("sample is empty".into()));
    }
    let n = sample.len() as f64;
    let pop = population_n as f64;
    let groups = accumulate(sample.rows(), q)
        .into_iter()
        .map(|(k, a)| {
            let (estimate, hw) = match q.aggregate {
                Aggregate::Avg => (a.sum / a.count, half_width(a.count, a.sum, a.sum_sq)),
                // per-row estimator y = pop·m·1[row in group], zero elsewhere
                Aggregate::Count | Aggregate::Sum => {
                    let (s, s2) = if q.aggregate == Aggregate::Count { (a.count, a.count) } else { (a.sum, a.sum_sq) };
                    (pop * s / n, pop * half_width(n, s, s2))
                }
            };
            (k, GroupEstimate { estimate, support: a.count as usize, half_width: hw })
        })
        .collect();
    Ok(AggregateEstimate { groups, sample_size: sample.len() })
}

/// Estimate from a weighted sample (for example likelihood-weighted
/// Bayesian-network draws). Indicator and measure terms are multiplied by
/// the normalized weights; with equal weights this agrees with
/// [`estimate_from_sample`] up to rounding.
pub fn estimate_weighted(
    sample: &[(Vec<u32>, f64)],
    q: &BoundQuery,
    population_n: usize,
) -> Result<AggregateEstimate> {
    let total: f64 = sample.iter().map(|(_, w)| *w).sum();
    if sample.is_empty() || !(total > 0.0) {
        return Err(Error::InvalidArgument("weighted sample has no mass".into()));
    }
    let n = sample.len() as f64;
    let pop = population_n as f64;
    #[derive(Default)]
    struct W {
        support: usize,
        w: f64,
        wm: f64,
        // second moments of the per-row estimators for COUNT/SUM and AVG
        y2: f64,
        dev2: Vec<(f64, f64)>,
    }
    let mut groups: BTreeMap<GroupKey, W> = BTreeMap::new();
    for (row, w) in sample {
        if q.filter.matches(row) && *w > 0.0 {
            let m = q.measure_of(row);
            let g = groups.entry(q.group_key(row)).or_default();
            let wn = w / total * n;
            g.support += 1;
            g.w += wn;
            g.wm += wn * m;
            let y = if q.aggregate == Aggregate::Count { wn } else { wn * m };
            g.y2 += y * y;
            g.dev2.push((wn, m));
        }
    }
    let groups = groups
        .into_iter()
        .map(|(k, g)| {
            let (estimate, hw) = match q.aggregate {
                Aggregate::Avg => {
                    let mean = g.wm / g.w;
                    let s = g.dev2.iter().map(|(wn, m)| wn * (m - mean)).sum::<f64>();
                    let s2 = g.dev2.iter().map(|(wn, m)| (wn * (m - mean)).powi(2)).sum::<f64>();
                    let c = g.support as f64;
                    // linearised ratio estimator, scaled by the mean weight
                    (mean, half_width(c, s, s2) * c / g.w)
                }
                Aggregate::Count => (pop * g.w / n, pop * half_width(n, g.w, g.y2)),
                Aggregate::Sum => (pop * g.wm / n, pop * half_width(n, g.wm, g.y2)),
            };
            (k, GroupEstimate { estimate, support: g.support, half_width: hw })
        })
        .collect();
    Ok(AggregateEstimate { groups, sample_size: sample.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aqp::query::parse_query;
    use crate::relation::AttributeSchema;

    fn rel() -> Relation {
        let schema = vec![
            AttributeSchema::categorical("g", vec!["a".into(), "b".into()]),
            AttributeSchema::categorical("v", (0..10).map(|i| i.to_string()).collect()),
        ];
        let rows = (0..100u32).map(|i| vec![(i % 10 == 0) as u32, i % 10]).collect();
        Relation::new(schema, rows).unwrap()
    }

    fn bind(r: &Relation, q: &str) -> BoundQuery {
        parse_query(q).unwrap().bind(r.schema()).unwrap()
    }

    #[test]
    fn count_scales_to_population() {
        let r = rel();
        let q = bind(&r, "SELECT COUNT(*) FROM t WHERE g = b");
        let e = estimate_from_sample(&r, &q, 1000).unwrap();
        assert_eq!(e.groups[&vec![]].estimate, 100.0);
        assert_eq!(e.groups[&vec![]].support, 10);
    }

    #[test]
    fn full_sample_matches_exact() {
        let r = rel();
        for text in [
            "SELECT COUNT(*) FROM t",
            "SELECT SUM(v) FROM t WHERE v > 3",
            "SELECT g, AVG(v) FROM t WHERE v != 5 GROUP BY g",
            "SELECT v, SUM(v) FROM t GROUP BY v",
        ] {
            let q = bind(&r, text);
            let e = estimate_from_sample(&r, &q, r.len()).unwrap();
            assert_eq!(e.values(), evaluate_exact(&r, &q), "{text}");
        }
    }

    #[test]
    fn empty_average_group_omitted() {
        let r = rel();
        let q = bind(&r, "SELECT AVG(v) FROM t WHERE v > 100");
        assert!(evaluate_exact(&r, &q).is_empty());
        assert!(estimate_from_sample(&r, &q, 100).unwrap().groups.is_empty());
    }

    #[test]
    fn count_half_width_matches_binomial() {
        let r = rel();
        let q = bind(&r, "SELECT COUNT(*) FROM t WHERE g = b");
        let e = estimate_from_sample(&r, &q, 100).unwrap();
        // y ∈ {0, 100}, p = 0.1, sample sd = 100·sqrt(p(1-p)·n/(n-1))
        let sd = 100.0 * (0.1f64 * 0.9 * 100.0 / 99.0).sqrt();
        assert!((e.groups[&vec![]].half_width - 1.96 * sd / 10.0).abs() < 1e-9);
    }

    #[test]
    fn equal_weights_agree_with_unweighted() {
        let r = rel();
        let sample: Vec<(Vec<u32>, f64)> = r.rows().map(|row| (row.to_vec(), 0.25)).collect();
        for text in ["SELECT COUNT(*) FROM t WHERE v < 4", "SELECT g, SUM(v) FROM t GROUP BY g", "SELECT AVG(v) FROM t"] {
            let q = bind(&r, text);
            let a = estimate_from_sample(&r, &q, 500).unwrap();
            let b = estimate_weighted(&sample, &q, 500).unwrap();
            for (k, g) in &a.groups {
                let h = &b.groups[k];
                assert!((g.estimate - h.estimate).abs() < 1e-9 * g.estimate.abs().max(1.0));
                assert!((g.half_width - h.half_width).abs() < 1e-6 * g.half_width.max(1.0), "{text}");
            }
        }
    }

    #[test]
    fn weights_shift_the_estimate() {
        let r = rel();
        let q = bind(&r, "SELECT COUNT(*) FROM t WHERE g = b");
        let sample = vec![(vec![1, 0], 3.0), (vec![0, 1], 1.0)];
        let e = estimate_weighted(&sample, &q, 100).unwrap();
        assert!((e.groups[&vec![]].estimate - 75.0).abs() < 1e-12);
    }
}
