use std::collections::BTreeMap;

use super::estimate::GroupKey;

/// `|estimate − truth| / |truth|`; `None` when the truth is zero.
pub fn relative_error(truth: f64, estimate: f64) -> Option<f64> {
    (truth != 0.0).then(|| (estimate - truth).abs() / truth.abs())
}

/// Error of one query over its true groups.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryError {
    /// Average relative error, each missing group counting as 1.
    pub error: f64,
    /// True groups with a nonzero value (`r`).
    pub groups: usize,
    /// True groups with no estimate.
    pub missing: usize,
}

/// Relative error of a possibly grouped query:
/// `((r − r′) + Σ_estimated relerr) / r`. An ungrouped query is the case
/// `r = 1`. Groups whose true value is zero are skipped; `None` if none
/// remain.
pub fn query_error(truth: &BTreeMap<GroupKey, f64>, estimate: &BTreeMap<GroupKey, f64>) -> Option<QueryError> {
    let mut groups = 0;
    let mut missing = 0;
    let mut total = 0.0;
    for (k, &t) in truth {
        if t == 0.0 {
            continue;
        }
        groups += 1;
        match estimate.get(k) {
            Some(&e) => total += relative_error(t, e).unwrap_or(0.0),
            None => {
                missing += 1;
                total += 1.0;
            }
        }
    }
    (groups > 0).then(|| QueryError { error: total / groups as f64, groups, missing })
}

/// Mean of the defined per-query errors with the number left out.
pub fn workload_average(errors: &[Option<f64>]) -> (f64, usize) {
    let defined: Vec<f64> = errors.iter().flatten().copied().collect();
    let excluded = errors.len() - defined.len();
    if defined.is_empty() {
        return (f64::NAN, excluded);
    }
    (defined.iter().sum::<f64>() / defined.len() as f64, excluded)
}

/// Relative error difference between model-sample and dataset-sample
/// errors of the same query.
pub fn relative_error_difference(relerr_model: f64, relerr_dataset: f64) -> f64 {
    (relerr_model - relerr_dataset).abs()
}

/// Median of the finite values; NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}

/// Linear-interpolation percentile of the finite values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
