use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::estimate::{estimate_from_sample, evaluate_exact, selectivity};
use super::metrics::{median, query_error, relative_error_difference};
use super::query::{parse_query, BoundQuery};
use crate::error::{Error, Result};
use crate::relation::Relation;

pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.01;
pub const DEFAULT_REPETITIONS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationConfig {
    /// Sample size as a fraction of the relation.
    pub sample_fraction: f64,
    /// Independent sample pairs per query; relative errors are averaged.
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { sample_fraction: DEFAULT_SAMPLE_FRACTION, repetitions: DEFAULT_REPETITIONS, seed: 0 }
    }
}

impl EvaluationConfig {
    pub fn sample_size(&self, n: usize) -> usize {
        ((self.sample_fraction * n as f64).round() as usize).clamp(1, n.max(1))
    }
}

/// Per-query outcome, averaged over repetitions.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryReport {
    pub id: usize,
    pub text: String,
    pub selectivity: f64,
    /// True groups with a nonzero value.
    pub groups: usize,
    /// True value of an ungrouped query.
    pub truth: Option<f64>,
    /// Mean estimates of an ungrouped query; `None` if never estimated.
    pub estimate_dataset: Option<f64>,
    pub estimate_model: Option<f64>,
    pub relerr_dataset: f64,
    pub relerr_model: f64,
    pub red: f64,
    /// Mean number of missing groups per repetition.
    pub missing_dataset: f64,
    pub missing_model: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub queries: Vec<QueryReport>,
    /// Queries without any nonzero true value.
    pub excluded: Vec<usize>,
    pub sample_size: usize,
    pub repetitions: usize,
}

impl ErrorReport {
    pub fn reds(&self) -> Vec<f64> {
        self.queries.iter().map(|q| q.red).collect()
    }

    pub fn median_red(&self) -> f64 {
        median(&self.reds())
    }

    pub fn mean_relerr_dataset(&self) -> f64 {
        mean(self.queries.iter().map(|q| q.relerr_dataset))
    }

    pub fn mean_relerr_model(&self) -> f64 {
        mean(self.queries.iter().map(|q| q.relerr_model))
    }

    /// Missing groups of the model sample over all true groups.
    pub fn missing_group_rate_model(&self) -> f64 {
        let groups: usize = self.queries.iter().map(|q| q.groups).sum();
        self.queries.iter().map(|q| q.missing_model).sum::<f64>() / groups.max(1) as f64
    }

    pub fn missing_group_rate_dataset(&self) -> f64 {
        let groups: usize = self.queries.iter().map(|q| q.groups).sum();
        self.queries.iter().map(|q| q.missing_dataset).sum::<f64>() / groups.max(1) as f64
    }

    /// Restricts the report to queries whose selectivity lies in `[lo, hi]`.
    pub fn filter_selectivity(&self, lo: f64, hi: f64) -> ErrorReport {
        ErrorReport {
            queries: self.queries.iter().filter(|q| q.selectivity >= lo && q.selectivity <= hi).cloned().collect(),
            excluded: self.excluded.clone(),
            sample_size: self.sample_size,
            repetitions: self.repetitions,
        }
    }

    /// CSV with one row per scored query.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "query_id",
            "truth",
            "estimate_dataset",
            "estimate_model",
            "relerr_dataset",
            "relerr_model",
            "red",
            "selectivity",
            "groups",
            "missing_dataset",
            "missing_model",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for q in &self.queries {
            w.write_record([
                q.id.to_string(),
                opt(q.truth),
                opt(q.estimate_dataset),
                opt(q.estimate_model),
                q.relerr_dataset.to_string(),
                q.relerr_model.to_string(),
                q.red.to_string(),
                q.selectivity.to_string(),
                q.groups.to_string(),
                q.missing_dataset.to_string(),
                q.missing_model.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Uniform sample without replacement, rows kept in relation order.
pub fn uniform_sample(relation: &Relation, size: usize, seed: u64) -> Relation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, relation.len(), size.min(relation.len())).into_vec();
    idx.sort_unstable();
    relation.select(&idx)
}

/// Scores each query on dataset samples and model samples of equal size.
///
/// For repetition `r`, the dataset sample is drawn uniformly with a seed
/// derived from `cfg.seed` and `r`; `model_sample(r, size)` supplies the
/// model's sample. Per-query relative errors are averaged over repetitions
/// before taking their difference.
pub fn evaluate_workload<F>(
    relation: &Relation,
    queries: &[String],
    cfg: &EvaluationConfig,
    mut model_sample: F,
) -> Result<ErrorReport>
where
    F: FnMut(usize, usize) -> Result<Relation>,
{
    if cfg.repetitions == 0 {
        return Err(Error::InvalidArgument("at least one repetition is required".into()));
    }
    if !(cfg.sample_fraction > 0.0 && cfg.sample_fraction <= 1.0) {
        return Err(Error::InvalidArgument("sample fraction must be in (0, 1]".into()));
    }
    let schema = relation.schema();
    let bound: Vec<BoundQuery> =
        queries.iter().map(|q| parse_query(q)?.bind(schema)).collect::<Result<_>>()?;
    let truths: Vec<_> = bound.iter().map(|q| evaluate_exact(relation, q)).collect();
    let size = cfg.sample_size(relation.len());
    let pop = relation.len();

    #[derive(Default, Clone)]
    struct Acc {
        err_d: f64,
        err_m: f64,
        miss_d: f64,
        miss_m: f64,
        est_d: (f64, usize),
        est_m: (f64, usize),
    }
    let mut acc = vec![Acc::default(); bound.len()];
    for rep in 0..cfg.repetitions {
        let data_sample = uniform_sample(relation, size, crate::model::derive_seed(cfg.seed, rep as u64));
        let model_rel = model_sample(rep, size)?;
        if model_rel.schema() != schema {
            return Err(Error::Schema("model sample schema differs from the relation".into()));
        }
        for (i, q) in bound.iter().enumerate() {
            let ed = estimate_from_sample(&data_sample, q, pop)?.values();
            let em = estimate_from_sample(&model_rel, q, pop)?.values();
            let a = &mut acc[i];
            if let (Some(d), Some(m)) = (query_error(&truths[i], &ed), query_error(&truths[i], &em)) {
                a.err_d += d.error;
                a.err_m += m.error;
                a.miss_d += d.missing as f64;
                a.miss_m += m.missing as f64;
            }
            if q.group_by.is_empty() {
                if let Some(v) = ed.get(&Vec::new()) {
                    a.est_d.0 += v;
                    a.est_d.1 += 1;
                }
                if let Some(v) = em.get(&Vec::new()) {
                    a.est_m.0 += v;
                    a.est_m.1 += 1;
                }
            }
        }
    }
    let reps = cfg.repetitions as f64;
    let mut report = ErrorReport { queries: Vec::new(), excluded: Vec::new(), sample_size: size, repetitions: cfg.repetitions };
    for (i, q) in bound.iter().enumerate() {
        let groups = truths[i].values().filter(|v| **v != 0.0).count();
        if groups == 0 {
            report.excluded.push(i);
            continue;
        }
        let a = &acc[i];
        let avg = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        let relerr_dataset = a.err_d / reps;
        let relerr_model = a.err_m / reps;
        report.queries.push(QueryReport {
            id: i,
            text: queries[i].clone(),
            selectivity: selectivity(relation, q),
            groups,
            truth: if q.group_by.is_empty() { truths[i].get(&Vec::new()).copied() } else { None },
            estimate_dataset: avg(a.est_d),
            estimate_model: avg(a.est_m),
            relerr_dataset,
            relerr_model,
            red: relative_error_difference(relerr_model, relerr_dataset),
            missing_dataset: a.miss_d / reps,
            missing_model: a.miss_m / reps,
        });
    }
    Ok(report)
}
