//! Variational rejection sampling.
//!
//! A draw `z ~ q(z|x)` is accepted with probability
//! `min(1, p(x, z) / (e^{−T} q(z|x)))`. Large `T` accepts everything (plain
//! VAE sampling); lowering `T` rejects draws the posterior over-weights and
//! moves the accepted distribution towards the true posterior.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crossmatch::crossmatch_test;
use crate::error::{Error, Result};
use crate::relation::EncodedDataset;
use crate::scalar::Scalar;
use crate::vae::{reparameterize, standard_normal, PosteriorParams, VaeParams};

/// Thresholds at or above this value mean "accept everything".
pub const T_INFINITE: f64 = 1e9;

pub const DEFAULT_TARGET_ACCEPT: f64 = 0.9;
pub const DEFAULT_MC_DRAWS: usize = 256;
pub const DEFAULT_PERCENTILE: f64 = 90.0;
pub const DEFAULT_RESERVOIR_SIZE: usize = 4096;
pub const DEFAULT_BUDGET_FACTOR: usize = 1000;
pub const MAX_CALIBRATION_ITERATIONS: usize = 50;

const BRACKET: f64 = 50.0;
const MAX_BRACKET_EXPANSIONS: usize = 16;

fn is_infinite_threshold(t: f64) -> bool {
    t >= T_INFINITE
}

/// `min(0, log_ratio + T)`; exactly 0 for the infinite threshold.
pub fn acceptance_from_ratio(log_ratio: f64, t: f64) -> f64 {
    if is_infinite_threshold(t) {
        return 0.0;
    }
    let v = log_ratio + t;
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v.min(0.0)
    }
}

/// `log p(x, z) − log q(z|x)`.
pub fn log_ratio<S: Scalar>(model: &VaeParams<S>, x: &[u8], post: &PosteriorParams<S>, z: &[S]) -> Result<f64> {
    let (lj, lq) = model.log_densities_with(x, post, z)?;
    Ok(lj.as_f64() - lq.as_f64())
}

/// Log acceptance probability of latent `z` for tuple `x` at threshold `T`.
pub fn acceptance_log_probability<S: Scalar>(model: &VaeParams<S>, x: &[u8], z: &[S], t: f64) -> Result<f64> {
    if is_infinite_threshold(t) {
        return Ok(0.0);
    }
    let post = model.posterior_params(x)?;
    Ok(acceptance_from_ratio(log_ratio(model, x, &post, z)?, t))
}

/// Mean acceptance probability over a set of log ratios at threshold `T`.
pub fn mean_acceptance(ratios: &[f64], t: f64) -> f64 {
    ratios.iter().map(|&r| acceptance_from_ratio(r, t).exp()).sum::<f64>() / ratios.len() as f64
}

/// Solves `mean_acceptance(ratios, T) = target` by bisection. Returns the
/// threshold and whether the bracket had to be abandoned.
pub fn solve_threshold(ratios: &[f64], target: f64) -> (f64, bool) {
    let f = |t: f64| mean_acceptance(ratios, t);
    let (mut lo, mut hi) = (-BRACKET, BRACKET);
    let mut expansions = 0;
    while f(lo) > target {
        if expansions == MAX_BRACKET_EXPANSIONS {
            return (lo, true);
        }
        hi = lo;
        lo *= 2.0;
        expansions += 1;
    }
    while f(hi) < target {
        if expansions == MAX_BRACKET_EXPANSIONS {
            return (hi, true);
        }
        lo = hi;
        hi *= 2.0;
        expansions += 1;
    }
    // f is non-decreasing; keep f(lo) ≤ target ≤ f(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (hi, false)
}

/// Per-tuple and global thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdState {
    pub per_tuple: Vec<f64>,
    /// Tuples whose bisection bracket was exhausted.
    pub flagged: Vec<bool>,
    pub global_t: f64,
    pub target_accept: f64,
    pub mc_draws: usize,
    pub percentile: f64,
}

impl ThresholdState {
    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }
}

/// Nearest-rank percentile of `values`.
pub fn nearest_rank(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty set".into()));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidArgument(format!("percentile {percentile} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Global threshold: the `percentile`-th order statistic of the per-tuple
/// thresholds.
pub fn global_threshold(state: &ThresholdState, percentile: f64) -> Result<f64> {
    nearest_rank(&state.per_tuple, percentile)
}

/// Fits `T(x)` for every tuple in `data` so that the Monte Carlo acceptance
/// rate of `q(z|x)` draws equals `target_accept`, then sets the global
/// threshold at the default percentile.
pub fn fit_tuple_thresholds<S: Scalar, R: Rng + ?Sized>(
    model: &VaeParams<S>,
    data: &EncodedDataset,
    target_accept: f64,
    mc_draws: usize,
    rng: &mut R,
) -> Result<ThresholdState> {
    if !(target_accept > 0.0 && target_accept < 1.0) {
        return Err(Error::InvalidArgument(format!("target acceptance {target_accept} outside (0, 1)")));
    }
    if mc_draws < 16 {
        return Err(Error::InvalidArgument("at least 16 draws per tuple are required".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot fit thresholds on an empty dataset".into()));
    }
    let mut per_tuple = Vec::with_capacity(data.len());
    let mut flagged = Vec::with_capacity(data.len());
    let mut ratios = vec![0.0; mc_draws];
    for x in data.rows() {
        tuple_log_ratios(model, x, rng, &mut ratios)?;
        let (t, flag) = solve_threshold(&ratios, target_accept);
        per_tuple.push(t);
        flagged.push(flag);
    }
    let global_t = nearest_rank(&per_tuple, DEFAULT_PERCENTILE)?;
    Ok(ThresholdState {
        per_tuple,
        flagged,
        global_t,
        target_accept,
        mc_draws,
        percentile: DEFAULT_PERCENTILE,
    })
}

/// Fills `out` with log ratios of fresh posterior draws for tuple `x`.
pub fn tuple_log_ratios<S: Scalar, R: Rng + ?Sized>(
    model: &VaeParams<S>,
    x: &[u8],
    rng: &mut R,
    out: &mut [f64],
) -> Result<()> {
    let post = model.posterior_params(x)?;
    let mut eps = vec![S::zero(); model.dims().latent];
    for r in out.iter_mut() {
        standard_normal(rng, &mut eps);
        let z = reparameterize(&post, &eps);
        *r = log_ratio(model, x, &post, &z)?;
    }
    Ok(())
}

/// Training tuples retained to seed posterior-conditioned generation.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedReservoir<S> {
    entries: Vec<(Vec<u8>, PosteriorParams<S>)>,
}

impl<S: Scalar> SeedReservoir<S> {
    /// Picks `min(size, n)` tuples uniformly without replacement, in data
    /// order, and caches their posteriors.
    pub fn build(model: &VaeParams<S>, data: &EncodedDataset, size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = size.min(data.len());
        let mut picked = index::sample(&mut rng, data.len(), k).into_vec();
        picked.sort_unstable();
        let rows = picked.into_iter().map(|i| data.row(i).to_vec()).collect();
        Self::from_rows(model, rows)
    }

    /// Builds a reservoir from the given encoded tuples.
    pub fn from_rows(model: &VaeParams<S>, rows: Vec<Vec<u8>>) -> Result<Self> {
        let entries = rows
            .into_iter()
            .map(|x| {
                let post = model.posterior_params(&x)?;
                Ok((x, post))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tuple(&self, i: usize) -> &[u8] {
        &self.entries[i].0
    }

    pub fn posterior(&self, i: usize) -> &PosteriorParams<S> {
        &self.entries[i].1
    }

    pub fn tuples(&self) -> impl Iterator<Item = &[u8]> {
        self.entries.iter().map(|e| e.0.as_slice())
    }
}

/// One proposal of the rejection sampler: the reservoir entry, the latent
/// draw, and the uniform used to decide acceptance.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal<S> {
    pub entry: usize,
    pub z: Vec<S>,
    pub log_u: f64,
    /// `log p(x, z) − log q(z|x)`.
    pub log_ratio: f64,
}

impl<S> Proposal<S> {
    pub fn accepted_at(&self, t: f64) -> bool {
        self.log_u <= acceptance_from_ratio(self.log_ratio, t)
    }
}

/// Draws one proposal. The uniform is always drawn so the random tape does
/// not depend on `T`.
pub fn propose<S: Scalar, R: Rng + ?Sized>(
    model: &VaeParams<S>,
    reservoir: &SeedReservoir<S>,
    rng: &mut R,
) -> Result<Proposal<S>> {
    let entry = rng.random_range(0..reservoir.len());
    let (x, post) = &reservoir.entries[entry];
    let mut eps = vec![S::zero(); model.dims().latent];
    standard_normal(rng, &mut eps);
    let z = reparameterize(post, &eps);
    let u: f64 = rng.random();
    let log_ratio = log_ratio(model, x, post, &z)?;
    Ok(Proposal { entry, z, log_u: u.ln(), log_ratio })
}

/// Outcome of a rejection loop.
#[derive(Clone, Debug, PartialEq)]
pub struct RejectionOutcome<T> {
    pub accepted: Vec<T>,
    pub trials: usize,
    pub budget_exceeded: bool,
}

/// Generic accept/reject loop: `propose` returns a log acceptance
/// probability and a candidate; runs until `count` candidates are accepted or
/// `budget` trials are spent.
pub fn run_rejection<T, R, F>(count: usize, budget: usize, rng: &mut R, mut propose: F) -> Result<RejectionOutcome<T>>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Result<(f64, T)>,
{
    let mut accepted = Vec::with_capacity(count);
    let mut trials = 0;
    while accepted.len() < count {
        if trials == budget {
            return Ok(RejectionOutcome { accepted, trials, budget_exceeded: true });
        }
        trials += 1;
        let (log_accept, item) = propose(rng)?;
        let u: f64 = rng.random();
        if u.ln() <= log_accept {
            accepted.push(item);
        }
    }
    Ok(RejectionOutcome { accepted, trials, budget_exceeded: false })
}

/// Draws `count` accepted latents at threshold `T` from posteriors of
/// uniformly chosen reservoir tuples.
pub fn rejection_sample_latents<S: Scalar, R: Rng + ?Sized>(
    model: &VaeParams<S>,
    reservoir: &SeedReservoir<S>,
    t: f64,
    count: usize,
    rng: &mut R,
) -> Result<RejectionOutcome<Vec<S>>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    if reservoir.is_empty() {
        return Err(Error::InvalidArgument("seed reservoir is empty".into()));
    }
    let budget = DEFAULT_BUDGET_FACTOR.saturating_mul(count);
    let mut accepted = Vec::with_capacity(count);
    let mut trials = 0;
    while accepted.len() < count {
        if trials == budget {
            return Ok(RejectionOutcome { accepted, trials, budget_exceeded: true });
        }
        trials += 1;
        let p = propose(model, reservoir, rng)?;
        if p.accepted_at(t) {
            accepted.push(p.z);
        }
    }
    Ok(RejectionOutcome { accepted, trials, budget_exceeded: false })
}

/// Latents drawn from the standard normal prior (no rejection).
pub fn sample_prior_latents<S: Scalar, R: Rng + ?Sized>(latent: usize, count: usize, rng: &mut R) -> Vec<Vec<S>> {
    (0..count)
        .map(|_| {
            let mut z = vec![S::zero(); latent];
            standard_normal(rng, &mut z);
            z
        })
        .collect()
}

/// Result of the calibration loop.
#[derive(Clone, Debug)]
pub struct Calibration<G> {
    pub t: f64,
    pub p_values: Vec<f64>,
    pub iterations: usize,
    /// The certified sample produced at the final threshold.
    pub sample: G,
}

/// Lowers `T` from `initial_t` in unit steps until a cross-match test at
/// level `alpha` no longer distinguishes generated samples from the data.
///
/// `data_projection` holds the data sample's latent projections;
/// `generate(T, n, rng)` must return a generated sample of size `n` and its
/// latent projections.
pub fn calibrate_threshold<G, R, F>(
    data_projection: &[Vec<f64>],
    initial_t: f64,
    alpha: f64,
    rng: &mut R,
    mut generate: F,
) -> Result<Calibration<G>>
where
    R: Rng + ?Sized,
    F: FnMut(f64, usize, &mut R) -> Result<(G, Vec<Vec<f64>>)>,
{
    if data_projection.len() < 20 {
        return Err(Error::InvalidArgument("calibration needs at least 20 data points".into()));
    }
    let mut t = initial_t;
    let mut p_values = Vec::new();
    for iteration in 1..=MAX_CALIBRATION_ITERATIONS {
        let (sample, projection) = generate(t, data_projection.len(), rng)?;
        let outcome = crossmatch_test(data_projection, &projection, alpha, rng)?;
        p_values.push(outcome.p_value);
        if !outcome.reject {
            return Ok(Calibration { t, p_values, iterations: iteration, sample });
        }
        t -= 1.0;
    }
    Err(Error::CalibrationFailed { iterations: MAX_CALIBRATION_ITERATIONS, p_values })
}
