//! Fitted generative models over a relation's schema.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bayesnet::BayesNet;
use crate::error::{Error, Result};
use crate::relation::{encode_dataset, AttributeSchema, EncodedDataset, EncodingMode, EncodingSpec, Relation};
use crate::sample_gen::{generate_relation, DecodeConfig, DecodeReport};
use crate::vae::{train, TrainConfig, VaeParams};
use crate::vrs::{
    calibrate_threshold, fit_tuple_thresholds, nearest_rank, rejection_sample_latents, sample_prior_latents,
    Calibration, SeedReservoir, ThresholdState, DEFAULT_RESERVOIR_SIZE, T_INFINITE,
};

/// Mixes a base seed with a stream number so derived generators differ.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Where generation draws its latents from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentSource {
    /// Posteriors of reservoir tuples, filtered by rejection at `T`.
    Posterior,
    /// The standard normal prior, no rejection.
    Prior,
}

/// Synthetic rows plus generation diagnostics.
#[derive(Clone, Debug)]
pub struct Generated {
    pub relation: Relation,
    pub trials: usize,
    pub budget_exceeded: bool,
    pub decode: DecodeReport,
}

/// A trained VAE with everything needed to generate samples.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub schema: Vec<AttributeSchema>,
    pub spec: EncodingSpec,
    pub params: VaeParams<f64>,
    pub reservoir: SeedReservoir<f64>,
    /// Thresholds fitted on the reservoir tuples.
    pub thresholds: Option<ThresholdState>,
    /// Threshold accepted by the cross-match calibration.
    pub certified_t: Option<f64>,
    /// Rows in the training relation.
    pub population_n: u64,
}

impl VaeModel {
    /// Trains on `relation` and keeps a seed reservoir of up to
    /// `reservoir_size` training tuples.
    pub fn train(
        relation: &Relation,
        mode: EncodingMode,
        cfg: &TrainConfig,
        reservoir_size: usize,
    ) -> Result<(Self, Vec<f64>)> {
        let data = encode_dataset(relation, mode)?;
        let outcome = train::<f64>(&data, cfg)?;
        let reservoir = SeedReservoir::build(&outcome.params, &data, reservoir_size, derive_seed(cfg.seed, 1))?;
        let model = Self {
            schema: relation.schema().to_vec(),
            spec: data.spec().clone(),
            params: outcome.params,
            reservoir,
            thresholds: None,
            certified_t: None,
            population_n: relation.len() as u64,
        };
        Ok((model, outcome.epoch_elbo))
    }

    pub fn train_default(relation: &Relation, mode: EncodingMode, cfg: &TrainConfig) -> Result<(Self, Vec<f64>)> {
        Self::train(relation, mode, cfg, DEFAULT_RESERVOIR_SIZE)
    }

    pub fn reservoir_dataset(&self) -> Result<EncodedDataset> {
        let rows: Vec<Vec<u8>> = self.reservoir.tuples().map(<[u8]>::to_vec).collect();
        EncodedDataset::from_rows(self.spec.clone(), &rows)
    }

    /// Fits per-tuple thresholds on the reservoir and sets the global
    /// threshold at `percentile`.
    pub fn fit_thresholds(&mut self, target_accept: f64, mc_draws: usize, percentile: f64, seed: u64) -> Result<()> {
        let data = self.reservoir_dataset()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = fit_tuple_thresholds(&self.params, &data, target_accept, mc_draws, &mut rng)?;
        state.global_t = nearest_rank(&state.per_tuple, percentile)?;
        state.percentile = percentile;
        self.thresholds = Some(state);
        Ok(())
    }

    /// Certified threshold if any, else the fitted global one, else
    /// accept-all.
    pub fn default_t(&self) -> f64 {
        self.certified_t.or(self.thresholds.as_ref().map(|s| s.global_t)).unwrap_or(T_INFINITE)
    }

    /// Generates `count` rows at threshold `t`.
    pub fn generate(&self, count: usize, t: f64, source: LatentSource, decode: &DecodeConfig) -> Result<Generated> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(decode.seed, 2));
        let (latents, trials, budget_exceeded) = match source {
            LatentSource::Posterior => {
                let out = rejection_sample_latents(&self.params, &self.reservoir, t, count, &mut rng)?;
                (out.accepted, out.trials, out.budget_exceeded)
            }
            LatentSource::Prior => {
                (sample_prior_latents::<f64, _>(self.params.dims().latent, count, &mut rng), count, false)
            }
        };
        if latents.is_empty() {
            return Err(Error::InvalidArgument(format!("no latent accepted within the trial budget at T = {t}")));
        }
        let (relation, report) = generate_relation(&self.params, &latents, decode, &self.spec, &self.schema)?;
        Ok(Generated { relation, trials, budget_exceeded, decode: report })
    }

    /// Posterior means of each row, the space the cross-match test works in.
    pub fn project(&self, relation: &Relation) -> Result<Vec<Vec<f64>>> {
        relation
            .rows()
            .map(|row| Ok(self.params.posterior_params(&self.spec.encode(row))?.mu))
            .collect()
    }

    /// Runs the calibration loop against `test_size` rows of `data` and
    /// records the accepted threshold.
    pub fn certify(
        &mut self,
        data: &Relation,
        test_size: usize,
        alpha: f64,
        initial_t: f64,
        decode: &DecodeConfig,
        seed: u64,
    ) -> Result<Calibration<Relation>> {
        if data.schema() != self.schema.as_slice() {
            return Err(Error::Schema("relation schema differs from the model's".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = test_size.min(data.len());
        let mut picked = index::sample(&mut rng, data.len(), k).into_vec();
        picked.sort_unstable();
        let s_d = data.select(&picked);
        let projection = self.project(&s_d)?;
        let mut round = 0u64;
        let calibration = calibrate_threshold(&projection, initial_t, alpha, &mut rng, |t, n, _| {
            round += 1;
            let cfg = DecodeConfig { seed: derive_seed(decode.seed, 100 + round), ..decode.clone() };
            let generated = self.generate(n, t, LatentSource::Posterior, &cfg)?;
            let proj = self.project(&generated.relation)?;
            Ok((generated.relation, proj))
        })?;
        self.certified_t = Some(calibration.t);
        Ok(calibration)
    }
}

/// One member of an ensemble: the atomic groups (values of the partition
/// attribute) it covers and its model.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePart {
    pub values: Vec<u32>,
    pub rows: u64,
    pub model: VaeModel,
}

/// Several VAEs, each trained on a disjoint set of atomic groups.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub attribute: usize,
    pub parts: Vec<EnsemblePart>,
}

/// Splits `count` proportionally to `weights` by largest remainder.
pub fn apportion(count: usize, weights: &[u64]) -> Vec<usize> {
    let total: u64 = weights.iter().sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let mut out: Vec<usize> = weights.iter().map(|&w| (count as u128 * w as u128 / total as u128) as usize).collect();
    let mut rest: Vec<(u128, usize)> =
        weights.iter().enumerate().map(|(i, &w)| ((count as u128 * w as u128) % total as u128, i)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = count - out.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(missing) {
        out[i] += 1;
    }
    out
}

impl EnsembleModel {
    /// Trains one model per part of `parts` (lists of partition-attribute
    /// values).
    pub fn train(
        relation: &Relation,
        attribute: usize,
        parts: &[Vec<u32>],
        mode: EncodingMode,
        cfg: &TrainConfig,
        reservoir_size: usize,
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(parts.len());
        for (i, values) in parts.iter().enumerate() {
            let rows: Vec<usize> =
                relation.rows().enumerate().filter(|(_, r)| values.contains(&r[attribute])).map(|(i, _)| i).collect();
            if rows.is_empty() {
                return Err(Error::InvalidArgument(format!("partition {i} has no rows")));
            }
            let sub = relation.select(&rows);
            let part_cfg = TrainConfig { seed: derive_seed(cfg.seed, i as u64), ..cfg.clone() };
            let (model, _) = VaeModel::train(&sub, mode, &part_cfg, reservoir_size)?;
            out.push(EnsemblePart { values: values.clone(), rows: rows.len() as u64, model });
        }
        Ok(Self { attribute, parts: out })
    }

    pub fn population_n(&self) -> u64 {
        self.parts.iter().map(|p| p.rows).sum()
    }

    pub fn schema(&self) -> &[AttributeSchema] {
        &self.parts[0].model.schema
    }

    /// Generates `count` rows split across parts in proportion to their
    /// row counts. `t = None` uses each part's default threshold.
    pub fn generate(&self, count: usize, t: Option<f64>, source: LatentSource, decode: &DecodeConfig) -> Result<Generated> {
        let shares = apportion(count, &self.parts.iter().map(|p| p.rows).collect::<Vec<_>>());
        let mut rows = Vec::with_capacity(count);
        let mut trials = 0;
        let mut budget_exceeded = false;
        let mut report = DecodeReport::default();
        for (i, (part, &n)) in self.parts.iter().zip(&shares).enumerate() {
            if n == 0 {
                continue;
            }
            let cfg = DecodeConfig { seed: derive_seed(decode.seed, 1000 + i as u64), ..decode.clone() };
            let g = part.model.generate(n, t.unwrap_or_else(|| part.model.default_t()), source, &cfg)?;
            trials += g.trials;
            budget_exceeded |= g.budget_exceeded;
            report.clamped += g.decode.clamped;
            report.ambiguous += g.decode.ambiguous;
            report.cells += g.decode.cells;
            rows.extend(g.relation.rows().map(<[u32]>::to_vec));
        }
        let relation = Relation::new(self.schema().to_vec(), rows)?;
        Ok(Generated { relation, trials, budget_exceeded, decode: report })
    }
}

/// A Bayesian network with the size of the relation it was fitted on.
#[derive(Clone, Debug, PartialEq)]
pub struct BnModel {
    pub net: BayesNet<f64>,
    pub population_n: u64,
}

/// Any persisted model.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Vae(VaeModel),
    BayesNet(BnModel),
    Ensemble(EnsembleModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Vae(_) => "vae",
            Model::BayesNet(_) => "bn",
            Model::Ensemble(_) => "ensemble",
        }
    }

    pub fn schema(&self) -> &[AttributeSchema] {
        match self {
            Model::Vae(m) => &m.schema,
            Model::BayesNet(m) => m.net.schema(),
            Model::Ensemble(m) => m.schema(),
        }
    }

    pub fn population_n(&self) -> u64 {
        match self {
            Model::Vae(m) => m.population_n,
            Model::BayesNet(m) => m.population_n,
            Model::Ensemble(m) => m.population_n(),
        }
    }

    /// Generates `count` rows. `t = None` uses the model's default
    /// threshold; Bayesian networks ignore `t` and `source`.
    pub fn generate(&self, count: usize, t: Option<f64>, source: LatentSource, decode: &DecodeConfig) -> Result<Generated> {
        match self {
            Model::Vae(m) => m.generate(count, t.unwrap_or_else(|| m.default_t()), source, decode),
            Model::Ensemble(m) => m.generate(count, t, source, decode),
            Model::BayesNet(m) => {
                let relation = m.net.ancestral_sample(count, decode.seed)?;
                Ok(Generated { relation, trials: count, budget_exceeded: false, decode: DecodeReport::default() })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(10, &[1, 1, 1]), vec![4, 3, 3]);
        assert_eq!(apportion(7, &[5, 0, 5]), vec![4, 0, 3]);
        assert_eq!(apportion(0, &[2, 3]), vec![0, 0]);
        assert_eq!(apportion(100, &[30, 70]).iter().sum::<usize>(), 100);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
    }
}
