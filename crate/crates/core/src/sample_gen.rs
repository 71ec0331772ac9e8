//! Turning latent vectors into synthetic tuples.
//!
//! Each latent is decoded `J` times by sampling bits from the decoder's
//! Bernoulli means. The `J` draws then vote per attribute, on the raw code of
//! the attribute's bit slice: invalid codes (binary overflow, one-hot slices
//! without exactly one bit) compete as themselves and are only clamped into
//! the domain if they win.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::relation::{AttributeSchema, EncodingSpec, Relation, SliceCode};
use crate::scalar::Scalar;
use crate::vae::VaeParams;

pub const DEFAULT_DRAWS_PER_LATENT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Most frequent value; ties go to the lowest code.
    #[default]
    Mode,
    /// A value drawn with probability proportional to its frequency.
    Weighted,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Mode => "mode",
            Aggregation::Weighted => "weighted",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mode" => Ok(Aggregation::Mode),
            "weighted" => Ok(Aggregation::Weighted),
            other => Err(Error::InvalidArgument(format!("unknown aggregation '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub draws_per_latent: usize,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { draws_per_latent: DEFAULT_DRAWS_PER_LATENT, aggregation: Aggregation::Mode, seed: 0 }
    }
}

/// Counters of values that had to be forced into the domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecodeReport {
    /// Binary codes beyond the domain, clamped to the last value.
    pub clamped: usize,
    /// One-hot slices without exactly one set bit.
    pub ambiguous: usize,
    /// Total attribute values produced.
    pub cells: usize,
}

impl DecodeReport {
    /// Fraction of produced values that were not valid codes.
    pub fn invalid_rate(&self) -> f64 {
        if self.cells == 0 {
            0.0
        } else {
            (self.clamped + self.ambiguous) as f64 / self.cells as f64
        }
    }
}

/// Vote key: valid codes order before invalid ones, then by code.
fn vote_key(code: SliceCode) -> (u8, u32) {
    match code {
        SliceCode::Valid(v) => (0, v),
        SliceCode::Overflow(c) => (1, c),
        // all ambiguous one-hot patterns form a single candidate
        SliceCode::Ambiguous(_) => (2, 0),
    }
}

/// Aggregates the `J` codes drawn for one attribute.
pub fn aggregate_codes<R: Rng + ?Sized>(codes: &[SliceCode], agg: Aggregation, rng: &mut R) -> SliceCode {
    match agg {
        Aggregation::Weighted => codes[rng.random_range(0..codes.len())],
        Aggregation::Mode => {
            let mut tally: HashMap<(u8, u32), (usize, SliceCode)> = HashMap::new();
            for &c in codes {
                tally.entry(vote_key(c)).or_insert((0, c)).0 += 1;
            }
            let (_, &(_, code)) = tally
                .iter()
                .max_by(|(ka, (na, _)), (kb, (nb, _))| na.cmp(nb).then(kb.cmp(ka)))
                .expect("at least one draw");
            code
        }
    }
}

/// Decodes one latent into a tuple by `J`-draw voting. Returns the tuple and
/// updates `report`.
pub fn decode_latent<S: Scalar, R: Rng + ?Sized>(
    model: &VaeParams<S>,
    spec: &EncodingSpec,
    z: &[S],
    draws: usize,
    agg: Aggregation,
    rng: &mut R,
    report: &mut DecodeReport,
) -> Result<Vec<u32>> {
    if spec.dim != model.dims().input {
        return Err(Error::Dimension { expected: model.dims().input, actual: spec.dim });
    }
    let probs: Vec<f64> = model.decoder_bernoulli(z)?.into_iter().map(|p| p.as_f64()).collect();
    let mut draws_bits = vec![vec![0u8; spec.dim]; draws];
    for bits in &mut draws_bits {
        for (b, &p) in bits.iter_mut().zip(&probs) {
            *b = (rng.random::<f64>() < p) as u8;
        }
    }
    let mut tuple = Vec::with_capacity(spec.fields.len());
    let mut codes = Vec::with_capacity(draws);
    for attr in 0..spec.fields.len() {
        codes.clear();
        codes.extend(draws_bits.iter().map(|bits| spec.slice_code(attr, bits)));
        let code = aggregate_codes(&codes, agg, rng);
        match code {
            SliceCode::Overflow(_) => report.clamped += 1,
            SliceCode::Ambiguous(_) => report.ambiguous += 1,
            SliceCode::Valid(_) => {}
        }
        report.cells += 1;
        tuple.push(spec.resolve(attr, code));
    }
    Ok(tuple)
}

/// Builds a synthetic relation with one row per latent.
pub fn generate_relation<S: Scalar>(
    model: &VaeParams<S>,
    latents: &[Vec<S>],
    cfg: &DecodeConfig,
    spec: &EncodingSpec,
    schema: &[AttributeSchema],
) -> Result<(Relation, DecodeReport)> {
    if latents.is_empty() {
        return Err(Error::InvalidArgument("no latents to decode".into()));
    }
    if cfg.draws_per_latent == 0 {
        return Err(Error::InvalidArgument("draws per latent must be at least 1".into()));
    }
    if schema.len() != spec.fields.len() {
        return Err(Error::Dimension { expected: spec.fields.len(), actual: schema.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = DecodeReport::default();
    let mut values = Vec::with_capacity(latents.len() * schema.len());
    for z in latents {
        values.extend(decode_latent(model, spec, z, cfg.draws_per_latent, cfg.aggregation, &mut rng, &mut report)?);
    }
    Ok((Relation::from_flat(schema.to_vec(), values), report))
}
