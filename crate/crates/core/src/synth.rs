//! Seeded synthetic trip table with correlated attributes.
//!
//! Six columns: `region` (8 values), `hour` (24), `distance` (numeric, 16
//! bins), `fare` (numeric, 32 bins), `passengers` (1–6) and `payment` (4).
//! Hour depends on region, distance on region, fare on distance and hour,
//! passengers on hour, and payment on fare.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::error::Result;
use crate::relation::{relation_from_columns, RawColumn, Relation};

pub const DEFAULT_ROWS: usize = 50_000;

const REGIONS: [&str; 8] = ["downtown", "harbor", "uptown", "airport", "east", "west", "north", "south"];
const REGION_WEIGHTS: [f64; 8] = [0.30, 0.20, 0.15, 0.10, 0.08, 0.07, 0.05, 0.05];
const PAYMENTS: [&str; 4] = ["card", "cash", "app", "voucher"];

/// Raw columns with their bin counts, ready for
/// [`relation_from_columns`].
pub fn synthetic_columns(n: usize, seed: u64) -> Vec<(String, RawColumn, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region_dist = WeightedIndex::new(REGION_WEIGHTS).expect("static weights");
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut region = Vec::with_capacity(n);
    let mut hour = Vec::with_capacity(n);
    let mut distance = Vec::with_capacity(n);
    let mut fare = Vec::with_capacity(n);
    let mut passengers = Vec::with_capacity(n);
    let mut payment = Vec::with_capacity(n);
    for _ in 0..n {
        let r = region_dist.sample(&mut rng);
        let peak = (8 + 2 * r) as f64;
        let h = (peak + 3.0 * noise.sample(&mut rng)).round().rem_euclid(24.0) as u32;
        let d = LogNormal::new(0.5 + 0.25 * r as f64, 0.5).expect("finite parameters").sample(&mut rng);
        let rush = matches!(h, 7..=9 | 16..=19);
        let f = (2.5 + 2.0 * d + if rush { 3.0 } else { 0.0 } + noise.sample(&mut rng)).max(2.5);
        let night = !(6..22).contains(&h);
        let pax_weights: [f64; 6] = if night { [0.3, 0.3, 0.15, 0.15, 0.05, 0.05] } else { [0.6, 0.2, 0.1, 0.05, 0.03, 0.02] };
        let p = 1 + WeightedIndex::new(pax_weights).expect("static weights").sample(&mut rng);
        let card = (0.3 + f / 40.0).min(0.85);
        let pay_weights = [card, (1.0 - card) * 0.6, (1.0 - card) * 0.3, (1.0 - card) * 0.1];
        let pay = WeightedIndex::new(pay_weights).expect("positive weights").sample(&mut rng);
        // a small share of uniformly random regions keeps every value observed
        let r = if rng.random_bool(0.01) { rng.random_range(0..REGIONS.len()) } else { r };
        region.push(REGIONS[r].to_string());
        hour.push(h.to_string());
        distance.push((d * 100.0).round() / 100.0);
        fare.push((f * 100.0).round() / 100.0);
        passengers.push(p.to_string());
        payment.push(PAYMENTS[pay].to_string());
    }
    vec![
        ("region".into(), RawColumn::Categorical(region), 1),
        ("hour".into(), RawColumn::Categorical(hour), 1),
        ("distance".into(), RawColumn::Numeric(distance), 16),
        ("fare".into(), RawColumn::Numeric(fare), 32),
        ("passengers".into(), RawColumn::Categorical(passengers), 1),
        ("payment".into(), RawColumn::Categorical(payment), 1),
    ]
}

/// The discretized synthetic relation.
pub fn synthetic_relation(n: usize, seed: u64) -> Result<Relation> {
    relation_from_columns(synthetic_columns(n, seed))
}

/// Schema file text matching [`synthetic_columns`].
pub fn synthetic_schema_config() -> &'static str {
    "region=categorical\nhour=categorical\ndistance=numeric:16\nfare=numeric:32\npassengers=categorical\npayment=categorical\n"
}

/// Writes the raw columns as CSV with a header row.
pub fn write_synthetic_csv<W: std::io::Write>(out: W, n: usize, seed: u64) -> Result<()> {
    let cols = synthetic_columns(n, seed);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(cols.iter().map(|c| c.0.as_str()))?;
    for i in 0..n {
        let rec: Vec<String> = cols
            .iter()
            .map(|(_, c, _)| match c {
                RawColumn::Categorical(v) => v[i].clone(),
                RawColumn::Numeric(v) => v[i].to_string(),
            })
            .collect();
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| crate::error::Error::io("<csv output>", e))?;
    Ok(())
}
