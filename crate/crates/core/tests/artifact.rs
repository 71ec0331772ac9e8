//! Model files: layout arithmetic, determinism, integrity checks.

use gaqp::artifact::{self, CHECKSUM_LEN, HEADER_LEN, SECTION_OVERHEAD};
use gaqp::bayesnet::BayesNet;
use gaqp::model::{BnModel, EnsembleModel, Model, VaeModel};
use gaqp::relation::{AttributeSchema, EncodingMode, Relation};
use gaqp::synth::synthetic_relation;
use gaqp::vae::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// 32 attributes with four values each: 64 bits in binary encoding.
fn wide_relation(rows: usize) -> Relation {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let schema: Vec<AttributeSchema> = (0..32)
        .map(|i| AttributeSchema::categorical(format!("c{i}"), (0..4).map(|v| format!("v{v}")).collect()))
        .collect();
    let data = (0..rows).map(|_| (0..32).map(|_| rng.random_range(0..4)).collect()).collect();
    Relation::new(schema, data).unwrap()
}

fn quick_config() -> TrainConfig {
    TrainConfig { epochs: 1, seed: 3, ..Default::default() }
}

#[test]
fn file_size_matches_layout_arithmetic() {
    let rel = wide_relation(5000);
    let cfg = TrainConfig { hidden: Some(64), ..quick_config() };
    let (mut model, _) = VaeModel::train(&rel, EncodingMode::Binary, &cfg, 4096).unwrap();
    model.fit_thresholds(0.9, 16, 90.0, 1).unwrap();
    let (d, h, z, n) = (64usize, 64usize, 32usize, 4096usize);
    assert_eq!(model.spec.dim, d);
    assert_eq!(model.params.dims().latent, z);
    assert_eq!(model.reservoir.len(), n);

    let params = (h * d + h) + 2 * (z * h + z) + (h * z + h) + (d * h + d);
    let schema = serde_json::to_vec(&model.schema).unwrap().len();
    let encoding = 1 + 4 + 4 + 12 * 32;
    let weights = 3 * 4 + 8 + 8 * params;
    let thresholds = 3 * 8 + 4 + 8 + 8 * n + n.div_ceil(8);
    let reservoir = 8 + 4 + n * d.div_ceil(8);
    let meta = 8 + 1 + 8;
    let sections = [schema, encoding, weights, thresholds, reservoir, meta];
    let expected = HEADER_LEN + sections.iter().map(|s| s + SECTION_OVERHEAD).sum::<usize>() + CHECKSUM_LEN;

    let bytes = artifact::to_bytes(&Model::Vae(model)).unwrap();
    assert_eq!(bytes.len(), expected);
    let breakdown = artifact::size_breakdown(&bytes).unwrap();
    assert_eq!(breakdown.iter().find(|s| s.0 == "weights").unwrap().1, weights + SECTION_OVERHEAD);
    assert_eq!(breakdown.iter().map(|s| s.1).sum::<usize>(), expected);
}

#[test]
fn save_load_save_is_byte_identical() {
    let rel = synthetic_relation(3000, 2).unwrap();
    let (mut model, _) = VaeModel::train(&rel, EncodingMode::OneHot, &quick_config(), 256).unwrap();
    model.fit_thresholds(0.9, 16, 90.0, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.gaqp"), dir.path().join("b.gaqp"));
    let model = Model::Vae(model);
    artifact::save(&model, &a).unwrap();
    let loaded = artifact::load(&a).unwrap();
    artifact::save(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded, model);
}

#[test]
fn loaded_model_computes_identical_posteriors() {
    let rel = synthetic_relation(2000, 6).unwrap();
    let (model, _) = VaeModel::train(&rel, EncodingMode::Binary, &quick_config(), 128).unwrap();
    let bytes = artifact::to_bytes(&Model::Vae(model.clone())).unwrap();
    let Model::Vae(back) = artifact::from_bytes(&bytes).unwrap() else { panic!("wrong kind") };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let x: Vec<u8> = (0..model.spec.dim).map(|_| rng.random_range(0..2)).collect();
        let (p, q) = (model.params.posterior_params(&x).unwrap(), back.params.posterior_params(&x).unwrap());
        assert_eq!(p, q);
    }
}

#[test]
fn integrity_failures_are_reported() {
    let rel = synthetic_relation(1000, 1).unwrap();
    let (model, _) = VaeModel::train(&rel, EncodingMode::Binary, &quick_config(), 64).unwrap();
    let bytes = artifact::to_bytes(&Model::Vae(model)).unwrap();
    for cut in [0, 5, HEADER_LEN, bytes.len() / 2, bytes.len() - 1] {
        assert!(artifact::from_bytes(&bytes[..cut]).is_err(), "truncated at {cut}");
    }
    let mut bad = bytes.clone();
    *bad.last_mut().unwrap() ^= 0x80;
    assert!(artifact::from_bytes(&bad).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(artifact::from_bytes(&bad).is_err());
}

/// Offset and length of the first section with the given name.
fn section(bytes: &[u8], name: &str) -> (usize, usize) {
    let mut at = HEADER_LEN;
    for (n, size) in artifact::size_breakdown(bytes).unwrap().into_iter().skip(1) {
        if n == name {
            return (at + SECTION_OVERHEAD, size - SECTION_OVERHEAD);
        }
        at += size;
    }
    panic!("no {name} section");
}

fn reseal(body: &mut Vec<u8>) {
    body.truncate(body.len() - CHECKSUM_LEN);
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
}

#[test]
fn weights_are_little_endian_regardless_of_host() {
    let rel = synthetic_relation(1000, 8).unwrap();
    let (model, _) = VaeModel::train(&rel, EncodingMode::Binary, &quick_config(), 64).unwrap();
    let bytes = artifact::to_bytes(&Model::Vae(model.clone())).unwrap();
    let (off, len) = section(&bytes, "weights");
    let dims = model.params.dims();
    let header = &bytes[off..off + 20];
    assert_eq!(u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize, dims.input);
    assert_eq!(u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize, dims.hidden);
    assert_eq!(u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize, dims.latent);
    let payload = &bytes[off + 20..off + len];
    for (chunk, &w) in payload.chunks_exact(8).zip(model.params.as_slice()) {
        assert_eq!(chunk, w.to_le_bytes());
        // what a big-endian writer would have produced without conversion
        let mut swapped = chunk.to_vec();
        swapped.reverse();
        assert_eq!(f64::from_be_bytes(swapped.try_into().unwrap()).to_bits(), w.to_bits());
    }

    // a file whose weights were written big-endian decodes to different
    // values (or is rejected), so the on-disk order is not host dependent
    let mut foreign = bytes.clone();
    for chunk in foreign[off + 20..off + len].chunks_exact_mut(8) {
        chunk.reverse();
    }
    reseal(&mut foreign);
    match artifact::from_bytes(&foreign) {
        Ok(Model::Vae(m)) => assert_ne!(m.params, model.params),
        Ok(_) => panic!("wrong kind"),
        Err(_) => {}
    }
}

#[test]
fn unknown_version_is_rejected() {
    let rel = synthetic_relation(500, 1).unwrap();
    let (model, _) = VaeModel::train(&rel, EncodingMode::Binary, &quick_config(), 16).unwrap();
    let mut bytes = artifact::to_bytes(&Model::Vae(model)).unwrap();
    bytes[4..6].copy_from_slice(&2u16.to_le_bytes());
    reseal(&mut bytes);
    let err = artifact::from_bytes(&bytes).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");
}

#[test]
fn ensemble_and_network_round_trip() {
    let rel = synthetic_relation(3000, 4).unwrap();
    let ens = EnsembleModel::train(&rel, 0, &[vec![0, 1, 2], vec![3, 4, 5, 6, 7]], EncodingMode::Binary, &quick_config(), 32)
        .unwrap();
    let model = Model::Ensemble(ens);
    let bytes = artifact::to_bytes(&model).unwrap();
    assert_eq!(artifact::from_bytes(&bytes).unwrap(), model);
    assert_eq!(artifact::size_breakdown(&bytes).unwrap().iter().filter(|s| s.0 == "part").count(), 2);

    let net = BayesNet::fit(&rel, 2, 1.0).unwrap();
    let model = Model::BayesNet(BnModel { net, population_n: rel.len() as u64 });
    let bytes = artifact::to_bytes(&model).unwrap();
    let back = artifact::from_bytes(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(artifact::to_bytes(&back).unwrap(), bytes);
}
