//! Single-file model container.
//!
//! ```text
//! "GAQP"  version:u16  kind:u8  sections:u16
//! section* = tag:u8  length:u64  payload
//! sha256 of everything above (32 bytes)
//! ```
//!
//! All integers and floats are little-endian; floats are IEEE-754 binary64.
//! Reservoir tuples are stored as packed bits and their posteriors are
//! recomputed on load, so a loaded model reproduces the saved one exactly.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bayesnet::{BayesNet, BnGraph, Cpt};
use crate::error::{Error, Result};
use crate::model::{BnModel, EnsembleModel, EnsemblePart, Model, VaeModel};
use crate::relation::{AttributeSchema, EncodingMode, EncodingSpec, FieldLayout};
use crate::vae::{VaeDims, VaeParams};
use crate::vrs::{SeedReservoir, ThresholdState};

pub const MAGIC: &[u8; 4] = b"GAQP";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 2;
pub const SECTION_OVERHEAD: usize = 1 + 8;
pub const CHECKSUM_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Section {
    Schema = 1,
    Encoding = 2,
    Weights = 3,
    Thresholds = 4,
    Reservoir = 5,
    Meta = 6,
    Partition = 7,
    Part = 8,
    BnGraph = 9,
    BnCpts = 10,
}

impl Section {
    fn from_tag(tag: u8) -> Option<Self> {
        use Section::*;
        [Schema, Encoding, Weights, Thresholds, Reservoir, Meta, Partition, Part, BnGraph, BnCpts]
            .into_iter()
            .find(|s| *s as u8 == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Section::Schema => "schema",
            Section::Encoding => "encoding",
            Section::Weights => "weights",
            Section::Thresholds => "thresholds",
            Section::Reservoir => "reservoir",
            Section::Meta => "meta",
            Section::Partition => "partition",
            Section::Part => "part",
            Section::BnGraph => "bn-graph",
            Section::BnCpts => "bn-cpts",
        }
    }
}

fn kind_tag(model: &Model) -> u8 {
    match model {
        Model::Vae(_) => 0,
        Model::BayesNet(_) => 1,
        Model::Ensemble(_) => 2,
    }
}

#[derive(Default)]
struct Buf(Vec<u8>);

impl Buf {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }
    fn bits(&mut self, bits: impl Iterator<Item = bool>) {
        let mut byte = 0u8;
        let mut n = 0;
        for b in bits {
            byte |= (b as u8) << (n % 8);
            n += 1;
            if n % 8 == 0 {
                self.0.push(byte);
                byte = 0;
            }
        }
        if n % 8 != 0 {
            self.0.push(byte);
        }
    }
    fn section(&mut self, tag: Section, payload: Buf) {
        self.u8(tag as u8);
        self.u64(payload.0.len() as u64);
        self.0.extend_from_slice(&payload.0);
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Artifact(msg.into())
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| corrupt("truncated data"))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflow"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn bits(&mut self, n: usize) -> Result<Vec<bool>> {
        let bytes = self.take(n.div_ceil(8))?;
        Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
    }
    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
    fn section(&mut self) -> Result<(Section, &'a [u8])> {
        let tag = self.u8()?;
        let section = Section::from_tag(tag).ok_or_else(|| corrupt(format!("unknown section tag {tag}")))?;
        let len = self.len()?;
        Ok((section, self.take(len)?))
    }
    fn expect(&mut self, want: Section) -> Result<&'a [u8]> {
        let (s, payload) = self.section()?;
        if s != want {
            return Err(corrupt(format!("expected {} section, found {}", want.name(), s.name())));
        }
        Ok(payload)
    }
    fn finish(&self, what: &str) -> Result<()> {
        if self.done() {
            Ok(())
        } else {
            Err(corrupt(format!("trailing bytes in {what}")))
        }
    }
}

fn schema_section(schema: &[AttributeSchema]) -> Result<Buf> {
    Ok(Buf(serde_json::to_vec(schema)?))
}

fn encoding_section(spec: &EncodingSpec) -> Buf {
    let mut b = Buf::default();
    b.u8(match spec.mode {
        EncodingMode::OneHot => 0,
        EncodingMode::Binary => 1,
    });
    b.u32(spec.dim);
    b.u32(spec.fields.len());
    for f in &spec.fields {
        b.u32(f.offset);
        b.u32(f.width);
        b.u32(f.domain_size);
    }
    b
}

fn vae_sections(out: &mut Buf, m: &VaeModel) {
    out.section(Section::Encoding, encoding_section(&m.spec));

    let mut w = Buf::default();
    let dims = m.params.dims();
    w.u32(dims.input);
    w.u32(dims.hidden);
    w.u32(dims.latent);
    w.u64(m.params.as_slice().len() as u64);
    w.f64s(m.params.as_slice());
    out.section(Section::Weights, w);

    if let Some(t) = &m.thresholds {
        let mut b = Buf::default();
        b.f64(t.global_t);
        b.f64(t.target_accept);
        b.f64(t.percentile);
        b.u32(t.mc_draws);
        b.u64(t.per_tuple.len() as u64);
        b.f64s(&t.per_tuple);
        b.bits(t.flagged.iter().copied());
        out.section(Section::Thresholds, b);
    }

    let mut r = Buf::default();
    r.u64(m.reservoir.len() as u64);
    r.u32(m.spec.dim);
    for x in m.reservoir.tuples() {
        r.bits(x.iter().map(|&b| b != 0));
    }
    out.section(Section::Reservoir, r);

    let mut meta = Buf::default();
    meta.u64(m.population_n);
    meta.u8(m.certified_t.is_some() as u8);
    meta.f64(m.certified_t.unwrap_or(0.0));
    out.section(Section::Meta, meta);
}

/// Serializes a model. The output is a pure function of the model.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut body = Buf::default();
    let mut count = 0u16;
    let mut push = |body: &mut Buf, s: Section, b: Buf| {
        body.section(s, b);
        count += 1;
    };
    push(&mut body, Section::Schema, schema_section(model.schema())?);
    match model {
        Model::Vae(m) => {
            let mut inner = Buf::default();
            vae_sections(&mut inner, m);
            // the VAE sections sit directly at top level
            let mut c = Cursor::new(&inner.0);
            while !c.done() {
                let (s, payload) = c.section()?;
                push(&mut body, s, Buf(payload.to_vec()));
            }
        }
        Model::Ensemble(e) => {
            let mut p = Buf::default();
            p.u32(e.attribute);
            p.u32(e.parts.len());
            for part in &e.parts {
                p.u32(part.values.len());
                for &v in &part.values {
                    p.u32(v as usize);
                }
                p.u64(part.rows);
            }
            push(&mut body, Section::Partition, p);
            for part in &e.parts {
                let mut inner = Buf::default();
                vae_sections(&mut inner, &part.model);
                push(&mut body, Section::Part, inner);
            }
        }
        Model::BayesNet(bn) => {
            let mut g = Buf::default();
            let graph = bn.net.graph();
            g.u32(graph.len());
            for v in 0..graph.len() {
                g.u32(graph.parents(v).len());
                for &p in graph.parents(v) {
                    g.u32(p);
                }
            }
            push(&mut body, Section::BnGraph, g);
            let mut c = Buf::default();
            for cpt in bn.net.cpts() {
                for row in &cpt.rows {
                    c.f64s(row);
                }
            }
            push(&mut body, Section::BnCpts, c);
            let mut meta = Buf::default();
            meta.u64(bn.population_n);
            push(&mut body, Section::Meta, meta);
        }
    }
    let mut out = Buf::default();
    out.0.extend_from_slice(MAGIC);
    out.u16(FORMAT_VERSION);
    out.u8(kind_tag(model));
    out.u16(count);
    out.0.extend_from_slice(&body.0);
    let digest = Sha256::digest(&out.0);
    out.0.extend_from_slice(&digest);
    Ok(out.0)
}

fn read_schema(payload: &[u8]) -> Result<Vec<AttributeSchema>> {
    serde_json::from_slice(payload).map_err(|e| corrupt(format!("schema section: {e}")))
}

fn read_encoding(payload: &[u8], schema: &[AttributeSchema]) -> Result<EncodingSpec> {
    let mut c = Cursor::new(payload);
    let mode = match c.u8()? {
        0 => EncodingMode::OneHot,
        1 => EncodingMode::Binary,
        m => return Err(corrupt(format!("unknown encoding mode {m}"))),
    };
    let dim = c.u32()?;
    let n = c.u32()?;
    let mut fields = Vec::with_capacity(n.min(payload.len()));
    for _ in 0..n {
        fields.push(FieldLayout { offset: c.u32()?, width: c.u32()?, domain_size: c.u32()? });
    }
    c.finish("encoding section")?;
    let spec = EncodingSpec { mode, fields, dim };
    if spec != EncodingSpec::new(schema, mode) {
        return Err(corrupt("encoding section does not match the schema"));
    }
    Ok(spec)
}

fn read_vae(c: &mut Cursor<'_>, schema: &[AttributeSchema]) -> Result<VaeModel> {
    let spec = read_encoding(c.expect(Section::Encoding)?, schema)?;

    let mut w = Cursor::new(c.expect(Section::Weights)?);
    let dims = VaeDims { input: w.u32()?, hidden: w.u32()?, latent: w.u32()? };
    if dims.input != spec.dim {
        return Err(corrupt("weight dimensions do not match the encoding"));
    }
    let count = w.len()?;
    if count != crate::vae::parameter_count(dims) {
        return Err(corrupt(format!("weight array has {count} entries for dimensions {dims:?}")));
    }
    let theta = w.f64s(count)?;
    w.finish("weights section")?;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(corrupt("non-finite weight"));
    }
    let params = VaeParams::from_vec(dims, theta)?;

    let (mut section, mut payload) = c.section()?;
    let mut thresholds = None;
    if section == Section::Thresholds {
        let mut t = Cursor::new(payload);
        let global_t = t.f64()?;
        let target_accept = t.f64()?;
        let percentile = t.f64()?;
        let mc_draws = t.u32()?;
        let n = t.len()?;
        let per_tuple = t.f64s(n)?;
        let flagged = t.bits(n)?;
        t.finish("thresholds section")?;
        thresholds = Some(ThresholdState { per_tuple, flagged, global_t, target_accept, mc_draws, percentile });
        (section, payload) = c.section()?;
    }
    if section != Section::Reservoir {
        return Err(corrupt(format!("expected reservoir section, found {}", section.name())));
    }
    let mut r = Cursor::new(payload);
    let n = r.len()?;
    let dim = r.u32()?;
    if dim != spec.dim {
        return Err(corrupt("reservoir dimension does not match the encoding"));
    }
    let mut rows = Vec::with_capacity(n.min(payload.len()));
    for _ in 0..n {
        rows.push(r.bits(dim)?.into_iter().map(u8::from).collect::<Vec<u8>>());
    }
    r.finish("reservoir section")?;
    if let Some(t) = &thresholds {
        if t.per_tuple.len() != n {
            return Err(corrupt("threshold count does not match the reservoir"));
        }
    }
    let reservoir = SeedReservoir::from_rows(&params, rows)?;

    let mut m = Cursor::new(c.expect(Section::Meta)?);
    let population_n = m.u64()?;
    let certified = m.u8()? != 0;
    let t = m.f64()?;
    m.finish("meta section")?;
    Ok(VaeModel {
        schema: schema.to_vec(),
        spec,
        params,
        reservoir,
        thresholds,
        certified_t: certified.then_some(t),
        population_n,
    })
}

/// Parses and verifies a serialized model.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(corrupt("file too short"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("not a model file (bad magic)"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let mut c = Cursor::new(body);
    c.take(4)?;
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let kind = c.u8()?;
    let _sections = c.u16()?;
    let schema = read_schema(c.expect(Section::Schema)?)?;
    let model = match kind {
        0 => Model::Vae(read_vae(&mut c, &schema)?),
        2 => {
            let mut p = Cursor::new(c.expect(Section::Partition)?);
            let attribute = p.u32()?;
            if attribute >= schema.len() {
                return Err(corrupt("partition attribute out of range"));
            }
            let n = p.u32()?;
            let mut meta = Vec::new();
            for _ in 0..n {
                let k = p.u32()?;
                let values = (0..k).map(|_| Ok(p.u32()? as u32)).collect::<Result<Vec<u32>>>()?;
                meta.push((values, p.u64()?));
            }
            p.finish("partition section")?;
            if meta.is_empty() {
                return Err(corrupt("ensemble without parts"));
            }
            let mut parts = Vec::with_capacity(meta.len());
            for (values, rows) in meta {
                let mut inner = Cursor::new(c.expect(Section::Part)?);
                let model = read_vae(&mut inner, &schema)?;
                inner.finish("part section")?;
                parts.push(EnsemblePart { values, rows, model });
            }
            Model::Ensemble(EnsembleModel { attribute, parts })
        }
        1 => {
            let mut g = Cursor::new(c.expect(Section::BnGraph)?);
            let n = g.u32()?;
            if n != schema.len() {
                return Err(corrupt("network size does not match the schema"));
            }
            let mut parents = Vec::with_capacity(n);
            for _ in 0..n {
                let k = g.u32()?;
                parents.push((0..k).map(|_| g.u32()).collect::<Result<Vec<usize>>>()?);
            }
            g.finish("bn-graph section")?;
            let graph = BnGraph::from_parents(parents).map_err(|e| corrupt(e.to_string()))?;
            let mut cp = Cursor::new(c.expect(Section::BnCpts)?);
            let mut cpts = Vec::with_capacity(n);
            for v in 0..n {
                let ps = graph.parents(v).to_vec();
                if ps.iter().any(|&p| p >= schema.len()) {
                    return Err(corrupt("parent out of range"));
                }
                let parent_sizes: Vec<usize> = ps.iter().map(|&p| schema[p].domain_size()).collect();
                let configs: usize = parent_sizes.iter().product();
                let card = schema[v].domain_size();
                let rows = (0..configs).map(|_| cp.f64s(card)).collect::<Result<Vec<_>>>()?;
                cpts.push(Cpt { parents: ps, parent_sizes, cardinality: card, rows });
            }
            cp.finish("bn-cpts section")?;
            let mut m = Cursor::new(c.expect(Section::Meta)?);
            let population_n = m.u64()?;
            m.finish("meta section")?;
            let net = BayesNet::new(schema, graph, cpts).map_err(|e| corrupt(e.to_string()))?;
            Model::BayesNet(BnModel { net, population_n })
        }
        k => return Err(corrupt(format!("unknown model kind {k}"))),
    };
    c.finish("file")?;
    Ok(model)
}

/// Size in bytes of each part of the serialized model, in file order:
/// the header, every top-level section (overhead included), and the
/// checksum.
pub fn size_breakdown(bytes: &[u8]) -> Result<Vec<(&'static str, usize)>> {
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(corrupt("file too short"));
    }
    let mut out = vec![("header", HEADER_LEN)];
    let mut c = Cursor::new(&bytes[HEADER_LEN..bytes.len() - CHECKSUM_LEN]);
    while !c.done() {
        let (s, payload) = c.section()?;
        out.push((s.name(), SECTION_OVERHEAD + payload.len()));
    }
    out.push(("checksum", CHECKSUM_LEN));
    Ok(out)
}

/// Writes the model and returns the file size.
pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
