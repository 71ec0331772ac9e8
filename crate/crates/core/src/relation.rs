//! Tabular data model.
//!
//! A [`Relation`] stores every attribute value as an index into that
//! attribute's discrete domain: categorical columns index a dictionary built
//! in first-appearance order, numeric columns index equal-frequency bins.
//! The generative models only ever see these indices, encoded as bit vectors
//! by [`encode_dataset`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value domain of one attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// Distinct labels, zero-indexed by first appearance.
    Categorical { dictionary: Vec<String> },
    /// Bin `i` covers `(edges[i-1], edges[i]]`, open at both outer ends.
    /// `midpoints[i]` is the value used for the bin in predicates and
    /// aggregates.
    Numeric { edges: Vec<f64>, midpoints: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub name: String,
    pub domain: Domain,
}

impl AttributeSchema {
    pub fn categorical(name: impl Into<String>, dictionary: Vec<String>) -> Self {
        Self { name: name.into(), domain: Domain::Categorical { dictionary } }
    }

    pub fn numeric(name: impl Into<String>, edges: Vec<f64>, midpoints: Vec<f64>) -> Self {
        Self { name: name.into(), domain: Domain::Numeric { edges, midpoints } }
    }

    /// `|Dom(A)|`, never less than one.
    pub fn domain_size(&self) -> usize {
        match &self.domain {
            Domain::Categorical { dictionary } => dictionary.len().max(1),
            Domain::Numeric { edges, .. } => edges.len() + 1,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.domain, Domain::Numeric { .. })
    }

    /// Numeric value of a domain index: the bin midpoint for numeric
    /// attributes, the parsed label for categorical ones.
    pub fn numeric_value(&self, index: u32) -> Option<f64> {
        match &self.domain {
            Domain::Numeric { midpoints, .. } => midpoints.get(index as usize).copied(),
            Domain::Categorical { dictionary } => {
                dictionary.get(index as usize).and_then(|l| l.trim().parse::<f64>().ok())
            }
        }
    }

    /// Text form of a domain index, as written to CSV exports.
    pub fn label(&self, index: u32) -> String {
        match &self.domain {
            Domain::Categorical { dictionary } => {
                dictionary.get(index as usize).cloned().unwrap_or_default()
            }
            Domain::Numeric { midpoints, .. } => midpoints
                .get(index as usize)
                .map(|v| format_number(*v))
                .unwrap_or_default(),
        }
    }

    pub fn index_of_label(&self, label: &str) -> Option<u32> {
        match &self.domain {
            Domain::Categorical { dictionary } => {
                dictionary.iter().position(|l| l == label).map(|p| p as u32)
            }
            Domain::Numeric { edges, .. } => {
                label.trim().parse::<f64>().ok().map(|v| bin_index(edges, v))
            }
        }
    }
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Index of the bin containing `v`.
pub fn bin_index(edges: &[f64], v: f64) -> u32 {
    edges.partition_point(|e| *e < v) as u32
}

/// An immutable table of domain indices, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    schema: Vec<AttributeSchema>,
    values: Vec<u32>,
}

impl Relation {
    /// Builds a relation, checking that every row has one in-domain value
    /// per attribute.
    pub fn new(schema: Vec<AttributeSchema>, rows: Vec<Vec<u32>>) -> Result<Self> {
        let m = schema.len();
        let mut values = Vec::with_capacity(rows.len() * m);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension { expected: m, actual: row.len() });
            }
            for (attr, &v) in schema.iter().zip(&row) {
                if v as usize >= attr.domain_size() {
                    return Err(Error::Encoding { attribute: attr.name.clone(), row: r, value: v });
                }
            }
            values.extend(row);
        }
        Ok(Self { schema, values })
    }

    /// Builds a relation from flat row-major values without validation.
    pub(crate) fn from_flat(schema: Vec<AttributeSchema>, values: Vec<u32>) -> Self {
        debug_assert!(schema.is_empty() || values.len().is_multiple_of(schema.len()));
        Self { schema, values }
    }

    pub fn schema(&self) -> &[AttributeSchema] {
        &self.schema
    }

    pub fn arity(&self) -> usize {
        self.schema.len()
    }

    pub fn len(&self) -> usize {
        if self.schema.is_empty() {
            0
        } else {
            self.values.len() / self.schema.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let m = self.schema.len();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        let m = self.schema.len().max(1);
        self.values.chunks_exact(m)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|a| a.name == name)
    }

    /// New relation with the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Relation {
        let mut values = Vec::with_capacity(indices.len() * self.arity());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self { schema: self.schema.clone(), values }
    }

    /// Stores the relation as JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    /// Reads a relation written by [`Relation::save`] and re-checks every
    /// row against the schema.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let raw: Relation = serde_json::from_reader(std::io::BufReader::new(file))?;
        let m = raw.schema.len();
        if m == 0 || !raw.values.len().is_multiple_of(m) {
            return Err(Error::Schema(format!("{}: malformed relation file", path.display())));
        }
        let rows = raw.values.chunks_exact(m).map(<[u32]>::to_vec).collect();
        Relation::new(raw.schema, rows)
    }

    /// Writes the relation as CSV with a header row, using attribute labels.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.schema.iter().map(|a| a.name.as_str()))?;
        for row in self.rows() {
            w.write_record(self.schema.iter().zip(row).map(|(a, &v)| a.label(v)))?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

/// How one retained input column is modelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Categorical,
    Numeric { bins: usize },
}

/// Column name → kind, in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SchemaConfig {
    pub columns: Vec<(String, ColumnKind)>,
}

impl SchemaConfig {
    /// Parses `name=categorical` / `name=numeric:<bins>` lines. Blank lines
    /// and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut columns = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, kind) = line.split_once('=').ok_or_else(|| {
                Error::Schema(format!("line {}: expected name=kind", lineno + 1))
            })?;
            let kind = kind.trim();
            let kind = if kind.eq_ignore_ascii_case("categorical") {
                ColumnKind::Categorical
            } else if let Some(bins) = kind.strip_prefix("numeric:") {
                let bins: usize = bins.trim().parse().map_err(|_| {
                    Error::Schema(format!("line {}: bad bin count `{bins}`", lineno + 1))
                })?;
                if bins == 0 {
                    return Err(Error::Schema(format!("line {}: bin count must be ≥ 1", lineno + 1)));
                }
                ColumnKind::Numeric { bins }
            } else {
                return Err(Error::Schema(format!("line {}: unknown kind `{kind}`", lineno + 1)));
            };
            columns.push((name.trim().to_string(), kind));
        }
        Ok(Self { columns })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn kind_of(&self, name: &str) -> Option<ColumnKind> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, k)| *k)
    }
}

/// Result of [`bin_numeric`].
#[derive(Clone, Debug, PartialEq)]
pub struct Binning {
    pub edges: Vec<f64>,
    /// Set when fewer than the requested number of bins could be formed.
    pub reduced: bool,
}

impl Binning {
    pub fn bins(&self) -> usize {
        self.edges.len() + 1
    }
}

/// Linear-interpolation quantile of already sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-frequency binning: edges at the `i/k` quantiles, `i = 1..k-1`.
///
/// Edges that would leave a bin empty (duplicate quantiles, or an edge at the
/// maximum) are dropped, so every returned bin holds at least one value.
pub fn bin_numeric(values: &[f64], k: usize) -> Result<Binning> {
    if k == 0 {
        return Err(Error::InvalidArgument("bin count must be at least 1".into()));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot bin an empty column".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("numeric column"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut edges: Vec<f64> = Vec::with_capacity(k.saturating_sub(1));
    let mut prev_end = 0usize; // sorted[..prev_end] already binned
    for i in 1..k {
        let e = quantile_sorted(&sorted, i as f64 / k as f64);
        let end = sorted.partition_point(|v| *v <= e);
        if end > prev_end && end < sorted.len() {
            edges.push(e);
            prev_end = end;
        }
    }
    let reduced = edges.len() + 1 < k;
    Ok(Binning { edges, reduced })
}

/// Midpoint of the observed range inside each bin.
fn bin_midpoints(values: &[f64], edges: &[f64]) -> Vec<f64> {
    let bins = edges.len() + 1;
    let mut lo = vec![f64::INFINITY; bins];
    let mut hi = vec![f64::NEG_INFINITY; bins];
    for &v in values {
        let b = bin_index(edges, v) as usize;
        lo[b] = lo[b].min(v);
        hi[b] = hi[b].max(v);
    }
    lo.iter()
        .zip(&hi)
        .map(|(&l, &h)| if l.is_finite() { l + (h - l) / 2.0 } else { 0.0 })
        .collect()
}

/// Raw column values collected before discretization.
#[derive(Clone, Debug)]
pub enum RawColumn {
    Categorical(Vec<String>),
    Numeric(Vec<f64>),
}

impl RawColumn {
    fn len(&self) -> usize {
        match self {
            RawColumn::Categorical(v) => v.len(),
            RawColumn::Numeric(v) => v.len(),
        }
    }
}

/// Discretizes raw columns into a relation. `bins` gives the bin count for
/// each numeric column (ignored for categorical ones).
pub fn relation_from_columns(columns: Vec<(String, RawColumn, usize)>) -> Result<Relation> {
    let n = columns.first().map(|c| c.1.len()).unwrap_or(0);
    if columns.iter().any(|c| c.1.len() != n) {
        return Err(Error::Schema("columns have different lengths".into()));
    }
    let m = columns.len();
    let mut values = vec![0u32; n * m];
    let mut schema = Vec::with_capacity(m);
    for (j, (name, raw, bins)) in columns.into_iter().enumerate() {
        match raw {
            RawColumn::Categorical(labels) => {
                let mut dictionary: Vec<String> = Vec::new();
                let mut index: HashMap<String, u32> = HashMap::new();
                for (i, label) in labels.into_iter().enumerate() {
                    let next = dictionary.len() as u32;
                    let id = *index.entry(label.clone()).or_insert_with(|| {
                        dictionary.push(label);
                        next
                    });
                    values[i * m + j] = id;
                }
                schema.push(AttributeSchema::categorical(name, dictionary));
            }
            RawColumn::Numeric(xs) => {
                let edges = if xs.is_empty() { Vec::new() } else { bin_numeric(&xs, bins)?.edges };
                for (i, &x) in xs.iter().enumerate() {
                    values[i * m + j] = bin_index(&edges, x);
                }
                let midpoints = bin_midpoints(&xs, &edges);
                schema.push(AttributeSchema::numeric(name, edges, midpoints));
            }
        }
    }
    Ok(Relation::from_flat(schema, values))
}

/// Reads a CSV file (header row required) and discretizes the columns named
/// in `config`. Columns absent from `config` are dropped.
pub fn ingest_csv(path: impl AsRef<Path>, config: &SchemaConfig) -> Result<Relation> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, config)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, config: &SchemaConfig) -> Result<Relation> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let empty_file = header.is_empty() || (header.len() == 1 && header[0].is_empty());

    // (config position, csv column)
    let mut picks = Vec::with_capacity(config.columns.len());
    for (name, kind) in &config.columns {
        match header.iter().position(|h| h == name) {
            Some(col) => picks.push((name.clone(), *kind, col)),
            None if empty_file => picks.push((name.clone(), *kind, usize::MAX)),
            None => return Err(Error::Schema(format!("column `{name}` not found in CSV header"))),
        }
    }

    let mut raw: Vec<RawColumn> = picks
        .iter()
        .map(|(_, kind, _)| match kind {
            ColumnKind::Categorical => RawColumn::Categorical(Vec::new()),
            ColumnKind::Numeric { .. } => RawColumn::Numeric(Vec::new()),
        })
        .collect();

    if !empty_file {
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            for ((name, _, col), sink) in picks.iter().zip(raw.iter_mut()) {
                let cell = record.get(*col).unwrap_or("").trim();
                match sink {
                    RawColumn::Categorical(v) => v.push(cell.to_string()),
                    RawColumn::Numeric(v) => {
                        let x: f64 = cell.parse().map_err(|_| Error::Row {
                            line,
                            message: format!("column `{name}`: `{cell}` is not a number"),
                        })?;
                        if !x.is_finite() {
                            return Err(Error::Row {
                                line,
                                message: format!("column `{name}`: non-finite value"),
                            });
                        }
                        v.push(x);
                    }
                }
            }
        }
    }

    let columns = picks
        .into_iter()
        .zip(raw)
        .map(|((name, kind, _), col)| {
            let bins = match kind {
                ColumnKind::Numeric { bins } => bins,
                ColumnKind::Categorical => 1,
            };
            (name, col, bins)
        })
        .collect();
    relation_from_columns(columns)
}

/// Bit-vector layout of tuples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncodingMode {
    OneHot,
    Binary,
}

impl fmt::Display for EncodingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncodingMode::OneHot => "onehot",
            EncodingMode::Binary => "binary",
        })
    }
}

impl std::str::FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "onehot" => Ok(EncodingMode::OneHot),
            "binary" => Ok(EncodingMode::Binary),
            _ => Err(Error::InvalidArgument(format!("unknown encoding `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldLayout {
    pub offset: usize,
    pub width: usize,
    pub domain_size: usize,
}

/// Per-attribute slices of the encoded vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub mode: EncodingMode,
    pub fields: Vec<FieldLayout>,
    pub dim: usize,
}

/// Bits needed for a binary code over `domain_size` values (at least one).
pub fn binary_width(domain_size: usize) -> usize {
    let mut w = 0;
    while (1usize << w) < domain_size {
        w += 1;
    }
    w.max(1)
}

/// Interpretation of one attribute slice of a bit vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceCode {
    Valid(u32),
    /// Binary code at or above the domain size; holds the raw code.
    Overflow(u32),
    /// One-hot slice without exactly one set bit; holds the lowest set
    /// position (0 when all bits are clear).
    Ambiguous(u32),
}

impl EncodingSpec {
    pub fn new(schema: &[AttributeSchema], mode: EncodingMode) -> Self {
        let mut offset = 0;
        let fields = schema
            .iter()
            .map(|a| {
                let domain_size = a.domain_size();
                let width = match mode {
                    EncodingMode::OneHot => domain_size,
                    EncodingMode::Binary => binary_width(domain_size),
                };
                let f = FieldLayout { offset, width, domain_size };
                offset += width;
                f
            })
            .collect();
        Self { mode, fields, dim: offset }
    }

    /// Writes the code of `tuple` into `out` (length `dim`).
    pub fn encode_into(&self, tuple: &[u32], out: &mut [u8]) {
        out.fill(0);
        for (f, &v) in self.fields.iter().zip(tuple) {
            let slice = &mut out[f.offset..f.offset + f.width];
            match self.mode {
                EncodingMode::OneHot => slice[v as usize] = 1,
                EncodingMode::Binary => {
                    for (b, bit) in slice.iter_mut().enumerate() {
                        *bit = ((v >> (f.width - 1 - b)) & 1) as u8;
                    }
                }
            }
        }
    }

    pub fn encode(&self, tuple: &[u32]) -> Vec<u8> {
        let mut out = vec![0; self.dim];
        self.encode_into(tuple, &mut out);
        out
    }

    /// Reads attribute `attr` from a bit vector without clamping.
    pub fn slice_code(&self, attr: usize, bits: &[u8]) -> SliceCode {
        let f = &self.fields[attr];
        let slice = &bits[f.offset..f.offset + f.width];
        match self.mode {
            EncodingMode::OneHot => {
                let ones = slice.iter().filter(|&&b| b != 0).count();
                let first = slice.iter().position(|&b| b != 0).unwrap_or(0) as u32;
                if ones == 1 {
                    SliceCode::Valid(first)
                } else {
                    SliceCode::Ambiguous(first)
                }
            }
            EncodingMode::Binary => {
                let code = slice.iter().fold(0u32, |acc, &b| (acc << 1) | (b != 0) as u32);
                if (code as usize) < f.domain_size {
                    SliceCode::Valid(code)
                } else {
                    SliceCode::Overflow(code)
                }
            }
        }
    }

    /// Maps a slice code onto a domain index.
    pub fn resolve(&self, attr: usize, code: SliceCode) -> u32 {
        match code {
            SliceCode::Valid(v) | SliceCode::Ambiguous(v) => v,
            SliceCode::Overflow(_) => (self.fields[attr].domain_size - 1) as u32,
        }
    }
}

/// A relation encoded as `n × d` bits.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    bits: Vec<u8>,
    spec: EncodingSpec,
}

impl EncodedDataset {
    pub fn from_rows(spec: EncodingSpec, rows: &[Vec<u8>]) -> Result<Self> {
        let mut bits = Vec::with_capacity(rows.len() * spec.dim);
        for r in rows {
            if r.len() != spec.dim {
                return Err(Error::Dimension { expected: spec.dim, actual: r.len() });
            }
            bits.extend(r.iter().map(|&b| (b != 0) as u8));
        }
        Ok(Self { bits, spec })
    }

    pub fn spec(&self) -> &EncodingSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn len(&self) -> usize {
        self.bits.len().checked_div(self.spec.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let d = self.spec.dim;
        &self.bits[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        self.bits.chunks_exact(self.spec.dim.max(1))
    }

    pub fn select(&self, indices: &[usize]) -> EncodedDataset {
        let mut bits = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            bits.extend_from_slice(self.row(i));
        }
        Self { bits, spec: self.spec.clone() }
    }
}

/// Encodes every row of `relation`.
pub fn encode_dataset(relation: &Relation, mode: EncodingMode) -> Result<EncodedDataset> {
    let spec = EncodingSpec::new(relation.schema(), mode);
    let mut bits = vec![0u8; relation.len() * spec.dim];
    for (i, row) in relation.rows().enumerate() {
        for (attr, (&v, f)) in row.iter().zip(&spec.fields).enumerate() {
            if v as usize >= f.domain_size {
                return Err(Error::Encoding {
                    attribute: relation.schema()[attr].name.clone(),
                    row: i,
                    value: v,
                });
            }
        }
        spec.encode_into(row, &mut bits[i * spec.dim..(i + 1) * spec.dim]);
    }
    Ok(EncodedDataset { bits, spec })
}

/// Tuple recovered from a bit vector, with counts of repaired slices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DecodedTuple {
    pub values: Vec<u32>,
    /// Binary slices whose code was at or above the domain size.
    pub clamped: usize,
    /// One-hot slices with zero or several set bits.
    pub ambiguous: usize,
}

/// Inverse of the encoding; total on every bit vector of length `dim`.
pub fn decode_vector(bits: &[u8], spec: &EncodingSpec) -> Result<DecodedTuple> {
    if bits.len() != spec.dim {
        return Err(Error::Dimension { expected: spec.dim, actual: bits.len() });
    }
    let mut out = DecodedTuple { values: Vec::with_capacity(spec.fields.len()), ..Default::default() };
    for attr in 0..spec.fields.len() {
        let code = spec.slice_code(attr, bits);
        match code {
            SliceCode::Overflow(_) => out.clamped += 1,
            SliceCode::Ambiguous(_) => out.ambiguous += 1,
            SliceCode::Valid(_) => {}
        }
        out.values.push(spec.resolve(attr, code));
    }
    Ok(out)
}
