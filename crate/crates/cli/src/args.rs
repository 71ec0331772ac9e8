use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gaqp::relation::EncodingMode;
use gaqp::sample_gen::Aggregation;
use gaqp::vrs::T_INFINITE;

#[derive(Parser, Debug)]
#[command(name = "gaqp", version, about = "Approximate query processing with generative models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the built-in synthetic trips data as CSV plus its schema file.
    Synth(SynthArgs),
    /// Read a CSV under a schema file and store the discretized relation.
    Ingest(IngestArgs),
    /// Train a VAE on a stored relation.
    Train(TrainArgs),
    /// Fit per-tuple rejection thresholds and rewrite the model file.
    Thresholds(ThresholdsArgs),
    /// Lower T until generated samples pass the cross-match test.
    Certify(CertifyArgs),
    /// Generate rows from a model.
    Sample(SampleArgs),
    /// Answer an aggregate query from a model or a stored sample.
    Query(QueryArgs),
    /// Generate a random query workload over a relation.
    Workload(WorkloadArgs),
    /// Compare model samples with dataset samples on a workload.
    Evaluate(EvaluateArgs),
    /// Choose an ensemble partition of a relation.
    Partition(PartitionArgs),
    /// Learn a Bayesian network.
    BnTrain(BnTrainArgs),
    /// Draw rows from a Bayesian network.
    BnSample(BnSampleArgs),
    /// Conditional distribution of an attribute given evidence.
    BnConditional(BnConditionalArgs),
    /// ingest, train, thresholds, certify, workload and evaluate in one go.
    RunAll(RunAllArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EncodingArg {
    Binary,
    Onehot,
}

impl From<EncodingArg> for EncodingMode {
    fn from(e: EncodingArg) -> Self {
        match e {
            EncodingArg::Binary => EncodingMode::Binary,
            EncodingArg::Onehot => EncodingMode::OneHot,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AggArg {
    Mode,
    Weighted,
}

impl From<AggArg> for Aggregation {
    fn from(a: AggArg) -> Self {
        match a {
            AggArg::Mode => Aggregation::Mode,
            AggArg::Weighted => Aggregation::Weighted,
        }
    }
}

/// `auto` (model default), `inf`, or a number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    Auto,
    Value(f64),
}

impl Threshold {
    pub fn get(self) -> Option<f64> {
        match self {
            Threshold::Auto => None,
            Threshold::Value(t) => Some(t),
        }
    }
}

pub fn parse_threshold(s: &str) -> Result<Threshold, String> {
    match s.to_ascii_lowercase().as_str() {
        "auto" => Ok(Threshold::Auto),
        "inf" | "infinity" => Ok(Threshold::Value(T_INFINITE)),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .map(Threshold::Value)
            .ok_or_else(|| format!("expected auto, inf or a number, got `{s}`")),
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = gaqp::synth::DEFAULT_ROWS)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the matching schema file.
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct TrainOpts {
    #[arg(long, value_enum, default_value = "binary")]
    pub encoding: EncodingArg,
    #[arg(long, default_value_t = 0.5)]
    pub latent_frac: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Hidden width; the input dimension if omitted.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Seed reservoir size.
    #[arg(long, default_value_t = gaqp::vrs::DEFAULT_RESERVOIR_SIZE)]
    pub reservoir: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub relation: PathBuf,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ThresholdOpts {
    #[arg(long, default_value_t = gaqp::vrs::DEFAULT_TARGET_ACCEPT)]
    pub target_accept: f64,
    #[arg(long, default_value_t = gaqp::vrs::DEFAULT_PERCENTILE)]
    pub percentile: f64,
    /// Monte Carlo draws per reservoir tuple.
    #[arg(long, default_value_t = gaqp::vrs::DEFAULT_MC_DRAWS)]
    pub mc_draws: usize,
}

#[derive(Args, Debug)]
pub struct ThresholdsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub opts: ThresholdOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct DecodeOpts {
    #[arg(long, default_value_t = gaqp::sample_gen::DEFAULT_DRAWS_PER_LATENT)]
    pub draws_per_latent: usize,
    #[arg(long, value_enum, default_value = "mode")]
    pub agg: AggArg,
}

#[derive(Args, Debug, Clone)]
pub struct CertifyOpts {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 128)]
    pub test_size: usize,
    /// Starting threshold; the model's fitted global threshold by default.
    #[arg(long, value_parser = parse_threshold, default_value = "auto", allow_hyphen_values = true)]
    pub initial_t: Threshold,
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub relation: PathBuf,
    #[command(flatten)]
    pub opts: CertifyOpts,
    #[command(flatten)]
    pub decode: DecodeOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long = "T", value_parser = parse_threshold, default_value = "auto", allow_hyphen_values = true)]
    pub t: Threshold,
    /// Draw latents from the prior instead of reservoir posteriors.
    #[arg(long)]
    pub prior: bool,
    #[command(flatten)]
    pub decode: DecodeOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["model", "sample"])))]
pub struct QueryArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// A CSV sample, e.g. written by `sample`.
    #[arg(long)]
    pub sample: Option<PathBuf>,
    /// Schema file for `--sample`; every column is categorical otherwise.
    #[arg(long, requires = "sample")]
    pub schema: Option<PathBuf>,
    /// Population size; defaults to the model's training size.
    #[arg(long)]
    pub population_n: Option<u64>,
    /// Rows generated from the model.
    #[arg(long, default_value_t = 1000)]
    pub sample_size: usize,
    #[arg(long = "T", value_parser = parse_threshold, default_value = "auto", allow_hyphen_values = true)]
    pub t: Threshold,
    #[command(flatten)]
    pub decode: DecodeOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Read queries from standard input, one per line.
    #[arg(long)]
    pub repl: bool,
    #[arg(required_unless_present = "repl", conflicts_with = "repl")]
    pub sql: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct WorkloadOpts {
    #[arg(long, default_value_t = 300)]
    pub count: usize,
    /// Selectivity strata as `min:max` pairs.
    #[arg(long, value_delimiter = ',', default_value = "0.005:0.05,0.05:0.2,0.2:1")]
    pub strata: Vec<String>,
    #[arg(long, default_value = "trips")]
    pub table: String,
}

#[derive(Args, Debug)]
pub struct WorkloadArgs {
    #[arg(long)]
    pub relation: PathBuf,
    #[command(flatten)]
    pub opts: WorkloadOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateOpts {
    #[arg(long, default_value_t = gaqp::aqp::DEFAULT_SAMPLE_FRACTION)]
    pub sample_frac: f64,
    #[arg(long, default_value_t = gaqp::aqp::DEFAULT_REPETITIONS)]
    pub repetitions: usize,
    #[arg(long = "T", value_parser = parse_threshold, default_value = "auto", allow_hyphen_values = true)]
    pub t: Threshold,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub relation: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub workload: PathBuf,
    #[command(flatten)]
    pub opts: EvaluateOpts,
    #[command(flatten)]
    pub decode: DecodeOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("layout").required(true).args(["hierarchy", "contiguous"])))]
pub struct PartitionArgs {
    #[arg(long)]
    pub relation: PathBuf,
    /// Indented hierarchy whose leaves are `attribute=value`.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Split the ordered values of this attribute into contiguous runs.
    #[arg(long)]
    pub contiguous: Option<String>,
    #[arg(long)]
    pub k: usize,
    #[arg(long = "T", default_value_t = 0.0, allow_hyphen_values = true)]
    pub t: f64,
    /// Score only atomic groups and estimate unions by the sum of their
    /// members instead of training a model per candidate part.
    #[arg(long)]
    pub bound: bool,
    /// Draws per tuple for the resampled ELBO.
    #[arg(long, default_value_t = gaqp::ensemble::MIN_R_ELBO_DRAWS)]
    pub draws: usize,
    #[command(flatten)]
    pub train: TrainOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train the chosen ensemble and save it here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BnTrainArgs {
    #[arg(long)]
    pub relation: PathBuf,
    #[arg(long, default_value_t = gaqp::bayesnet::DEFAULT_MAX_PARENTS)]
    pub max_parents: usize,
    /// Laplace pseudo-count.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the network in text form.
    #[arg(long)]
    pub text: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BnSampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BnConditionalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated `attribute=value` pairs.
    #[arg(long, default_value = "")]
    pub evidence: String,
    /// Attribute to report; every non-evidence attribute if omitted.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct RunAllArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Directory for the relation, model, workload and report files.
    #[arg(long)]
    pub workdir: PathBuf,
    /// Use this workload instead of generating one.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOpts,
    #[command(flatten)]
    pub thresholds: ThresholdOpts,
    #[command(flatten)]
    pub certify: CertifyOpts,
    /// Skip the certification stage.
    #[arg(long)]
    pub no_certify: bool,
    #[command(flatten)]
    pub workload_opts: WorkloadOpts,
    #[command(flatten)]
    pub evaluate: EvaluateOpts,
    #[command(flatten)]
    pub decode: DecodeOpts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
