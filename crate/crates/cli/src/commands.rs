use std::fs::File;
use std::io::{BufRead, BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gaqp::aqp::{
    estimate_from_sample, evaluate_workload, generate_workload, parse_query, ErrorReport, EvaluationConfig, Stratum,
};
use gaqp::artifact;
use gaqp::bayesnet::{weighted_probability, BayesNet};
use gaqp::model::{derive_seed, BnModel, LatentSource, Model, VaeModel};
use gaqp::relation::{ingest_csv, ColumnKind, Relation, SchemaConfig};
use gaqp::sample_gen::DecodeConfig;
use gaqp::synth::{synthetic_schema_config, write_synthetic_csv};
use gaqp::vae::TrainConfig;

use crate::args::*;
use crate::usage;

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    artifact::save(model, path)?;
    let size = std::fs::metadata(path).with_context(|| path.display().to_string())?.len();
    println!("wrote {} ({} model, {size} bytes)", path.display(), model.kind());
    Ok(())
}

fn write_relation_csv(rel: &Relation, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| path.display().to_string())?;
    rel.write_csv(BufWriter::new(file))?;
    println!("wrote {} ({} rows)", path.display(), rel.len());
    Ok(())
}

fn vae(model: Model, path: &Path) -> Result<VaeModel> {
    match model {
        Model::Vae(m) => Ok(m),
        other => bail!("{}: expected a vae model, found {}", path.display(), other.kind()),
    }
}

fn decode_config(d: &DecodeOpts, seed: u64) -> DecodeConfig {
    DecodeConfig { draws_per_latent: d.draws_per_latent, aggregation: d.agg.into(), seed }
}

pub fn train_config(o: &TrainOpts, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: o.epochs,
        batch_size: o.batch_size,
        learning_rate: o.lr,
        seed,
        latent_fraction: o.latent_frac,
        hidden: o.hidden,
        ..Default::default()
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let file = File::create(&a.out).with_context(|| a.out.display().to_string())?;
    write_synthetic_csv(BufWriter::new(file), a.rows, a.seed)?;
    println!("wrote {} ({} rows)", a.out.display(), a.rows);
    if let Some(path) = &a.schema_out {
        std::fs::write(path, synthetic_schema_config()).with_context(|| path.display().to_string())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn ingest(a: IngestArgs) -> Result<()> {
    let config = SchemaConfig::load(&a.schema)?;
    let rel = ingest_csv(&a.csv, &config)?;
    rel.save(&a.out)?;
    let size = std::fs::metadata(&a.out)?.len();
    println!("wrote {} ({} rows, {} attributes, {size} bytes)", a.out.display(), rel.len(), rel.arity());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let rel = Relation::load(&a.relation)?;
    let cfg = train_config(&a.opts, a.seed);
    let (model, elbo) = VaeModel::train(&rel, a.opts.encoding.into(), &cfg, a.opts.reservoir)?;
    let dims = model.params.dims();
    println!(
        "trained d={} h={} z={} on {} rows; final training ELBO {:.4}",
        dims.input,
        dims.hidden,
        dims.latent,
        rel.len(),
        elbo.last().copied().unwrap_or(f64::NAN)
    );
    save_model(&Model::Vae(model), &a.out)
}

pub fn thresholds(a: ThresholdsArgs) -> Result<()> {
    let o = &a.opts;
    let mut model = artifact::load(&a.model)?;
    match &mut model {
        Model::Vae(m) => {
            m.fit_thresholds(o.target_accept, o.mc_draws, o.percentile, a.seed)?;
            report_thresholds("", m);
        }
        Model::Ensemble(e) => {
            for (i, part) in e.parts.iter_mut().enumerate() {
                part.model.fit_thresholds(o.target_accept, o.mc_draws, o.percentile, derive_seed(a.seed, i as u64))?;
                report_thresholds(&format!("part {i}: "), &part.model);
            }
        }
        Model::BayesNet(_) => bail!("{}: bayesian networks have no thresholds", a.model.display()),
    }
    save_model(&model, &a.model)
}

fn report_thresholds(prefix: &str, m: &VaeModel) {
    if let Some(s) = &m.thresholds {
        println!(
            "{prefix}global T = {:.4} (percentile {} of {} tuples, {} flagged)",
            s.global_t,
            s.percentile,
            s.per_tuple.len(),
            s.flagged_count()
        );
    }
}

pub fn certify(a: CertifyArgs) -> Result<()> {
    let mut model = vae(artifact::load(&a.model)?, &a.model)?;
    let rel = Relation::load(&a.relation)?;
    let initial = match a.opts.initial_t.get() {
        Some(t) => t,
        None if model.thresholds.is_some() => model.default_t(),
        None => return Err(usage("model has no fitted thresholds; run `thresholds` or pass --initial-t")),
    };
    let decode = decode_config(&a.decode, derive_seed(a.seed, 1));
    match model.certify(&rel, a.opts.test_size, a.opts.alpha, initial, &decode, a.seed) {
        Ok(cal) => {
            for (i, p) in cal.p_values.iter().enumerate() {
                println!("iteration {}: T = {:.4} p = {p:.4}", i + 1, initial - i as f64);
            }
            println!("certified T = {:.4}", cal.t);
            save_model(&Model::Vae(model), &a.model)
        }
        Err(e) => {
            if let gaqp::Error::CalibrationFailed { p_values, .. } = &e {
                for (i, p) in p_values.iter().enumerate() {
                    println!("iteration {}: T = {:.4} p = {p:.4}", i + 1, initial - i as f64);
                }
            }
            Err(e.into())
        }
    }
}

pub fn sample(a: SampleArgs) -> Result<()> {
    let model = artifact::load(&a.model)?;
    let source = if a.prior { LatentSource::Prior } else { LatentSource::Posterior };
    let g = model.generate(a.count, a.t.get(), source, &decode_config(&a.decode, a.seed))?;
    if g.budget_exceeded {
        eprintln!("warning: trial budget exhausted; {} of {} rows generated", g.relation.len(), a.count);
    }
    println!(
        "acceptance {:.4} ({} trials), invalid decodes {:.4}",
        g.relation.len() as f64 / g.trials.max(1) as f64,
        g.trials,
        g.decode.invalid_rate()
    );
    write_relation_csv(&g.relation, &a.out)
}

fn all_categorical(csv_path: &Path) -> Result<SchemaConfig> {
    let mut rdr = csv::Reader::from_path(csv_path).with_context(|| csv_path.display().to_string())?;
    let columns = rdr.headers()?.iter().map(|h| (h.trim().to_string(), ColumnKind::Categorical)).collect();
    Ok(SchemaConfig { columns })
}

fn answer(sample: &Relation, population: usize, text: &str) -> Result<()> {
    let start = Instant::now();
    let q = parse_query(text)?.bind(sample.schema())?;
    let est = estimate_from_sample(sample, &q, population)?;
    let elapsed = start.elapsed();
    let schema = sample.schema();
    println!("{:<32} {:>14} {:>32} {:>8}", "group", "estimate", "95% CI", "support");
    for (key, g) in &est.groups {
        let label = if key.is_empty() {
            "(all)".to_string()
        } else {
            q.group_by.iter().zip(key).map(|(&a, &v)| format!("{}={}", schema[a].name, schema[a].label(v))).collect::<Vec<_>>().join(",")
        };
        let ci = format!("[{:.4}, {:.4}]", g.estimate - g.half_width, g.estimate + g.half_width);
        println!("{label:<32} {:>14.4} {ci:>32} {:>8}", g.estimate, g.support);
    }
    if est.groups.is_empty() {
        println!("(no sample rows satisfy the filter)");
    }
    println!("wall time {:.3} ms over {} sample rows", elapsed.as_secs_f64() * 1e3, est.sample_size);
    Ok(())
}

pub fn query(a: QueryArgs) -> Result<()> {
    let (sample, population) = if let Some(path) = &a.model {
        let model = artifact::load(path)?;
        let g = model.generate(a.sample_size, a.t.get(), LatentSource::Posterior, &decode_config(&a.decode, a.seed))?;
        (g.relation, a.population_n.unwrap_or(model.population_n()))
    } else {
        let path = a.sample.as_ref().expect("clap enforces a source");
        let config = match &a.schema {
            Some(s) => SchemaConfig::load(s)?,
            None => all_categorical(path)?,
        };
        let population = a.population_n.ok_or_else(|| usage("--population-n is required with --sample"))?;
        (ingest_csv(path, &config)?, population)
    };
    let population = usize::try_from(population)?;
    if !a.repl {
        return answer(&sample, population, a.sql.as_deref().unwrap_or_default());
    }
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    let mut out = std::io::stdout();
    loop {
        if interactive {
            print!("gaqp> ");
            out.flush()?;
        }
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim().trim_end_matches(';');
        match line {
            "" => continue,
            "quit" | "exit" | "\\q" => break,
            _ => {
                if let Err(e) = answer(&sample, population, line) {
                    println!("error: {e:#}");
                }
            }
        }
    }
    Ok(())
}

fn parse_strata(specs: &[String]) -> Result<Vec<Stratum>> {
    specs
        .iter()
        .map(|s| {
            let (lo, hi) = s.split_once(':').ok_or_else(|| usage(format!("stratum `{s}` is not min:max")))?;
            let (lo, hi): (f64, f64) = (
                lo.trim().parse().map_err(|_| usage(format!("bad stratum bound `{lo}`")))?,
                hi.trim().parse().map_err(|_| usage(format!("bad stratum bound `{hi}`")))?,
            );
            if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
                return Err(usage(format!("stratum `{s}` must satisfy 0 ≤ min ≤ max ≤ 1")));
            }
            Ok(Stratum::new(lo, hi))
        })
        .collect()
}

pub fn workload(a: WorkloadArgs) -> Result<()> {
    let rel = Relation::load(&a.relation)?;
    let strata = parse_strata(&a.opts.strata)?;
    let w = generate_workload(&rel, &a.opts.table, a.opts.count, &strata, a.seed)?;
    for &s in &w.underfilled {
        eprintln!("warning: stratum {}:{} under-filled", strata[s].min, strata[s].max);
    }
    let mut out = BufWriter::new(File::create(&a.out).with_context(|| a.out.display().to_string())?);
    for q in &w.queries {
        writeln!(out, "{}", q.text)?;
    }
    out.flush()?;
    println!("wrote {} ({} queries)", a.out.display(), w.queries.len());
    Ok(())
}

fn read_workload(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let rel = Relation::load(&a.relation)?;
    let model = artifact::load(&a.model)?;
    if model.schema() != rel.schema() {
        bail!("model and relation schemas differ");
    }
    let queries = read_workload(&a.workload)?;
    let cfg = EvaluationConfig { sample_fraction: a.opts.sample_frac, repetitions: a.opts.repetitions, seed: a.seed };
    let report = evaluate_workload(&rel, &queries, &cfg, |rep, size| {
        let decode = decode_config(&a.decode, derive_seed(a.seed, 500 + rep as u64));
        Ok(model.generate(size, a.opts.t.get(), LatentSource::Posterior, &decode)?.relation)
    })?;
    summarize(&report);
    let file = File::create(&a.out).with_context(|| a.out.display().to_string())?;
    report.write_csv(BufWriter::new(file))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn summarize(r: &ErrorReport) {
    println!(
        "{} queries scored ({} excluded), sample size {}, {} repetitions",
        r.queries.len(),
        r.excluded.len(),
        r.sample_size,
        r.repetitions
    );
    println!(
        "median RED {:.4}; mean relative error dataset {:.4} model {:.4}; missing groups dataset {:.4} model {:.4}",
        r.median_red(),
        r.mean_relerr_dataset(),
        r.mean_relerr_model(),
        r.missing_group_rate_dataset(),
        r.missing_group_rate_model()
    );
}

pub fn bn_train(a: BnTrainArgs) -> Result<()> {
    let rel = Relation::load(&a.relation)?;
    let net = BayesNet::<f64>::fit(&rel, a.max_parents, a.alpha)?;
    let names: Vec<&str> = rel.schema().iter().map(|s| s.name.as_str()).collect();
    for (from, to) in net.graph().edges() {
        println!("{} -> {}", names[from], names[to]);
    }
    if let Some(path) = &a.text {
        std::fs::write(path, net.to_text()?).with_context(|| path.display().to_string())?;
    }
    save_model(&Model::BayesNet(BnModel { net, population_n: rel.len() as u64 }), &a.out)
}

fn bn(model: Model, path: &Path) -> Result<BnModel> {
    match model {
        Model::BayesNet(m) => Ok(m),
        other => bail!("{}: expected a bn model, found {}", path.display(), other.kind()),
    }
}

pub fn bn_sample(a: BnSampleArgs) -> Result<()> {
    let m = bn(artifact::load(&a.model)?, &a.model)?;
    let rel = m.net.ancestral_sample(a.count, a.seed)?;
    write_relation_csv(&rel, &a.out)
}

pub fn bn_conditional(a: BnConditionalArgs) -> Result<()> {
    let m = bn(artifact::load(&a.model)?, &a.model)?;
    let schema = m.net.schema();
    let attr = |name: &str| {
        schema.iter().position(|s| s.name == name).ok_or_else(|| usage(format!("unknown attribute `{name}`")))
    };
    let mut evidence = Vec::new();
    for pair in a.evidence.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, label) = pair.split_once('=').ok_or_else(|| usage(format!("evidence `{pair}` is not A=v")))?;
        let i = attr(name.trim())?;
        let v = schema[i]
            .index_of_label(label.trim())
            .ok_or_else(|| usage(format!("`{}` is not a value of `{}`", label.trim(), name.trim())))?;
        evidence.push((i, v));
    }
    let targets: Vec<usize> = match &a.target {
        Some(name) => vec![attr(name)?],
        None => (0..schema.len()).filter(|i| evidence.iter().all(|e| e.0 != *i)).collect(),
    };
    let samples = m.net.likelihood_weighted_sample(&evidence, a.count, a.seed)?;
    for t in targets {
        for v in 0..schema[t].domain_size() as u32 {
            println!("P({}={}) = {:.6}", schema[t].name, schema[t].label(v), weighted_probability(&samples, t, v));
        }
    }
    Ok(())
}

/// Stage files written by `run-all` inside its work directory.
pub struct Stages {
    pub relation: PathBuf,
    pub model: PathBuf,
    pub workload: PathBuf,
    pub report: PathBuf,
}

impl Stages {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            relation: dir.join("relation.json"),
            model: dir.join("model.gaqp"),
            workload: dir.join("workload.sql"),
            report: dir.join("report.csv"),
        }
    }
}

pub fn run_all(a: RunAllArgs) -> Result<()> {
    std::fs::create_dir_all(&a.workdir).with_context(|| a.workdir.display().to_string())?;
    let s = Stages::in_dir(&a.workdir);
    let seed = a.seed;
    ingest(IngestArgs { csv: a.csv, schema: a.schema, out: s.relation.clone() })?;
    train(TrainArgs { relation: s.relation.clone(), opts: a.train, seed, out: s.model.clone() })?;
    thresholds(ThresholdsArgs { model: s.model.clone(), opts: a.thresholds, seed })?;
    if !a.no_certify {
        certify(CertifyArgs {
            model: s.model.clone(),
            relation: s.relation.clone(),
            opts: a.certify,
            decode: a.decode.clone(),
            seed,
        })?;
    }
    let workload_path = match a.workload {
        Some(path) => path,
        None => {
            workload(WorkloadArgs {
                relation: s.relation.clone(),
                opts: a.workload_opts,
                seed,
                out: s.workload.clone(),
            })?;
            s.workload.clone()
        }
    };
    evaluate(EvaluateArgs {
        relation: s.relation,
        model: s.model,
        workload: workload_path,
        opts: a.evaluate,
        decode: a.decode,
        seed,
        out: s.report,
    })
}
