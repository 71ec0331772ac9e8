use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn gaqp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaqp")).current_dir(dir).args(args).output().expect("spawn gaqp")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gaqp(dir, args);
    assert!(
        out.status.success(),
        "gaqp {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Synthetic CSV, schema file and ingested relation in a fresh directory.
fn setup(rows: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let rows = rows.to_string();
    ok(dir.path(), &["synth", "--rows", &rows, "--seed", "5", "--out", "data.csv", "--schema-out", "schema.txt"]);
    ok(dir.path(), &["ingest", "--csv", "data.csv", "--schema", "schema.txt", "--out", "rel.json"]);
    dir
}

fn train(dir: &Path, out: &str) {
    ok(dir, &["train", "--relation", "rel.json", "--epochs", "3", "--reservoir", "256", "--seed", "2", "--out", out]);
    ok(dir, &["thresholds", "--model", out, "--mc-draws", "32", "--seed", "2"]);
}

#[test]
fn run_all_matches_the_stage_commands() {
    let dir = setup(3000);
    let d = dir.path();
    let train = ["--epochs", "4", "--reservoir", "256"];
    let thresholds = ["--mc-draws", "32"];
    let certify = ["--test-size", "64"];
    let workload = ["--count", "15"];
    let evaluate = ["--sample-frac", "0.05", "--repetitions", "2"];
    let seed = ["--seed", "9"];

    let mut args = vec!["run-all", "--csv", "data.csv", "--schema", "schema.txt", "--workdir", "auto"];
    for part in [&train[..], &thresholds, &certify, &workload, &evaluate, &seed] {
        args.extend_from_slice(part);
    }
    ok(d, &args);

    std::fs::create_dir(d.join("manual")).unwrap();
    let m = d.join("manual");
    let stage = |head: &[&str], rest: &[&[&str]]| {
        let mut a = head.to_vec();
        for r in rest {
            a.extend_from_slice(r);
        }
        a.extend_from_slice(&seed);
        ok(&m, &a);
    };
    ok(&m, &["ingest", "--csv", "../data.csv", "--schema", "../schema.txt", "--out", "relation.json"]);
    stage(&["train", "--relation", "relation.json", "--out", "model.gaqp"], &[&train]);
    stage(&["thresholds", "--model", "model.gaqp"], &[&thresholds]);
    stage(&["certify", "--model", "model.gaqp", "--relation", "relation.json"], &[&certify]);
    stage(&["workload", "--relation", "relation.json", "--out", "workload.sql"], &[&workload]);
    stage(
        &["evaluate", "--relation", "relation.json", "--model", "model.gaqp", "--workload", "workload.sql", "--out", "report.csv"],
        &[&evaluate],
    );

    for file in ["relation.json", "model.gaqp", "workload.sql", "report.csv"] {
        let a = std::fs::read(d.join("auto").join(file)).unwrap();
        let b = std::fs::read(m.join(file)).unwrap();
        assert!(a == b, "{file} differs between run-all and the stage commands");
    }
    let report = std::fs::read_to_string(m.join("report.csv")).unwrap();
    assert!(report.starts_with("query_id,truth,estimate_dataset,estimate_model,relerr_dataset,relerr_model,red"));
    assert_eq!(report.lines().count(), 16);
}

#[test]
fn commands_are_deterministic_given_a_seed() {
    let dir = setup(2000);
    let d = dir.path();
    train(d, "a.gaqp");
    train(d, "b.gaqp");
    assert_eq!(std::fs::read(d.join("a.gaqp")).unwrap(), std::fs::read(d.join("b.gaqp")).unwrap());

    let sample = |out: &str, seed: &str| {
        ok(d, &["sample", "--model", "a.gaqp", "--count", "300", "--T", "auto", "--agg", "weighted", "--seed", seed, "--out", out]);
        std::fs::read_to_string(d.join(out)).unwrap()
    };
    let (x, y, z) = (sample("x.csv", "4"), sample("y.csv", "4"), sample("z.csv", "5"));
    assert_eq!(x, y);
    assert_ne!(x, z);
    assert_eq!(x.lines().count(), 301);
    assert_eq!(x.lines().next().unwrap(), "region,hour,distance,fare,passengers,payment");

    ok(d, &["bn-train", "--relation", "rel.json", "--max-parents", "2", "--out", "bn.gaqp"]);
    ok(d, &["bn-sample", "--model", "bn.gaqp", "--count", "200", "--seed", "1", "--out", "p.csv"]);
    ok(d, &["bn-sample", "--model", "bn.gaqp", "--count", "200", "--seed", "1", "--out", "q.csv"]);
    assert_eq!(std::fs::read(d.join("p.csv")).unwrap(), std::fs::read(d.join("q.csv")).unwrap());
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = setup(2000);
    let d = dir.path();
    train(d, "m.gaqp");

    // usage
    assert_eq!(code(&gaqp(d, &["train", "--relation", "rel.json"])), 2);
    assert_eq!(code(&gaqp(d, &["sample", "--model", "m.gaqp", "--count", "5", "--T", "warm", "--out", "s.csv"])), 2);
    let bad_sql = gaqp(d, &["query", "--model", "m.gaqp", "SELECT fare FROM"]);
    assert_eq!(code(&bad_sql), 2);
    assert_eq!(code(&gaqp(d, &["query", "--model", "m.gaqp", "SELECT AVG(nope) FROM trips"])), 2);

    // data
    assert_eq!(code(&gaqp(d, &["sample", "--model", "missing.gaqp", "--count", "5", "--out", "s.csv"])), 3);
    std::fs::write(d.join("broken.csv"), "region,hour,distance,fare,passengers,payment\nx,1,abc,2,1,cash\n").unwrap();
    assert_eq!(code(&gaqp(d, &["ingest", "--csv", "broken.csv", "--schema", "schema.txt", "--out", "b.json"])), 3);
    let mut bytes = std::fs::read(d.join("m.gaqp")).unwrap();
    bytes[20] ^= 1;
    std::fs::write(d.join("corrupt.gaqp"), bytes).unwrap();
    assert_eq!(code(&gaqp(d, &["sample", "--model", "corrupt.gaqp", "--count", "5", "--out", "s.csv"])), 3);

    // certification: at alpha = 1 only a p-value of exactly 1 passes
    let before = std::fs::read(d.join("m.gaqp")).unwrap();
    let out = gaqp(
        d,
        &["certify", "--model", "m.gaqp", "--relation", "rel.json", "--alpha", "1", "--initial-t", "100", "--test-size", "32"],
    );
    assert_eq!(code(&out), 4);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.starts_with("iteration")).count(), 50);
    assert_eq!(std::fs::read(d.join("m.gaqp")).unwrap(), before);
}

#[test]
fn certify_records_the_threshold() {
    let dir = setup(2000);
    let d = dir.path();
    train(d, "m.gaqp");
    let out = ok(d, &["certify", "--model", "m.gaqp", "--relation", "rel.json", "--alpha", "0", "--initial-t", "20.5"]);
    assert!(out.contains("iteration 1: T = 20.5000"), "{out}");
    assert!(out.contains("certified T = 20.5000"), "{out}");
}

#[test]
fn query_answers_from_models_and_samples() {
    let dir = setup(2000);
    let d = dir.path();
    train(d, "m.gaqp");
    let out = ok(d, &["query", "--model", "m.gaqp", "--sample-size", "500", "SELECT payment, COUNT(*) FROM trips GROUP BY payment"]);
    assert!(out.contains("payment=card"), "{out}");
    assert!(out.contains("wall time"), "{out}");

    // the full data as its own sample reproduces exact counts
    let out = ok(d, &["query", "--sample", "data.csv", "--population-n", "2000", "SELECT COUNT(*) FROM trips WHERE payment = 'cash'"]);
    let want = std::fs::read_to_string(d.join("data.csv")).unwrap().lines().filter(|l| l.ends_with(",cash")).count();
    let row = out.lines().find(|l| l.starts_with("(all)")).unwrap();
    let got: f64 = row.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert_eq!(got, want as f64);

    let missing_n = gaqp(d, &["query", "--sample", "data.csv", "SELECT COUNT(*) FROM trips"]);
    assert_eq!(code(&missing_n), 2);
}

#[test]
fn repl_answers_each_line() {
    let dir = setup(1000);
    let d = dir.path();
    train(d, "m.gaqp");
    let mut child = Command::new(env!("CARGO_BIN_EXE_gaqp"))
        .current_dir(d)
        .args(["query", "--model", "m.gaqp", "--repl"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"SELECT SUM(passengers) FROM trips\n\nSELECT nonsense\nSELECT region, AVG(fare) FROM trips GROUP BY region;\nquit\nSELECT COUNT(*) FROM trips\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("wall time").count(), 2, "{text}");
    assert_eq!(text.matches("error:").count(), 1, "{text}");
}

#[test]
fn partition_prints_objectives_and_trains_the_ensemble() {
    let dir = setup(1500);
    let d = dir.path();
    std::fs::write(
        d.join("h.txt"),
        "all\n  busy\n    region=downtown\n    region=uptown\n    region=harbor\n  quiet\n    region=airport\n    region=east\n    region=west\n    region=north\n    region=south\n",
    )
    .unwrap();
    let common = ["--relation", "rel.json", "--T", "12", "--epochs", "2", "--reservoir", "64", "--seed", "3"];
    let mut args = vec!["partition", "--hierarchy", "h.txt", "--k", "2", "--out", "ens.gaqp"];
    args.extend_from_slice(&common);
    let out = ok(d, &args);
    let objectives: Vec<f64> = out
        .lines()
        .skip_while(|l| !l.starts_with("K\t"))
        .skip(1)
        .take(2)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(objectives.len(), 2);
    assert!(objectives[1] <= objectives[0]);
    assert!(out.contains("wrote ens.gaqp (ensemble model"), "{out}");
    ok(d, &["sample", "--model", "ens.gaqp", "--count", "100", "--out", "e.csv"]);
    assert_eq!(std::fs::read_to_string(d.join("e.csv")).unwrap().lines().count(), 101);

    let mut args = vec!["partition", "--contiguous", "payment", "--k", "2", "--bound"];
    args.extend_from_slice(&common);
    let out = ok(d, &args);
    assert_eq!(out.lines().filter(|l| l.starts_with("  payment=")).count(), 2, "{out}");

    let bad: PathBuf = d.join("bad.txt");
    std::fs::write(&bad, "all\n  region=downtown\n  payment=cash\n").unwrap();
    let mut args = vec!["partition", "--hierarchy", "bad.txt", "--k", "2"];
    args.extend_from_slice(&common);
    assert_eq!(code(&gaqp(d, &args)), 2);
}

#[test]
fn bn_conditional_reports_a_distribution() {
    let dir = setup(3000);
    let d = dir.path();
    ok(d, &["bn-train", "--relation", "rel.json", "--out", "bn.gaqp", "--text", "bn.txt"]);
    assert!(std::fs::read_to_string(d.join("bn.txt")).unwrap().starts_with("bayesnet 1\n"));
    let out = ok(d, &["bn-conditional", "--model", "bn.gaqp", "--evidence", "payment=cash, region=downtown", "--target", "passengers", "--count", "20000"]);
    let total: f64 = out.lines().map(|l| l.rsplit(' ').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-6, "{out}");
    assert!(out.lines().all(|l| l.starts_with("P(passengers=")));
    let bad = gaqp(d, &["bn-conditional", "--model", "bn.gaqp", "--evidence", "payment=barter"]);
    assert_eq!(code(&bad), 2);
}
