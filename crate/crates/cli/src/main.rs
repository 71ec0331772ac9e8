mod args;
mod commands;
mod partition;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Error raised by the command layer itself for a bad flag combination.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<gaqp::Error>() {
        Some(gaqp::Error::CalibrationFailed { .. }) => 4,
        Some(
            gaqp::Error::Syntax { .. }
            | gaqp::Error::UnknownAttribute(_)
            | gaqp::Error::NonNumericMeasure(_)
            | gaqp::Error::InvalidArgument(_),
        ) => 2,
        _ => 3,
    }
}

/// The error and its causes, skipping causes already spelled out above.
fn describe(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a),
        Command::Thresholds(a) => commands::thresholds(a),
        Command::Certify(a) => commands::certify(a),
        Command::Sample(a) => commands::sample(a),
        Command::Query(a) => commands::query(a),
        Command::Workload(a) => commands::workload(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Partition(a) => partition::run(a),
        Command::BnTrain(a) => commands::bn_train(a),
        Command::BnSample(a) => commands::bn_sample(a),
        Command::BnConditional(a) => commands::bn_conditional(a),
        Command::RunAll(a) => commands::run_all(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
