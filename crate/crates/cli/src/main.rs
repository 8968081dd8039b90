//! `gazeref` command-line tool.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AblateArgs, EvalArgs, GazemapArgs, ScoreArgs, SynthArgs, TrainArgs, ValidateArgs};

#[derive(Parser, Debug)]
#[command(
    name = "gazeref",
    version,
    about = "Object referring in video clips with language, depth, motion and gaze"
)]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model on the training split of a manifest.
    Train(TrainArgs),
    /// Rank a scene's candidates for an expression.
    Score(ScoreArgs),
    /// Evaluate a checkpoint on the evaluation split.
    Eval(EvalArgs),
    /// Compare modality sets over several seeds.
    Ablate(AblateArgs),
    /// Render a gaze trace as a heatmap overlay.
    Gazemap(GazemapArgs),
    /// Check every scene of a manifest, including expression QC.
    Validate(ValidateArgs),
}

/// Failure classes with their exit codes and stderr prefixes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn report(&self) {
        match self {
            CliError::Usage(m) => eprintln!("error[usage]: {m}"),
            CliError::Data(m) => eprintln!("error[data]: {m}"),
            CliError::Numeric(m) => eprintln!("error[numeric]: {m}"),
        }
    }
}

impl From<gazeref::Error> for CliError {
    fn from(e: gazeref::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("error[usage]: {}", msg.trim_start_matches("error: ").trim_end());
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.jobs {
        if n == 0 {
            CliError::Usage("--jobs must be at least 1".into()).report();
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            CliError::Usage(format!("cannot set up {n} threads: {e}")).report();
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Score(a) => commands::score(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Gazemap(a) => commands::gazemap(a),
        Command::Validate(a) => commands::validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(e.code())
        }
    }
}
