use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fmuad::data::Scenario;
use fmuad_cli::{cmd_eval, cmd_score, cmd_synth, cmd_train, RunConfig, SynthArgs};

#[derive(Parser)]
#[command(name = "fmuad", version, about = "Forecast-based multivariate time-series anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset.
    Synth(SynthCmd),
    /// Train a model on a CSV series and save a checkpoint.
    Train(TrainCmd),
    /// Score every window of a CSV series with a trained checkpoint.
    Score(ScoreCmd),
    /// Select the best-F1 threshold and report point-adjusted metrics.
    Eval(EvalCmd),
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long)]
    out: PathBuf,
    /// mixed, correlation, frequency, value or none.
    #[arg(long, default_value = "mixed")]
    scenario: String,
    #[arg(long, default_value_t = 5)]
    m: usize,
    #[arg(long, default_value_t = 20_000)]
    train_len: usize,
    #[arg(long, default_value_t = 5_000)]
    test_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Anomaly-free steps at the start of the test split.
    #[arg(long, default_value_t = 500)]
    warmup: usize,
}

/// Flags mirroring the `key=value` config file; flags win.
#[derive(Args)]
struct RunFlags {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    stride: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    hidden_ch: Option<String>,
    #[arg(long)]
    lstm_kernel: Option<String>,
    /// Comma-separated dilated channel sizes.
    #[arg(long)]
    channels: Option<String>,
    /// Comma-separated dilation rates.
    #[arg(long)]
    dilations: Option<String>,
    #[arg(long)]
    leaky_slope: Option<String>,
    /// Comma-separated subset of correlation,temporal,spatial.
    #[arg(long)]
    detectors: Option<String>,
    /// full or l1.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Step between training instances (default: k).
    #[arg(long)]
    train_stride: Option<String>,
}

impl RunFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("tau", &self.tau),
            ("k", &self.k),
            ("stride", &self.stride),
            ("batch", &self.batch),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("hidden_ch", &self.hidden_ch),
            ("lstm_kernel", &self.lstm_kernel),
            ("channels", &self.channels),
            ("dilations", &self.dilations),
            ("leaky_slope", &self.leaky_slope),
            ("detectors", &self.detectors),
            ("loss", &self.loss),
            ("seed", &self.seed),
            ("train_stride", &self.train_stride),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct TrainCmd {
    /// Training series CSV (rows are time steps).
    #[arg(long)]
    train: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct ScoreCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalCmd {
    /// Score CSV; repeat together with --labels for several entities.
    #[arg(long, required = true)]
    scores: Vec<PathBuf>,
    #[arg(long, required = true)]
    labels: Vec<PathBuf>,
    /// Evaluate at this threshold instead of searching.
    #[arg(long)]
    threshold: Option<f64>,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let scenario: Scenario = a.scenario.parse()?;
            let files = cmd_synth(&SynthArgs {
                out_dir: a.out,
                scenario,
                features: a.m,
                train_len: a.train_len,
                test_len: a.test_len,
                seed: a.seed,
                warmup: a.warmup,
            })?;
            for p in [files.train, files.test, files.labels, files.spec] {
                println!("wrote {}", p.display());
            }
        }
        Command::Train(a) => {
            let config = a.run.resolve()?;
            cmd_train(&config, &a.train, &a.out, a.log.as_deref(), |e| {
                eprintln!("epoch {:>3}  l1={:.6}  l2={:.6}  loss={:.6e}", e.epoch, e.l1, e.l2, e.loss);
            })?;
            println!("wrote {}", a.out.display());
        }
        Command::Score(a) => {
            let scores = cmd_score(&a.model, &a.input, &a.out)?;
            println!("wrote {} scores to {}", scores.len(), a.out.display());
        }
        Command::Eval(a) => {
            if a.scores.len() != a.labels.len() {
                bail!("got {} --scores but {} --labels", a.scores.len(), a.labels.len());
            }
            let pairs: Vec<_> = a.scores.into_iter().zip(a.labels).collect();
            let outcome = cmd_eval(&pairs, a.threshold)?;
            print!("{}", outcome.to_key_value());
            if let Some(path) = a.json {
                std::fs::write(&path, outcome.to_json() + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
