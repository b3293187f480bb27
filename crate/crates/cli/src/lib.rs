//! Command implementations behind the `fmuad` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fmuad::data::{
    generate_raw, load_checkpoint, load_labels, load_series_csv, save_checkpoint, write_labels, write_series_csv,
    Checkpoint, Scenario, SyntheticSpec,
};
use fmuad::eval::{evaluate_at, evaluate_pooled_at, select_threshold, select_threshold_pooled, EvalReport, ScoreSeries};
use fmuad::{score_series, train, DetectorSet, EpochStats, Fmuad, LossVariant, ModelConfig, NormStats, TrainConfig};

// Scoring and training allocate many short-lived buffers; the system
// allocator spends a large share of the run returning them to the kernel.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Every tunable of a training run. Keys accepted by [`RunConfig::set`]
/// match the command-line flag names.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub tau: usize,
    pub k: usize,
    pub stride: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub hidden_ch: usize,
    pub lstm_kernel: usize,
    pub channels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub leaky_slope: f64,
    pub detectors: DetectorSet,
    pub loss: LossVariant,
    pub seed: u64,
    /// Step between training instances; 0 means `k`.
    pub train_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::new(1);
        RunConfig {
            tau: model.tau,
            k: model.window,
            stride: model.stride,
            batch: 32,
            epochs: 10,
            lr: 1e-3,
            hidden_ch: model.hidden_channels,
            lstm_kernel: model.lstm_kernel,
            channels: model.dilated_channels,
            dilations: model.dilations,
            leaky_slope: model.leaky_slope,
            detectors: DetectorSet::ALL,
            loss: LossVariant::Full,
            seed: 0,
            train_stride: 0,
        }
    }
}

fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| fmuad::Error::Config {
            field: key.to_string(),
            message: format!("cannot parse `{value}`"),
        })
        .map_err(Into::into)
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|p| parse_field(key, p)).collect()
}

impl RunConfig {
    pub const KEYS: [&'static str; 15] = [
        "tau",
        "k",
        "stride",
        "batch",
        "epochs",
        "lr",
        "hidden_ch",
        "lstm_kernel",
        "channels",
        "dilations",
        "leaky_slope",
        "detectors",
        "loss",
        "seed",
        "train_stride",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "tau" => self.tau = parse_field(key, value)?,
            "k" => self.k = parse_field(key, value)?,
            "stride" => self.stride = parse_field(key, value)?,
            "batch" => self.batch = parse_field(key, value)?,
            "epochs" => self.epochs = parse_field(key, value)?,
            "lr" => self.lr = parse_field(key, value)?,
            "hidden_ch" => self.hidden_ch = parse_field(key, value)?,
            "lstm_kernel" => self.lstm_kernel = parse_field(key, value)?,
            "channels" => self.channels = parse_list(key, value)?,
            "dilations" => self.dilations = parse_list(key, value)?,
            "leaky_slope" => self.leaky_slope = parse_field(key, value)?,
            "detectors" => self.detectors = value.parse()?,
            "loss" => self.loss = value.parse()?,
            "seed" => self.seed = parse_field(key, value)?,
            "train_stride" => self.train_stride = parse_field(key, value)?,
            other => bail!(fmuad::Error::Config {
                field: other.to_string(),
                message: format!("unknown key; expected one of {}", Self::KEYS.join(", ")),
            }),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, path: &Path, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(fmuad::Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected key=value, got `{line}`"),
                });
            };
            self.set(key.trim(), value.trim()).map_err(|e| fmuad::Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config = RunConfig::default();
        config.apply_text(path, &text)?;
        Ok(config)
    }

    pub fn model_config(&self, features: usize) -> Result<ModelConfig> {
        let config = ModelConfig {
            features,
            tau: self.tau,
            window: self.k,
            stride: self.stride,
            hidden_channels: self.hidden_ch,
            lstm_kernel: self.lstm_kernel,
            dilated_channels: self.channels.clone(),
            dilations: self.dilations.clone(),
            leaky_slope: self.leaky_slope,
            detectors: self.detectors,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            loss: self.loss,
            seed: self.seed,
            stride: (self.train_stride > 0).then_some(self.train_stride),
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks every invariant that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.model_config(1)?;
        self.train_config()?;
        Ok(())
    }

    pub fn to_key_value(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        for (k, v) in [
            ("tau", self.tau.to_string()),
            ("k", self.k.to_string()),
            ("stride", self.stride.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("hidden_ch", self.hidden_ch.to_string()),
            ("lstm_kernel", self.lstm_kernel.to_string()),
            ("channels", join(&self.channels)),
            ("dilations", join(&self.dilations)),
            ("leaky_slope", self.leaky_slope.to_string()),
            ("detectors", self.detectors.to_string()),
            ("loss", self.loss.to_string()),
            ("seed", self.seed.to_string()),
            ("train_stride", self.train_stride.to_string()),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct SynthArgs {
    pub out_dir: PathBuf,
    pub scenario: Scenario,
    pub features: usize,
    pub train_len: usize,
    pub test_len: usize,
    pub seed: u64,
    /// Test steps kept free of anomalies at the start.
    pub warmup: usize,
}

pub struct SynthFiles {
    pub train: PathBuf,
    pub test: PathBuf,
    pub labels: PathBuf,
    pub spec: PathBuf,
}

/// Writes `train.csv`, `test.csv`, `labels.csv` and `spec.json` into
/// `out_dir`. The CSVs hold raw values; normalisation happens at training.
pub fn cmd_synth(args: &SynthArgs) -> Result<SynthFiles> {
    let spec = SyntheticSpec::scenario(
        args.features,
        args.train_len,
        args.test_len,
        args.seed,
        args.scenario,
        args.warmup,
    )?;
    write_synthetic(&args.out_dir, &spec)
}

pub fn write_synthetic(out_dir: &Path, spec: &SyntheticSpec) -> Result<SynthFiles> {
    let raw = generate_raw(spec)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let files = SynthFiles {
        train: out_dir.join("train.csv"),
        test: out_dir.join("test.csv"),
        labels: out_dir.join("labels.csv"),
        spec: out_dir.join("spec.json"),
    };
    write_series_csv(&files.train, &raw.train)?;
    write_series_csv(&files.test, &raw.test)?;
    write_labels(&files.labels, &raw.labels)?;
    let echo = serde_json::to_string_pretty(spec)?;
    fs::write(&files.spec, echo + "\n").with_context(|| format!("writing {}", files.spec.display()))?;
    Ok(files)
}

pub fn write_training_log(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut s = String::from("epoch,l1,l2,loss\n");
    for e in history {
        let _ = writeln!(s, "{},{},{},{}", e.epoch, e.l1, e.l2, e.loss);
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// Trains on a raw training CSV and saves a checkpoint. Returns the
/// per-epoch statistics; `progress` sees each as it completes.
pub fn cmd_train(
    config: &RunConfig,
    train_csv: &Path,
    checkpoint: &Path,
    log: Option<&Path>,
    progress: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    let raw = load_series_csv(train_csv)?;
    let model_config = config.model_config(raw.features())?;
    if raw.len() < model_config.tau {
        bail!(
            "{}: training series has {} rows, shorter than tau={}",
            train_csv.display(),
            raw.len(),
            model_config.tau
        );
    }
    let stats = NormStats::from_series(&raw)?;
    let series = stats.apply(&raw, None)?;
    let mut model = Fmuad::new(model_config, config.seed)?;
    let history = train(&mut model, &series, &config.train_config()?, progress)?;
    save_checkpoint(
        checkpoint,
        &Checkpoint {
            model,
            stats,
            seed: config.seed,
        },
    )?;
    if let Some(path) = log {
        write_training_log(path, &history)?;
    }
    Ok(history)
}

/// Scores every window of a raw test CSV (stride 1) and writes
/// `timestamp,score` rows.
pub fn cmd_score(checkpoint: &Path, test_csv: &Path, out: &Path) -> Result<ScoreSeries> {
    let ckpt = load_checkpoint(checkpoint)?;
    let raw = load_series_csv(test_csv)?;
    let m = ckpt.model.config().features;
    if raw.features() != m {
        bail!(
            "{} has {} columns but the model in {} was trained on m={m} features",
            test_csv.display(),
            raw.features(),
            checkpoint.display()
        );
    }
    let series = ckpt.stats.apply(&raw, Some(fmuad::data::TEST_CLAMP))?;
    let scores = score_series(&ckpt.model, &series)?;
    write_scores(out, &scores)?;
    Ok(scores)
}

pub fn write_scores(path: &Path, scores: &ScoreSeries) -> Result<()> {
    let mut s = String::with_capacity(scores.len() * 24 + 16);
    s.push_str("timestamp,score\n");
    for (t, v) in scores.timestamps().iter().zip(scores.scores()) {
        let _ = writeln!(s, "{t},{v}");
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn read_scores(path: &Path) -> Result<ScoreSeries> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "timestamp,score" => {}
        _ => bail!("{}:1: expected header `timestamp,score`", path.display()),
    }
    let (mut ts, mut scores) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(t, s)| Some((t.trim().parse::<usize>().ok()?, s.trim().parse::<f64>().ok()?)));
        let Some((t, s)) = parsed else {
            bail!("{}:{}: expected `timestamp,score`, got `{line}`", path.display(), i + 1);
        };
        ts.push(t);
        scores.push(s);
    }
    ScoreSeries::new(ts, scores).with_context(|| format!("invalid scores in {}", path.display()))
}

/// Per-entity reports plus, for several entities, a pooled report.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub entities: Vec<(String, EvalReport)>,
    pub pooled: Option<EvalReport>,
}

impl EvalOutcome {
    /// The single report when one entity was evaluated, the pooled one
    /// otherwise.
    pub fn headline(&self) -> &EvalReport {
        self.pooled.as_ref().unwrap_or(&self.entities[0].1)
    }

    pub fn to_key_value(&self) -> String {
        if self.entities.len() == 1 {
            return self.entities[0].1.to_key_value();
        }
        let mut s = String::new();
        for (name, report) in &self.entities {
            for line in report.to_key_value().lines() {
                let _ = writeln!(s, "{name}.{line}");
            }
        }
        if let Some(p) = &self.pooled {
            for line in p.to_key_value().lines() {
                let _ = writeln!(s, "pooled.{line}");
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        if self.entities.len() == 1 {
            return self.entities[0].1.to_json();
        }
        let entities: serde_json::Map<String, serde_json::Value> = self
            .entities
            .iter()
            .map(|(n, r)| (n.clone(), serde_json::to_value(r).expect("report serialises")))
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "entities": entities,
            "pooled": self.pooled,
        }))
        .expect("report serialises")
    }
}

/// Evaluates score files against full-length label files. With a fixed
/// `threshold` no search is done.
pub fn cmd_eval(pairs: &[(PathBuf, PathBuf)], threshold: Option<f64>) -> Result<EvalOutcome> {
    if pairs.is_empty() {
        bail!("eval needs at least one --scores/--labels pair");
    }
    let mut loaded = Vec::with_capacity(pairs.len());
    for (scores_path, labels_path) in pairs {
        let scores = read_scores(scores_path)?;
        let labels = load_labels(labels_path)?;
        let aligned = scores.aligned_labels(&labels).with_context(|| {
            format!(
                "scores {} do not align with labels {}",
                scores_path.display(),
                labels_path.display()
            )
        })?;
        let name = scores_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| scores_path.display().to_string());
        loaded.push((name, scores, aligned));
    }
    let pick = |s: &[f64], l: &[bool]| match threshold {
        Some(t) => evaluate_at(s, l, t),
        None => select_threshold(s, l),
    };
    let mut entities = Vec::with_capacity(loaded.len());
    for (name, scores, labels) in &loaded {
        entities.push((name.clone(), pick(scores.scores(), labels)?));
    }
    let pooled = if loaded.len() > 1 {
        let views: Vec<(&[f64], &[bool])> = loaded.iter().map(|(_, s, l)| (s.scores(), l.as_slice())).collect();
        Some(match threshold {
            Some(t) => evaluate_pooled_at(&views, t)?,
            None => select_threshold_pooled(&views)?,
        })
    } else {
        None
    };
    Ok(EvalOutcome { entities, pooled })
}
