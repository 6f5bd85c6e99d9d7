//! Flat `key = value` run configuration. Later sources override earlier
//! ones: defaults, then the config file, then command-line flags.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use s2v_core::downstream::{FinetuneConfig, FinetuneInit};
use s2v_core::trainer::TrainConfig;

use crate::CliError;

pub const CONFIG_ENV: &str = "S2V_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub k: usize,
    pub max_iters: usize,
    pub threshold: f64,
    pub fraction: f64,
    pub finetune_init: FinetuneInit,
    pub test_fraction: f64,
    pub finetune_epochs: usize,
    pub finetune_batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ft = FinetuneConfig::default();
        RunConfig {
            train: TrainConfig::default(),
            corpus: None,
            vocab: None,
            checkpoint: None,
            index: None,
            report_dir: None,
            k: 3,
            max_iters: 100,
            threshold: s2v_core::downstream::DEFAULT_CLONE_THRESHOLD,
            fraction: ft.fraction,
            finetune_init: ft.init,
            test_fraction: ft.test_fraction,
            finetune_epochs: ft.train.epochs,
            finetune_batch_size: ft.train.batch_size,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::usage(format!("config key {key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::usage(format!("config key {key}: expected a boolean, got {value:?}"))),
    }
}

impl RunConfig {
    /// Assigns one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        match key {
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "epsilon" => t.epsilon = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "dim" => t.dim = parse(key, value)?,
            "num_conv_layers" => t.num_conv_layers = parse(key, value)?,
            "init_mode" => t.init_mode = parse(key, value)?,
            "label_mode" => t.label_mode = parse(key, value)?,
            "aggregate_mode" => t.aggregate_mode = parse(key, value)?,
            "min_count" => t.min_count = parse(key, value)?,
            "deterministic" => t.deterministic = parse_bool(key, value)?,
            "corpus" => self.corpus = Some(value.into()),
            "vocab" => self.vocab = Some(value.into()),
            "checkpoint" => self.checkpoint = Some(value.into()),
            "index" => self.index = Some(value.into()),
            "report_dir" => self.report_dir = Some(value.into()),
            "k" => self.k = parse(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "fraction" => self.fraction = parse(key, value)?,
            "finetune_init" => self.finetune_init = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, value)?,
            "finetune_batch_size" => self.finetune_batch_size = parse(key, value)?,
            _ => return Err(CliError::usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("{origin}:{}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::usage(format!("{origin}:{}: {}", n + 1, e.message)))?;
        }
        Ok(())
    }

    /// Defaults overlaid with `path`, or with the file named by
    /// `S2V_CONFIG` when no path is given.
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        let path = path.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        if let Some(p) = path {
            let text = fs::read_to_string(&p)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        Ok(cfg)
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<(), CliError> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--set expects key=value, got {pair:?}")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            fraction: self.fraction,
            init: self.finetune_init,
            test_fraction: self.test_fraction,
            train: TrainConfig {
                epochs: self.finetune_epochs,
                batch_size: self.finetune_batch_size,
                ..self.train.clone()
            },
        }
    }
}
