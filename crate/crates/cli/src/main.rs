//! `s2v`: parse, pretrain, embed and evaluate code with a subtree-prediction
//! encoder.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! validation error, 3 numeric failure.

mod commands;
mod config;
mod corpus;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn context(self, what: &str) -> Self {
        CliError {
            message: format!("{what}: {}", self.message),
            ..self
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<s2v_core::Error> for CliError {
    fn from(e: s2v_core::Error) -> Self {
        let code = if e.is_numeric() {
            3
        } else if e.is_usage() {
            1
        } else {
            2
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "s2v", version, about = "Self-supervised code embeddings from AST subtree prediction")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// key = value configuration file (default: $S2V_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse MiniLang files into AST interchange documents.
    Parse {
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the label vocabulary of a corpus.
    Vocab {
        corpus: PathBuf,
        #[arg(long)]
        min_count: Option<u64>,
        #[arg(long)]
        label_mode: Option<String>,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain the encoder by subtree prediction and write a checkpoint.
    Pretrain {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        init_mode: Option<String>,
        #[arg(long)]
        label_mode: Option<String>,
        #[arg(long)]
        deterministic: bool,
    },
    /// Write code vectors of a corpus as an embedding TSV.
    Embed {
        corpus: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-means over embeddings; prints ARI when a labeled manifest is given.
    Cluster {
        embeddings: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Manifest whose label column is the true class.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Pairwise clone detection; prints P/R/F1 when a manifest of clone
    /// groups is given.
    Clone {
        embeddings: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        /// Manifest whose label column is the clone group.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Top-K code search; prints MRR when entries carry task ids.
    Search {
        embeddings: PathBuf,
        /// File with one query source_id per line (default: every entry).
        #[arg(long)]
        query: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Skip candidates of this language.
        #[arg(long)]
        exclude_lang: Option<String>,
    },
    /// Fine-tune a classifier on a labeled corpus and report accuracy.
    Finetune {
        corpus: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Save the classifier as a checkpoint plus `<stem>.classes.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Method-name prediction with sub-word precision, recall and F1.
    Name {
        corpus: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Perturbation explanation of one prediction of a saved classifier.
    Explain {
        file: PathBuf,
        /// Classifier written by `finetune --out`.
        #[arg(long)]
        ckpt: PathBuf,
        /// Class name or index.
        #[arg(long)]
        class: String,
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Write the text heat map here.
        #[arg(long)]
        heat: Option<PathBuf>,
    },
    /// Write the seeded synthetic corpus with its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
