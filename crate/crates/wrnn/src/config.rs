//! Experiment configuration: documented defaults, two presets, a flat
//! `key = value` config file, and key-by-key overrides. Precedence is
//! defaults < preset < config file < command-line flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::lstm::CandidateAct;
use crate::models::ModelKind;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full-scale settings matching the reference experiment.
    Paper,
    /// Desk-scale settings for quick runs on a small corpus.
    Small,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "small" => Ok(Preset::Small),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected paper or small)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Fraction of documents that must fit within the chosen sequence
    /// length.
    pub theta: f64,
    /// Fixed sequence length override; selected from the data when unset.
    pub seq_len: Option<usize>,
    pub min_count: usize,
    pub test_fraction: f64,
    pub embed_dim: usize,
    /// Load embeddings from this word2vec-text file instead of training
    /// them.
    pub embeddings_path: Option<PathBuf>,
    pub sg_window: usize,
    pub sg_negatives: usize,
    pub sg_epochs: usize,
    pub sg_lr: f64,
    pub model: ModelKind,
    pub lstm_hidden: usize,
    pub classifier_hidden: usize,
    pub candidate_act: CandidateAct,
    pub freeze_embeddings: bool,
    pub normalize_pool: bool,
    pub lr: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub deterministic: bool,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset_dir: None,
            out_dir: PathBuf::from("out"),
            theta: 0.85,
            seq_len: None,
            min_count: 5,
            test_fraction: 0.10,
            embed_dim: 200,
            embeddings_path: None,
            sg_window: 5,
            sg_negatives: 5,
            sg_epochs: 5,
            sg_lr: 0.025,
            model: ModelKind::Wrnn,
            lstm_hidden: 128,
            classifier_hidden: 128,
            candidate_act: CandidateAct::Tanh,
            freeze_embeddings: false,
            normalize_pool: false,
            lr: 0.01,
            minibatch: 128,
            epochs: 5,
            lambda: 0.01,
            clip_norm: 5.0,
            seed: 1,
            deterministic: false,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::Paper => {}
            Preset::Small => {
                self.seq_len = Some(150);
                self.embed_dim = 50;
                self.lstm_hidden = 64;
                self.classifier_hidden = 64;
                self.epochs = 5;
                // enough optimizer steps per epoch on a small corpus
                self.minibatch = 16;
                self.sg_epochs = 3;
                self.min_count = 2;
                // the full-scale decay rate overwhelms the task gradient
                // at desk scale: Adam's per-coordinate normalization lets
                // the decay term erase the weights before the (initially
                // weak) classification signal can grow
                self.lambda = 1e-4;
            }
        }
    }

    /// Apply one `key = value` pair (config-file line or flag override).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
        }
        match key {
            "dataset_dir" => self.dataset_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "theta" => self.theta = num(key, value)?,
            "seq_len" => self.seq_len = Some(num(key, value)?),
            "min_count" => self.min_count = num(key, value)?,
            "test_fraction" => self.test_fraction = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "embeddings_path" => self.embeddings_path = Some(PathBuf::from(value)),
            "sg_window" => self.sg_window = num(key, value)?,
            "sg_negatives" => self.sg_negatives = num(key, value)?,
            "sg_epochs" => self.sg_epochs = num(key, value)?,
            "sg_lr" => self.sg_lr = num(key, value)?,
            "model" => self.model = value.parse()?,
            "lstm_hidden" => self.lstm_hidden = num(key, value)?,
            "classifier_hidden" => self.classifier_hidden = num(key, value)?,
            "candidate_act" => {
                self.candidate_act = match value {
                    "tanh" => CandidateAct::Tanh,
                    "sigmoid" => CandidateAct::Sigmoid,
                    other => {
                        return Err(Error::Config(format!(
                            "bad value '{other}' for candidate_act (expected tanh or sigmoid)"
                        )))
                    }
                }
            }
            "freeze_embeddings" => self.freeze_embeddings = num(key, value)?,
            "normalize_pool" => self.normalize_pool = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "minibatch" => self.minibatch = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "deterministic" => self.deterministic = num(key, value)?,
            "threads" => self.threads = Some(num(key, value)?),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Apply a flat config file: one `key = value` per line, `#` starts
    /// a comment, blank lines ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{} line {}: expected 'key = value', got '{raw}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply(key.trim(), value.trim()).map_err(|e| {
                Error::Config(format!("{} line {}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!("theta must be in (0,1), got {}", self.theta)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must be in (0,1), got {}",
                self.test_fraction
            )));
        }
        if self.embed_dim < 2 {
            return Err(Error::Config(format!("embed_dim must be >= 2, got {}", self.embed_dim)));
        }
        if self.lstm_hidden == 0 || self.classifier_hidden == 0 {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        if self.minibatch == 0 {
            return Err(Error::Config("minibatch must be positive".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config(format!(
                "clip_norm must be >= 0, got {}",
                self.clip_norm
            )));
        }
        if self.lr <= 0.0 || self.sg_lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}
