use std::fmt;
use std::path::Path;
use std::process::Command;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{history_pieces_for_ratio, Corpus};
use crate::error::{Error, Result};
use crate::model::{fit, DataConfig, Dataset, EpochLog, Metrics, Model, ModelConfig, SimilarityReport, TrainConfig};

pub const FULL_LABEL: &str = "PJFCANN";
pub const NO_GNN_LABEL: &str = "PJFCANN (w/o GNN)";

/// Everything a run needs besides the corpus and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn reference() -> Self {
        Self {
            model: ModelConfig::reference(),
            train: TrainConfig::reference(),
            data: DataConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configs serialize")
    }

    pub fn apply(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::NoGnn => self.model.global_dim_ratio = Some(0.0),
        }
    }

    /// Sets the history share from a history/training size ratio in `[0, 1]`.
    pub fn set_history_ratio(&mut self, ratio: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Infeasible(format!("history ratio {ratio} outside [0, 1]")));
        }
        self.data.history_pieces = history_pieces_for_ratio(ratio);
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        if self.model.dims().global == 0 {
            NO_GNN_LABEL
        } else {
            FULL_LABEL
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Drops the history path (global dimension ratio 0).
    NoGnn,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ablation::NoGnn => f.write_str("no-gnn"),
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-gnn" => Ok(Ablation::NoGnn),
            other => Err(Error::Infeasible(format!(
                "unknown ablation `{other}` (expected no-gnn)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub history: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn of(data: &Dataset) -> Self {
        Self {
            history: data.split.history.len(),
            train: data.train.len(),
            valid: data.valid.len(),
            test: data.test.len(),
        }
    }
}

/// The record of one training run. Config, seed and corpus hash determine a
/// reproduction; only `wall_clock_seconds` and the per-epoch timings vary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub config: RunConfig,
    pub seed: u64,
    pub corpus_hash: String,
    pub git_describe: String,
    pub split: SplitSizes,
    pub similarity: SimilarityReport,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub test: Metrics,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    /// The report with every timing zeroed, for comparing reruns.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.wall_clock_seconds = 0.0;
        for e in &mut r.epochs {
            e.seconds = 0.0;
        }
        r
    }
}

pub struct TrainedRun {
    pub model: Model,
    pub data: Dataset,
    pub report: RunReport,
}

/// Split, train with validation-based retention, and score the test piece.
pub fn train_run(corpus: &Corpus, cfg: &RunConfig, seed: u64) -> Result<TrainedRun> {
    cfg.validate()?;
    let start = Instant::now();
    let data = Dataset::prepare(corpus, &cfg.data, &cfg.model, seed, None)?;
    let mut model = Model::for_dataset(cfg.model.clone(), &data, seed)?;
    let fitted = fit(&mut model, &data, &cfg.train, seed)?;
    let test = model.evaluate(&data, &data.test, cfg.train.threshold)?;
    let report = RunReport {
        label: cfg.label().to_string(),
        config: cfg.clone(),
        seed,
        corpus_hash: data.corpus_hash.clone(),
        git_describe: git_describe(),
        split: SplitSizes::of(&data),
        similarity: data.similarity.clone(),
        epochs: fitted.epochs,
        best_epoch: fitted.best_epoch,
        test,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(TrainedRun { model, data, report })
}

/// Scores a trained model on the test piece of `corpus` split with `seed`.
/// Entities the model has never seen fall back to its cold node row.
pub fn eval_run(model: &Model, corpus: &Corpus, data_cfg: &DataConfig, threshold: f64, seed: u64) -> Result<Metrics> {
    let data = Dataset::prepare(corpus, data_cfg, &model.config, seed, Some(model))?;
    model.evaluate(&data, &data.test, threshold)
}

/// `git describe --always --dirty` of the working directory, or `unknown`.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}
