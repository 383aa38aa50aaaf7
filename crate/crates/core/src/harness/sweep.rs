use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::run::{git_describe, train_run, RunConfig};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::graph::SimilarityKind;
use crate::model::Metrics;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// History size relative to the training set.
    PhRatio,
    /// Share of the global representation in the head input.
    GlobalDim,
    SimKind,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PhRatio => "ph-ratio",
            SweepAxis::GlobalDim => "global-dim",
            SweepAxis::SimKind => "sim-kind",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The values swept along each axis; an empty list leaves that axis at the
/// base configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub ph_ratios: Vec<f64>,
    pub global_dims: Vec<f64>,
    pub sims: Vec<SimilarityKind>,
}

impl SweepGrid {
    pub fn axes(&self) -> Vec<SweepAxis> {
        let mut axes = Vec::new();
        if !self.ph_ratios.is_empty() {
            axes.push(SweepAxis::PhRatio);
        }
        if !self.global_dims.is_empty() {
            axes.push(SweepAxis::GlobalDim);
        }
        if !self.sims.is_empty() {
            axes.push(SweepAxis::SimKind);
        }
        axes
    }

    /// Every combination, history ratio outermost.
    pub fn cells(&self) -> Vec<(Option<f64>, Option<f64>, Option<SimilarityKind>)> {
        fn or_none<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let mut cells = Vec::new();
        for y in or_none(&self.ph_ratios) {
            for x in or_none(&self.global_dims) {
                for s in or_none(&self.sims) {
                    cells.push((y, x, s));
                }
            }
        }
        cells
    }
}

/// Parses `axis=v1,v2,…`; `sim-kind=all` expands to every similarity kind.
impl FromStr for SweepGrid {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let mut grid = SweepGrid::default();
        grid.add(spec)?;
        Ok(grid)
    }
}

impl SweepGrid {
    pub fn add(&mut self, spec: &str) -> Result<()> {
        let bad = |m: String| Error::Infeasible(m);
        let (axis, values) = spec
            .split_once('=')
            .ok_or_else(|| bad(format!("sweep axis `{spec}` is not of the form axis=v1,v2")))?;
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(bad(format!("sweep axis `{axis}` has no values")));
        }
        let numbers = || {
            values
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("`{v}` is not a number"))))
                .collect::<Result<Vec<_>>>()
        };
        match axis.trim() {
            "ph-ratio" => self.ph_ratios.extend(numbers()?),
            "global-dim" => self.global_dims.extend(numbers()?),
            "sim-kind" if values == ["all"] => self.sims.extend(SimilarityKind::ALL),
            "sim-kind" => {
                for v in values {
                    self.sims.push(v.parse()?);
                }
            }
            other => {
                return Err(bad(format!(
                    "unknown sweep axis `{other}` (expected ph-ratio, global-dim or sim-kind)"
                )))
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellOutcome {
    Done {
        test: Metrics,
        best_epoch: Option<usize>,
        seconds: f64,
    },
    Failed {
        error: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub ph_ratio: Option<f64>,
    pub global_dim: Option<f64>,
    pub sim: Option<SimilarityKind>,
    pub outcome: CellOutcome,
}

impl SweepCell {
    pub fn accuracy(&self) -> Option<f64> {
        match &self.outcome {
            CellOutcome::Done { test, .. } => Some(test.accuracy),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axes: Vec<SweepAxis>,
    pub grid: SweepGrid,
    pub base: RunConfig,
    pub seed: u64,
    pub corpus_hash: String,
    pub git_describe: String,
    pub cells: Vec<SweepCell>,
    /// Index of the most accurate finished cell.
    pub best_cell: Option<usize>,
    /// Whether the best cell of a history-ratio × global-dim grid lies within
    /// 0.2 of (global 0.2, history 0.6) on both axes. Informational only.
    pub best_near_reference: Option<bool>,
}

impl SweepReport {
    pub fn failed(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| matches!(c.outcome, CellOutcome::Failed { .. }))
            .count()
    }
}

const REFERENCE_OPTIMUM: (f64, f64) = (0.2, 0.6);
const REFERENCE_RADIUS: f64 = 0.2;

/// One full training run per grid cell on a shared corpus and seed. A failing
/// cell is recorded and the sweep moves on. `progress` sees every finished cell.
pub fn run_sweep(
    corpus: &Corpus,
    base: &RunConfig,
    grid: &SweepGrid,
    seed: u64,
    mut progress: impl FnMut(&SweepCell),
) -> Result<SweepReport> {
    let specs = grid.cells();
    if grid.axes().is_empty() {
        return Err(Error::Empty("the sweep grid is empty"));
    }
    let mut cells = Vec::with_capacity(specs.len());
    for (ph_ratio, global_dim, sim) in specs {
        let start = Instant::now();
        let outcome = match run_cell(corpus, base, seed, ph_ratio, global_dim, sim) {
            Ok((test, best_epoch)) => CellOutcome::Done {
                test,
                best_epoch,
                seconds: start.elapsed().as_secs_f64(),
            },
            Err(e) => CellOutcome::Failed { error: e.to_string() },
        };
        let cell = SweepCell {
            ph_ratio,
            global_dim,
            sim,
            outcome,
        };
        progress(&cell);
        cells.push(cell);
    }
    let best_cell = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.accuracy().map(|a| (i, a)))
        .fold(None, |best: Option<(usize, f64)>, (i, a)| match best {
            Some((_, b)) if b >= a => best,
            _ => Some((i, a)),
        })
        .map(|(i, _)| i);
    let best_near_reference = best_cell.and_then(|i| {
        let c = &cells[i];
        let (x, y) = (c.global_dim?, c.ph_ratio?);
        Some((x - REFERENCE_OPTIMUM.0).abs() <= REFERENCE_RADIUS && (y - REFERENCE_OPTIMUM.1).abs() <= REFERENCE_RADIUS)
    });
    Ok(SweepReport {
        axes: grid.axes(),
        grid: grid.clone(),
        base: base.clone(),
        seed,
        corpus_hash: corpus.hash(),
        git_describe: git_describe(),
        cells,
        best_cell,
        best_near_reference,
    })
}

fn run_cell(
    corpus: &Corpus,
    base: &RunConfig,
    seed: u64,
    ph_ratio: Option<f64>,
    global_dim: Option<f64>,
    sim: Option<SimilarityKind>,
) -> Result<(Metrics, Option<usize>)> {
    let mut cfg = base.clone();
    if let Some(y) = ph_ratio {
        cfg.set_history_ratio(y)?;
    }
    if let Some(x) = global_dim {
        cfg.model.global_dim_ratio = Some(x);
    }
    if let Some(s) = sim {
        cfg.data.similarity = s;
    }
    let run = train_run(corpus, &cfg, seed)?;
    Ok((run.report.test, run.report.best_epoch))
}
