use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::run::RunReport;
use super::sweep::{CellOutcome, SweepReport};
use crate::error::{Error, Result};

/// Paths of one emitted report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportPaths {
    pub json: PathBuf,
    pub csv: PathBuf,
}

/// Creates `dir/{stem}-{millis}[-k].json` and its `.csv` sibling, never
/// touching an existing file.
pub fn write_report<T: Serialize>(dir: &Path, stem: &str, report: &T, table: &[u8]) -> Result<ReportPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let millis = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let json = serde_json::to_vec_pretty(report)?;
    for k in 0.. {
        let base = match k {
            0 => format!("{stem}-{millis}"),
            k => format!("{stem}-{millis}-{k}"),
        };
        let json_path = dir.join(format!("{base}.json"));
        let csv_path = dir.join(format!("{base}.csv"));
        let Some(mut jf) = create_new(&json_path)? else {
            continue;
        };
        let Some(mut cf) = create_new(&csv_path)? else {
            drop(jf);
            fs::remove_file(&json_path).map_err(|e| Error::io(&json_path, e))?;
            continue;
        };
        jf.write_all(&json).map_err(|e| Error::io(&json_path, e))?;
        cf.write_all(table).map_err(|e| Error::io(&csv_path, e))?;
        return Ok(ReportPaths {
            json: json_path,
            csv: csv_path,
        });
    }
    unreachable!("an unused report name always exists")
}

fn create_new(path: &Path) -> Result<Option<File>> {
    match OpenOptions::new().write(true).create_new(true).open(path) {
        Ok(f) => Ok(Some(f)),
        Err(e) if e.kind() == ErrorKind::AlreadyExists => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

const METRIC_HEADER: [&str; 8] = ["accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn"];

/// One header row and one row of test metrics per report.
pub fn metrics_table(reports: &[&RunReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label", "seed"];
    header.extend(METRIC_HEADER);
    w.write_record(&header)?;
    for r in reports {
        let m = &r.test;
        w.write_record([
            r.label.clone(),
            r.seed.to_string(),
            m.accuracy.to_string(),
            m.precision.to_string(),
            m.recall.to_string(),
            m.f1.to_string(),
            m.tp.to_string(),
            m.fp.to_string(),
            m.tn.to_string(),
            m.fn_.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::io("metrics table", e.into_error()))
}

/// Per-epoch training curve of one run.
pub fn epoch_table(report: &RunReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "lr", "loss", "valid_accuracy", "valid_f1", "seconds"])?;
    for e in &report.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.lr.to_string(),
            e.loss.to_string(),
            e.valid.accuracy.to_string(),
            e.valid.f1.to_string(),
            e.seconds.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::io("epoch table", e.into_error()))
}

/// The sweep grid, one row per cell; failed cells keep empty metric columns.
pub fn sweep_table(report: &SweepReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["ph_ratio", "global_dim", "sim", "status"];
    header.extend(METRIC_HEADER);
    header.push("error");
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &report.cells {
        let mut row = vec![
            opt(c.ph_ratio),
            opt(c.global_dim),
            c.sim.map(|s| s.to_string()).unwrap_or_default(),
        ];
        match &c.outcome {
            CellOutcome::Done { test, .. } => {
                row.push("ok".into());
                row.extend([test.accuracy, test.precision, test.recall, test.f1].map(|v| v.to_string()));
                row.extend([test.tp, test.fp, test.tn, test.fn_].map(|v| v.to_string()));
                row.push(String::new());
            }
            CellOutcome::Failed { error } => {
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), 8));
                row.push(error.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::io("sweep table", e.into_error()))
}
