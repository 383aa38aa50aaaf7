//! Command-line front end: train, eval, sweep, gradcheck and synth.
//!
//! Exit codes: 0 on success, 1 when a run or check fails, 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pjfcann::autodiff::OpKind;
use pjfcann::corpus::{synth_generate, Corpus, SynthConfig};
use pjfcann::graph::SimilarityKind;
use pjfcann::harness::{
    epoch_table, eval_run, gradcheck_suite, metrics_table, run_sweep, sweep_table, train_run, write_report, Ablation,
    CellOutcome, RunConfig, SweepGrid,
};
use pjfcann::model::Model;

#[derive(Parser, Debug)]
#[command(
    name = "pjfcann",
    version,
    about = "Person-job fit with text co-attention and recruitment-history graphs"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Line-delimited corpus file.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Generate a synthetic corpus instead of reading one.
    #[arg(long, global = true, value_enum)]
    synth: Option<SynthPreset>,
    /// TOML generator settings (overrides --synth).
    #[arg(long, global = true)]
    synth_config: Option<PathBuf>,
    /// TOML run configuration with [model], [train] and [data] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base preset the config file and flags are applied on top of.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Similarity used to weight history graphs.
    #[arg(long, global = true)]
    sim: Option<SimilarityKind>,
    #[arg(long, global = true)]
    ablate: Option<Ablation>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Share of the head input given to the history representation, in [0, 1].
    #[arg(long, global = true)]
    global_dim_ratio: Option<f64>,
    /// History size relative to the training set, in [0, 1].
    #[arg(long, global = true)]
    ph_ratio: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthPreset {
    Default,
    HistoryDependent,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Desk,
    Reference,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split, train, score the test piece; writes a checkpoint and reports.
    Train,
    /// Score a checkpoint on the test piece of a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One training run per grid cell, e.g. `ph-ratio=0.2,0.6 global-dim=0.2,0.6`.
    Sweep {
        #[arg(required = true)]
        axes: Vec<String>,
    },
    /// Finite-difference checks of every differentiable module.
    Gradcheck {
        /// Perturb one op's backward rule (negative control).
        #[arg(long)]
        corrupt: Option<String>,
    },
    /// Write a synthetic corpus.
    Synth {
        #[arg(long)]
        output: PathBuf,
    },
}

/// Errors in how the command was asked for, as opposed to failures while running it.
#[derive(Debug)]
struct Usage(anyhow::Error);

enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u.0)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Run(e.into())
    }
}

impl From<pjfcann::Error> for Failure {
    fn from(e: pjfcann::Error) -> Self {
        Failure::Run(e.into())
    }
}

fn usage<T>(r: anyhow::Result<T>) -> Result<T, Usage> {
    r.map_err(Usage)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Train => train(g),
        Command::Eval { checkpoint } => eval(g, checkpoint),
        Command::Sweep { axes } => sweep(g, axes),
        Command::Gradcheck { corrupt } => gradcheck(g, corrupt.as_deref()),
        Command::Synth { output } => {
            let synth = usage(synth_config(g))?.unwrap_or_default();
            let corpus = synth_generate(&synth)?;
            corpus.save(output)?;
            println!(
                "wrote {} jobs, {} resumes, {} applications to {}",
                corpus.jobs.len(),
                corpus.resumes.len(),
                corpus.applications.len(),
                output.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn synth_config(g: &Global) -> anyhow::Result<Option<SynthConfig>> {
    let mut cfg = if let Some(path) = &g.synth_config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        match g.synth {
            Some(SynthPreset::Default) => SynthConfig::default(),
            Some(SynthPreset::HistoryDependent) => SynthConfig::history_dependent(),
            None => return Ok(None),
        }
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(Some(cfg))
}

fn load_corpus(g: &Global) -> anyhow::Result<Corpus> {
    match (&g.corpus, synth_config(g)?) {
        (Some(_), Some(_)) => bail!("give either --corpus or a synthetic generator, not both"),
        (Some(path), None) => Corpus::load(path).with_context(|| format!("loading corpus {}", path.display())),
        (None, Some(cfg)) => Ok(synth_generate(&cfg)?),
        (None, None) => bail!("no corpus: pass --corpus PATH or --synth default"),
    }
}

fn run_config(g: &Global) -> anyhow::Result<RunConfig> {
    let mut cfg = match (&g.config, g.preset) {
        (Some(path), preset) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let base = match preset {
                Preset::Desk => RunConfig::default(),
                Preset::Reference => RunConfig::reference(),
            };
            merge_toml(&base, &text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Preset::Desk) => RunConfig::default(),
        (None, Preset::Reference) => RunConfig::reference(),
    };
    if let Some(s) = g.sim {
        cfg.data.similarity = s;
    }
    if let Some(lr) = g.lr {
        cfg.train.lr = lr;
    }
    if let Some(e) = g.epochs {
        cfg.train.epochs = e;
    }
    if let Some(x) = g.global_dim_ratio {
        cfg.model.global_dim_ratio = Some(x);
    }
    if let Some(y) = g.ph_ratio {
        cfg.set_history_ratio(y)?;
    }
    if let Some(a) = g.ablate {
        cfg.apply(a);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Overlays the tables of `text` on `base`, key by key.
fn merge_toml(base: &RunConfig, text: &str) -> anyhow::Result<RunConfig> {
    let mut merged: toml::Value = toml::Value::try_from(base)?;
    let overlay: toml::Value = toml::from_str(text)?;
    merge_value(&mut merged, overlay);
    Ok(merged.try_into()?)
}

fn merge_value(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_value(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn train(g: &Global) -> Result<ExitCode, Failure> {
    let cfg = usage(run_config(g))?;
    let corpus = usage(load_corpus(g))?;
    let seed = g.seed.unwrap_or(0);
    let run = train_run(&corpus, &cfg, seed)?;
    let r = &run.report;
    for e in &r.epochs {
        println!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  valid acc {:.4}  f1 {:.4}",
            e.epoch, e.lr, e.loss, e.valid.accuracy, e.valid.f1
        );
    }
    println!(
        "{}  test accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}",
        r.label, r.test.accuracy, r.test.precision, r.test.recall, r.test.f1
    );
    let paths = write_report(&g.out_dir, "train", r, &metrics_table(&[r])?)?;
    let base = paths.json.with_extension("");
    let curve = PathBuf::from(format!("{}-epochs.csv", base.display()));
    std::fs::write(&curve, epoch_table(r)?).with_context(|| format!("writing {}", curve.display()))?;
    let ckpt = paths.json.with_extension("ckpt");
    let extra = serde_json::json!({
        "seed": seed,
        "run_config": cfg,
        "corpus_hash": r.corpus_hash,
        "label": r.label,
    });
    run.model.save(&ckpt, extra)?;
    println!(
        "report {}\nmetrics {}\ncheckpoint {}",
        paths.json.display(),
        paths.csv.display(),
        ckpt.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval(g: &Global, checkpoint: &Path) -> Result<ExitCode, Failure> {
    let (model, manifest) = Model::load(checkpoint)?;
    let stored: Option<RunConfig> = serde_json::from_value(manifest.extra["run_config"].clone()).ok();
    let cfg = match (stored, &g.config) {
        (Some(c), None) => c,
        _ => usage(run_config(g))?,
    };
    let corpus = usage(load_corpus(g))?;
    let seed = g.seed.or_else(|| manifest.extra["seed"].as_u64()).unwrap_or(0);
    let test = eval_run(&model, &corpus, &cfg.data, cfg.train.threshold, seed)?;
    println!(
        "test accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}",
        test.accuracy, test.precision, test.recall, test.f1
    );
    let report = serde_json::json!({
        "checkpoint": checkpoint,
        "seed": seed,
        "corpus_hash": corpus.hash(),
        "label": manifest.extra["label"],
        "test": test,
    });
    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record(["accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn"])?;
    table.write_record(
        [test.accuracy, test.precision, test.recall, test.f1]
            .map(|v| v.to_string())
            .into_iter()
            .chain([test.tp, test.fp, test.tn, test.fn_].map(|v| v.to_string())),
    )?;
    let table = table.into_inner().map_err(|e| anyhow!("{e}"))?;
    let paths = write_report(&g.out_dir, "eval", &report, &table)?;
    println!("report {}", paths.json.display());
    Ok(ExitCode::SUCCESS)
}

fn sweep(g: &Global, axes: &[String]) -> Result<ExitCode, Failure> {
    let mut grid = SweepGrid::default();
    for spec in axes {
        usage(grid.add(spec).map_err(Into::into))?;
    }
    let cfg = usage(run_config(g))?;
    let corpus = usage(load_corpus(g))?;
    let seed = g.seed.unwrap_or(0);
    let report = run_sweep(&corpus, &cfg, &grid, seed, |cell| {
        let at = format!(
            "ph-ratio {}  global-dim {}  sim {}",
            cell.ph_ratio.map_or("-".into(), |v| v.to_string()),
            cell.global_dim.map_or("-".into(), |v| v.to_string()),
            cell.sim.map_or("-".into(), |s| s.to_string()),
        );
        match &cell.outcome {
            CellOutcome::Done { test, .. } => println!("{at}  accuracy {:.4}  f1 {:.4}", test.accuracy, test.f1),
            CellOutcome::Failed { error } => println!("{at}  FAILED: {error}"),
        }
    })?;
    let paths = write_report(&g.out_dir, "sweep", &report, &sweep_table(&report)?)?;
    println!("report {}\ngrid {}", paths.json.display(), paths.csv.display());
    if let Some(near) = report.best_near_reference {
        println!("best cell near (global 0.2, history 0.6): {near}");
    }
    if report.failed() > 0 {
        eprintln!("{} of {} cells failed", report.failed(), report.cells.len());
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(g: &Global, corrupt: Option<&str>) -> Result<ExitCode, Failure> {
    let corrupt = match corrupt {
        Some(name) => Some(usage(
            OpKind::from_name(name).ok_or_else(|| anyhow!("unknown op `{name}`")),
        )?),
        None => None,
    };
    let summary = gradcheck_suite(g.seed.unwrap_or(0), corrupt);
    for m in &summary.modules {
        if !m.differentiable {
            println!("{:<12} no differentiable operations", m.module);
        }
    }
    for c in &summary.cases {
        println!(
            "{:<12} {:<26} max rel error {:.3e}  {}",
            c.module,
            c.name,
            c.max_rel_error,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    let mut table = csv::Writer::from_writer(Vec::new());
    table.write_record(["module", "case", "max_rel_error", "passed"])?;
    for c in &summary.cases {
        table.write_record([
            c.module.clone(),
            c.name.clone(),
            c.max_rel_error.to_string(),
            c.passed.to_string(),
        ])?;
    }
    let table = table.into_inner().map_err(|e| anyhow!("{e}"))?;
    let paths = write_report(&g.out_dir, "gradcheck", &summary, &table)?;
    println!("report {}", paths.json.display());
    if summary.passed() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("gradient check failed at tolerance {:e}:", summary.tolerance);
    for c in summary.failures() {
        match (&c.worst, &c.error) {
            (_, Some(e)) => eprintln!("  {}/{}: {e}", c.module, c.name),
            (Some(w), None) => eprintln!(
                "  {}/{}: worst `{}`[{}] analytic {:.6e} numeric {:.6e}",
                c.module, c.name, w.param, w.index, w.analytic, w.numeric
            ),
            (None, None) => eprintln!("  {}/{}", c.module, c.name),
        }
    }
    Ok(ExitCode::from(1))
}
