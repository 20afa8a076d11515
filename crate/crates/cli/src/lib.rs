//! Experiment runner for the batch-size hyper-learning library: config
//! resolution, run orchestration and artifact emission.

pub mod config;
pub mod error;
pub mod output;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use hyperlearn_core::autodiff::Fault;
use hyperlearn_core::data::{Splits, load_idx, make_synthetic};
use hyperlearn_core::gradcheck::{self, Report};
use hyperlearn_core::model;
use hyperlearn_core::schedule::{RunLog, Trainer};
use serde::Serialize;

pub use config::{DataSpec, ExperimentConfig, Sources};
pub use error::{CliError, Result};

use crate::output::{LOG_JSON, MANIFEST_JSON, Manifest};

pub const SUMMARY_JSON: &str = "summary.json";
/// Seeds used by the `grad-check` command.
pub const GRAD_CHECK_SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub epochs: usize,
    pub final_batch_size: Option<usize>,
    pub final_lr: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub log: RunLog,
    pub summary: Summary,
}

pub fn load_splits(config: &ExperimentConfig) -> Result<Splits> {
    let data = match &config.data {
        DataSpec::Mnist { dir, limit } => {
            let (images, labels) = config::mnist_files(dir)?;
            let data = load_idx(images, labels)?;
            match limit {
                Some(n) => data.truncated(*n),
                None => data,
            }
        }
        DataSpec::Synthetic { task, size } => make_synthetic(task, *size, config.split.seed)?.dataset,
    };
    Ok(config.split.split(&data)?)
}

/// Output directory of one seed: `<root>/<name>/seed-<seed>`.
pub fn run_dir(root: &Path, config: &ExperimentConfig) -> PathBuf {
    root.join(&config.name).join(format!("seed-{}", config.meta.seed))
}

/// Writes CSV tables, the JSON log and (optionally) charts for `log`.
pub fn emit_all(log: &RunLog, dir: &Path, emit_svg: bool) -> Result<Vec<PathBuf>> {
    let mut files = output::emit_csv(log, dir)?;
    let log_path = dir.join(LOG_JSON);
    output::write_json(log, &log_path)?;
    files.push(log_path);
    if emit_svg {
        files.extend(svg::emit_svg(log, dir)?);
    }
    Ok(files)
}

/// Trains one configuration into `dir`. On a numeric abort the partial log
/// is still written before the error is returned.
pub fn execute(config: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    config::validate(config)?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    output::write_json(&Manifest::new(config), &dir.join(MANIFEST_JSON))?;
    let splits = load_splits(config)?;
    let mut trainer = Trainer::new(config.meta.clone(), &config.model, splits.train, splits.val)?;
    let result = trainer.run();
    emit_all(trainer.log(), dir, config.emit_svg)?;
    if let Err(error) = result {
        return Err(CliError::Aborted(Box::new(hyperlearn_core::schedule::RunAbort {
            error,
            log: trainer.into_log(),
        })));
    }
    let (test_loss, test_acc) = model::evaluate(trainer.params(), &splits.test)?;
    let log = trainer.into_log();
    let last = log.epochs.last();
    let summary = Summary {
        epochs: log.epochs.len(),
        final_batch_size: last.map(|e| e.next_batch_size),
        final_lr: log.steps.last().map(|s| s.lr),
        val_loss: last.map(|e| e.val_loss),
        val_acc: last.map(|e| e.val_acc),
        test_loss,
        test_acc,
    };
    output::write_json(&summary, &dir.join(SUMMARY_JSON))?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        log,
        summary,
    })
}

/// Runs one copy of `config` per seed, concurrently, each in its own directory.
pub fn execute_seeds(config: &ExperimentConfig, seeds: &[u64], root: &Path) -> Vec<(u64, Result<RunOutcome>)> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let mut c = config.clone();
                c.meta.seed = seed;
                let dir = run_dir(root, &c);
                (seed, scope.spawn(move || execute(&c, &dir)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(seed, h)| (seed, h.join().expect("run thread panicked")))
            .collect()
    })
}

/// Every finite-difference suite over [`GRAD_CHECK_SEEDS`], keeping the
/// worst error per suite.
pub fn grad_check(fault: Option<Fault>) -> Result<Report> {
    let mut combined: Option<Report> = None;
    for seed in GRAD_CHECK_SEEDS {
        let report = gradcheck::run(seed, fault)?;
        combined = Some(match combined {
            None => report,
            Some(mut acc) => {
                for (a, r) in acc.suites.iter_mut().zip(report.suites) {
                    a.checked += r.checked;
                    a.max_rel_error = a.max_rel_error.max(r.max_rel_error);
                }
                acc
            }
        });
    }
    Ok(combined.expect("at least one seed"))
}

/// Re-emits artifacts from a saved `log.json`, by default next to it.
pub fn replay(log_path: &Path, out: Option<&Path>, emit_svg: bool) -> Result<Vec<PathBuf>> {
    let log = output::load_log(log_path)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| log_path.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let mut files = output::emit_csv(&log, &dir)?;
    if emit_svg {
        files.extend(svg::emit_svg(&log, &dir)?);
    }
    Ok(files)
}
