//! Run artifacts: CSV tables, the JSON log and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use hyperlearn_core::schedule::RunLog;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const STEPS_CSV: &str = "steps.csv";
pub const EPOCHS_CSV: &str = "epochs.csv";
pub const LOG_JSON: &str = "log.json";
pub const MANIFEST_JSON: &str = "manifest.json";

pub const STEP_COLUMNS: [&str; 8] = [
    "epoch",
    "t",
    "train_loss",
    "meta_loss_F",
    "batch_size_B",
    "mixed_sample_s",
    "candidate_B",
    "lr_eta",
];
pub const EPOCH_COLUMNS: [&str; 4] = ["epoch", "val_loss", "val_acc", "next_B"];

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            seed: config.meta.seed,
            config: config.clone(),
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Format {
            path: path.to_path_buf(),
            msg: format!("{other:?}"),
        },
    }
}

fn write_table<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes `steps.csv` and `epochs.csv`. Floats use the shortest exact decimal
/// form; missing values are empty cells.
pub fn emit_csv(log: &RunLog, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let steps = dir.join(STEPS_CSV);
    write_table(
        &steps,
        STEP_COLUMNS,
        log.steps.iter().map(|s| {
            [
                s.epoch.to_string(),
                s.t.to_string(),
                s.train_loss.to_string(),
                opt(s.meta_loss),
                s.batch_size.to_string(),
                opt(s.mixed_sample),
                opt(s.candidate_batch_size),
                s.lr.to_string(),
            ]
        }),
    )?;
    let epochs = dir.join(EPOCHS_CSV);
    write_table(
        &epochs,
        EPOCH_COLUMNS,
        log.epochs.iter().map(|e| {
            [
                e.epoch.to_string(),
                e.val_loss.to_string(),
                e.val_acc.to_string(),
                e.next_batch_size.to_string(),
            ]
        }),
    )?;
    Ok(vec![steps, epochs])
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_log(path: &Path) -> Result<RunLog> {
    read_json(path)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    read_json(path)
}
