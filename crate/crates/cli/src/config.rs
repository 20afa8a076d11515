//! Experiment configuration: presets, flat TOML files and command-line
//! overrides, merged in that order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hyperlearn_core::data::{SplitSpec, SyntheticTask};
use hyperlearn_core::model::ModelSpec;
use hyperlearn_core::optim::OptimizerKind;
use hyperlearn_core::schedule::{MetaConfig, SchedulerKind};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, Result};

pub const DEFAULT_DATA_DIR: &str = "data/mnist-subset";
pub const DEFAULT_OUT: &str = "runs";
pub const OUT_ENV: &str = "HYPERLEARN_OUT";

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// IDX files (optionally gzipped) in `dir`; `limit` keeps the first examples only.
    Mnist { dir: PathBuf, limit: Option<usize> },
    Synthetic { task: String, size: usize },
}

impl Default for DataSpec {
    fn default() -> Self {
        Self::Mnist {
            dir: PathBuf::from(DEFAULT_DATA_DIR),
            limit: None,
        }
    }
}

/// A fully resolved experiment. Serialized into every run manifest, so a
/// manifest can be fed back to `run --manifest` for an exact replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSpec,
    pub split: SplitSpec,
    pub model: ModelSpec,
    pub meta: MetaConfig,
    pub out: Option<PathBuf>,
    pub emit_svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            data: DataSpec::default(),
            split: SplitSpec::default(),
            model: ModelSpec::default(),
            meta: MetaConfig::default(),
            out: None,
            emit_svg: false,
        }
    }
}

/// The flat key/value schema accepted in config files and `--set`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub name: Option<String>,
    /// `mnist` or a synthetic task name.
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub data_limit: Option<usize>,
    pub synthetic_size: Option<usize>,
    pub train_fraction: Option<f64>,
    pub val_fraction: Option<f64>,
    pub test_fraction: Option<f64>,
    pub split_seed: Option<u64>,
    pub hidden: Option<Vec<usize>>,
    pub scheduler: Option<String>,
    pub optimizer: Option<String>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub hyper_lr: Option<f64>,
    pub initial_batch_size: Option<usize>,
    pub b_min: Option<usize>,
    pub b_max: Option<usize>,
    pub n_samples: Option<usize>,
    pub n_learn: Option<usize>,
    pub zeta_phi: Option<f64>,
    pub zeta_alpha: Option<f64>,
    pub val_batch_size: Option<usize>,
    pub agent_hidden: Option<usize>,
    /// Epoch → batch size, e.g. `{ 25 = 128, 50 = 256 }`.
    pub milestones: Option<BTreeMap<String, usize>>,
    pub warmup_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub emit_svg: Option<bool>,
}

const MILESTONES: &str = "milestones = { 25 = 128, 50 = 256, 100 = 512 }\n";

/// Named experiments. Each is a flat TOML snippet layered under the file.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "stochastic_cifar_like",
        "scheduler = \"arbiter\"\noptimizer = \"sgd\"\nlr = 0.1\ninitial_batch_size = 128\nn_learn = 1\n",
    ),
    (
        "non_stochastic_cifar_like",
        "scheduler = \"arbiter\"\noptimizer = \"sgd\"\nlr = 0.01\ninitial_batch_size = 400\nn_learn = 1\n",
    ),
    ("milestone_hybrid", "scheduler = \"hybrid\"\nlr = 0.05\nepochs = 200\ninitial_batch_size = 64\n"),
    ("milestone_fixed", "scheduler = \"milestone\"\nlr = 0.05\nepochs = 200\ninitial_batch_size = 64\n"),
    (
        "hd_sgd",
        "scheduler = \"arbiter+hd\"\noptimizer = \"sgdhd\"\nlr = 0.1\nhyper_lr = 1e-4\ninitial_batch_size = 128\n",
    ),
    (
        "hd_adam",
        "scheduler = \"arbiter+hd\"\noptimizer = \"adamhd\"\nlr = 0.1\nhyper_lr = 1e-4\ninitial_batch_size = 128\n",
    ),
    (
        "hd_sgd_baseline",
        "scheduler = \"constant\"\noptimizer = \"sgdhd\"\nlr = 0.1\nhyper_lr = 1e-4\ninitial_batch_size = 128\n",
    ),
    (
        "hd_adam_baseline",
        "scheduler = \"constant\"\noptimizer = \"adamhd\"\nlr = 0.1\nhyper_lr = 1e-4\ninitial_batch_size = 128\n",
    ),
    ("constant", "scheduler = \"constant\"\nlr = 0.1\ninitial_batch_size = 128\n"),
    (
        "smoke",
        "dataset = \"two_gaussians\"\nsynthetic_size = 400\nhidden = [16, 8]\nepochs = 3\nlr = 0.1\n\
         initial_batch_size = 32\nval_batch_size = 32\nn_samples = 4\nagent_hidden = 8\n",
    ),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

fn preset_table(name: &str) -> Result<Table> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| {
            CliError::Config(format!(
                "key `preset`: unknown preset `{name}` (known: {})",
                preset_names().collect::<Vec<_>>().join(", ")
            ))
        })?;
    let mut table: Table = text.parse().expect("preset snippets are valid TOML");
    if name.starts_with("milestone") {
        table.extend(MILESTONES.parse::<Table>().expect("valid TOML"));
    }
    table.insert("name".into(), Value::String(name.into()));
    Ok(table)
}

/// Parses `key=value`; the value is read as TOML, falling back to a bare string.
pub fn parse_override(item: &str) -> Result<(String, Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not of the form key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

/// Deserializes a merged table, naming the first key that fails.
fn to_file_config(table: Table) -> Result<FileConfig> {
    match FileConfig::deserialize(Value::Table(table.clone())) {
        Ok(c) => Ok(c),
        Err(e) => {
            for (key, value) in &table {
                let single = Table::from_iter([(key.clone(), value.clone())]);
                if let Err(e) = FileConfig::deserialize(Value::Table(single)) {
                    return Err(CliError::Config(format!("key `{key}`: {}", e.message().trim())));
                }
            }
            Err(CliError::Config(e.message().trim().to_string()))
        }
    }
}

/// Inputs to [`resolve`], in increasing priority after the preset.
#[derive(Debug, Default, Clone)]
pub struct Sources {
    pub preset: Option<String>,
    pub file: Option<PathBuf>,
    pub overrides: Vec<(String, Value)>,
}

/// Merges preset, file and overrides into a validated [`ExperimentConfig`].
/// A `--preset` wins over a `preset` key in the file.
pub fn resolve(sources: &Sources) -> Result<ExperimentConfig> {
    let file_table = match &sources.file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            text.parse::<Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => Table::new(),
    };
    let preset = sources
        .preset
        .clone()
        .or_else(|| file_table.get("preset").and_then(Value::as_str).map(String::from));
    let mut merged = match &preset {
        Some(name) => preset_table(name)?,
        None => Table::new(),
    };
    merged.extend(file_table);
    merged.extend(sources.overrides.iter().cloned());
    if let Some(name) = &preset {
        merged.insert("preset".into(), Value::String(name.clone()));
    }
    let config = build(to_file_config(merged)?)?;
    validate(&config)?;
    Ok(config)
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("key `{key}`: {msg}"))
}

fn build(f: FileConfig) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    if let Some(v) = f.name {
        c.name = v;
    }
    let dataset = f.dataset.unwrap_or_else(|| "mnist".into());
    c.data = if dataset == "mnist" {
        if f.synthetic_size.is_some() {
            return Err(bad("synthetic_size", "only applies to synthetic datasets"));
        }
        DataSpec::Mnist {
            dir: f.data_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR)),
            limit: f.data_limit,
        }
    } else {
        dataset
            .parse::<SyntheticTask>()
            .map_err(|_| bad("dataset", format!("unknown dataset `{dataset}`")))?;
        if f.data_dir.is_some() || f.data_limit.is_some() {
            return Err(bad("data_dir", "only applies to the mnist dataset"));
        }
        DataSpec::Synthetic {
            task: dataset,
            size: f.synthetic_size.unwrap_or(1000),
        }
    };

    let split = &mut c.split;
    split.train_fraction = f.train_fraction.unwrap_or(split.train_fraction);
    split.val_fraction = f.val_fraction.unwrap_or(split.val_fraction);
    split.test_fraction = f.test_fraction.unwrap_or(split.test_fraction);
    split.seed = f.split_seed.unwrap_or(split.seed);
    if let Some(h) = f.hidden {
        if h.is_empty() || h.contains(&0) {
            return Err(bad("hidden", "needs at least one layer and positive widths"));
        }
        c.model.hidden = h;
    }

    let m = &mut c.meta;
    if let Some(s) = f.scheduler {
        m.scheduler = s.parse::<SchedulerKind>().map_err(|e| bad("scheduler", e))?;
    }
    if let Some(s) = f.optimizer {
        m.optimizer = s.parse::<OptimizerKind>().map_err(|e| bad("optimizer", e))?;
    }
    m.epochs = f.epochs.unwrap_or(m.epochs);
    m.lr = f.lr.unwrap_or(m.lr);
    m.hyper_lr = f.hyper_lr.unwrap_or(m.hyper_lr);
    m.initial_batch_size = f.initial_batch_size.unwrap_or(m.initial_batch_size);
    m.b_min = f.b_min.unwrap_or(m.b_min);
    m.b_max = f.b_max.unwrap_or(m.b_max);
    m.n_samples = f.n_samples.unwrap_or(m.n_samples);
    m.n_learn = f.n_learn.unwrap_or(m.n_learn);
    m.zeta_phi = f.zeta_phi.unwrap_or(m.zeta_phi);
    m.zeta_alpha = f.zeta_alpha.unwrap_or(m.zeta_alpha);
    m.val_batch_size = f.val_batch_size.unwrap_or(m.val_batch_size);
    m.agent_hidden = f.agent_hidden.unwrap_or(m.agent_hidden);
    m.warmup_epochs = f.warmup_epochs.unwrap_or(m.warmup_epochs);
    m.seed = f.seed.unwrap_or(m.seed);
    if let Some(table) = f.milestones {
        m.milestones = table
            .into_iter()
            .map(|(k, b)| {
                k.trim()
                    .parse::<usize>()
                    .map(|e| (e, b))
                    .map_err(|_| bad("milestones", format!("epoch `{k}` is not a positive integer")))
            })
            .collect::<Result<_>>()?;
    }
    if m.scheduler.uses_milestones() && m.milestones.is_empty() {
        return Err(CliError::Config(format!(
            "missing key `milestones`, required by scheduler `{}`",
            m.scheduler
        )));
    }
    c.out = f.out;
    c.emit_svg = f.emit_svg.unwrap_or(false);
    Ok(c)
}

/// Checks everything that can be checked before loading data.
pub fn validate(c: &ExperimentConfig) -> Result<()> {
    c.split.validate()?;
    c.meta.validate()?;
    if c.name.is_empty() || c.name.contains(['/', '\\']) {
        return Err(bad("name", format!("`{}` is not a usable directory name", c.name)));
    }
    match &c.data {
        DataSpec::Mnist { dir, limit } => {
            mnist_files(dir)?;
            if limit == &Some(0) {
                return Err(bad("data_limit", "must be positive"));
            }
        }
        DataSpec::Synthetic { task, .. } => {
            task.parse::<SyntheticTask>()?;
        }
    }
    Ok(())
}

const IMAGE_NAMES: &[&str] = &["images-idx3-ubyte", "train-images-idx3-ubyte", "t10k-images-idx3-ubyte"];

/// Locates the image and label files in an IDX directory, gzipped or not.
pub fn mnist_files(dir: &Path) -> Result<(PathBuf, PathBuf)> {
    for image in IMAGE_NAMES {
        let label = image.replace("images-idx3", "labels-idx1");
        for ext in [".gz", ""] {
            let (i, l) = (dir.join(format!("{image}{ext}")), dir.join(format!("{label}{ext}")));
            if i.is_file() && l.is_file() {
                return Ok((i, l));
            }
        }
    }
    Err(bad(
        "data_dir",
        format!("no IDX image/label pair found in {}", dir.display()),
    ))
}

/// Output root: `--out`, then `$HYPERLEARN_OUT`, then the config, then `runs`.
pub fn output_root(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(overrides: &[&str]) -> Result<ExperimentConfig> {
        resolve(&Sources {
            preset: Some("smoke".into()),
            file: None,
            overrides: overrides.iter().map(|o| parse_override(o).unwrap()).collect(),
        })
    }

    #[test]
    fn every_preset_resolves_except_missing_data() {
        for name in preset_names() {
            let r = resolve(&Sources {
                preset: Some(name.into()),
                overrides: vec![("dataset".into(), Value::String("two_gaussians".into()))],
                ..Default::default()
            });
            assert!(r.is_ok(), "{name}: {r:?}");
        }
    }

    #[test]
    fn stochastic_preset_values() {
        let table = preset_table("stochastic_cifar_like").unwrap();
        let c = build(to_file_config(table).unwrap()).unwrap();
        assert_eq!(c.meta.lr, 0.1);
        assert_eq!(c.meta.initial_batch_size, 128);
        assert_eq!(c.meta.scheduler, SchedulerKind::Arbiter);
    }

    #[test]
    fn hybrid_preset_values() {
        let c = build(to_file_config(preset_table("milestone_hybrid").unwrap()).unwrap()).unwrap();
        assert_eq!(c.meta.initial_batch_size, 64);
        assert_eq!(c.meta.scheduler, SchedulerKind::Hybrid);
        assert_eq!(c.meta.milestones, BTreeMap::from([(25, 128), (50, 256), (100, 512)]));
    }

    #[test]
    fn overrides_take_priority() {
        let c = with(&["epochs=7", "scheduler=constant", "hidden=[4, 3]"]).unwrap();
        assert_eq!(c.meta.epochs, 7);
        assert_eq!(c.meta.scheduler, SchedulerKind::Constant);
        assert_eq!(c.model.hidden, vec![4, 3]);
    }

    #[test]
    fn errors_name_the_key() {
        let msg = |o: &[&str]| with(o).unwrap_err().to_string();
        assert!(msg(&["scheduler=bogus"]).contains("`scheduler`"));
        assert!(msg(&["epoch=3"]).contains("`epoch`"));
        assert!(msg(&["epochs=\"many\""]).contains("`epochs`"));
        assert!(msg(&["scheduler=hybrid"]).contains("`milestones`"));
        assert!(msg(&["milestones={ x = 3 }", "scheduler=milestone"]).contains("`milestones`"));
    }

    #[test]
    fn validation_errors_exit_with_one() {
        assert_eq!(with(&["zeta_phi=-1"]).unwrap_err().exit_code(), 1);
        let unknown = resolve(&Sources {
            preset: Some("nope".into()),
            ..Default::default()
        });
        assert_eq!(unknown.unwrap_err().exit_code(), 1);
    }

    #[test]
    fn missing_data_dir_is_rejected() {
        let err = resolve(&Sources {
            overrides: vec![parse_override("data_dir=/nonexistent/dir").unwrap()],
            ..Default::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("data_dir"));
    }
}
