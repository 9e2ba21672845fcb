//! Experiment configuration.
//!
//! A config file is TOML. `task` selects the defaults; every other key
//! overrides one default. Unknown keys are rejected.
//!
//! ```toml
//! version = 1
//! task = "full_isp"          # denoise_demosaic | full_isp | mimic_isp
//! seed = 0
//! epochs = 700
//! patch = 1024               # 0 trains on whole images
//! augment = "horizontal"     # none | horizontal | horizontal_vertical
//! checkpoint_every = 10
//! val_every = 1
//! output = "full_isp"       # relative to the output root
//!
//! [model]    # n_ll, n_hl, width, hl_width
//! [loss]     # alpha, msssim_scales, msssim_window, c1, c2
//! [adam]     # lr, beta1, beta2, eps
//! [ablation] # no_skip, no_shared
//! [data]     # see DataConfig
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::color::BayerPattern;
use crate::data::{Augment, Layout, SynthSpec};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{Ablation, ModelConfig};
use crate::optim::AdamConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Low-level stage only, mean squared error.
    DenoiseDemosaic,
    /// Low-light raw to rendered image with both stages.
    FullIsp,
    /// Same machinery as `FullIsp` on well-exposed inputs.
    MimicIsp,
}

impl Task {
    pub fn uses_highlevel(self) -> bool {
        !matches!(self, Task::DenoiseDemosaic)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::DenoiseDemosaic => "denoise_demosaic",
            Task::FullIsp => "full_isp",
            Task::MimicIsp => "mimic_isp",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoise_demosaic" => Ok(Task::DenoiseDemosaic),
            "full_isp" => Ok(Task::FullIsp),
            "mimic_isp" => Ok(Task::MimicIsp),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (denoise_demosaic, full_isp, mimic_isp)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Synth,
    Dir,
}

/// Where training and validation pairs come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Synthetic training set; `synth.count` is the number of training pairs.
    pub synth: SynthSpec,
    pub val_count: usize,
    pub test_count: usize,
    /// Directory source (kind = "dir").
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub layout: Layout,
    pub pattern: BayerPattern,
    /// Separate validation directory; without it the last `val_fraction`
    /// of `path` is held out.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_path: Option<PathBuf>,
    pub val_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub version: u32,
    pub task: Task,
    pub seed: u64,
    pub epochs: u64,
    /// Square patch side; 0 trains on whole images.
    pub patch: usize,
    pub augment: Augment,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Epochs between validation passes; 0 disables validation.
    pub val_every: u64,
    /// Run directory. The command line resolves relative paths against the
    /// output root.
    pub output: PathBuf,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub ablation: Ablation,
    pub data: DataConfig,
}

impl TrainConfig {
    /// The published protocol for `task`.
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::DenoiseDemosaic => Self {
                version: CONFIG_VERSION,
                task,
                seed: 0,
                epochs: 5000,
                patch: 0,
                augment: Augment::HorizontalVertical,
                checkpoint_every: 100,
                val_every: 1,
                output: PathBuf::from(task.to_string()),
                model: ModelConfig {
                    n_ll: 20,
                    n_hl: 0,
                    width: 64,
                    hl_width: 64,
                },
                loss: LossConfig::default(),
                adam: AdamConfig::default(),
                ablation: Ablation::default(),
                data: DataConfig {
                    kind: DataKind::Synth,
                    synth: SynthSpec {
                        count: 270,
                        height: 132,
                        width: 220,
                        sigma_min: 1.0,
                        sigma_max: 10.0,
                        exposure: 1.0,
                        ..SynthSpec::default()
                    },
                    val_count: 30,
                    test_count: 30,
                    path: None,
                    layout: Layout::Msr,
                    pattern: BayerPattern::Rggb,
                    val_path: None,
                    val_fraction: 0.1,
                },
            },
            Task::FullIsp | Task::MimicIsp => Self {
                version: CONFIG_VERSION,
                task,
                seed: 0,
                epochs: 700,
                patch: 1024,
                augment: Augment::Horizontal,
                checkpoint_every: 10,
                val_every: 1,
                output: PathBuf::from(task.to_string()),
                model: ModelConfig::default(),
                loss: LossConfig::default(),
                adam: AdamConfig::default(),
                ablation: Ablation::default(),
                data: DataConfig {
                    kind: DataKind::Synth,
                    synth: SynthSpec {
                        count: 90,
                        height: 1024,
                        width: 1024,
                        sigma_min: 1.0,
                        sigma_max: 4.0,
                        exposure: if task == Task::FullIsp { 0.25 } else { 1.0 },
                        cast: 0.4,
                        tone: true,
                        ..SynthSpec::default()
                    },
                    val_count: 10,
                    test_count: 10,
                    path: None,
                    layout: Layout::S7isp,
                    pattern: BayerPattern::Rggb,
                    val_path: None,
                    val_fraction: 0.1,
                },
            },
        }
    }

    /// Parses a config, filling unspecified keys from the task defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        Self::from_table(user)
    }

    /// Like [`TrainConfig::from_toml`] for an already parsed table.
    pub fn from_table(user: toml::Table) -> Result<Self> {
        let task: Task = match user.get("task") {
            None => return Err(Error::Config("missing `task`".into())),
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("`task` must be a string, got {other}"))),
        };
        let defaults = toml::Table::try_from(Self::for_task(task)).map_err(|e| Error::Config(format!("{e}")))?;
        let merged = merge(defaults, user);
        let cfg: Self = merged.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Sets the dotted `key` (e.g. `model.n_ll`) in `table` to `value`,
    /// read as a TOML literal when possible and as a string otherwise.
    pub fn set_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        Self::set_value(table, key, parsed)
    }

    pub fn set_value(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| Error::Config(format!("empty key in `{key}`")))?;
        let mut node = table;
        for part in parts {
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
        }
        node.insert(leaf.to_string(), value);
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.model.validate()?;
        self.loss.validate()?;
        if !(self.adam.lr > 0.0 && (0.0..1.0).contains(&self.adam.beta1) && (0.0..1.0).contains(&self.adam.beta2)) {
            return Err(Error::Config("adam: need lr > 0 and betas in [0, 1)".into()));
        }
        if self.task.uses_highlevel() && self.model.n_hl == 0 {
            return Err(Error::Config(format!("task {} needs n_hl ≥ 1", self.task)));
        }
        if !self.task.uses_highlevel() && self.ablation.no_shared {
            return Err(Error::Config("no_shared applies only to tasks with a high-level stage".into()));
        }
        if !self.patch.is_multiple_of(2) {
            return Err(Error::Config(format!("patch {} must be even", self.patch)));
        }
        let d = &self.data;
        match d.kind {
            DataKind::Synth => {
                if self.patch > d.synth.height || self.patch > d.synth.width {
                    return Err(Error::Config(format!(
                        "patch {} exceeds synthetic image {}×{}",
                        self.patch, d.synth.height, d.synth.width
                    )));
                }
            }
            DataKind::Dir => {
                if d.path.is_none() {
                    return Err(Error::Config("data.kind = \"dir\" needs data.path".into()));
                }
                if !(0.0..1.0).contains(&d.val_fraction) {
                    return Err(Error::Config(format!("val_fraction {} outside [0, 1)", d.val_fraction)));
                }
            }
        }
        Ok(())
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_defaults() {
        let d = TrainConfig::for_task(Task::DenoiseDemosaic);
        assert_eq!((d.model.n_ll, d.epochs, d.patch), (20, 5000, 0));
        assert_eq!(d.augment, Augment::HorizontalVertical);
        let f = TrainConfig::for_task(Task::FullIsp);
        assert_eq!((f.model.n_ll, f.model.n_hl, f.epochs, f.patch), (15, 3, 700, 1024));
        assert_eq!(f.augment, Augment::Horizontal);
        assert_eq!(f.adam, AdamConfig::default());
        assert_eq!(f.data.synth.exposure, 0.25);
        assert_eq!(TrainConfig::for_task(Task::MimicIsp).data.synth.exposure, 1.0);
        for t in [Task::DenoiseDemosaic, Task::FullIsp, Task::MimicIsp] {
            TrainConfig::for_task(t).validate().unwrap();
        }
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = TrainConfig::from_toml("task = \"full_isp\"\n").unwrap();
        assert_eq!(cfg, TrainConfig::for_task(Task::FullIsp));
    }

    #[test]
    fn overrides_merge_into_tables() {
        let cfg = TrainConfig::from_toml(
            "task = \"denoise_demosaic\"\nepochs = 3\n[model]\nn_ll = 2\n[data.synth]\ncount = 4\nheight = 32\nwidth = 32\n",
        )
        .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.model.n_ll, 2);
        assert_eq!(cfg.model.width, 64);
        assert_eq!(cfg.data.synth.count, 4);
        assert_eq!(cfg.data.synth.sigma_max, 10.0);
    }

    #[test]
    fn round_trip() {
        let mut cfg = TrainConfig::for_task(Task::FullIsp);
        cfg.patch = 0;
        cfg.data.path = Some("x".into());
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::from_toml("epochs = 3\n").is_err());
        assert!(TrainConfig::from_toml("task = \"nope\"\n").is_err());
        assert!(TrainConfig::from_toml("task = \"full_isp\"\nbogus = 1\n").is_err());
        assert!(TrainConfig::from_toml("task = \"full_isp\"\npatch = 2048\n").is_err());
        assert!(TrainConfig::from_toml("task = \"full_isp\"\n[model]\nn_hl = 0\n").is_err());
        let err = TrainConfig::from_toml("task = \"full_isp\"\n[loss]\nalpha = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("alpha"));
    }

    #[test]
    fn dotted_overrides() {
        let mut t = toml::Table::new();
        TrainConfig::set_override(&mut t, "task", "denoise_demosaic").unwrap();
        TrainConfig::set_override(&mut t, "model.n_ll", "3").unwrap();
        TrainConfig::set_override(&mut t, "adam.lr", "1e-3").unwrap();
        TrainConfig::set_override(&mut t, "data.synth.tone", "true").unwrap();
        TrainConfig::set_override(&mut t, "output", "runs/a b").unwrap();
        let cfg = TrainConfig::from_table(t.clone()).unwrap();
        assert_eq!(cfg.model.n_ll, 3);
        assert_eq!(cfg.adam.lr, 1e-3);
        assert!(cfg.data.synth.tone);
        assert_eq!(cfg.output, PathBuf::from("runs/a b"));
        assert!(TrainConfig::set_override(&mut t, "model.n_ll.x", "1").is_err());
        assert!(TrainConfig::set_override(&mut t, "model.", "1").is_err());
    }
}
