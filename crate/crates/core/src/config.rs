//! Experiment configuration (JSON).
//!
//! Every field except `beta` has a default taken from the reference protocol:
//! K=5 clients, E=2 local epochs, batch 128, 100 rounds per task, SGD with
//! lr 0.01 and weight decay 1e-5, and temperatures/weights
//! (0.9, 1.1, 1.1, 0.9).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gdr::RankPolicy;
use crate::linalg::OrthogonalKind;
use crate::nn::TtsParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Plain sequential fine-tuning, no replay.
    Finetune,
    /// Each client keeps a uniform random sample of its own task data.
    LocalRandomReplay,
    /// Global leverage-score replay plus temperature-scaled loss.
    #[serde(rename = "FedCBDR")]
    FedCbdr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Finetune => "Finetune",
            Method::LocalRandomReplay => "LocalRandomReplay",
            Method::FedCbdr => "FedCBDR",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        [Method::Finetune, Method::LocalRandomReplay, Method::FedCbdr]
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        num_classes: usize,
        per_class: usize,
        d_in: usize,
        spread: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            num_classes: 6,
            per_class: 200,
            d_in: 16,
            spread: 0.5,
        }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::FedCbdr]
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_clients() -> usize {
    5
}
fn default_epochs() -> usize {
    2
}
fn default_batch() -> usize {
    128
}
fn default_rounds() -> usize {
    100
}
fn default_lr() -> f64 {
    0.01
}
fn default_wd() -> f64 {
    1e-5
}
fn default_tasks() -> usize {
    3
}
fn default_quota() -> usize {
    60
}
fn default_budget() -> usize {
    120
}
fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_clients")]
    pub num_clients: usize,
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_rounds")]
    pub rounds_per_task: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    /// Dirichlet concentration; smaller is more heterogeneous.
    pub beta: f64,
    #[serde(default = "default_tasks")]
    pub num_tasks: usize,
    /// Exemplars selected per finished task (N), summed over clients.
    #[serde(default = "default_quota")]
    pub per_task_quota: usize,
    /// Total buffer budget (M), summed over clients.
    #[serde(default = "default_budget")]
    pub buffer_budget: usize,
    #[serde(default)]
    pub tts: TtsParams,
    #[serde(default)]
    pub mask_kind: OrthogonalKind,
    #[serde(default)]
    pub rank_policy: RankPolicy,
    /// Multiply replayed samples' loss terms by their leverage weight.
    #[serde(default)]
    pub use_leverage_weights: bool,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dataset: DatasetSpec,
}

impl ExperimentConfig {
    /// Parse and validate; errors carry the offending line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|(field, message)| {
            let (line, column) = locate_field(text, field);
            Error::Config {
                line,
                column,
                message: format!("`{field}`: {message}"),
            }
        })?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    /// Returns the name of the first invalid field and why.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = |name: &'static str, v: usize| {
            if v == 0 {
                Err((name, "must be positive".to_string()))
            } else {
                Ok(())
            }
        };
        if self.methods.is_empty() {
            return Err(("methods", "must list at least one method".into()));
        }
        if self.seeds.is_empty() {
            return Err(("seeds", "must list at least one seed".into()));
        }
        if self.num_clients < 2 {
            return Err(("num_clients", "need at least 2 clients".into()));
        }
        positive("batch_size", self.batch_size)?;
        positive("rounds_per_task", self.rounds_per_task)?;
        positive("num_tasks", self.num_tasks)?;
        positive("per_task_quota", self.per_task_quota)?;
        positive("buffer_budget", self.buffer_budget)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(("lr", format!("must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(("weight_decay", "must be non-negative".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(("beta", format!("must be positive, got {}", self.beta)));
        }
        self.tts.validate().map_err(|e| ("tts", e.to_string()))?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(("hidden", "needs at least one non-zero layer width".into()));
        }
        if let DatasetSpec::Synthetic {
            num_classes,
            per_class,
            d_in,
            spread,
        } = &self.dataset
        {
            if *num_classes < 2 || *per_class < 2 || *d_in < 2 || spread.is_nan() || *spread <= 0.0
            {
                return Err((
                    "dataset",
                    "synthetic dataset parameters out of range".into(),
                ));
            }
            if num_classes % self.num_tasks != 0 {
                return Err((
                    "num_tasks",
                    format!(
                        "{num_classes} classes do not split into {} tasks",
                        self.num_tasks
                    ),
                ));
            }
        }
        Ok(())
    }
}

fn locate_field(text: &str, field: &str) -> (usize, usize) {
    let needle = format!("\"{field}\"");
    text.lines()
        .enumerate()
        .find_map(|(i, l)| l.find(&needle).map(|c| (i + 1, c + 1)))
        .unwrap_or((1, 1))
}
