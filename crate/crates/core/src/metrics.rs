//! Top-1 evaluation, the per-round metrics record and the replay buffer
//! balance report.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClassId, Dataset};
use crate::error::{Error, Result};
use crate::nn::Model;

/// Pooled top-1 accuracy over every task's test indices, plus per-task
/// accuracies. Prediction is the argmax of the full, unscaled logits.
pub fn evaluate(
    model: &Model,
    test: &Dataset,
    task_indices: &[Vec<usize>],
) -> Result<(f64, Vec<f64>)> {
    let total: usize = task_indices.iter().map(Vec::len).sum();
    if total == 0 || task_indices.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let mut correct_all = 0usize;
    let mut per_task = Vec::with_capacity(task_indices.len());
    for idx in task_indices {
        let mut correct = 0usize;
        for &i in idx {
            let s = test.sample(i);
            if model.predict(&s.features)? == s.label {
                correct += 1;
            }
        }
        correct_all += correct;
        per_task.push(correct as f64 / idx.len() as f64);
    }
    Ok((correct_all as f64 / total as f64, per_task))
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub seed: u64,
    pub beta: f64,
    pub task: usize,
    pub round: usize,
    pub global_test_acc: f64,
    pub per_task_acc: Vec<f64>,
    pub train_loss: f64,
    /// Buffer exemplars per class id, summed over clients.
    pub buffer_class_histogram: Vec<usize>,
    /// Classes of tasks before `task`; absent means "all histogram classes".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub old_classes: Option<Vec<ClassId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub method: String,
    pub seed: u64,
    pub task: usize,
    pub counts: Vec<usize>,
    pub min: usize,
    pub max: usize,
    /// Population standard deviation of `counts`.
    pub std: f64,
    pub missing_classes: Vec<ClassId>,
}

/// Balance statistics for one histogram over the given classes.
pub fn balance_of(
    histogram: &[usize],
    classes: &[ClassId],
) -> (Vec<usize>, usize, usize, f64, Vec<ClassId>) {
    let counts: Vec<usize> = classes
        .iter()
        .map(|&c| histogram.get(c).copied().unwrap_or(0))
        .collect();
    let n = counts.len().max(1) as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let var = counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let missing = classes
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c == 0)
        .map(|(&cls, _)| cls)
        .collect();
    (
        counts.clone(),
        counts.iter().copied().min().unwrap_or(0),
        counts.iter().copied().max().unwrap_or(0),
        var.sqrt(),
        missing,
    )
}

/// Per (method, seed, task) balance of the buffer seen while training that
/// task, taken from the task's last round.
pub fn balance_rows(records: &[MetricsRecord]) -> Vec<BalanceRow> {
    let mut last: BTreeMap<(String, u64, usize), &MetricsRecord> = BTreeMap::new();
    for r in records {
        let key = (r.method.clone(), r.seed, r.task);
        match last.get(&key) {
            Some(prev) if prev.round > r.round => {}
            _ => {
                last.insert(key, r);
            }
        }
    }
    last.into_iter()
        .filter_map(|((method, seed, task), r)| {
            let classes: Vec<ClassId> = match &r.old_classes {
                Some(c) if c.is_empty() => return None,
                Some(c) => c.clone(),
                None => (0..r.buffer_class_histogram.len()).collect(),
            };
            let (counts, min, max, std, missing_classes) =
                balance_of(&r.buffer_class_histogram, &classes);
            Some(BalanceRow {
                method,
                seed,
                task,
                counts,
                min,
                max,
                std,
                missing_classes,
            })
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Metrics {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Read a metrics file and compute its balance rows.
pub fn report_buffer_balance(metrics_path: &Path) -> Result<Vec<BalanceRow>> {
    Ok(balance_rows(&read_metrics(metrics_path)?))
}
