//! End-to-end experiment driver: data → task splits → federated rounds →
//! replay updates → JSON-lines reports.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig, Method};
use crate::data::{
    dirichlet_partition, generate_synthetic, load_idx, split_tasks, Dataset, Split, TaskSplit,
};
use crate::error::{Error, Result};
use crate::federation::{
    buffer_histogram, end_of_task_replay_update, run_task, ClientState, Stage, TrainSettings,
};
use crate::gdr::SelectionReportRecord;
use crate::metrics::{evaluate, MetricsRecord};
use crate::nn::Model;
use crate::rng::derive_seed;

const TAG_DATA: u64 = 100;
const TAG_SPLIT: u64 = 101;
const TAG_MODEL: u64 = 102;
const TAG_PARTITION: u64 = 103;
const TAG_HEAD: u64 = 104;
const TAG_CLIENT: u64 = 105;
const TAG_REPLAY: u64 = 106;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SELECTION_FILE: &str = "selection.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// Receives report lines as a run progresses.
pub trait ReportSink {
    fn metrics(&mut self, record: &MetricsRecord) -> Result<()>;
    fn selection(
        &mut self,
        method: Method,
        seed: u64,
        record: &SelectionReportRecord,
    ) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl ReportSink for NullSink {
    fn metrics(&mut self, _: &MetricsRecord) -> Result<()> {
        Ok(())
    }
    fn selection(&mut self, _: Method, _: u64, _: &SelectionReportRecord) -> Result<()> {
        Ok(())
    }
}

/// Keeps every record in memory.
#[derive(Default)]
pub struct MemorySink {
    pub metrics: Vec<MetricsRecord>,
    pub selections: Vec<(Method, u64, SelectionReportRecord)>,
}

impl ReportSink for MemorySink {
    fn metrics(&mut self, record: &MetricsRecord) -> Result<()> {
        self.metrics.push(record.clone());
        Ok(())
    }
    fn selection(
        &mut self,
        method: Method,
        seed: u64,
        record: &SelectionReportRecord,
    ) -> Result<()> {
        self.selections.push((method, seed, record.clone()));
        Ok(())
    }
}

#[derive(Serialize)]
struct SelectionLine<'a> {
    method: &'a str,
    seed: u64,
    #[serde(flatten)]
    record: &'a SelectionReportRecord,
}

/// Writes `metrics.jsonl` and `selection.jsonl`.
pub struct FileSink {
    metrics: BufWriter<File>,
    selection: BufWriter<File>,
}

impl FileSink {
    pub fn create(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(Self {
            metrics: BufWriter::new(File::create(out_dir.join(METRICS_FILE))?),
            selection: BufWriter::new(File::create(out_dir.join(SELECTION_FILE))?),
        })
    }

    pub fn flush(&mut self) -> Result<()> {
        self.metrics.flush()?;
        self.selection.flush()?;
        Ok(())
    }
}

impl ReportSink for FileSink {
    fn metrics(&mut self, record: &MetricsRecord) -> Result<()> {
        serde_json::to_writer(&mut self.metrics, record)?;
        self.metrics.write_all(b"\n")?;
        Ok(())
    }
    fn selection(
        &mut self,
        method: Method,
        seed: u64,
        record: &SelectionReportRecord,
    ) -> Result<()> {
        let line = SelectionLine {
            method: method.name(),
            seed,
            record,
        };
        serde_json::to_writer(&mut self.selection, &line)?;
        self.selection.write_all(b"\n")?;
        Ok(())
    }
}

impl Drop for FileSink {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Outcome of one (method, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub final_top1: f64,
    pub final_per_task: Vec<f64>,
    /// Buffer histogram after each task's replay update.
    pub buffer_histograms: Vec<Vec<usize>>,
    pub task_split: TaskSplit,
    pub replay_fallbacks: usize,
}

pub fn load_datasets(spec: &DatasetSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    match spec {
        DatasetSpec::Synthetic {
            num_classes,
            per_class,
            d_in,
            spread,
        } => generate_synthetic(
            *num_classes,
            *per_class,
            *d_in,
            *spread,
            derive_seed(seed, &[TAG_DATA]),
        ),
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => Ok((
            load_idx(train_images, train_labels, Split::Train)?,
            load_idx(test_images, test_labels, Split::Test)?,
        )),
    }
}

/// Run one method under one seed, streaming records into `sink`.
pub fn run_single(
    config: &ExperimentConfig,
    method: Method,
    seed: u64,
    sink: &mut dyn ReportSink,
) -> Result<RunResult> {
    let (train, test) = load_datasets(&config.dataset, seed)?;
    let num_classes = train.num_classes().max(test.num_classes());
    let split = split_tasks(
        num_classes,
        config.num_tasks,
        derive_seed(seed, &[TAG_SPLIT]),
    )?;
    let settings = TrainSettings::from(config);

    let mut global = Model::new(train.dim(), &config.hidden, derive_seed(seed, &[TAG_MODEL]))?;
    let mut clients: Vec<ClientState> = (0..config.num_clients)
        .map(|k| {
            ClientState::new(
                k,
                global.clone(),
                derive_seed(seed, &[TAG_CLIENT, k as u64]),
            )
        })
        .collect();
    let test_by_task: Vec<Vec<usize>> = split
        .task_classes
        .iter()
        .map(|c| test.indices_of(c))
        .collect();

    let mut final_top1 = 0.0;
    let mut final_per_task = Vec::new();
    let mut histograms = Vec::new();
    let mut fallbacks = 0;
    for (t, classes) in split.task_classes.iter().enumerate() {
        let partition = dirichlet_partition(
            &train,
            classes,
            config.num_clients,
            config.beta,
            derive_seed(seed, &[TAG_PARTITION, t as u64]),
        )?;
        for (c, shard) in clients.iter_mut().zip(partition.client_indices) {
            c.current_task = shard;
        }
        let new_classes: Vec<usize> = classes.iter().copied().collect();
        global = global.expand_head(&new_classes, derive_seed(seed, &[TAG_HEAD, t as u64]))?;
        let stage = match (method, t) {
            (Method::FedCbdr, t) if t > 0 => Stage::Incremental,
            _ => Stage::Initial,
        };

        let histogram = buffer_histogram(&clients, num_classes);
        let old_classes: Vec<usize> = split.classes_before(t).into_iter().collect();
        let seen = &test_by_task[..=t];
        let (g, _) = run_task(
            t,
            global,
            &mut clients,
            stage,
            &settings,
            config.rounds_per_task,
            &train,
            |report, model| {
                let (top1, per_task) = evaluate(model, &test, seen)?;
                final_top1 = top1;
                final_per_task = per_task.clone();
                sink.metrics(&MetricsRecord {
                    method: method.name().to_string(),
                    seed,
                    beta: config.beta,
                    task: t,
                    round: report.round,
                    global_test_acc: top1,
                    per_task_acc: per_task,
                    train_loss: report.mean_train_loss,
                    buffer_class_histogram: histogram.clone(),
                    old_classes: Some(old_classes.clone()),
                })
            },
        )?;
        global = g;

        let outcome = end_of_task_replay_update(
            t,
            &global,
            &mut clients,
            config,
            method,
            &train,
            derive_seed(seed, &[TAG_REPLAY]),
        )?;
        if outcome.fell_back {
            fallbacks += 1;
        }
        for r in &outcome.records {
            sink.selection(method, seed, r)?;
        }
        histograms.push(buffer_histogram(&clients, num_classes));
    }
    Ok(RunResult {
        method,
        seed,
        final_top1,
        final_per_task,
        buffer_histograms: histograms,
        task_split: split,
        replay_fallbacks: fallbacks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub seeds: Vec<u64>,
    pub final_top1: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (0 for a single seed).
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub beta: f64,
    pub num_tasks: usize,
    pub methods: BTreeMap<String, MethodSummary>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run every configured method and seed into `sink`.
pub fn run_all(
    config: &ExperimentConfig,
    sink: &mut dyn ReportSink,
) -> Result<(Summary, Vec<RunResult>)> {
    let mut results = Vec::new();
    let mut methods = BTreeMap::new();
    for &method in &config.methods {
        let mut accs = Vec::new();
        for &seed in &config.seeds {
            log::info!("running {} with seed {seed}", method.name());
            let r = run_single(config, method, seed, sink)?;
            accs.push(r.final_top1);
            results.push(r);
        }
        let (mean, std) = mean_std(&accs);
        methods.insert(
            method.name().to_string(),
            MethodSummary {
                seeds: config.seeds.clone(),
                final_top1: accs,
                mean,
                std,
            },
        );
    }
    Ok((
        Summary {
            beta: config.beta,
            num_tasks: config.num_tasks,
            methods,
        },
        results,
    ))
}

/// Run the experiment, writing `metrics.jsonl`, `selection.jsonl` and
/// `summary.json` into `out_dir`. Partial reports are flushed on failure.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Summary> {
    let mut sink = FileSink::create(out_dir)?;
    let result = run_all(config, &mut sink);
    sink.flush()?;
    let (summary, _) = result?;
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(out_dir.join(SUMMARY_FILE), text)?;
    Ok(summary)
}

/// One cell of a temperature/weight sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub tau_old: f64,
    pub tau_new: f64,
    pub w_old: f64,
    pub w_new: f64,
    pub final_top1: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub struct GridAxes {
    pub tau_old: Vec<f64>,
    pub tau_new: Vec<f64>,
    pub w_old: Vec<f64>,
    pub w_new: Vec<f64>,
}

/// FedCBDR over the Cartesian product of the axes; one `grid.jsonl` line per
/// cell when `out_dir` is given.
pub fn run_grid(
    config: &ExperimentConfig,
    axes: &GridAxes,
    out_dir: Option<&Path>,
) -> Result<Vec<GridCell>> {
    let mut writer = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("grid.jsonl"))?))
        }
        None => None,
    };
    let mut cells = Vec::new();
    for &tau_old in &axes.tau_old {
        for &tau_new in &axes.tau_new {
            for &w_old in &axes.w_old {
                for &w_new in &axes.w_new {
                    let mut cfg = config.clone();
                    cfg.methods = vec![Method::FedCbdr];
                    cfg.tts = crate::nn::TtsParams {
                        tau_old,
                        tau_new,
                        w_old,
                        w_new,
                    };
                    cfg.tts.validate()?;
                    let (summary, _) = run_all(&cfg, &mut NullSink)?;
                    let s = &summary.methods[Method::FedCbdr.name()];
                    let cell = GridCell {
                        tau_old,
                        tau_new,
                        w_old,
                        w_new,
                        final_top1: s.final_top1.clone(),
                        mean: s.mean,
                        std: s.std,
                    };
                    if let Some(w) = writer.as_mut() {
                        serde_json::to_writer(&mut *w, &cell)?;
                        w.write_all(b"\n")?;
                    }
                    cells.push(cell);
                }
            }
        }
    }
    if let Some(mut w) = writer {
        w.flush().map_err(Error::Io)?;
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
