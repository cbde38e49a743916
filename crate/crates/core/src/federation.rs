//! The federated class-incremental protocol: broadcast, local training,
//! count-weighted averaging, and the end-of-task replay buffer update.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Method};
use crate::data::{ClassId, Dataset};
use crate::error::{Error, Result};
use crate::gdr::{
    aggregate_and_factor, balanced_quotas, decode_selection, leverage_scores, mask_local_features,
    selection_report, stratified_sample, ClientId, SelectionReportRecord,
};
use crate::linalg::{random_orthogonal, Matrix, OrthogonalKind};
use crate::nn::{ce_batch_loss, tts_loss_weighted, Gradients, LogitsSplit, Model, TtsParams};
use crate::rng::{derive_seed, derived_rng};

// Stream tags for derived seeds.
const TAG_TRAIN: u64 = 1;
const TAG_SHARED_MASK: u64 = 2;
const TAG_CLIENT_MASK: u64 = 3;
const TAG_SELECT: u64 = 4;
const TAG_LOCAL_REPLAY: u64 = 5;
const TAG_SHRINK: u64 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub task: usize,
    /// Index into the training dataset.
    pub index: usize,
    pub class_id: ClassId,
    pub weight: f64,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: ClientId,
    /// Training-set indices of this client's shard of the current task.
    pub current_task: Vec<usize>,
    pub buffer: Vec<BufferEntry>,
    pub model: Model,
    pub rng_seed: u64,
}

impl ClientState {
    pub fn new(client_id: ClientId, model: Model, rng_seed: u64) -> Self {
        Self {
            client_id,
            current_task: Vec::new(),
            buffer: Vec::new(),
            model,
            rng_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Plain cross-entropy on the first task.
    Initial,
    /// Temperature-scaled loss with replayed samples treated as old.
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub tts: TtsParams,
    pub use_leverage_weights: bool,
}

impl From<&ExperimentConfig> for TrainSettings {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            epochs: c.local_epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            weight_decay: c.weight_decay,
            tts: c.tts,
            use_leverage_weights: c.use_leverage_weights,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub model: Model,
    pub sample_count: usize,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

struct TrainItem {
    index: usize,
    position: usize,
    old: bool,
    weight: f64,
}

/// Run `settings.epochs` epochs of minibatch SGD on the client's current
/// shard plus its buffer, starting from `client.model`. Returns `None` when
/// the client has nothing to train on.
pub fn local_train(
    client: &ClientState,
    stage: Stage,
    settings: &TrainSettings,
    data: &Dataset,
    seed: u64,
) -> Result<Option<LocalUpdate>> {
    let model = &client.model;
    let position = |class: ClassId| {
        model.position_of(class).ok_or_else(|| {
            Error::InvalidArgument(format!("class {class} is not covered by the model head"))
        })
    };
    let mut items = Vec::with_capacity(client.current_task.len() + client.buffer.len());
    for &index in &client.current_task {
        items.push(TrainItem {
            index,
            position: position(data.sample(index).label)?,
            old: false,
            weight: 1.0,
        });
    }
    for e in &client.buffer {
        items.push(TrainItem {
            index: e.index,
            position: position(e.class_id)?,
            old: true,
            weight: if settings.use_leverage_weights {
                e.weight
            } else {
                1.0
            },
        });
    }
    if items.is_empty() {
        log::warn!("client {} has no training data; skipped", client.client_id);
        return Ok(None);
    }

    let mut model = model.clone();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut epoch_losses = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let mut rng = derived_rng(seed, &[epoch as u64]);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(settings.batch_size.max(1)) {
            let traces = batch
                .iter()
                .map(|&i| model.trace(&data.sample(items[i].index).features))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| items[i].position).collect();
            let (loss, grad_logits) = match stage {
                Stage::Initial => {
                    let logits: Vec<Vec<f64>> =
                        traces.iter().map(|t| t.logits().to_vec()).collect();
                    ce_batch_loss(&logits, &labels)?
                }
                Stage::Incremental => {
                    let boundary = model.boundary();
                    let splits: Vec<LogitsSplit> = traces
                        .iter()
                        .map(|t| LogitsSplit {
                            z_old: t.logits()[..boundary].to_vec(),
                            z_new: t.logits()[boundary..].to_vec(),
                        })
                        .collect();
                    let old: Vec<bool> = batch.iter().map(|&i| items[i].old).collect();
                    let weights: Vec<f64> = batch.iter().map(|&i| items[i].weight).collect();
                    let weights = settings.use_leverage_weights.then_some(weights.as_slice());
                    tts_loss_weighted(&splits, &labels, &old, &settings.tts, weights)?
                }
            };
            let mut grads = Gradients::zeros_like(&model);
            for (trace, g) in traces.iter().zip(&grad_logits) {
                model.backward(trace, g, &mut grads);
            }
            model = model.sgd_step(&grads, settings.lr, settings.weight_decay)?;
            loss_sum += loss;
            batches += 1;
        }
        epoch_losses.push(loss_sum / batches as f64);
    }
    Ok(Some(LocalUpdate {
        model,
        sample_count: items.len(),
        epoch_losses,
    }))
}

/// Count-weighted parameter average.
pub fn fedavg(models: &[Model], counts: &[usize]) -> Result<Model> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("no models to average".into()))?;
    if models.len() != counts.len() || counts.contains(&0) {
        return Err(Error::InvalidArgument(
            "need one positive sample count per model".into(),
        ));
    }
    if let Some(i) = models.iter().position(|m| !m.same_architecture(first)) {
        return Err(Error::ShapeMismatch(format!(
            "model {i} does not match the architecture of model 0"
        )));
    }
    let total: usize = counts.iter().sum();
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let mut out = first.clone();
    let sources: Vec<Vec<&[f64]>> = models.iter().map(Model::param_slices).collect();
    for (p, dst) in out.param_slices_mut().into_iter().enumerate() {
        for (j, v) in dst.iter_mut().enumerate() {
            *v = sources
                .iter()
                .zip(&weights)
                .map(|(src, w)| w * src[p][j])
                .sum();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub task_id: usize,
    pub round: usize,
    pub client_counts: Vec<usize>,
    /// Checksum of the model each client started the round from.
    pub client_start_checksums: Vec<String>,
    pub global_checksum: String,
    pub mean_train_loss: f64,
}

/// Seed of `client_seed`'s local training stream in (`task_id`, `round`).
pub fn round_seed(client_seed: u64, task_id: usize, round: usize) -> u64 {
    derive_seed(client_seed, &[TAG_TRAIN, task_id as u64, round as u64])
}

/// `rounds` rounds of broadcast → local training → FedAvg. `on_round` sees
/// each report together with the new global model.
#[allow(clippy::too_many_arguments)]
pub fn run_task<F>(
    task_id: usize,
    global: Model,
    clients: &mut [ClientState],
    stage: Stage,
    settings: &TrainSettings,
    rounds: usize,
    data: &Dataset,
    mut on_round: F,
) -> Result<(Model, Vec<RoundReport>)>
where
    F: FnMut(&RoundReport, &Model) -> Result<()>,
{
    let mut global = global;
    let mut reports = Vec::with_capacity(rounds);
    for round in 0..rounds {
        for c in clients.iter_mut() {
            c.model = global.clone();
        }
        let start: Vec<String> = clients.iter().map(|c| c.model.checksum()).collect();
        let updates = clients
            .par_iter()
            .map(|c| {
                local_train(
                    c,
                    stage,
                    settings,
                    data,
                    round_seed(c.rng_seed, task_id, round),
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let mut models = Vec::new();
        let mut counts = vec![0; clients.len()];
        let mut loss = 0.0;
        for ((k, u), c) in updates.into_iter().enumerate().zip(clients.iter_mut()) {
            if let Some(u) = u {
                counts[k] = u.sample_count;
                loss += u.epoch_losses.last().copied().unwrap_or(0.0);
                c.model = u.model.clone();
                models.push(u.model);
            }
        }
        let active: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
        if !models.is_empty() {
            global = fedavg(&models, &active)?;
        }
        let report = RoundReport {
            task_id,
            round,
            client_counts: counts,
            client_start_checksums: start,
            global_checksum: global.checksum(),
            mean_train_loss: if models.is_empty() {
                0.0
            } else {
                loss / models.len() as f64
            },
        };
        on_round(&report, &global)?;
        reports.push(report);
    }
    Ok((global, reports))
}

/// What the replay update did.
#[derive(Debug, Clone, Default)]
pub struct ReplayOutcome {
    pub records: Vec<SelectionReportRecord>,
    pub fell_back: bool,
}

/// Select exemplars of the finished task `task_id` and enforce the budget.
pub fn end_of_task_replay_update(
    task_id: usize,
    global: &Model,
    clients: &mut [ClientState],
    config: &ExperimentConfig,
    method: Method,
    data: &Dataset,
    seed: u64,
) -> Result<ReplayOutcome> {
    let mut outcome = match method {
        Method::Finetune => return Ok(ReplayOutcome::default()),
        Method::FedCbdr => match global_replay(task_id, global, clients, config, data, seed) {
            Ok(o) => o,
            Err(e) => {
                log::warn!(
                    "global replay failed for task {task_id} ({e}); using local random replay"
                );
                let mut o = local_random_replay(task_id, clients, config, data, seed);
                o.fell_back = true;
                o
            }
        },
        Method::LocalRandomReplay => local_random_replay(task_id, clients, config, data, seed),
    };
    shrink_buffers(clients, config.buffer_budget, method, seed, task_id);
    // drop report lines for exemplars the shrink removed
    outcome.records.retain(|r| {
        clients.iter().any(|c| {
            let index = c.current_task.get(r.local_index).copied();
            c.client_id == r.client
                && c.buffer
                    .iter()
                    .any(|e| e.task == task_id && Some(e.index) == index)
        })
    });
    Ok(outcome)
}

fn global_replay(
    task_id: usize,
    global: &Model,
    clients: &mut [ClientState],
    config: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
) -> Result<ReplayOutcome> {
    let d = global.feature_dim();
    let shared_seed = derive_seed(seed, &[TAG_SHARED_MASK, task_id as u64]);
    let q = random_orthogonal(d, shared_seed, OrthogonalKind::GeneralOrthogonal)?;

    // Client side: extract features with the global model and mask them.
    let mut uploads = Vec::new();
    let mut row_maps: BTreeMap<ClientId, Vec<usize>> = BTreeMap::new();
    let mut row_classes: BTreeMap<ClientId, Vec<ClassId>> = BTreeMap::new();
    let masked = clients
        .par_iter()
        .filter(|c| !c.current_task.is_empty())
        .map(|c| {
            let rows = c
                .current_task
                .iter()
                .map(|&i| global.features(&data.sample(i).features))
                .collect::<Result<Vec<_>>>()?;
            let features = Matrix::from_rows(&rows)?;
            let p_seed = derive_seed(
                c.rng_seed,
                &[TAG_CLIENT_MASK, task_id as u64, c.client_id as u64],
            );
            let block = mask_local_features(
                c.client_id,
                task_id,
                &features,
                p_seed,
                &q,
                config.mask_kind,
            )?;
            Ok((c.client_id, block))
        })
        .collect::<Result<Vec<_>>>()?;
    for (client_id, block) in masked {
        let (upload, row_map) = block.into_upload();
        let row_map = row_map.ok_or(Error::UnsupportedDecode(client_id))?;
        let client = clients.iter().find(|c| c.client_id == client_id).unwrap();
        row_classes.insert(
            client_id,
            row_map
                .iter()
                .map(|&local| data.sample(client.current_task[local]).label)
                .collect(),
        );
        row_maps.insert(client_id, row_map);
        uploads.push(upload);
    }

    // Server side.
    let (factor, table) = aggregate_and_factor(&uploads)?;
    let profile = leverage_scores(&factor, &table, &row_classes, config.rank_policy)?;
    let selection = stratified_sample(
        &profile,
        config.per_task_quota,
        derive_seed(seed, &[TAG_SELECT, task_id as u64]),
    )?;

    // Back on the clients.
    let decoded = decode_selection(&selection, &row_maps)?;
    for c in clients.iter_mut() {
        if let Some(samples) = decoded.get(&c.client_id) {
            for s in samples {
                c.buffer.push(BufferEntry {
                    task: task_id,
                    index: c.current_task[s.local_index],
                    class_id: s.class_id,
                    weight: s.weight,
                    score: s.score,
                });
            }
        }
    }
    Ok(ReplayOutcome {
        records: selection_report(task_id, &decoded),
        fell_back: false,
    })
}

fn local_random_replay(
    task_id: usize,
    clients: &mut [ClientState],
    config: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
) -> ReplayOutcome {
    let per_client = config.per_task_quota.div_ceil(clients.len().max(1));
    let mut records = Vec::new();
    for c in clients.iter_mut() {
        let n = c.current_task.len();
        let take = per_client.min(n);
        let mut rng = derived_rng(
            seed,
            &[TAG_LOCAL_REPLAY, task_id as u64, c.client_id as u64],
        );
        let mut picked = index::sample(&mut rng, n, take).into_vec();
        picked.sort_unstable();
        for local in picked {
            let idx = c.current_task[local];
            let class_id = data.sample(idx).label;
            c.buffer.push(BufferEntry {
                task: task_id,
                index: idx,
                class_id,
                weight: 1.0,
                score: 0.0,
            });
            records.push(SelectionReportRecord {
                task: task_id,
                client: c.client_id,
                local_index: local,
                class: class_id,
                score: 0.0,
                probability: 1.0 / n as f64,
                weight: 1.0,
            });
        }
    }
    ReplayOutcome {
        records,
        fell_back: false,
    }
}

/// If the buffers exceed `budget`, cut every past task down to
/// `budget / num_past_tasks` entries: class-balanced highest-leverage for
/// FedCBDR, uniformly random otherwise.
pub fn shrink_buffers(
    clients: &mut [ClientState],
    budget: usize,
    method: Method,
    seed: u64,
    task_id: usize,
) {
    let total: usize = clients.iter().map(|c| c.buffer.len()).sum();
    if total <= budget {
        return;
    }
    let tasks: BTreeSet<usize> = clients
        .iter()
        .flat_map(|c| c.buffer.iter().map(|e| e.task))
        .collect();
    let allocation = budget / tasks.len();
    for &t in &tasks {
        // (client position, buffer position) of every entry of task t
        let entries: Vec<(usize, usize)> = clients
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| {
                c.buffer
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.task == t)
                    .map(move |(bi, _)| (ci, bi))
            })
            .collect();
        if entries.len() <= allocation {
            continue;
        }
        let entry = |&(ci, bi): &(usize, usize)| &clients[ci].buffer[bi];
        let keep: BTreeSet<(usize, usize)> = match method {
            Method::FedCbdr => {
                let mut by_class: BTreeMap<ClassId, Vec<(usize, usize)>> = BTreeMap::new();
                for e in &entries {
                    by_class.entry(entry(e).class_id).or_default().push(*e);
                }
                let mut classes: Vec<(ClassId, f64)> = by_class
                    .iter()
                    .map(|(&c, es)| (c, es.iter().map(|e| entry(e).score).sum()))
                    .collect();
                classes.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let available: Vec<usize> =
                    classes.iter().map(|(c, _)| by_class[c].len()).collect();
                let quotas = balanced_quotas(&available, allocation);
                let mut keep = BTreeSet::new();
                for ((class, _), q) in classes.iter().zip(quotas) {
                    let mut es = by_class[class].clone();
                    es.sort_by(|a, b| entry(b).score.total_cmp(&entry(a).score).then(a.cmp(b)));
                    keep.extend(es.into_iter().take(q));
                }
                keep
            }
            _ => {
                let mut rng = derived_rng(seed, &[TAG_SHRINK, task_id as u64, t as u64]);
                index::sample(&mut rng, entries.len(), allocation)
                    .into_iter()
                    .map(|i| entries[i])
                    .collect()
            }
        };
        for (ci, c) in clients.iter_mut().enumerate() {
            let mut bi = 0;
            c.buffer.retain(|e| {
                let kept = e.task != t || keep.contains(&(ci, bi));
                bi += 1;
                kept
            });
        }
    }
}

/// Per-class buffer counts over all clients, indexed by class id.
pub fn buffer_histogram(clients: &[ClientState], num_classes: usize) -> Vec<usize> {
    let mut h = vec![0; num_classes];
    for c in clients {
        for e in &c.buffer {
            h[e.class_id] += 1;
        }
    }
    h
}
