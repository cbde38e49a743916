//! Datasets, class-incremental task splits and Dirichlet client partitions.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived_rng, rng_from};

pub type ClassId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: ClassId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    dim: usize,
    split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, split: Split) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?;
        let dim = first.features.len();
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::InvalidDimension(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.label >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has label {} >= {num_classes}",
                    s.label
                )));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            dim,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// Indices of all samples whose label is in `classes`, ascending.
    pub fn indices_of(&self, classes: &BTreeSet<ClassId>) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| classes.contains(&s.label))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Gaussian-mixture train/test pair. Class means are random unit vectors
/// scaled by 3; test gets `ceil(per_class / 5)` samples per class.
pub fn generate_synthetic(
    num_classes: usize,
    per_class: usize,
    d_in: usize,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if num_classes < 2 || per_class < 2 || d_in < 2 {
        return Err(Error::InvalidArgument(format!(
            "need num_classes >= 2, per_class >= 2, d_in >= 2 (got {num_classes}, {per_class}, {d_in})"
        )));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spread must be > 0, got {spread}"
        )));
    }
    let mut rng = derived_rng(seed, &[0]);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..d_in).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| 3.0 * x / norm).collect()
        })
        .collect();
    let noise = Normal::new(0.0, spread).expect("spread validated above");

    let draw = |count: usize, stream: u64| {
        let mut rng = derived_rng(seed, &[stream]);
        let mut out = Vec::with_capacity(count * num_classes);
        for (label, mean) in means.iter().enumerate() {
            for _ in 0..count {
                let features = mean.iter().map(|m| m + noise.sample(&mut rng)).collect();
                out.push(Sample { features, label });
            }
        }
        out
    };
    let train = draw(per_class, 1);
    let test = draw(per_class.div_ceil(5), 2);
    Ok((
        Dataset::new(train, num_classes, Split::Train)?,
        Dataset::new(test, num_classes, Split::Test)?,
    ))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(path.to_path_buf()))
}

/// Load an MNIST-format IDX image/label pair; pixels are scaled to [0, 1].
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let magic = be_u32(&images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = be_u32(&labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }

    let n_images = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let n_labels = be_u32(&labels, 4, labels_path)? as usize;
    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let dim = rows * cols;
    let pixels = images
        .get(16..16 + n_images * dim)
        .ok_or_else(|| Error::Truncated(images_path.to_path_buf()))?;
    let label_bytes = labels
        .get(8..8 + n_labels)
        .ok_or_else(|| Error::Truncated(labels_path.to_path_buf()))?;

    let num_classes = label_bytes
        .iter()
        .copied()
        .max()
        .map_or(0, |m| m as usize + 1);
    let samples = pixels
        .chunks_exact(dim.max(1))
        .zip(label_bytes)
        .map(|(px, &label)| Sample {
            features: px.iter().map(|&b| f64::from(b) / 255.0).collect(),
            label: label as usize,
        })
        .collect();
    Dataset::new(samples, num_classes, split)
}

/// Ordered, disjoint class sets, one per task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub task_classes: Vec<BTreeSet<ClassId>>,
}

impl TaskSplit {
    pub fn num_tasks(&self) -> usize {
        self.task_classes.len()
    }

    pub fn classes_before(&self, task: usize) -> BTreeSet<ClassId> {
        self.task_classes[..task]
            .iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn task_of(&self, class: ClassId) -> Option<usize> {
        self.task_classes.iter().position(|t| t.contains(&class))
    }
}

/// Shuffle class ids by seed and chunk into `num_tasks` equal groups.
pub fn split_tasks(num_classes: usize, num_tasks: usize, seed: u64) -> Result<TaskSplit> {
    if num_tasks == 0 || num_classes == 0 || !num_classes.is_multiple_of(num_tasks) {
        return Err(Error::InvalidArgument(format!(
            "{num_classes} classes cannot be split evenly into {num_tasks} tasks"
        )));
    }
    let mut classes: Vec<ClassId> = (0..num_classes).collect();
    classes.shuffle(&mut rng_from(seed));
    let per = num_classes / num_tasks;
    Ok(TaskSplit {
        task_classes: classes
            .chunks(per)
            .map(|c| c.iter().copied().collect())
            .collect(),
    })
}

/// Per-client lists of dataset indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
    /// How many Dirichlet draws were rejected for leaving a client empty.
    pub resamples: usize,
}

const MAX_PARTITION_ATTEMPTS: usize = 10_000;

/// Split the samples of `task` across clients with per-class proportions
/// drawn from `Dirichlet(beta * 1_K)`, redrawing until no client is empty.
pub fn dirichlet_partition(
    dataset: &Dataset,
    task: &BTreeSet<ClassId>,
    num_clients: usize,
    beta: f64,
    seed: u64,
) -> Result<Partition> {
    if task.is_empty() {
        return Err(Error::InvalidArgument("task has no classes".into()));
    }
    if num_clients < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 clients, got {num_clients}"
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "beta must be > 0, got {beta}"
        )));
    }
    let by_class: Vec<Vec<usize>> = task
        .iter()
        .map(|&c| {
            dataset
                .samples()
                .iter()
                .enumerate()
                .filter(|(_, s)| s.label == c)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    if let Some(pos) = by_class.iter().position(Vec::is_empty) {
        let class = task.iter().nth(pos).copied().unwrap_or_default();
        return Err(Error::InvalidArgument(format!(
            "class {class} has no samples in the dataset"
        )));
    }
    let total: usize = by_class.iter().map(Vec::len).sum();
    if total < num_clients {
        return Err(Error::InvalidArgument(format!(
            "{total} samples cannot cover {num_clients} clients"
        )));
    }

    let gamma = Gamma::new(beta, 1.0).expect("beta validated above");
    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let mut rng = rng_from(derive_seed(seed, &[attempt as u64]));
        let mut clients = vec![Vec::new(); num_clients];
        for indices in &by_class {
            let props = loop {
                let g: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
                let sum: f64 = g.iter().sum();
                if sum > 0.0 && sum.is_finite() {
                    break g.into_iter().map(|x| x / sum).collect::<Vec<_>>();
                }
            };
            let counts = largest_remainder(&props, indices.len(), &mut rng);
            let mut shuffled = indices.clone();
            shuffled.shuffle(&mut rng);
            let mut start = 0;
            for (client, &count) in counts.iter().enumerate() {
                clients[client].extend_from_slice(&shuffled[start..start + count]);
                start += count;
            }
        }
        if clients.iter().all(|c| !c.is_empty()) {
            if attempt > 0 {
                log::debug!("dirichlet partition needed {attempt} resamples");
            }
            for c in &mut clients {
                c.sort_unstable();
            }
            return Ok(Partition {
                client_indices: clients,
                resamples: attempt,
            });
        }
    }
    Err(Error::InvalidArgument(format!(
        "no Dirichlet draw with beta={beta} left every one of {num_clients} clients non-empty"
    )))
}

/// Round `props * total` to integers summing to `total`. Leftover units go to
/// the largest fractional parts; ties are broken by a random key.
fn largest_remainder<R: Rng>(props: &[f64], total: usize, rng: &mut R) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<(usize, f64, u64)> = raw
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r - r.floor(), rng.gen()))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
    for &(i, _, _) in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Mean Shannon entropy (nats) of per-client label distributions.
pub fn mean_client_entropy(dataset: &Dataset, partition: &Partition) -> f64 {
    let k = partition.client_indices.len();
    let total: f64 = partition
        .client_indices
        .iter()
        .map(|idx| {
            let mut counts = vec![0usize; dataset.num_classes()];
            for &i in idx {
                counts[dataset.sample(i).label] += 1;
            }
            let n = idx.len() as f64;
            counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.ln()
                })
                .sum::<f64>()
        })
        .sum();
    total / k as f64
}
