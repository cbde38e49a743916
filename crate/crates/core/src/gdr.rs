//! Globally coordinated replay selection.
//!
//! Each client multiplies its feature matrix by a private orthogonal matrix on
//! the left and a shared one on the right, the server stacks the masked blocks
//! and takes a thin SVD, and every row's leverage score (squared norm of its
//! row of `U`) drives class-stratified importance sampling. Selected rows are
//! decoded back to raw sample indices by the owning client.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::linalg::{
    apply_mask, random_orthogonal, thin_svd, FactoredMatrix, Matrix, OrthogonalKind,
    OrthogonalMatrix,
};
use crate::rng::rng_from;

pub type ClientId = usize;

/// Relative singular-value threshold used by [`RankPolicy::Numerical`].
pub const NUMERICAL_RANK_TOL: f64 = 1e-10;

/// Which columns of the thin `U` contribute to leverage scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    /// Only columns with `S_k > NUMERICAL_RANK_TOL · S_max`.
    #[default]
    Numerical,
    /// All `min(n, d)` columns, including arbitrary null-space completions.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBlock {
    pub client_id: ClientId,
    pub task_id: usize,
    pub masked: Matrix,
    /// `row_map[masked_row] = local sample index`; only for permutation masks.
    pub row_map: Option<Vec<usize>>,
}

impl MaskedBlock {
    /// Split into the part sent to the server and the client-private row map.
    pub fn into_upload(self) -> (MaskedBlock, Option<Vec<usize>>) {
        let row_map = self.row_map;
        (
            MaskedBlock {
                row_map: None,
                ..self
            },
            row_map,
        )
    }
}

/// Multiply `features` by a client-private `P` (generated from `p_seed`) and
/// the shared `q`.
pub fn mask_local_features(
    client_id: ClientId,
    task_id: usize,
    features: &Matrix,
    p_seed: u64,
    q: &OrthogonalMatrix,
    kind: OrthogonalKind,
) -> Result<MaskedBlock> {
    if q.size() != features.cols() {
        return Err(Error::InvalidDimension(format!(
            "shared mask is {0}x{0} but features have {1} columns",
            q.size(),
            features.cols()
        )));
    }
    let p = random_orthogonal(features.rows(), p_seed, kind)?;
    mask_with(client_id, task_id, features, &p, q)
}

/// Like [`mask_local_features`] with an explicit left mask.
pub fn mask_with(
    client_id: ClientId,
    task_id: usize,
    features: &Matrix,
    p: &OrthogonalMatrix,
    q: &OrthogonalMatrix,
) -> Result<MaskedBlock> {
    let masked = apply_mask(p, features, q)?;
    Ok(MaskedBlock {
        client_id,
        task_id,
        masked,
        row_map: p.permutation().map(<[usize]>::to_vec),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowOrigin {
    pub client_id: ClientId,
    pub row: usize,
}

/// Global row → (client, masked row).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTable {
    pub task_id: usize,
    pub origins: Vec<RowOrigin>,
}

impl IndexTable {
    /// Global row range owned by `client`.
    pub fn rows_of(&self, client: ClientId) -> std::ops::Range<usize> {
        let start = self.origins.iter().position(|o| o.client_id == client);
        match start {
            Some(s) => {
                let len = self.origins[s..]
                    .iter()
                    .take_while(|o| o.client_id == client)
                    .count();
                s..s + len
            }
            None => 0..0,
        }
    }
}

/// Stack blocks in ascending client order and factor the result.
pub fn aggregate_and_factor(blocks: &[MaskedBlock]) -> Result<(FactoredMatrix, IndexTable)> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no blocks to aggregate".into()))?;
    let (d, task_id) = (first.masked.cols(), first.task_id);
    let mut ordered: Vec<&MaskedBlock> = blocks.iter().collect();
    ordered.sort_by_key(|b| b.client_id);
    for pair in ordered.windows(2) {
        if pair[0].client_id == pair[1].client_id {
            return Err(Error::InvalidArgument(format!(
                "client {} uploaded twice",
                pair[0].client_id
            )));
        }
    }
    for b in &ordered {
        if b.masked.cols() != d {
            return Err(Error::InvalidDimension(format!(
                "client {} sent {} columns, expected {d}",
                b.client_id,
                b.masked.cols()
            )));
        }
        if b.task_id != task_id {
            return Err(Error::InvalidArgument(format!(
                "client {} sent task {}, expected {task_id}",
                b.client_id, b.task_id
            )));
        }
    }
    let origins: Vec<RowOrigin> = ordered
        .iter()
        .flat_map(|b| {
            (0..b.masked.rows()).map(|row| RowOrigin {
                client_id: b.client_id,
                row,
            })
        })
        .collect();
    if origins.is_empty() {
        return Err(Error::InvalidArgument(
            "aggregated matrix has no rows".into(),
        ));
    }
    let stacked = Matrix::vstack(&ordered.iter().map(|b| &b.masked).collect::<Vec<_>>())?;
    let factor = thin_svd(&stacked)?;
    Ok((factor, IndexTable { task_id, origins }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeverageRecord {
    pub client_id: ClientId,
    /// Masked row index within the client's block.
    pub row: usize,
    pub class_id: ClassId,
    pub score: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeverageProfile {
    pub task_id: usize,
    /// Number of `U` columns the scores were computed from.
    pub rank: usize,
    pub records: Vec<LeverageRecord>,
}

impl LeverageProfile {
    pub fn total_score(&self) -> f64 {
        self.records.iter().map(|r| r.score).sum()
    }
}

/// Raw leverage scores: squared row norms of the leading `rank` columns of U.
pub fn row_leverage(factor: &FactoredMatrix, policy: RankPolicy) -> (Vec<f64>, usize) {
    let rank = match policy {
        RankPolicy::Full => factor.rank_bound(),
        RankPolicy::Numerical => factor.numerical_rank(NUMERICAL_RANK_TOL),
    };
    let u = &factor.u;
    let scores = (0..u.rows())
        .map(|i| u.row(i)[..rank].iter().map(|v| v * v).sum())
        .collect();
    (scores, rank)
}

/// Attribute per-row leverage to clients. `row_classes[client][masked_row]`
/// is the class each client reports for its masked rows.
pub fn leverage_scores(
    factor: &FactoredMatrix,
    table: &IndexTable,
    row_classes: &BTreeMap<ClientId, Vec<ClassId>>,
    policy: RankPolicy,
) -> Result<LeverageProfile> {
    if factor.u.rows() != table.origins.len() {
        return Err(Error::InvalidDimension(format!(
            "factor has {} rows but the table has {}",
            factor.u.rows(),
            table.origins.len()
        )));
    }
    let (scores, rank) = row_leverage(factor, policy);
    let records = table
        .origins
        .iter()
        .zip(scores)
        .map(|(o, score)| {
            let class_id = row_classes
                .get(&o.client_id)
                .and_then(|c| c.get(o.row))
                .copied()
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "client {} reported no class for row {}",
                        o.client_id, o.row
                    ))
                })?;
            Ok(LeverageRecord {
                client_id: o.client_id,
                row: o.row,
                class_id,
                score,
                probability: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LeverageProfile {
        task_id: table.task_id,
        rank,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionMode {
    /// Normalize over every sample of the task.
    Global,
    /// Normalize within each class.
    PerClass,
}

/// Fill `probability = score / Σ score` over each normalization group.
pub fn build_distribution(
    profile: &LeverageProfile,
    mode: DistributionMode,
) -> Result<LeverageProfile> {
    if profile.records.is_empty() {
        return Err(Error::InvalidArgument("empty leverage profile".into()));
    }
    let group_key = |r: &LeverageRecord| match mode {
        DistributionMode::Global => 0,
        DistributionMode::PerClass => r.class_id,
    };
    let mut totals: BTreeMap<usize, f64> = BTreeMap::new();
    for r in &profile.records {
        *totals.entry(group_key(r)).or_default() += r.score;
    }
    if let Some((key, _)) = totals.iter().find(|(_, &t)| t.is_nan() || t <= 0.0) {
        return Err(Error::DegenerateFeatures(match mode {
            DistributionMode::Global => "all leverage scores are zero".to_string(),
            DistributionMode::PerClass => format!("class {key} has zero total leverage"),
        }));
    }
    let mut out = profile.clone();
    for r in &mut out.records {
        r.probability = r.score / totals[&group_key(r)];
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedSample {
    pub client_id: ClientId,
    /// Masked row index, decoded by the owning client.
    pub row: usize,
    pub class_id: ClassId,
    pub score: f64,
    /// Global-mode sampling probability.
    pub probability: f64,
    /// `1 / sqrt(n_s · probability)`.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySelection {
    pub task_id: usize,
    pub entries: Vec<SelectedSample>,
}

/// Split `budget` across groups: equal shares, remainder one-by-one in the
/// given priority order, and groups with too few items give up their surplus.
/// `available[i]` is listed in priority order.
pub fn balanced_quotas(available: &[usize], budget: usize) -> Vec<usize> {
    let mut quota = vec![0; available.len()];
    let mut active: Vec<usize> = (0..available.len()).filter(|&i| available[i] > 0).collect();
    let mut remaining = budget.min(available.iter().sum());
    while !active.is_empty() && remaining > 0 {
        let base = remaining / active.len();
        let extra = remaining % active.len();
        let tentative = |pos: usize| base + usize::from(pos < extra);
        let saturated: Vec<usize> = active
            .iter()
            .enumerate()
            .filter(|&(pos, &i)| available[i] <= tentative(pos))
            .map(|(_, &i)| i)
            .collect();
        if saturated.is_empty() {
            for (pos, &i) in active.iter().enumerate() {
                quota[i] = tentative(pos);
            }
            break;
        }
        for &i in &saturated {
            quota[i] = available[i];
            remaining -= available[i];
        }
        active.retain(|i| !saturated.contains(i));
    }
    quota
}

/// Class-balanced leverage sampling without replacement.
pub fn stratified_sample(
    profile: &LeverageProfile,
    budget: usize,
    seed: u64,
) -> Result<ReplaySelection> {
    let global = build_distribution(profile, DistributionMode::Global)?;

    // Zero-leverage rows cannot be drawn and would get an infinite weight.
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, r) in global.records.iter().enumerate() {
        if r.score > 0.0 {
            by_class.entry(r.class_id).or_default().push(i);
        }
    }
    let mut classes: Vec<(ClassId, f64)> = by_class
        .iter()
        .map(|(&c, idx)| (c, idx.iter().map(|&i| global.records[i].score).sum()))
        .collect();
    classes.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if budget < classes.len() {
        log::warn!(
            "replay budget {budget} is smaller than the {} classes in task {}",
            classes.len(),
            profile.task_id
        );
    }
    let available: Vec<usize> = classes.iter().map(|(c, _)| by_class[c].len()).collect();
    let quotas = balanced_quotas(&available, budget);

    let mut rng = rng_from(seed);
    let mut chosen: Vec<usize> = Vec::new();
    let mut draw_order: Vec<(ClassId, usize)> = classes
        .iter()
        .zip(&quotas)
        .map(|(&(c, _), &q)| (c, q))
        .collect();
    draw_order.sort_by_key(|&(c, _)| c);
    for (class, quota) in draw_order {
        let mut pool = by_class[&class].clone();
        for _ in 0..quota {
            let mass: f64 = pool.iter().map(|&i| global.records[i].score).sum();
            let target = rng.gen::<f64>() * mass;
            let mut acc = 0.0;
            let mut pick = pool.len() - 1;
            for (k, &i) in pool.iter().enumerate() {
                acc += global.records[i].score;
                if acc > target {
                    pick = k;
                    break;
                }
            }
            chosen.push(pool.swap_remove(pick));
        }
    }

    let n_s = chosen.len() as f64;
    let entries = chosen
        .into_iter()
        .map(|i| {
            let r = &global.records[i];
            SelectedSample {
                client_id: r.client_id,
                row: r.row,
                class_id: r.class_id,
                score: r.score,
                probability: r.probability,
                weight: 1.0 / (n_s * r.probability).sqrt(),
            }
        })
        .collect();
    Ok(ReplaySelection {
        task_id: profile.task_id,
        entries,
    })
}

/// `n_s` i.i.d. draws (with replacement) from the global distribution, each
/// weighted by `1 / sqrt(n_s · p)`.
pub fn iid_sample(profile: &LeverageProfile, n_s: usize, seed: u64) -> Result<ReplaySelection> {
    let global = build_distribution(profile, DistributionMode::Global)?;
    let mut rng = rng_from(seed);
    let entries = (0..n_s)
        .map(|_| {
            let target = rng.gen::<f64>();
            let mut acc = 0.0;
            let mut pick = global.records.len() - 1;
            for (i, r) in global.records.iter().enumerate() {
                acc += r.probability;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            let r = &global.records[pick];
            SelectedSample {
                client_id: r.client_id,
                row: r.row,
                class_id: r.class_id,
                score: r.score,
                probability: r.probability,
                weight: 1.0 / (n_s as f64 * r.probability).sqrt(),
            }
        })
        .collect();
    Ok(ReplaySelection {
        task_id: profile.task_id,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSample {
    pub local_index: usize,
    pub class_id: ClassId,
    pub score: f64,
    pub probability: f64,
    pub weight: f64,
}

/// Translate masked rows to local sample indices through each client's
/// private row map.
pub fn decode_selection(
    selection: &ReplaySelection,
    row_maps: &BTreeMap<ClientId, Vec<usize>>,
) -> Result<BTreeMap<ClientId, Vec<DecodedSample>>> {
    let mut out: BTreeMap<ClientId, Vec<DecodedSample>> = BTreeMap::new();
    for e in &selection.entries {
        let map = row_maps
            .get(&e.client_id)
            .ok_or(Error::UnsupportedDecode(e.client_id))?;
        let local_index = *map.get(e.row).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "row {} outside client {}'s row map",
                e.row, e.client_id
            ))
        })?;
        out.entry(e.client_id).or_default().push(DecodedSample {
            local_index,
            class_id: e.class_id,
            score: e.score,
            probability: e.probability,
            weight: e.weight,
        });
    }
    Ok(out)
}

/// One line of `selection.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReportRecord {
    pub task: usize,
    pub client: ClientId,
    pub local_index: usize,
    pub class: ClassId,
    pub score: f64,
    pub probability: f64,
    pub weight: f64,
}

pub fn selection_report(
    task: usize,
    decoded: &BTreeMap<ClientId, Vec<DecodedSample>>,
) -> Vec<SelectionReportRecord> {
    decoded
        .iter()
        .flat_map(|(&client, samples)| {
            samples.iter().map(move |s| SelectionReportRecord {
                task,
                client,
                local_index: s.local_index,
                class: s.class_id,
                score: s.score,
                probability: s.probability,
                weight: s.weight,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(scores: &[f64], classes: &[ClassId]) -> LeverageProfile {
        LeverageProfile {
            task_id: 0,
            rank: 0,
            records: scores
                .iter()
                .zip(classes)
                .enumerate()
                .map(|(i, (&score, &class_id))| LeverageRecord {
                    client_id: 0,
                    row: i,
                    class_id,
                    score,
                    probability: 0.0,
                })
                .collect(),
        }
    }

    fn single_client_classes(n: usize, class: ClassId) -> BTreeMap<ClientId, Vec<ClassId>> {
        [(0, vec![class; n])].into()
    }

    #[test]
    fn identity_masks_leave_features() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let b = mask_with(
            0,
            0,
            &x,
            &OrthogonalMatrix::identity(3),
            &OrthogonalMatrix::identity(2),
        )
        .unwrap();
        assert_eq!(b.masked, x);
        assert_eq!(b.row_map, Some(vec![0, 1, 2]));
    }

    #[test]
    fn permutation_mask_keeps_row_multiset() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]).unwrap();
        let q = OrthogonalMatrix::identity(2);
        let b = mask_local_features(1, 0, &x, 9, &q, OrthogonalKind::Permutation).unwrap();
        let map = b.row_map.as_ref().unwrap();
        for (masked_row, &local) in map.iter().enumerate() {
            assert_eq!(b.masked.row(masked_row), x.row(local));
        }
        let general =
            mask_local_features(1, 0, &x, 9, &q, OrthogonalKind::GeneralOrthogonal).unwrap();
        assert!(general.row_map.is_none());
    }

    #[test]
    fn mask_rejects_wrong_q() {
        let x = Matrix::zeros(3, 2);
        let q = OrthogonalMatrix::identity(3);
        assert!(mask_local_features(0, 0, &x, 1, &q, OrthogonalKind::Permutation).is_err());
    }

    #[test]
    fn upload_strips_row_map() {
        let x = Matrix::identity(2);
        let b = mask_local_features(
            0,
            0,
            &x,
            1,
            &OrthogonalMatrix::identity(2),
            OrthogonalKind::Permutation,
        )
        .unwrap();
        let (up, map) = b.into_upload();
        assert!(up.row_map.is_none());
        assert!(map.is_some());
    }

    #[test]
    fn table_bookkeeping() {
        let a = MaskedBlock {
            client_id: 4,
            task_id: 1,
            masked: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap(),
            row_map: None,
        };
        let b = MaskedBlock {
            client_id: 2,
            task_id: 1,
            masked: Matrix::from_rows(&[[2.0, 0.0]; 5]).unwrap(),
            row_map: None,
        };
        let (f, table) = aggregate_and_factor(&[a, b]).unwrap();
        assert_eq!(f.u.rows(), 8);
        assert_eq!(table.rows_of(2), 0..5);
        assert_eq!(table.rows_of(4), 5..8);
        assert_eq!(
            table.origins[6],
            RowOrigin {
                client_id: 4,
                row: 1
            }
        );
    }

    #[test]
    fn aggregation_rejects_mixed_inputs() {
        let a = MaskedBlock {
            client_id: 0,
            task_id: 0,
            masked: Matrix::zeros(2, 2),
            row_map: None,
        };
        let mut b = a.clone();
        b.client_id = 1;
        b.masked = Matrix::zeros(2, 3);
        assert!(aggregate_and_factor(&[a.clone(), b]).is_err());
        let mut c = a.clone();
        c.client_id = 1;
        c.task_id = 5;
        assert!(aggregate_and_factor(&[a, c]).is_err());
        assert!(aggregate_and_factor(&[]).is_err());
    }

    #[test]
    fn identity_has_unit_leverage() {
        let (f, t) = aggregate_and_factor(&[MaskedBlock {
            client_id: 0,
            task_id: 0,
            masked: Matrix::identity(3),
            row_map: None,
        }])
        .unwrap();
        let p = leverage_scores(&f, &t, &single_client_classes(3, 0), RankPolicy::Full).unwrap();
        for r in &p.records {
            assert!((r.score - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_example() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [2.0, 0.0]]).unwrap();
        let (f, t) = aggregate_and_factor(&[MaskedBlock {
            client_id: 0,
            task_id: 0,
            masked: x,
            row_map: None,
        }])
        .unwrap();
        let classes = single_client_classes(3, 0);
        let num = leverage_scores(&f, &t, &classes, RankPolicy::Numerical).unwrap();
        assert_eq!(num.rank, 1);
        for (r, want) in num.records.iter().zip([1.0 / 9.0, 4.0 / 9.0, 4.0 / 9.0]) {
            assert!((r.score - want).abs() < 1e-12);
        }
        let full = leverage_scores(&f, &t, &classes, RankPolicy::Full).unwrap();
        assert_eq!(full.rank, 2);
        assert!((full.total_score() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn global_distribution() {
        let p =
            build_distribution(&profile(&[1.0, 3.0], &[0, 0]), DistributionMode::Global).unwrap();
        assert_eq!(p.records[0].probability, 0.25);
        assert_eq!(p.records[1].probability, 0.75);
    }

    #[test]
    fn per_class_distribution() {
        let p = build_distribution(
            &profile(&[1.0, 1.0, 2.0, 2.0], &[0, 0, 1, 1]),
            DistributionMode::PerClass,
        )
        .unwrap();
        assert!(p.records.iter().all(|r| r.probability == 0.5));
    }

    #[test]
    fn zero_group_is_degenerate() {
        let err = build_distribution(
            &profile(&[0.0, 0.0, 1.0], &[0, 0, 1]),
            DistributionMode::PerClass,
        );
        assert!(matches!(err, Err(Error::DegenerateFeatures(_))));
        assert!(build_distribution(&profile(&[], &[]), DistributionMode::Global).is_err());
    }

    #[test]
    fn equal_quotas() {
        let scores: Vec<f64> = (0..20).map(|i| 0.1 + i as f64 * 0.01).collect();
        let classes: Vec<ClassId> = (0..20).map(|i| i / 10).collect();
        let sel = stratified_sample(&profile(&scores, &classes), 10, 3).unwrap();
        let a = sel.entries.iter().filter(|e| e.class_id == 0).count();
        assert_eq!((a, sel.entries.len() - a), (5, 5));
    }

    #[test]
    fn surplus_is_redistributed() {
        let mut classes = vec![0; 3];
        classes.extend(vec![1; 100]);
        let scores = vec![1.0; 103];
        let sel = stratified_sample(&profile(&scores, &classes), 10, 3).unwrap();
        let a = sel.entries.iter().filter(|e| e.class_id == 0).count();
        assert_eq!((a, sel.entries.len() - a), (3, 7));
    }

    #[test]
    fn weight_formula() {
        let sel = stratified_sample(&profile(&[1.0; 4], &[0, 0, 1, 1]), 4, 0).unwrap();
        assert_eq!(sel.entries.len(), 4);
        for e in &sel.entries {
            assert_eq!(e.probability, 0.25);
            assert_eq!(e.weight, 1.0);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_duplicate_free() {
        let scores: Vec<f64> = (0..30).map(|i| 1.0 + (i % 7) as f64).collect();
        let classes: Vec<ClassId> = (0..30).map(|i| i % 3).collect();
        let p = profile(&scores, &classes);
        let a = stratified_sample(&p, 12, 5).unwrap();
        assert_eq!(a, stratified_sample(&p, 12, 5).unwrap());
        let mut rows: Vec<usize> = a.entries.iter().map(|e| e.row).collect();
        rows.sort_unstable();
        rows.dedup();
        assert_eq!(rows.len(), 12);
    }

    #[test]
    fn quotas_with_tiny_budget() {
        assert_eq!(balanced_quotas(&[10, 10, 10], 2), vec![1, 1, 0]);
        assert_eq!(balanced_quotas(&[2, 10, 10], 30), vec![2, 10, 10]);
        assert_eq!(balanced_quotas(&[], 5), Vec::<usize>::new());
    }

    #[test]
    fn decode_through_row_maps() {
        let sel = ReplaySelection {
            task_id: 0,
            entries: vec![SelectedSample {
                client_id: 3,
                row: 0,
                class_id: 1,
                score: 0.5,
                probability: 0.1,
                weight: 1.0,
            }],
        };
        let reverse: BTreeMap<ClientId, Vec<usize>> = [(3, vec![4, 3, 2, 1, 0])].into();
        let decoded = decode_selection(&sel, &reverse).unwrap();
        assert_eq!(decoded[&3][0].local_index, 4);
        let ident: BTreeMap<ClientId, Vec<usize>> = [(3, (0..5).collect())].into();
        assert_eq!(
            decode_selection(&sel, &ident).unwrap()[&3][0].local_index,
            0
        );
        assert!(matches!(
            decode_selection(&sel, &BTreeMap::new()),
            Err(Error::UnsupportedDecode(3))
        ));
    }
}
