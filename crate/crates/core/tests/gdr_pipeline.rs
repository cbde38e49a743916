mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use fedcbdr::gdr::{
    aggregate_and_factor, balanced_quotas, build_distribution, decode_selection, leverage_scores,
    mask_local_features, mask_with, selection_report, stratified_sample, DistributionMode,
    LeverageProfile, LeverageRecord, RankPolicy, ReplaySelection, SelectedSample,
};
use fedcbdr::linalg::{random_orthogonal, Matrix, OrthogonalKind, OrthogonalMatrix};
use fedcbdr::rng::rng_from;
use fedcbdr::Error;

use common::{gaussian, hat_diagonal};

fn plain_block(client: usize, x: &Matrix) -> fedcbdr::gdr::MaskedBlock {
    mask_with(
        client,
        0,
        x,
        &OrthogonalMatrix::identity(x.rows()),
        &OrthogonalMatrix::identity(x.cols()),
    )
    .unwrap()
}

fn profile_from(scores: &[f64], classes: &[usize]) -> LeverageProfile {
    LeverageProfile {
        task_id: 0,
        rank: 1,
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

fn single_profile(x: &Matrix, policy: RankPolicy) -> LeverageProfile {
    let (f, t) = aggregate_and_factor(&[plain_block(0, x)]).unwrap();
    leverage_scores(&f, &t, &BTreeMap::from([(0, vec![0; x.rows()])]), policy).unwrap()
}

#[test]
fn identity_scores_are_one() {
    let p = single_profile(&Matrix::identity(3), RankPolicy::Numerical);
    for r in &p.records {
        assert!((r.score - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rank_deficient_example_under_both_policies() {
    let x = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [2.0, 0.0]]).unwrap();
    let p = single_profile(&x, RankPolicy::Numerical);
    let scores: Vec<f64> = p.records.iter().map(|r| r.score).collect();
    for (s, e) in scores.iter().zip([1.0 / 9.0, 4.0 / 9.0, 4.0 / 9.0]) {
        assert!((s - e).abs() < 1e-12);
    }
    assert_eq!(p.rank, 1);
    let full = single_profile(&x, RankPolicy::Full);
    assert_eq!(full.rank, 2);
    assert!((full.total_score() - 2.0).abs() < 1e-10);
}

#[test]
fn tall_full_rank_scores_match_hat_matrix() {
    let mut rng = rng_from(8);
    for _ in 0..10 {
        let x = gaussian(30, 5, &mut rng);
        let p = single_profile(&x, RankPolicy::Numerical);
        for (r, h) in p.records.iter().zip(hat_diagonal(&x)) {
            assert!((r.score - h).abs() < 1e-10, "{} vs {h}", r.score);
        }
    }
}

#[test]
fn aggregation_bookkeeping() {
    let mut rng = rng_from(1);
    let a = gaussian(3, 4, &mut rng);
    let b = gaussian(5, 4, &mut rng);
    let (f, table) = aggregate_and_factor(&[plain_block(7, &b), plain_block(2, &a)]).unwrap();
    assert_eq!(f.u.rows(), 8);
    assert_eq!(table.rows_of(2), 0..3);
    assert_eq!(table.rows_of(7), 3..8);
    assert_eq!(table.origins[4].row, 1);

    let other_d = gaussian(2, 3, &mut rng);
    assert!(aggregate_and_factor(&[plain_block(0, &a), plain_block(1, &other_d)]).is_err());
    let mut wrong_task = plain_block(1, &b);
    wrong_task.task_id = 9;
    assert!(aggregate_and_factor(&[plain_block(0, &a), wrong_task]).is_err());
    assert!(aggregate_and_factor(&[plain_block(0, &a), plain_block(0, &b)]).is_err());
    assert!(aggregate_and_factor(&[]).is_err());
}

#[test]
fn masking_examples() {
    let mut rng = rng_from(2);
    let x = gaussian(6, 3, &mut rng);
    assert_eq!(plain_block(0, &x).masked, x);

    let q = random_orthogonal(3, 4, OrthogonalKind::GeneralOrthogonal).unwrap();
    let xq = x.matmul(q.matrix()).unwrap();
    let block = mask_local_features(0, 0, &x, 11, &q, OrthogonalKind::Permutation).unwrap();
    let map = block.row_map.clone().unwrap();
    let sorted: BTreeSet<usize> = map.iter().copied().collect();
    assert_eq!(sorted, (0..6).collect());
    for (masked_row, &local) in map.iter().enumerate() {
        assert_eq!(block.masked.row(masked_row), xq.row(local));
    }

    let general = mask_local_features(0, 0, &x, 11, &q, OrthogonalKind::GeneralOrthogonal).unwrap();
    assert!(general.row_map.is_none());
    let bad_q = random_orthogonal(4, 4, OrthogonalKind::GeneralOrthogonal).unwrap();
    assert!(mask_local_features(0, 0, &x, 11, &bad_q, OrthogonalKind::Permutation).is_err());
}

#[test]
fn distribution_examples() {
    let p = build_distribution(
        &profile_from(&[1.0, 3.0], &[0, 0]),
        DistributionMode::Global,
    )
    .unwrap();
    assert_eq!(
        p.records.iter().map(|r| r.probability).collect::<Vec<_>>(),
        vec![0.25, 0.75]
    );
    let p = build_distribution(
        &profile_from(&[1.0, 1.0, 2.0, 2.0], &[0, 0, 1, 1]),
        DistributionMode::PerClass,
    )
    .unwrap();
    assert!(p.records.iter().all(|r| r.probability == 0.5));
    assert!(matches!(
        build_distribution(
            &profile_from(&[0.0, 0.0, 1.0], &[0, 0, 1]),
            DistributionMode::PerClass
        ),
        Err(Error::DegenerateFeatures(_))
    ));
    assert!(matches!(
        build_distribution(
            &profile_from(&[0.0, 0.0], &[0, 1]),
            DistributionMode::Global
        ),
        Err(Error::DegenerateFeatures(_))
    ));
}

fn class_counts(sel: &ReplaySelection) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for e in &sel.entries {
        *m.entry(e.class_id).or_insert(0) += 1;
    }
    m
}

#[test]
fn stratified_quota_examples() {
    let classes: Vec<usize> = (0..20).map(|i| i / 10).collect();
    let scores: Vec<f64> = (0..20).map(|i| 0.1 + i as f64 * 0.01).collect();
    let sel = stratified_sample(&profile_from(&scores, &classes), 10, 3).unwrap();
    assert_eq!(class_counts(&sel), BTreeMap::from([(0, 5), (1, 5)]));

    let classes: Vec<usize> = (0..103).map(|i| usize::from(i >= 3)).collect();
    let sel = stratified_sample(&profile_from(&vec![1.0; 103], &classes), 10, 3).unwrap();
    assert_eq!(class_counts(&sel), BTreeMap::from([(0, 3), (1, 7)]));

    assert_eq!(balanced_quotas(&[10, 10], 10), vec![5, 5]);
    assert_eq!(balanced_quotas(&[3, 100], 10), vec![3, 7]);
    assert_eq!(balanced_quotas(&[4, 4, 4], 5), vec![2, 2, 1]);
    assert!(stratified_sample(&profile_from(&[], &[]), 3, 0).is_err());
}

#[test]
fn weight_formula() {
    // 4 equal scores: p_x = 0.25, n_s = 4, weight 1/sqrt(1) = 1
    let sel = stratified_sample(&profile_from(&[2.0; 4], &[0, 0, 1, 1]), 4, 0).unwrap();
    assert_eq!(sel.entries.len(), 4);
    assert!(sel.entries.iter().all(|e| (e.weight - 1.0).abs() < 1e-15));
}

#[test]
fn remainder_goes_to_the_heaviest_class() {
    // class 1 carries more total leverage, so it receives the odd exemplar
    let scores = [1.0, 1.0, 1.0, 3.0, 3.0, 3.0];
    let sel = stratified_sample(&profile_from(&scores, &[0, 0, 0, 1, 1, 1]), 3, 0).unwrap();
    assert_eq!(class_counts(&sel), BTreeMap::from([(0, 1), (1, 2)]));
}

#[test]
fn decode_examples() {
    let entry = |row: usize| SelectedSample {
        client_id: 3,
        row,
        class_id: 0,
        score: 1.0,
        probability: 0.5,
        weight: 1.0,
    };
    let sel = ReplaySelection {
        task_id: 0,
        entries: vec![entry(0), entry(2)],
    };
    let id = decode_selection(&sel, &BTreeMap::from([(3, (0..5).collect())])).unwrap();
    assert_eq!(
        id[&3].iter().map(|d| d.local_index).collect::<Vec<_>>(),
        vec![0, 2]
    );
    let rev = decode_selection(&sel, &BTreeMap::from([(3, (0..5).rev().collect())])).unwrap();
    assert_eq!(
        rev[&3].iter().map(|d| d.local_index).collect::<Vec<_>>(),
        vec![4, 2]
    );
    assert!(matches!(
        decode_selection(&sel, &BTreeMap::new()),
        Err(Error::UnsupportedDecode(3))
    ));

    let report = selection_report(5, &rev);
    assert_eq!(report.len(), 2);
    let line = serde_json::to_value(&report[0]).unwrap();
    for key in [
        "task",
        "client",
        "local_index",
        "class",
        "score",
        "probability",
        "weight",
    ] {
        assert!(line.get(key).is_some(), "missing {key}");
    }
    assert_eq!(line["local_index"], 4);
}

fn multi_client(seed: u64, k: usize, d: usize) -> (Vec<Matrix>, BTreeMap<usize, Vec<usize>>) {
    let mut rng = rng_from(seed);
    let features: Vec<Matrix> = (0..k)
        .map(|c| gaussian(3 + (c * 7 + seed as usize) % 11, d, &mut rng))
        .collect();
    let classes = features
        .iter()
        .enumerate()
        .map(|(c, f)| (c, (0..f.rows()).map(|i| (i + c) % 4).collect()))
        .collect();
    (features, classes)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn masked_profile_matches_unmasked(seed in any::<u64>(), k in 1usize..5, d in 2usize..7) {
        let (features, classes) = multi_client(seed, k, d);
        let plain: Vec<_> = features.iter().enumerate().map(|(c, f)| plain_block(c, f)).collect();
        let (f, t) = aggregate_and_factor(&plain).unwrap();
        let reference = leverage_scores(&f, &t, &classes, RankPolicy::Numerical).unwrap();

        let q = random_orthogonal(d, seed, OrthogonalKind::GeneralOrthogonal).unwrap();
        let mut uploads = Vec::new();
        let mut masked_classes = BTreeMap::new();
        let mut maps = BTreeMap::new();
        for (c, x) in features.iter().enumerate() {
            let (up, map) = mask_local_features(c, 0, x, seed ^ c as u64, &q, OrthogonalKind::Permutation)
                .unwrap()
                .into_upload();
            let map = map.unwrap();
            masked_classes.insert(c, map.iter().map(|&l| classes[&c][l]).collect::<Vec<_>>());
            maps.insert(c, map);
            uploads.push(up);
        }
        let (f, t) = aggregate_and_factor(&uploads).unwrap();
        let masked = leverage_scores(&f, &t, &masked_classes, RankPolicy::Numerical).unwrap();
        prop_assert_eq!(masked.rank, reference.rank);

        // (client, local index) → (class, score)
        let by_sample = |p: &LeverageProfile, maps: Option<&BTreeMap<usize, Vec<usize>>>| {
            p.records
                .iter()
                .map(|r| {
                    let local = maps.map_or(r.row, |m| m[&r.client_id][r.row]);
                    ((r.client_id, local), (r.class_id, r.score))
                })
                .collect::<BTreeMap<_, _>>()
        };
        let a = by_sample(&reference, None);
        let b = by_sample(&masked, Some(&maps));
        prop_assert_eq!(a.len(), b.len());
        for (key, (class, score)) in &a {
            let (c2, s2) = b[key];
            prop_assert_eq!(*class, c2);
            prop_assert!((score - s2).abs() <= 1e-8);
        }
    }

    #[test]
    fn scores_sum_to_rank(seed in any::<u64>(), n in 1usize..40, d in 1usize..10, full in any::<bool>()) {
        let x = gaussian(n, d, &mut rng_from(seed));
        let policy = if full { RankPolicy::Full } else { RankPolicy::Numerical };
        let p = single_profile(&x, policy);
        prop_assert_eq!(p.rank, n.min(d));
        prop_assert!((p.total_score() - p.rank as f64).abs() <= 1e-6);
        prop_assert!(p.records.iter().all(|r| r.score >= 0.0));
        for mode in [DistributionMode::Global, DistributionMode::PerClass] {
            let dist = build_distribution(&p, mode).unwrap();
            let total: f64 = dist.records.iter().map(|r| r.probability).sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn stratified_selection_is_balanced(seed in any::<u64>(), classes in 1usize..6, per in 1usize..30, budget in 0usize..60) {
        let mut rng = rng_from(seed);
        let n = classes * per;
        let scores: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0.01..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let profile = profile_from(&scores, &labels);
        let sel = stratified_sample(&profile, budget, seed).unwrap();
        prop_assert_eq!(sel.entries.len(), budget.min(n));
        let rows: BTreeSet<usize> = sel.entries.iter().map(|e| e.row).collect();
        prop_assert_eq!(rows.len(), sel.entries.len());
        let counts = class_counts(&sel);
        if budget >= classes {
            prop_assert_eq!(counts.len(), classes);
        }
        let lo = (0..classes).map(|c| counts.get(&c).copied().unwrap_or(0)).min().unwrap();
        let hi = counts.values().copied().max().unwrap_or(0);
        prop_assert!(hi - lo <= 1);
        let n_s = sel.entries.len() as f64;
        let total: f64 = scores.iter().sum();
        for e in &sel.entries {
            let p = scores[e.row] / total;
            prop_assert!((e.weight - 1.0 / (n_s * p).sqrt()).abs() <= 1e-12 * e.weight);
        }
        prop_assert_eq!(sel.clone(), stratified_sample(&profile, budget, seed).unwrap());
    }
}
