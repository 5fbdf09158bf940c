//! Brute-force oracles and random fixture generators shared by the
//! integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sprod_core::sprod::{GroupAssignment, Prototype};
use sprod_core::{EmbeddingSet, PrototypeBank};

/// Fraction of (id, ood) pairs won by ID, ties counted one half.
pub fn auroc_pairs(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in id {
        for &b in ood {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * ood.len()) as f64
}

fn count_at_least(v: &[f64], t: f64) -> usize {
    v.iter().filter(|&&x| x >= t).count()
}

/// Tries every ID score as a threshold and keeps the largest one whose TPR
/// reaches the target.
pub fn fpr_thresholds(id: &[f64], ood: &[f64], target: f64) -> f64 {
    let best = id
        .iter()
        .copied()
        .filter(|&t| count_at_least(id, t) as f64 / id.len() as f64 >= target)
        .fold(f64::NEG_INFINITY, f64::max);
    count_at_least(ood, best) as f64 / ood.len() as f64
}

/// Sweeps every distinct score from high to low, adding
/// `(recall step) * precision` at each threshold.
pub fn aupr_thresholds(pos: &[f64], neg: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for t in thresholds {
        let tp = count_at_least(pos, t) as f64;
        let fp = count_at_least(neg, t) as f64;
        let recall = tp / pos.len() as f64;
        if tp > 0.0 {
            area += (recall - prev_recall) * tp / (tp + fp);
        }
        prev_recall = recall;
    }
    area
}

/// `(id, ood)` score sets of 5 to 300 entries each. About half the fixtures
/// draw from a handful of values so ties are common.
pub fn score_fixture(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n_id = rng.random_range(5..=300);
    let n_ood = rng.random_range(5..=300);
    let shift: f64 = rng.random_range(-1.0..2.0);
    let levels = if rng.random_bool(0.5) { Some(rng.random_range(2..12)) } else { None };
    let mut draw = |n: usize, mu: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let x: f64 = rng.sample::<f64, _>(StandardNormal) + mu;
                match levels {
                    Some(k) => (x * k as f64 / 4.0).round(),
                    None => x,
                }
            })
            .collect()
    };
    let id = draw(n_id, shift);
    let mut ood = draw(n_ood, 0.0);
    // copy a few ID scores into the OOD set to force cross ties
    let k = n_ood.min(3);
    ood[..k].copy_from_slice(&id[..k]);
    (id, ood)
}

/// Labeled, unit-norm fitting problem with 2 to 4 classes. When `overlap`
/// is set, each class also gets a subgroup pulled toward another class so
/// that class means misclassify some rows.
pub fn fitting_problem(rng: &mut ChaCha8Rng, overlap: bool) -> EmbeddingSet {
    let c = rng.random_range(2..=4usize);
    let d = rng.random_range(c..=6usize);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for class in 0..c {
        let n = rng.random_range(3..=30);
        for i in 0..n {
            let mut row = vec![0.0f32; d];
            let toward = if overlap && i % 4 == 0 { (class + 1) % c } else { class };
            row[class] += 1.0;
            row[toward] += if toward == class { 0.0 } else { 1.3 };
            for v in &mut row {
                *v += 0.3 * rng.sample::<f32, _>(StandardNormal);
            }
            features.extend(row);
            labels.push(class as u32);
        }
    }
    EmbeddingSet::new(features, d, labels, c).unwrap().normalize().unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plain per-group mean, summed in row order.
pub fn naive_mean(set: &EmbeddingSet, assignment: &GroupAssignment, key: sprod_core::GroupKey) -> Vec<f64> {
    let members = assignment.members(key);
    let mut mean = vec![0.0; set.dim()];
    for &i in &members {
        for (m, &v) in mean.iter_mut().zip(set.row(i)) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= members.len() as f64);
    mean
}

/// Own-class prototype nearest to `z`, first in key order on ties.
pub fn nearest_own_oracle<'a>(bank: &'a PrototypeBank, class: u32, z: &[f32]) -> &'a Prototype {
    let mut best: Option<(&Prototype, f64)> = None;
    for p in bank.prototypes().iter().filter(|p| p.key.class == class) {
        let d = bank.metric().distance(z, &p.vector);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((p, d));
        }
    }
    best.unwrap().0
}

/// Checks the prototype-count bounds, the zero-error collapse, the group-mean
/// property, Stage-3 nearest-own-prototype assignment and row-permutation
/// invariance on one training set.
pub fn check_fitting_invariants(train: &EmbeddingSet, shuffle_seed: u64) -> Result<(), String> {
    use rand::seq::SliceRandom;
    use sprod_core::sprod::{classify, fit_stage1, fit_stage2, fit_stage3};
    use sprod_core::{DistanceMetric, GroupKind};

    let c = train.class_count();
    let fit_all = |set: &EmbeddingSet| {
        let b1 = fit_stage1(set, DistanceMetric::Euclidean).map_err(|e| e.to_string())?;
        let (b2, a2) = fit_stage2(set, &b1).map_err(|e| e.to_string())?;
        let (b3, a3) = fit_stage3(set, &b2, &a2).map_err(|e| e.to_string())?;
        Ok::<_, String>((b1, b2, a2, b3, a3))
    };
    let (b1, b2, a2, b3, a3) = fit_all(train)?;

    // count bounds
    if b1.counts_per_class() != vec![1; c] {
        return Err(format!("stage 1 counts {:?}", b1.counts_per_class()));
    }
    for (class, (&n2, &n3)) in b2.counts_per_class().iter().zip(&b3.counts_per_class()).enumerate() {
        if !(1..=c).contains(&n2) || !(1..=n2).contains(&n3) {
            return Err(format!("class {class}: stage 2 has {n2}, stage 3 has {n3}"));
        }
    }

    // collapse when class means classify every training row correctly
    let perfect = classify(&b1, train).map_err(|e| e.to_string())? == train.labels();
    if perfect {
        for bank in [&b2, &b3] {
            let same = bank.len() == c
                && bank
                    .prototypes()
                    .iter()
                    .zip(b1.prototypes())
                    .all(|(p, q)| p.key == q.key && p.vector == q.vector);
            if !same {
                return Err("zero training error but the bank did not collapse to stage 1".into());
            }
        }
    }
    if !perfect && b2.len() == c && b2.prototypes().iter().all(|p| p.key.kind == GroupKind::Majority) {
        return Err("misclassified rows but no minority group".into());
    }

    // group means
    for (bank, assignment) in [(&b2, &a2), (&b3, &a3)] {
        for p in bank.prototypes() {
            let mean = naive_mean(train, assignment, p.key);
            let err = mean.iter().zip(&p.vector).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err > 1e-10 {
                return Err(format!("{:?} is {err:e} away from its group mean", p.key));
            }
        }
        if assignment.0.iter().any(|k| bank.get(*k).is_none()) {
            return Err("row assigned to a group without a prototype".into());
        }
    }

    // stage 3 assignment is the nearest own-class stage 2 prototype
    for (i, (z, &label)) in train.iter_rows().zip(train.labels()).enumerate() {
        let want = nearest_own_oracle(&b2, label, z).key;
        if a3.get(i) != want {
            return Err(format!("row {i}: assigned {:?}, nearest own is {want:?}", a3.get(i)));
        }
    }

    // permutation invariance, bit for bit
    let mut perm: Vec<usize> = (0..train.rows()).collect();
    perm.shuffle(&mut rng(shuffle_seed));
    let shuffled = train.select(&perm).map_err(|e| e.to_string())?;
    let (s1, s2, _, s3, _) = fit_all(&shuffled)?;
    if s1 != b1 || s2 != b2 || s3 != b3 {
        return Err("banks changed under a row permutation".into());
    }
    Ok(())
}

/// Negated distance to the k-th nearest training row, by sorting every
/// distance.
pub fn knn_sort_oracle(train: &EmbeddingSet, query: &EmbeddingSet, k: usize) -> Vec<f64> {
    query
        .iter_rows()
        .map(|q| {
            let mut d: Vec<f64> = train
                .iter_rows()
                .map(|t| {
                    t.iter()
                        .zip(q)
                        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            d.sort_by(f64::total_cmp);
            -d[k.min(d.len()) - 1]
        })
        .collect()
}

/// Unit-norm labeled set with `c` classes, for baseline checks.
pub fn baseline_problem(r: &mut ChaCha8Rng) -> EmbeddingSet {
    fitting_problem(r, true)
}
