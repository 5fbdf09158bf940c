use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fit::canonical_order;
use super::{DistanceMetric, GroupKey, GroupKind, Prototype, PrototypeBank, Stage};
use crate::data::EmbeddingSet;
use crate::error::{Error, Result};

pub const KMEANS_MAX_ITERS: usize = 100;

/// Per-class k-means over the training rows.
///
/// Seeding picks a first center uniformly (ChaCha8, seeded with `seed`,
/// stream = class index) and then repeatedly the row farthest from the chosen
/// centers. Lloyd iterations follow until assignments stop changing or
/// [`KMEANS_MAX_ITERS`] is hit; empty clusters are dropped. The largest
/// cluster becomes the majority prototype and the others are labeled as
/// minority groups with targets taken from the other classes in ascending
/// order, continuing past `C - 1` when a class has more clusters than that.
pub fn fit_kmeans(train: &EmbeddingSet, k_per_class: &[usize], seed: u64, metric: DistanceMetric) -> Result<PrototypeBank> {
    let c_count = train.class_count();
    if k_per_class.len() != c_count {
        return Err(Error::BadK(format!(
            "{} cluster counts for {c_count} classes",
            k_per_class.len()
        )));
    }
    train.require_all_classes()?;
    let order = canonical_order(train);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c_count];
    for &i in &order {
        by_class[train.labels()[i] as usize].push(i);
    }

    let mut prototypes = Vec::new();
    for (class, members) in by_class.iter().enumerate() {
        let k = k_per_class[class];
        if k == 0 || k > members.len() {
            return Err(Error::BadK(format!(
                "k={k} for class {class} with {} samples",
                members.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        let centers = lloyd(train, members, k, metric, &mut rng);
        prototypes.extend(label_clusters(class as u32, centers));
    }
    PrototypeBank::new(Stage::KMeans, metric, c_count, prototypes)
}

/// Returns `(center, size)` pairs for the non-empty clusters. `members` is in
/// canonical order, so means are summed exactly as in Stage 1.
fn lloyd(train: &EmbeddingSet, members: &[usize], k: usize, metric: DistanceMetric, rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, usize)> {
    let to_f64 = |i: usize| train.row(i).iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();

    let first = rng.random_range(0..members.len());
    let mut centers = vec![to_f64(members[first])];
    let mut min_dist: Vec<f64> = members
        .iter()
        .map(|&i| metric.distance(train.row(i), &centers[0]))
        .collect();
    while centers.len() < k {
        let mut far = 0;
        for (j, &d) in min_dist.iter().enumerate() {
            if d > min_dist[far] {
                far = j;
            }
        }
        let c = to_f64(members[far]);
        for (j, &i) in members.iter().enumerate() {
            min_dist[j] = min_dist[j].min(metric.distance(train.row(i), &c));
        }
        centers.push(c);
    }

    let mut labels: Option<Vec<usize>> = None;
    let mut sizes = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let next: Vec<usize> = members
            .iter()
            .map(|&i| {
                let z = train.row(i);
                let mut best = (0, f64::INFINITY);
                for (c, center) in centers.iter().enumerate() {
                    let d = metric.distance(z, center);
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best.0
            })
            .collect();
        if labels.as_ref() == Some(&next) {
            break;
        }
        let mut sums = vec![vec![0.0; train.dim()]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (&i, &l) in members.iter().zip(&next) {
            for (s, &v) in sums[l].iter_mut().zip(train.row(i)) {
                *s += f64::from(v);
            }
            counts[l] += 1;
        }
        // drop empty clusters and renumber the survivors densely
        let mut remap = vec![usize::MAX; centers.len()];
        centers.clear();
        sizes.clear();
        for (c, (mut sum, n)) in sums.into_iter().zip(counts).enumerate() {
            if n == 0 {
                continue;
            }
            let nf = n as f64;
            sum.iter_mut().for_each(|s| *s /= nf);
            remap[c] = centers.len();
            centers.push(sum);
            sizes.push(n);
        }
        labels = Some(next.into_iter().map(|l| remap[l]).collect());
    }
    centers.into_iter().zip(sizes).collect()
}

fn label_clusters(class: u32, centers: Vec<(Vec<f64>, usize)>) -> Vec<Prototype> {
    let mut ranked: Vec<(usize, Vec<f64>, usize)> =
        centers.into_iter().enumerate().map(|(i, (v, n))| (i, v, n)).collect();
    ranked.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut targets = (0..).filter(move |&t| t != class);
    ranked
        .into_iter()
        .enumerate()
        .map(|(rank, (_, vector, _))| {
            let kind = if rank == 0 {
                GroupKind::Majority
            } else {
                GroupKind::Minority(targets.next().unwrap())
            };
            Prototype {
                key: GroupKey { class, kind },
                vector,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::fit_stage1;
    use super::*;

    #[test]
    fn one_cluster_per_class_matches_stage1() {
        let rows = [[1.0f32, 0.0], [0.6, 0.8], [0.0, 1.0], [-0.6, 0.8], [0.8, -0.6]];
        let s = EmbeddingSet::from_rows(&rows, vec![0, 0, 1, 1, 1], 2).unwrap();
        let km = fit_kmeans(&s, &[1, 1], 7, DistanceMetric::Euclidean).unwrap();
        let s1 = fit_stage1(&s, DistanceMetric::Euclidean).unwrap();
        assert_eq!(km.prototypes(), s1.prototypes());
        assert_eq!(km.stage(), Stage::KMeans);
    }

    #[test]
    fn k_equal_class_size_gives_singletons() {
        let rows = [[1.0f32, 0.0], [0.6, 0.8], [0.0, 1.0], [-0.6, 0.8]];
        let s = EmbeddingSet::from_rows(&rows, vec![0, 0, 0, 0], 1).unwrap();
        let km = fit_kmeans(&s, &[4], 3, DistanceMetric::Euclidean).unwrap();
        assert_eq!(km.len(), 4);
        let mut got: Vec<Vec<f64>> = km.prototypes().iter().map(|p| p.vector.clone()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
        // more clusters than classes: synthetic targets continue past C - 1
        let targets: Vec<GroupKind> = km.prototypes().iter().map(|p| p.key.kind).collect();
        assert_eq!(
            targets,
            vec![GroupKind::Majority, GroupKind::Minority(1), GroupKind::Minority(2), GroupKind::Minority(3)]
        );
    }

    #[test]
    fn two_separated_pairs() {
        let rows = [[1.0f32, 0.0], [0.98, 0.2], [0.0, 1.0], [0.2, 0.98]];
        let s = EmbeddingSet::from_rows(&rows, vec![0; 4], 1).unwrap();
        // brute force over all 2-partitions: best within-cluster SSE
        let pts: Vec<[f64; 2]> = rows.iter().map(|r| [f64::from(r[0]), f64::from(r[1])]).collect();
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 4) - 1 {
            let mut sse = 0.0;
            for side in [true, false] {
                let idx: Vec<usize> = (0..4).filter(|&i| ((mask >> i) & 1 == 1) == side).collect();
                let m = [0, 1].map(|d| idx.iter().map(|&i| pts[i][d]).sum::<f64>() / idx.len() as f64);
                sse += idx.iter().map(|&i| (pts[i][0] - m[0]).powi(2) + (pts[i][1] - m[1]).powi(2)).sum::<f64>();
            }
            if sse < best.0 {
                best = (sse, mask);
            }
        }
        assert!(best.1 == 0b0011 || best.1 == 0b1100);
        for seed in 0..5 {
            let km = fit_kmeans(&s, &[2], seed, DistanceMetric::Euclidean).unwrap();
            let mut got: Vec<Vec<f64>> = km.prototypes().iter().map(|p| p.vector.clone()).collect();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let a = [(pts[2][0] + pts[3][0]) / 2.0, (pts[2][1] + pts[3][1]) / 2.0];
            let b = [(pts[0][0] + pts[1][0]) / 2.0, (pts[0][1] + pts[1][1]) / 2.0];
            for (g, w) in got.iter().zip([a, b]) {
                assert!((g[0] - w[0]).abs() < 1e-12 && (g[1] - w[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bad_k_rejected() {
        let s = EmbeddingSet::from_rows(&[[1.0f32, 0.0]], vec![0], 1).unwrap();
        assert!(matches!(fit_kmeans(&s, &[2], 0, DistanceMetric::Euclidean), Err(Error::BadK(_))));
        assert!(matches!(fit_kmeans(&s, &[0], 0, DistanceMetric::Euclidean), Err(Error::BadK(_))));
        assert!(matches!(fit_kmeans(&s, &[1, 1], 0, DistanceMetric::Euclidean), Err(Error::BadK(_))));
    }
}
