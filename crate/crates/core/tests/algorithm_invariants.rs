mod common;

use proptest::prelude::*;
use sprod_core::data::group_reads_on_this_thread;
use sprod_core::io::{decode_emb1, encode_emb1};
use sprod_core::sprod::{fit_converged, fit_kmeans, fit_stage1, fit_stage2, fit_stage3, score_distance};
use sprod_core::synth::{generate, subsample_lowshot};
use sprod_core::{DistanceMetric, EmbeddingSet, MethodSpec, PrototypeBank, SyntheticSpec};

use common::{check_fitting_invariants, fitting_problem, rng};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fitting_invariants(seed in any::<u64>(), overlap in any::<bool>()) {
        let train = fitting_problem(&mut rng(seed), overlap);
        if let Err(msg) = check_fitting_invariants(&train, seed ^ 1) {
            return Err(TestCaseError::fail(msg));
        }
    }

    #[test]
    fn kmeans_with_one_cluster_is_stage1(seed in any::<u64>(), kseed in any::<u64>(), cosine in any::<bool>()) {
        let metric = if cosine { DistanceMetric::Cosine } else { DistanceMetric::Euclidean };
        let train = fitting_problem(&mut rng(seed), true);
        let km = fit_kmeans(&train, &vec![1; train.class_count()], kseed, metric).unwrap();
        let s1 = fit_stage1(&train, metric).unwrap();
        prop_assert_eq!(km.prototypes(), s1.prototypes());
    }

    #[test]
    fn converged_objective_never_rises(seed in any::<u64>()) {
        let train = fitting_problem(&mut rng(seed), true);
        let b1 = fit_stage1(&train, DistanceMetric::Euclidean).unwrap();
        let (b2, a2) = fit_stage2(&train, &b1).unwrap();
        let conv = fit_converged(&train, &b2, 100).unwrap();
        for w in conv.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{:?}", conv.objective_trace);
        }
        let one = fit_converged(&train, &b2, 1).unwrap();
        let (b3, a3) = fit_stage3(&train, &b2, &a2).unwrap();
        prop_assert_eq!(one.bank.prototypes(), b3.prototypes());
        prop_assert_eq!(one.assignment, a3);
    }

    #[test]
    fn bank_json_round_trip_is_exact(seed in any::<u64>()) {
        let train = fitting_problem(&mut rng(seed), true);
        let b1 = fit_stage1(&train, DistanceMetric::Cosine).unwrap();
        let (b2, _) = fit_stage2(&train, &b1).unwrap();
        prop_assert_eq!(PrototypeBank::from_json(&b2.to_json().unwrap()).unwrap(), b2);
    }

    #[test]
    fn emb1_round_trip(
        rows in 1usize..20,
        dim in 1usize..6,
        labeled in any::<bool>(),
        grouped in any::<bool>(),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut r = rng(seed);
        let features: Vec<f32> = (0..rows * dim).map(|_| r.random_range(-3.0f32..3.0)).collect();
        let mut set = if labeled {
            let labels = (0..rows).map(|_| r.random_range(0..3u32)).collect();
            EmbeddingSet::new(features, dim, labels, 3).unwrap()
        } else {
            EmbeddingSet::unlabeled(features, dim).unwrap()
        };
        if grouped {
            set = set.with_groups((0..rows as u32).collect()).unwrap();
        }
        let bytes = encode_emb1(&set);
        let back = decode_emb1(&bytes).unwrap();
        prop_assert_eq!(encode_emb1(&back), bytes);
        prop_assert_eq!(back.features(), set.features());
        prop_assert_eq!(back.is_labeled(), labeled);
        prop_assert_eq!(back.has_groups(), grouped);
    }

    #[test]
    fn synthetic_rows_are_unit_norm_with_exact_counts(
        c in 2usize..5,
        extra in 1usize..3,
        r in 0.5f64..=1.0,
        n in 2usize..40,
        seed in any::<u64>(),
    ) {
        let spec = SyntheticSpec {
            class_count: c,
            core_dims: c + extra,
            spurious_dims: c + extra,
            correlation_rate: r,
            samples_per_class: n,
            seed,
            ..SyntheticSpec::default()
        };
        let d = generate(&spec).unwrap();
        for set in [&d.train, &d.id_test, &d.sp_ood, &d.nsp_ood] {
            prop_assert!(set.check_normalized().is_ok());
        }
        let groups = d.train.group_ids().unwrap();
        for class in 0..c as u32 {
            let majority = d.train.labels().iter().zip(groups).filter(|(&l, &g)| l == class && g == class).count();
            prop_assert_eq!(majority, (r * n as f64).round() as usize);
        }
    }
}

#[test]
fn lowshot_preserves_majority_fraction() {
    for (r, m, want_majority) in [(0.9, 4, 36), (0.5, 5, 5), (0.8, 3, 12)] {
        let spec = SyntheticSpec {
            correlation_rate: r,
            samples_per_class: 200,
            ..SyntheticSpec::default()
        };
        let train = generate(&spec).unwrap().train;
        let small = subsample_lowshot(&train, m, 7).unwrap();
        let groups = small.group_ids().unwrap();
        for class in 0..2u32 {
            let rows: Vec<u32> = small.labels().iter().zip(groups).filter(|(&l, _)| l == class).map(|(_, &g)| g).collect();
            let majority = rows.iter().filter(|&&g| g == class).count();
            assert_eq!(majority, want_majority);
            assert_eq!(rows.len() - majority, m);
            let fraction = majority as f64 / rows.len() as f64;
            assert!((fraction - r).abs() <= 1.0 / m as f64);
        }
        assert_eq!(subsample_lowshot(&train, m, 7).unwrap().features(), small.features());
    }
}

/// NSP-OOD scores below SP-OOD, which score below ID test rows, on average.
#[test]
fn synthetic_separation_ordering() {
    let mut means = [0.0; 3];
    for seed in 0..20 {
        let d = generate(&SyntheticSpec { seed, ..SyntheticSpec::default() }).unwrap();
        let b1 = fit_stage1(&d.train, DistanceMetric::Euclidean).unwrap();
        let (b2, a2) = fit_stage2(&d.train, &b1).unwrap();
        let (b3, _) = fit_stage3(&d.train, &b2, &a2).unwrap();
        for (slot, set) in means.iter_mut().zip([&d.nsp_ood, &d.sp_ood, &d.id_test]) {
            let s = score_distance(&b3, set).unwrap().scores;
            *slot += s.iter().sum::<f64>() / s.len() as f64;
        }
    }
    assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
}

/// Fitting must never consult group annotations.
#[test]
fn fitting_never_reads_group_ids() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let train = generate(&SyntheticSpec::default()).unwrap().train;
        assert!(train.has_groups());
        let before = group_reads_on_this_thread();
        for name in ["stage1", "stage2", "stage3", "kmeans", "converged", "mds", "knn", "msp", "energy", "mls"] {
            let spec: MethodSpec = name.parse().unwrap();
            spec.fit(&train, DistanceMetric::Euclidean, 0).unwrap();
        }
        assert_eq!(group_reads_on_this_thread(), before);
        // the counter does see a real read
        let _ = train.group_ids();
        assert_eq!(group_reads_on_this_thread(), before + 1);
    });
}
