mod common;

use ndarray::{Array1, Array2};
use patchsieve::descriptor::{Descriptor, DescriptorKind, PatchRef};
use patchsieve::som::{cluster_scan, merge_small_clusters, min_cluster_size, som_assign, som_train, SomConfig};
use proptest::prelude::*;
use rand::Rng;

use common::{gaussian, rng};

fn cfg(side: usize, epochs: usize, seed: u64) -> SomConfig {
    SomConfig {
        map_side: side,
        epochs,
        seed,
        ..SomConfig::default()
    }
}

#[test]
fn separated_blobs_use_disjoint_units() {
    let mut r = rng(41);
    let x = Array2::from_shape_fn((200, 2), |(i, _)| if i < 100 { 0.0 } else { 100.0 } + 0.1 * gaussian(&mut r));
    let w = som_train(x.view(), &cfg(4, 20, 5)).unwrap();
    let labels = som_assign(x.view(), w.view()).unwrap();
    let a: std::collections::BTreeSet<_> = labels[..100].iter().collect();
    let b: std::collections::BTreeSet<_> = labels[100..].iter().collect();
    assert!(a.is_disjoint(&b));
}

#[test]
fn assignment_matches_exhaustive_scan() {
    let mut r = rng(42);
    let w = Array2::from_shape_fn((25, 6), |_| r.random_range(-1.0..1.0));
    let x = Array2::from_shape_fn((100, 6), |_| r.random_range(-1.0..1.0));
    let labels = som_assign(x.view(), w.view()).unwrap();
    for (i, &l) in labels.iter().enumerate() {
        let dist = |u: usize| (&x.row(i) - &w.row(u)).mapv(|v| v * v).sum();
        let best = (0..25).fold(0, |b, u| if dist(u) < dist(b) { u } else { b });
        assert_eq!(l, best);
    }
}

#[test]
fn ties_go_to_lowest_unit() {
    let w = Array2::from_shape_vec((3, 1), vec![1.0, -1.0, 1.0]).unwrap();
    let x = Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
    assert_eq!(som_assign(x.view(), w.view()).unwrap(), vec![0, 0]);
}

#[test]
fn same_seed_gives_bitwise_identical_weights() {
    let mut r = rng(43);
    let x = Array2::from_shape_fn((80, 5), |_| r.random_range(0.0..1.0));
    let a = som_train(x.view(), &cfg(5, 7, 99)).unwrap();
    let b = som_train(x.view(), &cfg(5, 7, 99)).unwrap();
    assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    let c = som_train(x.view(), &cfg(5, 7, 100)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn cluster_models_are_deterministic() {
    let mut r = rng(44);
    let ds: Vec<Descriptor> = (0..60)
        .map(|i| {
            let v: Vec<f32> = (0..36).map(|_| r.random_range(0.0..0.1)).collect();
            Descriptor::new(PatchRef::new("scan", i, 0), DescriptorKind::Lbp36, v).unwrap()
        })
        .collect();
    let refs: Vec<&Descriptor> = ds.iter().collect();
    let c = SomConfig {
        min_cluster_fraction: 0.05,
        ..cfg(4, 5, 7)
    };
    let a = cluster_scan("scan", &refs, &c).unwrap();
    let b = cluster_scan("scan", &refs, &c).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.labels.len(), 60);
    assert_eq!(a.cluster_sizes.iter().sum::<usize>(), 60);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn permuting_rows_permutes_labels(seed in any::<u64>()) {
        let mut r = rng(seed);
        let w = Array2::from_shape_fn((9, 3), |_| r.random_range(-1.0..1.0));
        let x = Array2::from_shape_fn((30, 3), |_| r.random_range(-1.0..1.0));
        let mut perm: Vec<usize> = (0..30).collect();
        for i in (1..30).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let xp = Array2::from_shape_fn((30, 3), |(i, j)| x[[perm[i], j]]);
        let l = som_assign(x.view(), w.view()).unwrap();
        let lp = som_assign(xp.view(), w.view()).unwrap();
        for i in 0..30 {
            prop_assert_eq!(lp[i], l[perm[i]]);
        }
    }

    #[test]
    fn translation_leaves_labels_unchanged(seed in any::<u64>(), shift in prop::collection::vec(-4.0f64..4.0, 3)) {
        let mut r = rng(seed);
        // dyadic values keep the shifted distances exact
        let w = Array2::from_shape_fn((9, 3), |_| r.random_range(-64i32..64) as f64 / 16.0);
        let x = Array2::from_shape_fn((30, 3), |_| r.random_range(-64i32..64) as f64 / 16.0);
        let s = Array1::from_vec(shift.iter().map(|v| (v * 16.0).round() / 16.0).collect());
        let l = som_assign(x.view(), w.view()).unwrap();
        let lt = som_assign((&x + &s).view(), (&w + &s).view()).unwrap();
        prop_assert_eq!(l, lt);
    }

    #[test]
    fn merged_clusters_meet_the_floor(seed in any::<u64>(), n in 5usize..120, raw in 1usize..15, frac in 0.01f64..0.4) {
        let mut r = rng(seed);
        let x = Array2::from_shape_fn((n, 2), |_| r.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..raw)).collect();
        let merged = merge_small_clusters(x.view(), &labels, frac).unwrap();
        let floor = min_cluster_size(frac, n);
        prop_assert_eq!(merged.sizes.iter().sum::<usize>(), n);
        prop_assert!(merged.cluster_count() == 1 || merged.sizes.iter().all(|&s| s >= floor));
        prop_assert!(merged.sizes.windows(2).all(|w| w[0] >= w[1]));
        for (c, &size) in merged.sizes.iter().enumerate() {
            prop_assert_eq!(merged.labels.iter().filter(|&&l| l == c).count(), size);
        }
    }
}
