mod common;

use ndarray::Array2;
use patchsieve::feature_store::{pca_fit, PcaModel, PcaRoute};
use proptest::prelude::*;
use rand::Rng;

use common::{covariance, jacobi_eigen, rng};

fn random_matrix(seed: u64, n: usize, d: usize) -> Array2<f64> {
    let mut r = rng(seed);
    // uneven column scales give a spread-out spectrum
    Array2::from_shape_fn((n, d), |(_, j)| r.random_range(-1.0..1.0) * (1.0 + j as f64 * 0.3))
}

fn rows(x: &Array2<f64>) -> Vec<Vec<f64>> {
    x.outer_iter().map(|r| r.to_vec()).collect()
}

#[test]
fn spectrum_matches_jacobi_oracle_on_50x10() {
    let x = random_matrix(31, 50, 10);
    let (_, cov) = covariance(&rows(&x));
    let (mut values, vectors) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..10).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    values = order.iter().map(|&i| values[i]).collect();

    let full = pca_fit(x.view(), 1.0).unwrap();
    assert_eq!(full.output_dim(), 10);
    for (got, want) in full.explained_variance.iter().zip(&values) {
        assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{got} vs {want}");
    }
    for (c, &i) in full.components.iter().zip(&order) {
        let dot: f64 = c.iter().zip(&vectors[i]).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-8);
    }

    // reconstruction error of a truncated model stays within the discarded variance
    let model = pca_fit(x.view(), 0.8).unwrap();
    let k = model.output_dim();
    assert!(k < 10);
    let recon = model.inverse_transform(model.transform(x.view()).unwrap().view()).unwrap();
    let err: f64 = (&x - &recon).iter().map(|v| v * v).sum::<f64>() / 49.0;
    let residual: f64 = values[k..].iter().sum();
    assert!((err - residual).abs() <= 1e-9 * residual.max(1.0), "{err} vs {residual}");
}

#[test]
fn full_rank_keeps_min_of_n_minus_one_and_d() {
    let wide = random_matrix(32, 8, 20);
    assert_eq!(pca_fit(wide.view(), 1.0).unwrap().output_dim(), 7);
    let tall = random_matrix(33, 30, 6);
    assert_eq!(pca_fit(tall.view(), 1.0).unwrap().output_dim(), 6);
}

#[test]
fn rank_k_distances_preserved() {
    let mut r = rng(34);
    let basis = Array2::from_shape_fn((3, 12), |_| r.random_range(-2.0..2.0));
    let coef = Array2::from_shape_fn((40, 3), |_| r.random_range(-5.0..5.0));
    let x = coef.dot(&basis);
    let m = pca_fit(x.view(), 1.0).unwrap();
    assert_eq!(m.output_dim(), 3);
    let y = m.transform(x.view()).unwrap();
    for i in 0..40 {
        for j in 0..i {
            let dx = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum().sqrt();
            let dy = (&y.row(i) - &y.row(j)).mapv(|v| v * v).sum().sqrt();
            assert!((dx - dy).abs() < 1e-8 * dx.max(1.0));
        }
    }
}

#[test]
fn gram_and_covariance_routes_agree() {
    let x = random_matrix(35, 40, 15);
    let a = PcaModel::fit_with_route(x.view(), 0.9, Some(PcaRoute::Covariance)).unwrap();
    let b = PcaModel::fit_with_route(x.view(), 0.9, Some(PcaRoute::Gram)).unwrap();
    assert_eq!(a.output_dim(), b.output_dim());
    for (u, v) in a.explained_variance.iter().zip(&b.explained_variance) {
        assert!((u - v).abs() < 1e-9 * u.max(1.0));
    }
    for (u, v) in a.components.iter().zip(&b.components) {
        for (p, q) in u.iter().zip(v) {
            assert!((p - q).abs() < 1e-7);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn invariants_on_random_matrices(seed in any::<u64>(), n in 3usize..40, d in 1usize..12, frac in 0.05f64..=1.0) {
        let x = random_matrix(seed, n, d);
        let m = pca_fit(x.view(), frac).unwrap();
        let ratios = m.explained_variance_ratio();
        let total: f64 = ratios.iter().sum();
        prop_assert!(total <= 1.0 + 1e-9);
        prop_assert!(total >= frac - 1e-9);
        let y = m.transform(x.view()).unwrap();
        for col in y.columns() {
            prop_assert!(col.mean().unwrap().abs() < 1e-6);
        }
        let json = serde_json::to_string(&m).unwrap();
        let back: PcaModel = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &m);
    }
}
