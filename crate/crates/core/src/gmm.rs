//! Diagonal-covariance Gaussian mixtures fit by expectation maximization.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-5;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub weights: Array1<f64>,
    /// K x d
    pub means: Array2<f64>,
    /// K x d diagonal variances, each at least `VARIANCE_FLOOR`.
    pub variances: Array2<f64>,
    /// Total data log-likelihood before each M-step, plus the final value.
    pub log_likelihood_trace: Vec<f64>,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Per-component `ln(w_k) + ln N(x | mu_k, diag(var_k))`.
    fn component_log_terms(&self, x: ArrayView1<f64>, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let w = self.weights[k];
            if w <= 0.0 {
                *o = f64::NEG_INFINITY;
                continue;
            }
            let mut quad = 0.0;
            let mut log_det = 0.0;
            for ((xi, mi), vi) in x.iter().zip(self.means.row(k)).zip(self.variances.row(k)) {
                let diff = xi - mi;
                quad += diff * diff / vi;
                log_det += vi.ln();
            }
            *o = w.ln() - 0.5 * (x.len() as f64 * LN_2PI + log_det + quad);
        }
    }

    /// Mixture log-density of one point.
    pub fn log_density(&self, x: ArrayView1<f64>) -> f64 {
        let mut terms = vec![0.0; self.components()];
        self.component_log_terms(x, &mut terms);
        log_sum_exp(&terms)
    }

    pub fn log_densities(&self, x: ArrayView2<f64>) -> Vec<f64> {
        x.axis_iter(Axis(0)).map(|r| self.log_density(r)).collect()
    }

    /// Smallest Euclidean distance from `x` to a component mean.
    pub fn nearest_mean_distance(&self, x: ArrayView1<f64>) -> f64 {
        self.means
            .axis_iter(Axis(0))
            .zip(self.weights.iter())
            .filter(|(_, &w)| w > 0.0)
            .map(|(m, _)| m.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// k-means++ style seeding: first mean uniform, later ones sampled with probability
/// proportional to the squared distance to the nearest chosen mean.
fn seed_means(x: ArrayView2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let (m, d) = x.dim();
    let mut means = Array2::zeros((k, d));
    let mut nearest = vec![f64::INFINITY; m];
    let mut pick = rng.random_range(0..m);
    for c in 0..k {
        means.row_mut(c).assign(&x.row(pick));
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let dist: f64 = row.iter().zip(means.row(c)).map(|(a, b)| (a - b) * (a - b)).sum();
            nearest[i] = nearest[i].min(dist);
        }
        if c + 1 == k {
            break;
        }
        let total: f64 = nearest.iter().sum();
        pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, w) in nearest.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
    }
    means
}

/// Fits a K-component diagonal GMM. Stops when the mean per-point log-likelihood
/// improves by less than `tol` or after `max_iter` EM iterations.
pub fn gmm_fit(x: ArrayView2<f64>, k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<GmmModel> {
    let (m, d) = x.dim();
    if k == 0 {
        return Err(Error::InvalidArgument("GMM needs at least one component".into()));
    }
    if m < k {
        return Err(Error::InvalidArgument(format!(
            "GMM with {k} components needs at least {k} points, got {m}"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("GMM needs at least one dimension".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("GMM input has non-finite values".into()));
    }
    let mut rng = seed::rng(seed);
    let global_mean = x.mean_axis(Axis(0)).expect("m >= 1");
    let global_var = x
        .axis_iter(Axis(1))
        .zip(global_mean.iter())
        .map(|(col, mu)| (col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64).max(VARIANCE_FLOOR))
        .collect::<Array1<f64>>();

    let mut model = GmmModel {
        weights: Array1::from_elem(k, 1.0 / k as f64),
        means: seed_means(x, k, &mut rng),
        variances: Array2::from_shape_fn((k, d), |(_, j)| global_var[j]),
        log_likelihood_trace: Vec::new(),
    };

    let mut resp = Array2::<f64>::zeros((m, k));
    let mut terms = vec![0.0; k];
    let mut prev_mean_ll = f64::NEG_INFINITY;
    for iter in 0..=max_iter {
        // E-step
        let mut ll = 0.0;
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            model.component_log_terms(row, &mut terms);
            let lse = log_sum_exp(&terms);
            ll += lse;
            for (c, t) in terms.iter().enumerate() {
                resp[[i, c]] = (t - lse).exp();
            }
        }
        if !ll.is_finite() {
            return Err(Error::Numerical("GMM log-likelihood is not finite".into()));
        }
        model.log_likelihood_trace.push(ll);
        let mean_ll = ll / m as f64;
        if iter == max_iter || mean_ll - prev_mean_ll < tol {
            break;
        }
        prev_mean_ll = mean_ll;

        // M-step
        for c in 0..k {
            let r = resp.column(c);
            let nk: f64 = r.sum();
            if nk <= f64::MIN_POSITIVE {
                // empty component keeps its parameters but drops out of the mixture
                model.weights[c] = 0.0;
                continue;
            }
            model.weights[c] = nk / m as f64;
            for j in 0..d {
                let col = x.column(j);
                let mu = r.iter().zip(col.iter()).map(|(ri, xi)| ri * xi).sum::<f64>() / nk;
                let var = r
                    .iter()
                    .zip(col.iter())
                    .map(|(ri, xi)| ri * (xi - mu) * (xi - mu))
                    .sum::<f64>()
                    / nk;
                model.means[[c, j]] = mu;
                model.variances[[c, j]] = var.max(VARIANCE_FLOOR);
            }
        }
        let wsum = model.weights.sum();
        model.weights.mapv_inplace(|w| w / wsum);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_component_is_closed_form() {
        let x = array![[1.0, 10.0], [2.0, 14.0], [4.0, 9.0], [7.0, 11.0]];
        let g = gmm_fit(x.view(), 1, 3, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
        assert!((g.means[[0, 0]] - 3.5).abs() < 1e-9);
        assert!((g.means[[0, 1]] - 11.0).abs() < 1e-9);
        // population variances: (6.25+2.25+0.25+12.25)/4 = 5.25, (1+9+4+0)/4 = 3.5
        assert!((g.variances[[0, 0]] - 5.25).abs() < 1e-9);
        assert!((g.variances[[0, 1]] - 3.5).abs() < 1e-9);
        assert!((g.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points_rejected() {
        let x = array![[1.0], [2.0]];
        assert!(matches!(gmm_fit(x.view(), 3, 0, 10, 1e-5), Err(Error::InvalidArgument(_))));
        let x = array![[1.0], [f64::NAN]];
        assert!(matches!(gmm_fit(x.view(), 1, 0, 10, 1e-5), Err(Error::Numerical(_))));
    }

    #[test]
    fn identical_points_hit_the_floor() {
        let x = Array2::from_elem((10, 3), 0.25);
        let g = gmm_fit(x.view(), 1, 0, 50, 1e-5).unwrap();
        assert!(g.variances.iter().all(|&v| v == VARIANCE_FLOOR));
        let lds = g.log_densities(x.view());
        assert!(lds.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn log_density_matches_direct_formula() {
        let g = GmmModel {
            weights: array![0.25, 0.75],
            means: array![[0.0], [2.0]],
            variances: array![[1.0], [4.0]],
            log_likelihood_trace: vec![],
        };
        let x = 1.0f64;
        let n = |mu: f64, var: f64| (-(x - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let expected = (0.25 * n(0.0, 1.0) + 0.75 * n(2.0, 4.0)).ln();
        assert!((g.log_density(array![x].view()) - expected).abs() < 1e-12);
    }
}
