//! Principal component analysis at a retained-variance target.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::descriptor::{Descriptor, DescriptorKind};
use crate::error::{Error, Result};

/// Covariance size limit for the d x d route.
const COVARIANCE_ROUTE_MAX_DIM: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PcaRoute {
    /// Eigendecomposition of the d x d covariance.
    Covariance,
    /// Eigendecomposition of the n x n Gram matrix.
    Gram,
}

impl PcaRoute {
    pub fn for_shape(n: usize, d: usize) -> Self {
        if d <= COVARIANCE_ROUTE_MAX_DIM && n > d {
            PcaRoute::Covariance
        } else {
            PcaRoute::Gram
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// k x d, orthonormal rows.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the retained components, non-increasing.
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub retained_fraction: f64,
}

/// Fits PCA on an n x d matrix and keeps the fewest leading components whose
/// cumulative variance reaches `retained_fraction` of the total.
pub fn pca_fit(features: ArrayView2<f64>, retained_fraction: f64) -> Result<PcaModel> {
    PcaModel::fit_with_route(features, retained_fraction, None)
}

impl PcaModel {
    pub fn fit_with_route(
        features: ArrayView2<f64>,
        retained_fraction: f64,
        route: Option<PcaRoute>,
    ) -> Result<PcaModel> {
        let (n, d) = features.dim();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("PCA needs at least 2 rows, got {n}")));
        }
        if d == 0 {
            return Err(Error::InvalidArgument("PCA needs at least one column".into()));
        }
        if !(retained_fraction > 0.0 && retained_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "retained fraction must be in (0, 1], got {retained_fraction}"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("PCA input has non-finite values".into()));
        }
        let first = features.row(0);
        if features.rows().into_iter().all(|r| r == first) {
            return Err(Error::Numerical("zero total variance: all rows are identical".into()));
        }

        let mean: Array1<f64> = features.mean_axis(Axis(0)).expect("n >= 2");
        let centered = &features - &mean;
        let xc = DMatrix::from_row_iterator(n, d, centered.iter().copied());
        let denom = (n - 1) as f64;
        let total_variance = xc.iter().map(|v| v * v).sum::<f64>() / denom;
        if total_variance <= 0.0 {
            return Err(Error::Numerical("zero total variance".into()));
        }

        let route = route.unwrap_or_else(|| PcaRoute::for_shape(n, d));
        // (eigenvalue, unit d-vector) pairs, unsorted
        let mut pairs: Vec<(f64, Vec<f64>)> = match route {
            PcaRoute::Covariance => {
                let cov = (xc.transpose() * &xc) / denom;
                let eig = SymmetricEigen::new(cov);
                (0..d)
                    .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect()))
                    .collect()
            }
            PcaRoute::Gram => {
                let gram = (&xc * xc.transpose()) / denom;
                let eig = SymmetricEigen::new(gram);
                let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
                let tol = max * 1e-12 * n.max(d) as f64;
                (0..n)
                    .filter(|&i| eig.eigenvalues[i] > tol)
                    .map(|i| {
                        let lambda = eig.eigenvalues[i];
                        let u = eig.eigenvectors.column(i);
                        let v = xc.transpose() * u / (denom * lambda).sqrt();
                        (lambda, v.iter().copied().collect())
                    })
                    .collect()
            }
        };
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (lambda, _) in pairs.iter_mut() {
            *lambda = lambda.max(0.0);
        }

        let spectrum_total: f64 = pairs.iter().map(|p| p.0).sum();
        let max = pairs.first().map(|p| p.0).unwrap_or(0.0);
        let rank = pairs
            .iter()
            .take_while(|p| p.0 > max * 1e-12 * n.max(d) as f64)
            .count()
            .max(1);
        let target = retained_fraction * spectrum_total * (1.0 - 1e-12);
        let mut cumulative = 0.0;
        let mut k = rank;
        for (i, (lambda, _)) in pairs.iter().enumerate().take(rank) {
            cumulative += lambda;
            if cumulative >= target {
                k = i + 1;
                break;
            }
        }

        let mut components = Vec::with_capacity(k);
        let mut explained_variance = Vec::with_capacity(k);
        for (lambda, mut v) in pairs.into_iter().take(k) {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            orient(&mut v);
            components.push(v);
            explained_variance.push(lambda);
        }
        Ok(PcaModel {
            mean: mean.to_vec(),
            components,
            explained_variance,
            total_variance,
            retained_fraction,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    /// Fraction of the total variance each kept component explains.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    /// Projects `(x - mean)` onto the components: n x d -> n x k.
    pub fn transform(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (n, d) = features.dim();
        if d != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: d,
            });
        }
        let k = self.output_dim();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = features.row(i);
                self.components
                    .iter()
                    .map(|c| {
                        c.iter()
                            .zip(row.iter().zip(&self.mean))
                            .map(|(ci, (x, m))| ci * (x - m))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Ok(Array2::from_shape_vec((n, k), rows.into_iter().flatten().collect()).expect("n x k"))
    }

    /// Maps projected coordinates back to the input space.
    pub fn inverse_transform(&self, coords: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (n, k) = coords.dim();
        if k != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: k,
            });
        }
        let d = self.input_dim();
        let mut out = Array2::zeros((n, d));
        for (mut o, c) in out.axis_iter_mut(Axis(0)).zip(coords.axis_iter(Axis(0))) {
            for j in 0..d {
                o[j] = self.mean[j]
                    + c.iter()
                        .zip(&self.components)
                        .map(|(ci, comp)| ci * comp[j])
                        .sum::<f64>();
            }
        }
        Ok(out)
    }

    pub fn transform_descriptors(&self, descriptors: &[Descriptor]) -> Result<Vec<Descriptor>> {
        let x = crate::descriptor::to_matrix(descriptors)?;
        let y = self.transform(x.view())?;
        descriptors
            .iter()
            .zip(y.axis_iter(Axis(0)))
            .map(|(d, row)| {
                Descriptor::new(
                    d.patch().clone(),
                    DescriptorKind::PcaReduced,
                    row.iter().map(|&v| v as f32).collect(),
                )
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: PcaModel = artifact::read_json(path)?;
        if model.components.iter().any(|c| c.len() != model.mean.len()) {
            return Err(Error::Format("PCA component length differs from mean length".into()));
        }
        if model.components.len() != model.explained_variance.len() {
            return Err(Error::Format("PCA component count differs from variance count".into()));
        }
        Ok(model)
    }
}

/// Flips `v` so that its largest-magnitude coordinate (first on ties) is positive.
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
