//! Python bindings: LBP descriptors, feature files, PCA, SOM clustering, selection,
//! the retrieval index and evaluation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use patchsieve::descriptor::to_matrix;
use patchsieve::feature_store::{self, PcaModel as CorePca};
use patchsieve::lbp::{self, LbpConfig};
use patchsieve::retrieval::{build_index, IndexMetadata, RetrievalIndex as CoreIndex};
use patchsieve::selection::{self, ClusterFeatures, SelectionCriterion};
use patchsieve::som::{cluster_scan, SomConfig};
use patchsieve::{evaluation, Descriptor, DescriptorKind, Error, PatchRef, Raster};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn gray_raster(rows: Vec<Vec<u8>>) -> PyResult<Raster> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("image rows must all have the same length"));
    }
    Raster::new(width, height, 1, rows.concat()).map_err(to_py)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((n, d), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn descriptors(ids: &[String], kind: &str, rows: &[Vec<f64>]) -> PyResult<Vec<Descriptor>> {
    if ids.len() != rows.len() {
        return Err(PyValueError::new_err(format!("{} ids for {} rows", ids.len(), rows.len())));
    }
    let kind: DescriptorKind = kind.parse().map_err(to_py)?;
    ids.iter()
        .zip(rows)
        .map(|(id, row)| {
            let patch: PatchRef = id.parse().map_err(to_py)?;
            Descriptor::new(patch, kind, row.iter().map(|&v| v as f32).collect()).map_err(to_py)
        })
        .collect()
}

/// Uniform rotation-invariant LBP histogram of a grayscale image given as rows of bytes.
#[pyfunction]
#[pyo3(signature = (image, radius, neighbors, normalize=true))]
fn lbp_histogram(image: Vec<Vec<u8>>, radius: f64, neighbors: usize, normalize: bool) -> PyResult<Vec<f64>> {
    lbp::lbp_histogram(&gray_raster(image)?, radius, neighbors, normalize).map_err(to_py)
}

/// The default 36-bin two-scale descriptor of a grayscale patch.
#[pyfunction]
fn lbp_descriptor(image: Vec<Vec<u8>>) -> PyResult<Vec<f64>> {
    lbp::lbp_features(&gray_raster(image)?, &LbpConfig::default()).map_err(to_py)
}

/// Reads a feature file into `(kind, ids, rows)`.
#[pyfunction]
fn read_features(path: PathBuf) -> PyResult<(String, Vec<String>, Vec<Vec<f64>>)> {
    let ds = feature_store::read_features(&path).map_err(to_py)?;
    let kind = ds.first().map_or("", |d| d.kind().name()).to_string();
    let ids = ds.iter().map(Descriptor::id).collect();
    let rows = ds
        .iter()
        .map(|d| d.values().iter().map(|&v| v as f64).collect())
        .collect();
    Ok((kind, ids, rows))
}

#[pyfunction]
fn write_features(path: PathBuf, kind: &str, ids: Vec<String>, rows: Vec<Vec<f64>>) -> PyResult<()> {
    feature_store::write_features(&descriptors(&ids, kind, &rows)?, &path).map_err(to_py)
}

#[pyclass(module = "patchsieve_py", frozen)]
struct PcaModel {
    inner: CorePca,
}

#[pymethods]
impl PcaModel {
    /// Fits on rows and keeps the fewest components reaching `retained_fraction`.
    #[staticmethod]
    #[pyo3(signature = (rows, retained_fraction=0.95))]
    fn fit(rows: Vec<Vec<f64>>, retained_fraction: f64) -> PyResult<Self> {
        let x = matrix(&rows)?;
        Ok(PcaModel {
            inner: feature_store::pca_fit(x.view(), retained_fraction).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PcaModel {
            inner: CorePca::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn explained_variance_ratio(&self) -> Vec<f64> {
        self.inner.explained_variance_ratio()
    }

    fn transform(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let y = self.inner.transform(matrix(&rows)?.view()).map_err(to_py)?;
        Ok(y.outer_iter().map(|r| r.to_vec()).collect())
    }

    fn inverse_transform(&self, coords: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = self.inner.inverse_transform(matrix(&coords)?.view()).map_err(to_py)?;
        Ok(x.outer_iter().map(|r| r.to_vec()).collect())
    }
}

/// Clusters one scan's patches with a SOM; returns `{patch_id: cluster}`.
#[pyfunction]
#[pyo3(signature = (scan_id, ids, rows, kind="lbp36", map_side=20, epochs=50, seed=0, min_cluster_fraction=0.01))]
#[allow(clippy::too_many_arguments)]
fn cluster(
    scan_id: &str,
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
    kind: &str,
    map_side: usize,
    epochs: usize,
    seed: u64,
    min_cluster_fraction: f64,
) -> PyResult<BTreeMap<String, usize>> {
    let ds = descriptors(&ids, kind, &rows)?;
    let cfg = SomConfig {
        map_side,
        epochs,
        seed,
        min_cluster_fraction,
        ..SomConfig::default()
    };
    cfg.validate().map_err(to_py)?;
    let refs: Vec<&Descriptor> = ds.iter().collect();
    Ok(cluster_scan(scan_id, &refs, &cfg).map_err(to_py)?.labels)
}

/// Keeps `fraction` of one scan's patches given `{patch_id: cluster}` labels.
#[pyfunction]
#[pyo3(signature = (scan_id, ids, rows, labels, fraction, method="gmm", seed=0, criterion="density"))]
#[allow(clippy::too_many_arguments)]
fn select(
    scan_id: &str,
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: BTreeMap<String, usize>,
    fraction: f64,
    method: &str,
    seed: u64,
    criterion: &str,
) -> PyResult<Vec<String>> {
    if ids.len() != rows.len() {
        return Err(PyValueError::new_err(format!("{} ids for {} rows", ids.len(), rows.len())));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let c = labels
            .get(id)
            .ok_or_else(|| PyValueError::new_err(format!("no cluster label for {id}")))?;
        groups.entry(*c).or_default().push(i);
    }
    let set = match method {
        "random" => {
            let clusters: Vec<Vec<String>> = groups
                .values()
                .map(|m| m.iter().map(|&i| ids[i].clone()).collect())
                .collect();
            selection::select_random(scan_id, &clusters, fraction, seed)
        }
        "gmm" => {
            let criterion: SelectionCriterion = criterion.parse().map_err(to_py)?;
            let clusters = groups
                .values()
                .map(|m| {
                    let sub: Vec<Vec<f64>> = m.iter().map(|&i| rows[i].clone()).collect();
                    Ok(ClusterFeatures {
                        ids: m.iter().map(|&i| ids[i].clone()).collect(),
                        features: matrix(&sub)?,
                    })
                })
                .collect::<PyResult<Vec<_>>>()?;
            selection::select_gmm(scan_id, &clusters, fraction, seed, criterion)
        }
        other => return Err(PyValueError::new_err(format!("unknown selection method {other:?}"))),
    };
    Ok(set.map_err(to_py)?.retained)
}

#[pyclass(module = "patchsieve_py", frozen)]
struct RetrievalIndex {
    inner: CoreIndex,
}

#[pymethods]
impl RetrievalIndex {
    #[new]
    #[pyo3(signature = (ids, rows, kind="lbp36"))]
    fn new(ids: Vec<String>, rows: Vec<Vec<f64>>, kind: &str) -> PyResult<Self> {
        let ds = descriptors(&ids, kind, &rows)?;
        Ok(RetrievalIndex {
            inner: build_index(&ds, None, IndexMetadata::default()).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(RetrievalIndex {
            inner: CoreIndex::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.ids().to_vec()
    }

    /// Exact k nearest entries as `(patch_id, scan_id, distance)`.
    #[pyo3(signature = (vector, k=1))]
    fn query(&self, vector: Vec<f64>, k: usize) -> PyResult<Vec<(String, String, f64)>> {
        let q: Vec<f32> = vector.iter().map(|&v| v as f32).collect();
        Ok(self
            .inner
            .query(&q, k)
            .map_err(to_py)?
            .into_iter()
            .map(|m| (m.patch_id, m.scan_id, m.distance))
            .collect())
    }
}

/// Scores `{query: predicted scan}` against `{query: true scan}`.
#[pyfunction]
fn evaluate(top1: BTreeMap<String, String>, truth: BTreeMap<String, String>) -> PyResult<BTreeMap<String, f64>> {
    let r = evaluation::evaluate(&top1, &truth).map_err(to_py)?;
    Ok(BTreeMap::from([
        ("eta_p".to_string(), r.eta_p),
        ("eta_w".to_string(), r.eta_w),
        ("eta_total".to_string(), r.eta_total),
    ]))
}

/// Row-major copy of descriptor values, exposed for callers that already hold descriptors.
#[pyfunction]
fn feature_matrix(path: PathBuf) -> PyResult<(usize, usize, Vec<f64>)> {
    let ds = feature_store::read_features(&path).map_err(to_py)?;
    let x = to_matrix(&ds).map_err(to_py)?;
    let (n, d) = x.dim();
    Ok((n, d, x.into_raw_vec_and_offset().0))
}

#[pymodule]
fn patchsieve_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(lbp_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(lbp_descriptor, m)?)?;
    m.add_function(wrap_pyfunction!(read_features, m)?)?;
    m.add_function(wrap_pyfunction!(write_features, m)?)?;
    m.add_function(wrap_pyfunction!(feature_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<PcaModel>()?;
    m.add_class::<RetrievalIndex>()?;
    Ok(())
}
