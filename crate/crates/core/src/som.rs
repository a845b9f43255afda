//! Per-scan self-organizing maps, best-matching-unit clustering and merging of
//! undersized clusters.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{Descriptor, PatchRef};
use crate::error::{Error, Result};
use crate::seed;

const FINAL_LEARNING_RATE: f64 = 0.01;
const FINAL_RADIUS: f64 = 1.0;
/// Neighborhood weights below this are not applied.
const NEIGHBORHOOD_CUTOFF: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SomConfig {
    /// Units per map edge; the map has `map_side * map_side` units.
    pub map_side: usize,
    pub epochs: usize,
    pub initial_learning_rate: f64,
    /// Defaults to `map_side / 2`.
    pub initial_neighborhood_radius: Option<f64>,
    pub seed: u64,
    pub min_cluster_fraction: f64,
}

impl Default for SomConfig {
    fn default() -> Self {
        SomConfig {
            map_side: 20,
            epochs: 50,
            initial_learning_rate: 0.5,
            initial_neighborhood_radius: None,
            seed: 0,
            min_cluster_fraction: 0.01,
        }
    }
}

impl SomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.map_side < 2 {
            return Err(Error::InvalidArgument(format!("map_side must be >= 2, got {}", self.map_side)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.initial_learning_rate > 0.0) {
            return Err(Error::InvalidArgument("initial_learning_rate must be positive".into()));
        }
        if let Some(r) = self.initial_neighborhood_radius {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument("initial_neighborhood_radius must be positive".into()));
            }
        }
        if !(self.min_cluster_fraction > 0.0 && self.min_cluster_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "min_cluster_fraction must be in (0, 1), got {}",
                self.min_cluster_fraction
            )));
        }
        Ok(())
    }

    pub fn units(&self) -> usize {
        self.map_side * self.map_side
    }

    pub fn radius0(&self) -> f64 {
        self.initial_neighborhood_radius
            .unwrap_or(self.map_side as f64 / 2.0)
    }
}

#[inline]
fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest unit; ties go to the lowest index.
#[inline]
fn bmu(weights: ArrayView2<f64>, x: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (u, w) in weights.axis_iter(Axis(0)).enumerate() {
        let d = sq_dist(w, x);
        if d < best.1 {
            best = (u, d);
        }
    }
    best
}

fn exp_decay(start: f64, end: f64, progress: f64) -> f64 {
    start * (end / start).powf(progress)
}

/// Trains a map online; returns the `map_side^2 x d` weights and the mean BMU distance
/// over all inputs after each epoch.
pub fn som_train_traced(features: ArrayView2<f64>, cfg: &SomConfig) -> Result<(Array2<f64>, Vec<f64>)> {
    cfg.validate()?;
    let (n, d) = features.dim();
    if n == 0 || d == 0 {
        return Err(Error::Empty("SOM training needs at least one non-empty feature vector".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("SOM input has non-finite values".into()));
    }
    let side = cfg.map_side;
    let mut rng = seed::rng(cfg.seed);
    let mut weights = Array2::zeros((cfg.units(), d));
    for mut w in weights.axis_iter_mut(Axis(0)) {
        w.assign(&features.row(rng.random_range(0..n)));
    }

    let total_steps = cfg.epochs * n;
    let span = (total_steps.max(2) - 1) as f64;
    let r0 = cfg.radius0();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let progress = step as f64 / span;
            let lr = exp_decay(cfg.initial_learning_rate, FINAL_LEARNING_RATE, progress);
            let sigma = exp_decay(r0, FINAL_RADIUS, progress);
            let two_sigma_sq = 2.0 * sigma * sigma;
            let reach_sq = two_sigma_sq * (1.0 / NEIGHBORHOOD_CUTOFF).ln();
            let x = features.row(i);
            let (winner, _) = bmu(weights.view(), x);
            let (wr, wc) = ((winner / side) as f64, (winner % side) as f64);
            for (u, mut w) in weights.axis_iter_mut(Axis(0)).enumerate() {
                let (r, c) = ((u / side) as f64, (u % side) as f64);
                let g = (r - wr) * (r - wr) + (c - wc) * (c - wc);
                if g > reach_sq {
                    continue;
                }
                let h = lr * (-g / two_sigma_sq).exp();
                w.zip_mut_with(&x, |wi, xi| *wi += h * (xi - *wi));
            }
            step += 1;
        }
        let qe = features
            .axis_iter(Axis(0))
            .map(|x| bmu(weights.view(), x).1.sqrt())
            .sum::<f64>()
            / n as f64;
        trace.push(qe);
    }
    Ok((weights, trace))
}

pub fn som_train(features: ArrayView2<f64>, cfg: &SomConfig) -> Result<Array2<f64>> {
    som_train_traced(features, cfg).map(|(w, _)| w)
}

/// Flat BMU index of every row.
pub fn som_assign(features: ArrayView2<f64>, weights: ArrayView2<f64>) -> Result<Vec<usize>> {
    if features.ncols() != weights.ncols() {
        return Err(Error::DimensionMismatch {
            expected: weights.ncols(),
            actual: features.ncols(),
        });
    }
    if weights.nrows() == 0 {
        return Err(Error::Empty("SOM has no units".into()));
    }
    Ok((0..features.nrows())
        .into_par_iter()
        .map(|i| bmu(weights, features.row(i)).0)
        .collect())
}

/// Between-cluster over within-cluster sum of squares.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceRatio {
    Finite(f64),
    /// Within-cluster scatter is zero while between-cluster scatter is not.
    Infinite,
}

impl VarianceRatio {
    pub fn as_f64(self) -> f64 {
        match self {
            VarianceRatio::Finite(v) => v,
            VarianceRatio::Infinite => f64::INFINITY,
        }
    }
}

pub fn variance_ratio(features: ArrayView2<f64>, labels: &[usize]) -> VarianceRatio {
    let (n, d) = features.dim();
    if n == 0 {
        return VarianceRatio::Finite(0.0);
    }
    let global = features.mean_axis(Axis(0)).expect("n > 0");
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (x, &l) in features.axis_iter(Axis(0)).zip(labels) {
        let e = sums.entry(l).or_insert_with(|| (vec![0.0; d], 0));
        e.0.iter_mut().zip(x.iter()).for_each(|(s, v)| *s += v);
        e.1 += 1;
    }
    let centroids: BTreeMap<usize, Vec<f64>> = sums
        .iter()
        .map(|(&l, (s, c))| (l, s.iter().map(|v| v / *c as f64).collect()))
        .collect();
    let between: f64 = sums
        .iter()
        .map(|(l, (_, c))| {
            *c as f64
                * centroids[l]
                    .iter()
                    .zip(global.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
        })
        .sum();
    let within: f64 = features
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(x, l)| {
            x.iter()
                .zip(&centroids[l])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    if centroids.len() <= 1 || between == 0.0 {
        VarianceRatio::Finite(0.0)
    } else if within == 0.0 {
        VarianceRatio::Infinite
    } else {
        VarianceRatio::Finite(between / within)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergedClusters {
    /// Compacted labels, 0 being the largest cluster.
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl MergedClusters {
    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }
}

/// Smallest cluster size allowed for a given patch count.
pub fn min_cluster_size(min_cluster_fraction: f64, n: usize) -> usize {
    (min_cluster_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize
}

struct RawCluster {
    id: usize,
    members: Vec<usize>,
    sum: Vec<f64>,
}

impl RawCluster {
    fn centroid(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.members.len() as f64;
        self.sum.iter().map(move |s| s / n)
    }
}

/// Dissolves clusters smaller than `min_cluster_fraction * n`, smallest first, into the
/// cluster with the nearest centroid, until every cluster meets the floor or one remains.
pub fn merge_small_clusters(
    features: ArrayView2<f64>,
    raw_labels: &[usize],
    min_cluster_fraction: f64,
) -> Result<MergedClusters> {
    let (n, d) = features.dim();
    if raw_labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: raw_labels.len(),
        });
    }
    let mut by_id: BTreeMap<usize, RawCluster> = BTreeMap::new();
    for (i, (&l, x)) in raw_labels.iter().zip(features.axis_iter(Axis(0))).enumerate() {
        let c = by_id.entry(l).or_insert_with(|| RawCluster {
            id: l,
            members: Vec::new(),
            sum: vec![0.0; d],
        });
        c.members.push(i);
        c.sum.iter_mut().zip(x.iter()).for_each(|(s, v)| *s += v);
    }
    let mut clusters: Vec<RawCluster> = by_id.into_values().collect();
    let floor = min_cluster_size(min_cluster_fraction, n);

    while clusters.len() > 1 {
        let Some(small) = clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| c.members.len() < floor)
            .min_by_key(|(_, c)| (c.members.len(), c.id))
            .map(|(i, _)| i)
        else {
            break;
        };
        let source: Vec<f64> = clusters[small].centroid().collect();
        let target = clusters
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != small)
            .map(|(i, c)| {
                let dist: f64 = c.centroid().zip(&source).map(|(a, b)| (a - b) * (a - b)).sum();
                (i, dist, c.members.len(), c.id)
            })
            .min_by(|a, b| {
                a.1.total_cmp(&b.1)
                    .then(b.2.cmp(&a.2))
                    .then(a.3.cmp(&b.3))
            })
            .map(|(i, ..)| i)
            .expect("at least two clusters");
        let dissolved = clusters.remove(small);
        let target = if target > small { target - 1 } else { target };
        let t = &mut clusters[target];
        t.members.extend(dissolved.members);
        t.sum.iter_mut().zip(&dissolved.sum).for_each(|(s, v)| *s += v);
    }

    clusters.sort_by(|a, b| b.members.len().cmp(&a.members.len()).then(a.id.cmp(&b.id)));
    let mut labels = vec![0; n];
    let mut sizes = Vec::with_capacity(clusters.len());
    for (label, c) in clusters.iter().enumerate() {
        for &m in &c.members {
            labels[m] = label;
        }
        sizes.push(c.members.len());
    }
    Ok(MergedClusters { labels, sizes })
}

/// Clustering of one scan's patches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterModel {
    pub scan_id: String,
    pub map_side: usize,
    pub seed: u64,
    /// Occupied units before merging.
    pub raw_cluster_count: usize,
    pub cluster_count: usize,
    pub cluster_sizes: Vec<usize>,
    /// Patch id to compacted cluster id.
    pub labels: BTreeMap<String, usize>,
    pub variance_ratio: VarianceRatio,
    #[serde(skip)]
    pub weights: Option<Array2<f64>>,
}

impl ClusterModel {
    /// Patch ids grouped by cluster, each group in id order.
    pub fn members(&self) -> Vec<Vec<String>> {
        let mut groups = vec![Vec::new(); self.cluster_count];
        for (id, &l) in &self.labels {
            groups[l].push(id.clone());
        }
        groups
    }

    /// SOM weights as descriptors keyed `<scan_id>-som_x<col>_y<row>`.
    pub fn weight_descriptors(&self, kind: crate::descriptor::DescriptorKind) -> Result<Vec<Descriptor>> {
        let weights = self
            .weights
            .as_ref()
            .ok_or_else(|| Error::Empty(format!("cluster model for {} carries no weights", self.scan_id)))?;
        weights
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(u, w)| {
                let patch = PatchRef::new(
                    format!("{}-som", self.scan_id),
                    (u % self.map_side) as u32,
                    (u / self.map_side) as u32,
                );
                Descriptor::new(patch, kind, w.iter().map(|&v| v as f32).collect())
            })
            .collect()
    }
}

/// Trains, assigns and merges for one scan.
pub fn cluster_scan(scan_id: &str, descriptors: &[&Descriptor], cfg: &SomConfig) -> Result<ClusterModel> {
    let x = crate::descriptor::to_matrix(descriptors.iter().copied())?;
    let scan_cfg = SomConfig {
        seed: seed::derive(cfg.seed, &format!("som/{scan_id}")),
        ..cfg.clone()
    };
    let weights = som_train(x.view(), &scan_cfg)?;
    let raw = som_assign(x.view(), weights.view())?;
    let raw_cluster_count = raw.iter().collect::<std::collections::BTreeSet<_>>().len();
    let merged = merge_small_clusters(x.view(), &raw, cfg.min_cluster_fraction)?;
    let ratio = variance_ratio(x.view(), &merged.labels);
    let labels = descriptors
        .iter()
        .zip(&merged.labels)
        .map(|(d, &l)| (d.id(), l))
        .collect();
    Ok(ClusterModel {
        scan_id: scan_id.to_string(),
        map_side: cfg.map_side,
        seed: scan_cfg.seed,
        raw_cluster_count,
        cluster_count: merged.cluster_count(),
        cluster_sizes: merged.sizes,
        labels,
        variance_ratio: ratio,
        weights: Some(weights),
    })
}

/// Groups descriptors by scan and clusters each scan independently (in parallel).
pub fn cluster_scans(descriptors: &[Descriptor], cfg: &SomConfig) -> Result<Vec<ClusterModel>> {
    cfg.validate()?;
    let mut by_scan: BTreeMap<&str, Vec<&Descriptor>> = BTreeMap::new();
    for d in descriptors {
        by_scan.entry(d.scan_id()).or_default().push(d);
    }
    by_scan
        .into_par_iter()
        .map(|(scan, ds)| cluster_scan(scan, &ds, cfg))
        .collect()
}

/// Variance ratio and cluster count after merging, for each candidate map side.
pub fn map_size_profile(
    features: ArrayView2<f64>,
    sides: &[usize],
    cfg: &SomConfig,
) -> Result<Vec<(usize, VarianceRatio, usize)>> {
    sides
        .par_iter()
        .map(|&side| {
            let c = SomConfig {
                map_side: side,
                initial_neighborhood_radius: None,
                ..cfg.clone()
            };
            let w = som_train(features, &c)?;
            let raw = som_assign(features, w.view())?;
            let merged = merge_small_clusters(features, &raw, c.min_cluster_fraction)?;
            Ok((side, variance_ratio(features, &merged.labels), merged.cluster_count()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_cfg(side: usize, epochs: usize) -> SomConfig {
        SomConfig {
            map_side: side,
            epochs,
            seed: 11,
            ..SomConfig::default()
        }
    }

    #[test]
    fn single_input_attracts_map() {
        let x = array![[3.0, -2.0, 5.0]];
        let (w, trace) = som_train_traced(x.view(), &small_cfg(4, 30)).unwrap();
        assert!(trace.windows(2).all(|p| p[1] <= p[0]));
        let (_, d) = bmu(w.view(), x.row(0));
        assert!(d < 1e-12);
    }

    #[test]
    fn assignment_of_exact_unit() {
        let w = array![[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]];
        let x = array![[1.0, 1.0], [5.0, 5.0], [0.0, 0.0]];
        assert_eq!(som_assign(x.view(), w.view()).unwrap(), vec![1, 2, 0]);
        // equidistant from units 0 and 1 -> lowest index
        let tie = array![[0.5, 0.5]];
        assert_eq!(som_assign(tie.view(), w.view()).unwrap(), vec![0]);
        assert!(som_assign(array![[1.0]].view(), w.view()).is_err());
    }

    #[test]
    fn empty_training_set_rejected() {
        let x = Array2::<f64>::zeros((0, 3));
        assert!(matches!(som_train(x.view(), &small_cfg(2, 1)), Err(Error::Empty(_))));
    }

    #[test]
    fn ratio_edge_cases() {
        let x = array![[0.0, 0.0], [0.0, 0.0], [4.0, 4.0], [4.0, 4.0]];
        assert_eq!(variance_ratio(x.view(), &[0, 0, 1, 1]), VarianceRatio::Infinite);
        assert_eq!(variance_ratio(x.view(), &[0, 0, 0, 0]), VarianceRatio::Finite(0.0));
    }

    #[test]
    fn ratio_hand_computed() {
        // clusters: A={(0,0),(2,0)}, B={(10,0),(10,2)}, C={(0,10)}
        // centroids A=(1,0), B=(10,1), C=(0,10); global = (22/5, 12/5) = (4.4, 2.4)
        // between = 2*((1-4.4)^2+(0-2.4)^2) + 2*((10-4.4)^2+(1-2.4)^2) + ((0-4.4)^2+(10-2.4)^2)
        //         = 2*(11.56+5.76) + 2*(31.36+1.96) + (19.36+57.76) = 34.64 + 66.64 + 77.12 = 178.4
        // within  = (1+1) + (1+1) + 0 = 4
        let x = array![[0.0, 0.0], [2.0, 0.0], [10.0, 0.0], [10.0, 2.0], [0.0, 10.0]];
        match variance_ratio(x.view(), &[0, 0, 1, 1, 2]) {
            VarianceRatio::Finite(r) => assert!((r - 178.4 / 4.0).abs() < 1e-9, "{r}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infinite_ratio_serializes_as_flag() {
        let json = serde_json::to_string(&VarianceRatio::Infinite).unwrap();
        assert_eq!(json, "\"infinite\"");
        let json = serde_json::to_string(&VarianceRatio::Finite(2.5)).unwrap();
        assert_eq!(json, "{\"finite\":2.5}");
    }

    #[test]
    fn floor_met_exactly_keeps_clusters() {
        // sizes 98, 1, 1 with n = 100 and a 1% floor: every cluster holds >= 1 patch
        let mut rows = vec![[0.0, 0.0]; 98];
        rows.push([10.0, 0.0]);
        rows.push([0.0, 10.0]);
        let x = Array2::from(rows);
        let mut labels = vec![7; 98];
        labels.extend([3, 9]);
        let m = merge_small_clusters(x.view(), &labels, 0.01).unwrap();
        assert_eq!(m.sizes, vec![98, 1, 1]);
        // compaction: largest first, ties by raw id (3 before 9)
        assert_eq!(m.labels[98], 1);
        assert_eq!(m.labels[99], 2);
    }

    #[test]
    fn two_small_clusters_merged_by_hand_trace() {
        // n = 1000, floor 10. A: 990 points at (0,0); B: 5 at (50,0); C: 5 at (60,0).
        // Step 1: smallest is B (tie on size with C, lower raw id). Nearest centroid to
        //   (50,0) is C at distance 10 (A is 50) -> B joins C: size 10, centroid (55,0).
        // Step 2: no cluster below 10 -> stop with sizes [990, 10].
        let mut rows = vec![[0.0, 0.0]; 990];
        rows.extend(vec![[50.0, 0.0]; 5]);
        rows.extend(vec![[60.0, 0.0]; 5]);
        let x = Array2::from(rows);
        let mut labels = vec![0; 990];
        labels.extend(vec![1; 5]);
        labels.extend(vec![2; 5]);
        let m = merge_small_clusters(x.view(), &labels, 0.01).unwrap();
        assert_eq!(m.sizes, vec![990, 10]);
        assert!(m.labels[990..].iter().all(|&l| l == 1));

        // with C far away both small clusters end up in A
        let mut rows = vec![[0.0, 0.0]; 990];
        rows.extend(vec![[5.0, 0.0]; 5]);
        rows.extend(vec![[-5.0, 100.0]; 5]);
        let x = Array2::from(rows);
        let m = merge_small_clusters(x.view(), &labels, 0.01).unwrap();
        assert_eq!(m.sizes, vec![1000]);
    }

    #[test]
    fn single_cluster_unchanged() {
        let x = array![[1.0], [2.0], [3.0]];
        let m = merge_small_clusters(x.view(), &[4, 4, 4], 0.5).unwrap();
        assert_eq!(m.sizes, vec![3]);
        assert_eq!(m.labels, vec![0, 0, 0]);
    }

    #[test]
    fn min_size_is_ceiling() {
        assert_eq!(min_cluster_size(0.01, 100), 1);
        assert_eq!(min_cluster_size(0.01, 1000), 10);
        assert_eq!(min_cluster_size(0.01, 150), 2);
    }
}
