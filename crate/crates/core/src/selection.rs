//! Representative patch selection per scan: GMM-typicality ranking within each SOM
//! cluster, or uniform random sampling with the same per-cluster quotas.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::descriptor::{to_matrix, Descriptor};
use crate::error::{Error, Result};
use crate::gmm::{gmm_fit, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::seed;
use crate::som::ClusterModel;

/// Selection fractions covered by a sweep.
pub const SWEEP_FRACTIONS: [f64; 6] = [0.10, 0.15, 0.20, 0.30, 0.40, 0.50];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Gmm,
    Random,
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMethod::Gmm => "gmm",
            SelectionMethod::Random => "random",
        })
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(SelectionMethod::Gmm),
            "random" => Ok(SelectionMethod::Random),
            other => Err(Error::InvalidArgument(format!("unknown selection method {other:?}"))),
        }
    }
}

/// How GMM selection ranks patches inside a cluster.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionCriterion {
    /// Highest mixture log-density first.
    #[default]
    Density,
    /// Closest to any component mean first.
    NearestMean,
}

impl FromStr for SelectionCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "density" => Ok(SelectionCriterion::Density),
            "nearest-mean" => Ok(SelectionCriterion::NearestMean),
            other => Err(Error::InvalidArgument(format!("unknown selection criterion {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSet {
    pub scan_id: String,
    pub method: SelectionMethod,
    pub fraction: f64,
    pub seed: u64,
    /// Retained patch ids in lexicographic order.
    pub retained: Vec<String>,
}

pub fn save_selections(path: &Path, sets: &[SelectionSet]) -> Result<()> {
    artifact::write_json(path, &sets)
}

pub fn load_selections(path: &Path) -> Result<Vec<SelectionSet>> {
    artifact::read_json(path)
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("fraction must be in (0, 1], got {fraction}")))
    }
}

/// `round(fraction * n)`, half up.
pub fn target_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 0.5 + 1e-9).floor() as usize
}

/// Splits `round(fraction * n)` across clusters in proportion to their sizes using the
/// largest-remainder rule (ties: larger cluster, then lower index).
pub fn apportion(sizes: &[usize], fraction: f64) -> Result<Vec<usize>> {
    check_fraction(fraction)?;
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return Err(Error::Empty("no patches to apportion".into()));
    }
    let total = target_count(fraction, n).min(n) as u128;
    let n128 = n as u128;
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| (total * s as u128 / n128) as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = total * sizes[a] as u128 % n128;
        let rb = total * sizes[b] as u128 % n128;
        rb.cmp(&ra).then(sizes[b].cmp(&sizes[a])).then(a.cmp(&b))
    });
    for &c in order.iter().take(total as usize - assigned) {
        quotas[c] += 1;
    }
    Ok(quotas)
}

/// Mixture size used for a cluster of `n` patches.
pub fn components_for(n: usize) -> usize {
    n.div_ceil(20).clamp(1, 3)
}

/// One cluster's patches: ids with their feature rows.
#[derive(Clone, Debug)]
pub struct ClusterFeatures {
    pub ids: Vec<String>,
    pub features: Array2<f64>,
}

/// Ranks a cluster's patches by GMM typicality and returns the first `quota` ids.
pub fn rank_cluster(
    cluster: &ClusterFeatures,
    quota: usize,
    seed: u64,
    criterion: SelectionCriterion,
) -> Result<Vec<String>> {
    let n = cluster.ids.len();
    if quota >= n {
        return Ok(cluster.ids.clone());
    }
    if quota == 0 {
        return Ok(Vec::new());
    }
    let model = gmm_fit(cluster.features.view(), components_for(n), seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    // lower score ranks first
    let scores: Vec<f64> = cluster
        .features
        .axis_iter(Axis(0))
        .map(|x| match criterion {
            SelectionCriterion::Density => -model.log_density(x),
            SelectionCriterion::NearestMean => model.nearest_mean_distance(x),
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then_with(|| cluster.ids[a].cmp(&cluster.ids[b])));
    Ok(order.into_iter().take(quota).map(|i| cluster.ids[i].clone()).collect())
}

pub fn select_gmm(
    scan_id: &str,
    clusters: &[ClusterFeatures],
    fraction: f64,
    seed: u64,
    criterion: SelectionCriterion,
) -> Result<SelectionSet> {
    if clusters.is_empty() {
        return Err(Error::Empty(format!("scan {scan_id} has no clusters")));
    }
    let sizes: Vec<usize> = clusters.iter().map(|c| c.ids.len()).collect();
    let quotas = apportion(&sizes, fraction)?;
    let picked: Vec<Vec<String>> = clusters
        .par_iter()
        .zip(quotas.par_iter())
        .enumerate()
        .map(|(c, (cluster, &q))| {
            rank_cluster(cluster, q, seed::derive(seed, &format!("gmm/{scan_id}/{c}")), criterion)
        })
        .collect::<Result<_>>()?;
    let mut retained: Vec<String> = picked.into_iter().flatten().collect();
    retained.sort();
    Ok(SelectionSet {
        scan_id: scan_id.to_string(),
        method: SelectionMethod::Gmm,
        fraction,
        seed,
        retained,
    })
}

pub fn select_random(scan_id: &str, clusters: &[Vec<String>], fraction: f64, seed: u64) -> Result<SelectionSet> {
    if clusters.is_empty() {
        return Err(Error::Empty(format!("scan {scan_id} has no clusters")));
    }
    let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
    let quotas = apportion(&sizes, fraction)?;
    let mut retained = Vec::new();
    for (c, (ids, &q)) in clusters.iter().zip(&quotas).enumerate() {
        let mut rng = seed::stage_rng(seed, &format!("random/{scan_id}/{c}"));
        let picks = rand::seq::index::sample(&mut rng, ids.len(), q);
        retained.extend(picks.into_iter().map(|i| ids[i].clone()));
    }
    retained.sort();
    Ok(SelectionSet {
        scan_id: scan_id.to_string(),
        method: SelectionMethod::Random,
        fraction,
        seed,
        retained,
    })
}

/// Runs selection for every clustered scan, looking features up by patch id.
pub fn select_scans(
    models: &[ClusterModel],
    descriptors: &[Descriptor],
    method: SelectionMethod,
    fraction: f64,
    seed: u64,
    criterion: SelectionCriterion,
) -> Result<Vec<SelectionSet>> {
    check_fraction(fraction)?;
    let by_id: HashMap<String, &Descriptor> = descriptors.iter().map(|d| (d.id(), d)).collect();
    models
        .iter()
        .map(|model| {
            let groups = model.members();
            match method {
                SelectionMethod::Random => select_random(&model.scan_id, &groups, fraction, seed),
                SelectionMethod::Gmm => {
                    let clusters = groups
                        .into_iter()
                        .map(|ids| {
                            let rows = ids
                                .iter()
                                .map(|id| by_id.get(id).copied().ok_or_else(|| Error::UnknownId(id.clone())))
                                .collect::<Result<Vec<_>>>()?;
                            Ok(ClusterFeatures {
                                features: to_matrix(rows)?,
                                ids,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    select_gmm(&model.scan_id, &clusters, fraction, seed, criterion)
                }
            }
        })
        .collect()
}
