//! Stage compositions shared by the command line and the end-to-end checks.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::descriptor::{check_homogeneous, Descriptor};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, SweepEntry};
use crate::lbp::{lbp_descriptor, LbpConfig};
use crate::raster::Raster;
use crate::retrieval::{build_index, IndexMetadata, RetrievalIndex};
use crate::selection::{select_scans, SelectionCriterion, SelectionMethod, SelectionSet};
use crate::som::ClusterModel;
use crate::synth::{self, CorpusParams, ScanRecipe};
use crate::tiling::{assess_patches, tile_scan, ManifestEntry, Patch, TilingConfig};
use crate::seed;

/// Tiles a scan and splits the tiles into manifest entries and retained patches.
pub fn tile_filtered(image: &Raster, scan_id: &str, cfg: &TilingConfig) -> Result<(Vec<ManifestEntry>, Vec<Patch>)> {
    let patches = tile_scan(image, scan_id, cfg)?;
    Ok(assess_patches(patches, cfg))
}

pub fn extract_lbp(patches: &[Patch], cfg: &LbpConfig) -> Result<Vec<Descriptor>> {
    patches.par_iter().map(|p| lbp_descriptor(p, cfg)).collect()
}

/// Ground truth taken from the scan each query patch was cut from.
pub fn truth_from_ids(queries: &[Descriptor]) -> BTreeMap<String, String> {
    queries
        .iter()
        .map(|q| (q.id(), q.scan_id().to_string()))
        .collect()
}

pub fn top1(index: &RetrievalIndex, queries: &[Descriptor]) -> Result<BTreeMap<String, String>> {
    let results = index.batch_query(queries, 1)?;
    Ok(queries
        .iter()
        .zip(results)
        .map(|(q, m)| (q.id(), m[0].scan_id.clone()))
        .collect())
}

fn check_compatible(train: &[Descriptor], queries: &[Descriptor]) -> Result<()> {
    let (tk, td) = check_homogeneous(train)?;
    let (qk, qd) = check_homogeneous(queries)?;
    if td != qd {
        return Err(Error::DimensionMismatch { expected: td, actual: qd });
    }
    if tk != qk {
        return Err(Error::Format(format!("index holds {tk} descriptors but queries are {qk}")));
    }
    Ok(())
}

/// Indexes `train` (optionally restricted to `selection`) and scores `queries`.
pub fn evaluate_selection(
    train: &[Descriptor],
    selection: Option<&[SelectionSet]>,
    queries: &[Descriptor],
    truth: &BTreeMap<String, String>,
) -> Result<EvalReport> {
    check_compatible(train, queries)?;
    let metadata = match selection {
        Some(sets) => IndexMetadata::from_selection(sets, 0),
        None => IndexMetadata::default(),
    };
    let index = build_index(train, selection, metadata)?;
    evaluate(&top1(&index, queries)?, truth)
}

#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub fractions: Vec<f64>,
    pub methods: Vec<SelectionMethod>,
    pub criterion: SelectionCriterion,
    /// Root seed; selection draws from `derive(seed, "select")`.
    pub seed: u64,
    /// Adds a `full` row that indexes every training descriptor.
    pub include_full: bool,
}

/// Runs select, index, search and eval for every (method, fraction) pair of one feature kind.
pub fn sweep_feature(
    feature: &str,
    train: &[Descriptor],
    models: &[ClusterModel],
    queries: &[Descriptor],
    truth: &BTreeMap<String, String>,
    plan: &SweepPlan,
) -> Result<Vec<SweepEntry>> {
    check_compatible(train, queries)?;
    let select_seed = seed::derive(plan.seed, "select");
    let mut out = Vec::new();
    for &method in &plan.methods {
        for &fraction in &plan.fractions {
            let sets = select_scans(models, train, method, fraction, select_seed, plan.criterion)?;
            out.push(SweepEntry {
                fraction,
                method: method.to_string(),
                feature: feature.to_string(),
                report: evaluate_selection(train, Some(&sets), queries, truth)?,
            });
        }
    }
    if plan.include_full {
        out.push(SweepEntry {
            fraction: 1.0,
            method: "full".into(),
            feature: feature.to_string(),
            report: evaluate_selection(train, None, queries, truth)?,
        });
    }
    Ok(out)
}

/// Tile grid of a synthetic scan: a training block and, one tile row below it, a
/// query block.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticLayout {
    pub patch_size: usize,
    pub downsample_to: usize,
    pub cols: usize,
    pub train_rows: usize,
    pub query_rows: usize,
}

impl Default for SyntheticLayout {
    fn default() -> Self {
        SyntheticLayout {
            patch_size: 160,
            downsample_to: 40,
            cols: 24,
            train_rows: 23,
            query_rows: 3,
        }
    }
}

impl SyntheticLayout {
    pub fn tiling(&self) -> TilingConfig {
        TilingConfig {
            patch_size: self.patch_size,
            stride: self.patch_size,
            downsample_to: self.downsample_to,
            ..TilingConfig::default()
        }
    }

    /// Training and query images of one scan.
    pub fn render(&self, recipe: &ScanRecipe) -> (Raster, Raster) {
        let w = self.cols * self.patch_size;
        let train = recipe.render(0, 0, w, self.train_rows * self.patch_size);
        let query = recipe.render(0, (self.train_rows + 1) * self.patch_size, w, self.query_rows * self.patch_size);
        (train, query)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub train: Vec<Descriptor>,
    pub queries: Vec<Descriptor>,
}

/// Renders, tiles, filters and describes every scan of a synthetic corpus with LBP.
pub fn synthetic_lbp_corpus(params: &CorpusParams, layout: &SyntheticLayout, lbp: &LbpConfig) -> Result<SyntheticCorpus> {
    let tiling = layout.tiling();
    let mut train = Vec::new();
    let mut queries = Vec::new();
    for recipe in synth::recipes(params) {
        let (t, q) = layout.render(&recipe);
        let (_, kept) = tile_filtered(&t, &recipe.scan_id, &tiling)?;
        train.extend(extract_lbp(&kept, lbp)?);
        let (_, kept) = tile_filtered(&q, &recipe.scan_id, &tiling)?;
        queries.extend(extract_lbp(&kept, lbp)?);
    }
    Ok(SyntheticCorpus { train, queries })
}
