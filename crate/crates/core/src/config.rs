//! Pipeline configuration document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::lbp::LbpConfig;
use crate::selection::{SelectionCriterion, SelectionMethod, SWEEP_FRACTIONS};
use crate::seed;
use crate::som::SomConfig;
use crate::tiling::TilingConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaSection {
    pub retained_fraction: f64,
}

impl Default for PcaSection {
    fn default() -> Self {
        PcaSection { retained_fraction: 0.95 }
    }
}

/// SOM parameters; the seed comes from the root seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SomSection {
    pub map_side: usize,
    pub epochs: usize,
    pub initial_learning_rate: f64,
    pub initial_neighborhood_radius: Option<f64>,
    pub min_cluster_fraction: f64,
}

impl Default for SomSection {
    fn default() -> Self {
        let d = SomConfig::default();
        SomSection {
            map_side: d.map_side,
            epochs: d.epochs,
            initial_learning_rate: d.initial_learning_rate,
            initial_neighborhood_radius: d.initial_neighborhood_radius,
            min_cluster_fraction: d.min_cluster_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    pub fraction: f64,
    pub method: SelectionMethod,
    pub criterion: SelectionCriterion,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            fraction: 0.5,
            method: SelectionMethod::Gmm,
            criterion: SelectionCriterion::Density,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub k: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection { k: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub fractions: Vec<f64>,
    pub methods: Vec<SelectionMethod>,
    pub include_full: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            fractions: SWEEP_FRACTIONS.to_vec(),
            methods: vec![SelectionMethod::Gmm, SelectionMethod::Random],
            include_full: false,
        }
    }
}

/// Default locations for path flags, keyed like the flags themselves.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub manifest: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
    pub selection: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub tiling: TilingConfig,
    pub lbp: LbpConfig,
    pub pca: PcaSection,
    pub som: SomSection,
    pub selection: SelectionSection,
    pub retrieval: RetrievalSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        artifact::read_json(path)
    }

    /// SOM settings with the stage seed expanded from the root seed.
    pub fn som_config(&self) -> SomConfig {
        SomConfig {
            map_side: self.som.map_side,
            epochs: self.som.epochs,
            initial_learning_rate: self.som.initial_learning_rate,
            initial_neighborhood_radius: self.som.initial_neighborhood_radius,
            min_cluster_fraction: self.som.min_cluster_fraction,
            seed: seed::derive(self.seed, "cluster"),
        }
    }

    pub fn selection_seed(&self) -> u64 {
        seed::derive(self.seed, "select")
    }

    pub fn validate(&self) -> Result<()> {
        self.tiling.validate()?;
        for s in &self.lbp.scales {
            s.validate()?;
        }
        self.som_config().validate()?;
        if !(self.pca.retained_fraction > 0.0 && self.pca.retained_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "pca.retained_fraction must be in (0, 1], got {}",
                self.pca.retained_fraction
            )));
        }
        if self.retrieval.k == 0 {
            return Err(Error::InvalidArgument("retrieval.k must be >= 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidArgument("jobs must be >= 1".into()));
        }
        Ok(())
    }
}
