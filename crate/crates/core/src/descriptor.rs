//! Patch identities and fixed-length feature vectors.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LBP36_DIM: usize = 36;
pub const DEEP_DIM: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    Lbp36,
    Deep4096,
    PcaReduced,
}

impl DescriptorKind {
    /// Code stored in the feature file header.
    pub fn code(self) -> u32 {
        match self {
            DescriptorKind::Lbp36 => 0,
            DescriptorKind::Deep4096 => 1,
            DescriptorKind::PcaReduced => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(DescriptorKind::Lbp36),
            1 => Ok(DescriptorKind::Deep4096),
            2 => Ok(DescriptorKind::PcaReduced),
            other => Err(Error::Format(format!("unknown descriptor kind code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DescriptorKind::Lbp36 => "lbp36",
            DescriptorKind::Deep4096 => "deep4096",
            DescriptorKind::PcaReduced => "pca_reduced",
        }
    }

    /// Dimension required by the kind, if fixed.
    pub fn fixed_dim(self) -> Option<usize> {
        match self {
            DescriptorKind::Lbp36 => Some(LBP36_DIM),
            DescriptorKind::Deep4096 => Some(DEEP_DIM),
            DescriptorKind::PcaReduced => None,
        }
    }
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DescriptorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lbp36" => Ok(DescriptorKind::Lbp36),
            "deep4096" => Ok(DescriptorKind::Deep4096),
            "pca_reduced" => Ok(DescriptorKind::PcaReduced),
            other => Err(Error::InvalidArgument(format!("unknown descriptor kind {other:?}"))),
        }
    }
}

/// Scan identity plus tile coordinates. Renders as `<scan_id>_x<grid_x>_y<grid_y>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchRef {
    pub scan_id: String,
    pub grid_x: u32,
    pub grid_y: u32,
}

impl PatchRef {
    pub fn new(scan_id: impl Into<String>, grid_x: u32, grid_y: u32) -> Self {
        PatchRef {
            scan_id: scan_id.into(),
            grid_x,
            grid_y,
        }
    }

    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PatchRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_x{}_y{}", self.scan_id, self.grid_x, self.grid_y)
    }
}

impl FromStr for PatchRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("patch id {s:?} is not of the form <scan>_x<N>_y<M>"));
        let y_at = s.rfind("_y").ok_or_else(bad)?;
        let x_at = s[..y_at].rfind("_x").ok_or_else(bad)?;
        if x_at == 0 {
            return Err(bad());
        }
        let grid_x = s[x_at + 2..y_at].parse().map_err(|_| bad())?;
        let grid_y = s[y_at + 2..].parse().map_err(|_| bad())?;
        Ok(PatchRef::new(&s[..x_at], grid_x, grid_y))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    patch: PatchRef,
    kind: DescriptorKind,
    values: Vec<f32>,
}

impl Descriptor {
    pub fn new(patch: PatchRef, kind: DescriptorKind, values: Vec<f32>) -> Result<Self> {
        if let Some(dim) = kind.fixed_dim() {
            if values.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: values.len(),
                });
            }
        }
        if values.is_empty() {
            return Err(Error::Empty(format!("descriptor {patch} has no values")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("descriptor {patch} has non-finite values")));
        }
        Ok(Descriptor { patch, kind, values })
    }

    pub fn patch(&self) -> &PatchRef {
        &self.patch
    }

    pub fn id(&self) -> String {
        self.patch.id()
    }

    pub fn scan_id(&self) -> &str {
        &self.patch.scan_id
    }

    pub fn kind(&self) -> DescriptorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Checks that a descriptor set is non-empty and homogeneous; returns (kind, dim).
pub fn check_homogeneous(descriptors: &[Descriptor]) -> Result<(DescriptorKind, usize)> {
    let first = descriptors
        .first()
        .ok_or_else(|| Error::Empty("descriptor set is empty".into()))?;
    let (kind, dim) = (first.kind(), first.dim());
    for d in descriptors {
        if d.kind() != kind {
            return Err(Error::Format(format!(
                "mixed descriptor kinds: {} and {}",
                kind,
                d.kind()
            )));
        }
        if d.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: d.dim(),
            });
        }
    }
    Ok((kind, dim))
}

/// Stacks descriptor values into an n x d matrix of f64.
pub fn to_matrix<'a>(descriptors: impl IntoIterator<Item = &'a Descriptor>) -> Result<Array2<f64>> {
    let rows: Vec<&Descriptor> = descriptors.into_iter().collect();
    let dim = rows.first().map(|d| d.dim()).unwrap_or(0);
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, d) in rows.iter().enumerate() {
        if d.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: d.dim(),
            });
        }
        for (o, v) in out.row_mut(i).iter_mut().zip(d.values()) {
            *o = *v as f64;
        }
    }
    Ok(out)
}
