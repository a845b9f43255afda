//! Scan tiling, box downsampling and background rejection.

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::descriptor::PatchRef;
use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TilingConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub downsample_to: usize,
    /// Patches whose background fraction exceeds this are discarded.
    pub bg_threshold: f64,
    /// Gray level above which a pixel counts as background.
    pub bg_brightness_cutoff: u8,
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig {
            patch_size: 1000,
            stride: 1000,
            downsample_to: 250,
            bg_threshold: 0.99,
            bg_brightness_cutoff: 200,
        }
    }
}

impl TilingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        if self.downsample_to == 0 || self.downsample_to > self.patch_size {
            return Err(Error::InvalidArgument(format!(
                "downsample_to must be in 1..={}, got {}",
                self.patch_size, self.downsample_to
            )));
        }
        if !(0.0..=1.0).contains(&self.bg_threshold) {
            return Err(Error::InvalidArgument(format!(
                "bg_threshold must be in [0, 1], got {}",
                self.bg_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub scan_id: String,
    pub grid_x: u32,
    pub grid_y: u32,
    pub pixels: Raster,
}

impl Patch {
    pub fn new(scan_id: impl Into<String>, grid_x: u32, grid_y: u32, pixels: Raster) -> Result<Self> {
        if pixels.width() != pixels.height() {
            return Err(Error::InvalidArgument(format!(
                "patch must be square, got {}x{}",
                pixels.width(),
                pixels.height()
            )));
        }
        Ok(Patch {
            scan_id: scan_id.into(),
            grid_x,
            grid_y,
            pixels,
        })
    }

    pub fn side(&self) -> usize {
        self.pixels.width()
    }

    pub fn patch_ref(&self) -> PatchRef {
        PatchRef::new(&self.scan_id, self.grid_x, self.grid_y)
    }

    pub fn id(&self) -> String {
        self.patch_ref().id()
    }
}

/// Number of whole tiles along an axis of length `len`.
pub fn tiles_along(len: usize, patch_size: usize, stride: usize) -> usize {
    if len < patch_size {
        0
    } else {
        (len - patch_size) / stride + 1
    }
}

/// Cuts `image` into whole `patch_size` tiles every `stride` pixels and downsamples each.
///
/// Partial tiles at the right and bottom edges are dropped. Output is ordered by
/// `(grid_y, grid_x)`.
pub fn tile_scan(image: &Raster, scan_id: &str, cfg: &TilingConfig) -> Result<Vec<Patch>> {
    cfg.validate()?;
    if image.width() < cfg.patch_size || image.height() < cfg.patch_size {
        return Err(Error::Empty(format!(
            "scan {scan_id} is {}x{} pixels, smaller than one {}-pixel patch",
            image.width(),
            image.height(),
            cfg.patch_size
        )));
    }
    let cols = tiles_along(image.width(), cfg.patch_size, cfg.stride);
    let rows = tiles_along(image.height(), cfg.patch_size, cfg.stride);
    let cells: Vec<(usize, usize)> = (0..rows)
        .flat_map(|gy| (0..cols).map(move |gx| (gx, gy)))
        .collect();
    cells
        .into_par_iter()
        .map(|(gx, gy)| {
            let tile = image.crop(gx * cfg.stride, gy * cfg.stride, cfg.patch_size, cfg.patch_size)?;
            let pixels = downsample(&tile, cfg.downsample_to)?;
            Patch::new(scan_id, gx as u32, gy as u32, pixels)
        })
        .collect()
}

/// Reduces a square image to `target` pixels per edge.
///
/// Integer ratios use an exact box mean with round-half-up; any other ratio falls back
/// to bilinear resampling.
pub fn downsample(pixels: &Raster, target: usize) -> Result<Raster> {
    let side = pixels.width();
    if pixels.height() != side {
        return Err(Error::InvalidArgument("downsample expects a square image".into()));
    }
    if target == 0 || target > side {
        return Err(Error::InvalidArgument(format!(
            "cannot downsample {side} pixels to {target}"
        )));
    }
    if side.is_multiple_of(target) {
        Ok(box_reduce(pixels, side / target))
    } else {
        warn!("downsample {side}->{target} is not an integer ratio; using bilinear resampling");
        Ok(bilinear_resize(pixels, target))
    }
}

fn box_reduce(pixels: &Raster, factor: usize) -> Raster {
    if factor == 1 {
        return pixels.clone();
    }
    let c = pixels.channels();
    let out_side = pixels.width() / factor;
    let area = (factor * factor) as u32;
    let mut data = Vec::with_capacity(out_side * out_side * c);
    for oy in 0..out_side {
        for ox in 0..out_side {
            for ch in 0..c {
                let mut sum = 0u32;
                for y in oy * factor..(oy + 1) * factor {
                    for x in ox * factor..(ox + 1) * factor {
                        sum += pixels.get(x, y, ch) as u32;
                    }
                }
                data.push(((sum + area / 2) / area) as u8);
            }
        }
    }
    Raster::new(out_side, out_side, c, data).expect("box reduction keeps shape")
}

fn bilinear_resize(pixels: &Raster, target: usize) -> Raster {
    let side = pixels.width();
    let c = pixels.channels();
    let scale = side as f64 / target as f64;
    let coord = |o: usize| {
        let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(side - 1);
        (lo, hi, s - lo as f64)
    };
    let mut data = Vec::with_capacity(target * target * c);
    for oy in 0..target {
        let (y0, y1, fy) = coord(oy);
        for ox in 0..target {
            let (x0, x1, fx) = coord(ox);
            for ch in 0..c {
                let top = pixels.get(x0, y0, ch) as f64 * (1.0 - fx) + pixels.get(x1, y0, ch) as f64 * fx;
                let bottom = pixels.get(x0, y1, ch) as f64 * (1.0 - fx) + pixels.get(x1, y1, ch) as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Raster::new(target, target, c, data).expect("resize keeps shape")
}

/// Fraction of pixels whose gray value exceeds `brightness_cutoff`.
pub fn background_ratio(pixels: &Raster, brightness_cutoff: u8) -> f64 {
    let total = pixels.width() * pixels.height();
    if total == 0 {
        return 0.0;
    }
    let mut bright = 0usize;
    for y in 0..pixels.height() {
        for x in 0..pixels.width() {
            if pixels.gray_at(x, y) > brightness_cutoff {
                bright += 1;
            }
        }
    }
    bright as f64 / total as f64
}

/// Keeps the patches whose background ratio is at most `cfg.bg_threshold`, in order.
pub fn filter_patches(patches: Vec<Patch>, cfg: &TilingConfig) -> Vec<Patch> {
    let keep: Vec<bool> = patches
        .par_iter()
        .map(|p| background_ratio(&p.pixels, cfg.bg_brightness_cutoff) <= cfg.bg_threshold)
        .collect();
    patches
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub scan_id: String,
    pub grid_x: u32,
    pub grid_y: u32,
    pub background_ratio: f64,
    pub retained: bool,
    /// Image file name relative to the manifest, present for retained patches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchManifest {
    pub tiling: TilingConfig,
    pub patches: Vec<ManifestEntry>,
}

impl PatchManifest {
    pub fn load(path: &Path) -> Result<Self> {
        artifact::read_json(path)
    }

    pub fn retained(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.patches.iter().filter(|e| e.retained)
    }
}

/// Scores every patch, builds manifest entries and returns the retained patches.
pub fn assess_patches(patches: Vec<Patch>, cfg: &TilingConfig) -> (Vec<ManifestEntry>, Vec<Patch>) {
    let ratios: Vec<f64> = patches
        .par_iter()
        .map(|p| background_ratio(&p.pixels, cfg.bg_brightness_cutoff))
        .collect();
    let mut entries = Vec::with_capacity(patches.len());
    let mut kept = Vec::new();
    for (p, ratio) in patches.into_iter().zip(ratios) {
        let retained = ratio <= cfg.bg_threshold;
        let id = p.id();
        entries.push(ManifestEntry {
            file: retained.then(|| format!("{id}.png")),
            id,
            scan_id: p.scan_id.clone(),
            grid_x: p.grid_x,
            grid_y: p.grid_y,
            background_ratio: ratio,
            retained,
        });
        if retained {
            kept.push(p);
        }
    }
    (entries, kept)
}

/// Writes each retained patch as `<id>.png` into `dir`.
pub fn write_patch_images(dir: &Path, patches: &[Patch]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    patches
        .par_iter()
        .try_for_each(|p| p.pixels.save_png(&dir.join(format!("{}.png", p.id()))))
}

/// Loads the retained patches listed in a manifest located in `dir`.
pub fn load_retained_patches(manifest: &PatchManifest, dir: &Path) -> Result<Vec<Patch>> {
    manifest
        .retained()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|e| {
            let file = e
                .file
                .as_ref()
                .ok_or_else(|| Error::Format(format!("retained patch {} has no file", e.id)))?;
            let pixels = Raster::load(&dir.join(file))?;
            Patch::new(&e.scan_id, e.grid_x, e.grid_y, pixels)
        })
        .collect()
}
