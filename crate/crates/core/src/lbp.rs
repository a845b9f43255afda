//! Rotation-invariant uniform local binary patterns.
//!
//! Each pixel is compared with `neighbors` points on a circle of radius `radius`
//! around it. Off-grid points are bilinearly interpolated. A neighbor at least as
//! bright as the center sets its bit. Patterns with at most two circular 0/1
//! transitions map to their count of set bits (`0..=neighbors`); every other
//! pattern maps to `neighbors + 1`.
//!
//! Sample offsets are generated for one quadrant and rotated by exact quarter turns,
//! so a 90-degree rotation of the image permutes the samples of every pixel exactly
//! whenever `neighbors` is a multiple of four.

use serde::{Deserialize, Serialize};

use crate::descriptor::{Descriptor, DescriptorKind, LBP36_DIM};
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::tiling::Patch;

/// Offsets this close to an integer are treated as lying on the pixel grid.
const GRID_SNAP: f64 = 1e-9;

/// Interpolated differences within this distance of zero count as ties (bit set).
pub const TIE_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbpScale {
    pub radius: f64,
    pub neighbors: usize,
}

impl LbpScale {
    pub fn new(radius: f64, neighbors: usize) -> Self {
        LbpScale { radius, neighbors }
    }

    pub fn bins(&self) -> usize {
        self.neighbors + 2
    }

    /// Distance from the border a pixel needs for all of its samples to stay inside.
    pub fn margin(&self) -> usize {
        self.radius.ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.neighbors < 4 {
            return Err(Error::InvalidArgument(format!(
                "LBP needs at least 4 neighbors, got {}",
                self.neighbors
            )));
        }
        if !(self.radius >= 1.0) || !self.radius.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "LBP radius must be >= 1, got {}",
                self.radius
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbpConfig {
    pub scales: Vec<LbpScale>,
    /// L1-normalize each scale's histogram before concatenation.
    pub normalize: bool,
}

impl Default for LbpConfig {
    fn default() -> Self {
        LbpConfig {
            scales: vec![LbpScale::new(3.0, 24), LbpScale::new(1.0, 8)],
            normalize: true,
        }
    }
}

impl LbpConfig {
    pub fn dim(&self) -> usize {
        self.scales.iter().map(LbpScale::bins).sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct Tap {
    dx: isize,
    dy: isize,
    weight: f64,
}

/// Precomputed interpolation taps for every circular sample of one scale.
#[derive(Clone, Debug)]
pub struct SamplingPattern {
    scale: LbpScale,
    taps: Vec<Vec<Tap>>,
}

/// Integer taps along one axis for a signed offset `d`, mirrored so that `d` and `-d`
/// use bit-identical weights.
fn axis_taps(d: f64) -> Vec<(isize, f64)> {
    let e = d.abs();
    let mut lo = e.floor();
    let mut frac = e - lo;
    if frac < GRID_SNAP {
        frac = 0.0;
    } else if 1.0 - frac < GRID_SNAP {
        lo += 1.0;
        frac = 0.0;
    }
    let sign: isize = if d < 0.0 { -1 } else { 1 };
    let lo = lo as isize;
    let mut taps = vec![(sign * lo, 1.0 - frac)];
    if frac > 0.0 {
        taps.push((sign * (lo + 1), frac));
    }
    taps
}

impl SamplingPattern {
    pub fn new(scale: LbpScale) -> Result<Self> {
        scale.validate()?;
        let p = scale.neighbors;
        let offsets: Vec<(f64, f64)> = if p.is_multiple_of(4) {
            let quarter = p / 4;
            (0..p)
                .map(|k| {
                    let (q, j) = (k / quarter, k % quarter);
                    let theta = 2.0 * std::f64::consts::PI * j as f64 / p as f64;
                    let (c, s) = (scale.radius * theta.cos(), scale.radius * theta.sin());
                    // exact quarter turns of (c, s)
                    match q {
                        0 => (c, s),
                        1 => (-s, c),
                        2 => (-c, -s),
                        _ => (s, -c),
                    }
                })
                .collect()
        } else {
            (0..p)
                .map(|k| {
                    let theta = 2.0 * std::f64::consts::PI * k as f64 / p as f64;
                    (scale.radius * theta.cos(), scale.radius * theta.sin())
                })
                .collect()
        };
        let taps = offsets
            .into_iter()
            .map(|(ux, uy)| {
                // image rows grow downwards: counter-clockwise angle means negative dy
                let xs = axis_taps(ux);
                let ys = axis_taps(-uy);
                let mut taps = Vec::with_capacity(4);
                for &(dy, wy) in &ys {
                    for &(dx, wx) in &xs {
                        taps.push(Tap {
                            dx,
                            dy,
                            weight: wx * wy,
                        });
                    }
                }
                taps
            })
            .collect::<Vec<_>>();
        let reach = taps
            .iter()
            .flatten()
            .map(|t| t.dx.unsigned_abs().max(t.dy.unsigned_abs()))
            .max()
            .unwrap_or(0);
        debug_assert!(reach <= scale.margin());
        Ok(SamplingPattern { scale, taps })
    }

    pub fn scale(&self) -> LbpScale {
        self.scale
    }

    /// Code of the pixel at `(x, y)`; the caller guarantees the margin.
    #[inline]
    fn code_unchecked(&self, gray: &[u8], width: usize, x: usize, y: usize) -> usize {
        let p = self.scale.neighbors;
        let center = gray[y * width + x] as f64;
        let mut first = false;
        let mut prev = false;
        let mut ones = 0usize;
        let mut transitions = 0usize;
        for (k, taps) in self.taps.iter().enumerate() {
            let mut diff = 0.0;
            for t in taps {
                let xi = (x as isize + t.dx) as usize;
                let yi = (y as isize + t.dy) as usize;
                diff += t.weight * (gray[yi * width + xi] as f64 - center);
            }
            let bit = diff >= -TIE_EPS;
            if k == 0 {
                first = bit;
            } else if bit != prev {
                transitions += 1;
            }
            if bit {
                ones += 1;
            }
            prev = bit;
        }
        if prev != first {
            transitions += 1;
        }
        if transitions <= 2 {
            ones
        } else {
            p + 1
        }
    }

    /// Raw code counts over all pixels at least `margin()` away from every border.
    pub fn counts(&self, image: &Raster) -> Result<Vec<u64>> {
        let gray = image.to_gray();
        let m = self.scale.margin();
        let min_side = 2 * m + 1;
        if gray.width() < min_side || gray.height() < min_side {
            return Err(Error::InvalidArgument(format!(
                "image {}x{} too small for LBP radius {}: minimum side is {min_side}",
                gray.width(),
                gray.height(),
                self.scale.radius
            )));
        }
        let (w, h) = (gray.width(), gray.height());
        let data = gray.data();
        let mut hist = vec![0u64; self.scale.bins()];
        for y in m..h - m {
            for x in m..w - m {
                hist[self.code_unchecked(data, w, x, y)] += 1;
            }
        }
        Ok(hist)
    }
}

/// LBP code of a single pixel of a grayscale image.
pub fn lbp_code(image: &Raster, x: usize, y: usize, radius: f64, neighbors: usize) -> Result<usize> {
    let pattern = SamplingPattern::new(LbpScale::new(radius, neighbors))?;
    let m = pattern.scale.margin();
    if x < m || y < m || x + m >= image.width() || y + m >= image.height() {
        return Err(Error::InvalidArgument(format!(
            "pixel ({x}, {y}) is closer than {m} pixels to the border of a {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let gray = image.to_gray();
    Ok(pattern.code_unchecked(gray.data(), gray.width(), x, y))
}

/// Histogram of codes over the valid interior, `neighbors + 2` bins long.
pub fn lbp_histogram(image: &Raster, radius: f64, neighbors: usize, normalize: bool) -> Result<Vec<f64>> {
    let counts = SamplingPattern::new(LbpScale::new(radius, neighbors))?.counts(image)?;
    Ok(finish_histogram(&counts, normalize))
}

fn finish_histogram(counts: &[u64], normalize: bool) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if normalize && total > 0 {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    } else {
        counts.iter().map(|&c| c as f64).collect()
    }
}

/// Concatenated multi-scale histogram of an image.
pub fn lbp_features(image: &Raster, cfg: &LbpConfig) -> Result<Vec<f64>> {
    if cfg.scales.is_empty() {
        return Err(Error::InvalidArgument("LBP config has no scales".into()));
    }
    let mut out = Vec::with_capacity(cfg.dim());
    for scale in &cfg.scales {
        let counts = SamplingPattern::new(*scale)?.counts(image)?;
        out.extend(finish_histogram(&counts, cfg.normalize));
    }
    Ok(out)
}

/// 36-bin descriptor of a patch: the (3, 24) histogram followed by the (1, 8) one
/// under the default configuration.
pub fn lbp_descriptor(patch: &Patch, cfg: &LbpConfig) -> Result<Descriptor> {
    if cfg.dim() != LBP36_DIM {
        return Err(Error::InvalidArgument(format!(
            "LBP configuration yields {} bins; the lbp36 descriptor needs {LBP36_DIM}",
            cfg.dim()
        )));
    }
    let values = lbp_features(&patch.pixels, cfg)?
        .into_iter()
        .map(|v| v as f32)
        .collect();
    Descriptor::new(patch.patch_ref(), DescriptorKind::Lbp36, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_all_ones() {
        let img = Raster::filled(9, 9, 1, 120);
        assert_eq!(lbp_code(&img, 4, 4, 1.0, 8).unwrap(), 8);
        assert_eq!(lbp_code(&img, 4, 4, 3.0, 24).unwrap(), 24);
    }

    #[test]
    fn bright_center_is_zero() {
        let img = Raster::gray_from_fn(5, 5, |x, y| if (x, y) == (2, 2) { 200 } else { 10 });
        assert_eq!(lbp_code(&img, 2, 2, 1.0, 8).unwrap(), 0);
    }

    #[test]
    fn non_uniform_pattern_goes_to_last_bin() {
        let stripes = Raster::gray_from_fn(5, 5, |x, _| if x % 2 == 0 { 200 } else { 10 });
        let code = lbp_code(&stripes, 2, 2, 2.0, 4).unwrap();
        // samples at (4,2),(2,0),(0,2),(2,4) are all 200 >= 200
        assert_eq!(code, 4);
        let checker = Raster::gray_from_fn(5, 5, |x, y| match ((x + y) % 2, x % 2) {
            (0, _) => 100,
            (_, 1) => 0,
            _ => 200,
        });
        // cardinal neighbours at radius 1: (3,2)=0,(2,1)=200,(1,2)=0,(2,3)=200 -> 0101
        assert_eq!(lbp_code(&checker, 2, 2, 1.0, 4).unwrap(), 5);
    }

    #[test]
    fn border_pixels_rejected() {
        let img = Raster::filled(10, 10, 1, 0);
        assert!(lbp_code(&img, 2, 5, 3.0, 24).is_err());
        assert!(lbp_code(&img, 3, 6, 3.0, 24).is_ok());
        assert!(lbp_code(&img, 7, 6, 3.0, 24).is_err());
    }

    #[test]
    fn histogram_lengths() {
        let img = Raster::gray_from_fn(20, 20, |x, y| ((x * 31 + y * 17) % 256) as u8);
        assert_eq!(lbp_histogram(&img, 3.0, 24, true).unwrap().len(), 26);
        assert_eq!(lbp_histogram(&img, 1.0, 8, true).unwrap().len(), 10);
    }

    #[test]
    fn constant_mass_in_all_ones_bin() {
        let img = Raster::filled(250, 250, 1, 99);
        let h = lbp_histogram(&img, 1.0, 8, false).unwrap();
        assert_eq!(h[8], (248 * 248) as f64);
        assert_eq!(h.iter().sum::<f64>(), (248 * 248) as f64);
    }

    #[test]
    fn too_small_names_minimum() {
        let img = Raster::filled(6, 6, 1, 0);
        let err = lbp_histogram(&img, 3.0, 24, true).unwrap_err();
        assert!(err.to_string().contains("minimum side is 7"), "{err}");
    }

    #[test]
    fn descriptor_layout_for_constant_patch() {
        let patch = Patch::new("s", 0, 0, Raster::filled(32, 32, 3, 180)).unwrap();
        let d = lbp_descriptor(&patch, &LbpConfig::default()).unwrap();
        assert_eq!(d.dim(), 36);
        for (i, v) in d.values().iter().enumerate() {
            let expected = if i == 24 || i == 34 { 1.0 } else { 0.0 };
            assert_eq!(*v, expected, "bin {i}");
        }
    }

    #[test]
    fn invalid_scales_rejected() {
        assert!(SamplingPattern::new(LbpScale::new(1.0, 3)).is_err());
        assert!(SamplingPattern::new(LbpScale::new(0.5, 8)).is_err());
        let cfg = LbpConfig {
            scales: vec![LbpScale::new(1.0, 8)],
            normalize: true,
        };
        let patch = Patch::new("s", 0, 0, Raster::filled(8, 8, 1, 0)).unwrap();
        assert!(lbp_descriptor(&patch, &cfg).is_err());
    }
}
