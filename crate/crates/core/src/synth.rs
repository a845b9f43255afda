//! Procedural texture scans for desk-scale end-to-end runs.
//!
//! Every scan mixes three tissue types drawn from a shared pool, each with
//! scan-specific jitter, over a patchwork of large regions with some bright
//! background. Scans therefore share texture families and are only partly
//! separable, like real archives.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::raster::Raster;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Pattern {
    Grating,
    Cells,
    Fibers,
    Speckle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Tissue {
    pattern: Pattern,
    period: f64,
    angle: f64,
    mean: f64,
    contrast: f64,
    noise: f64,
    salt: u64,
}

/// Per-scan recipe: three tissues plus the region layout.
#[derive(Clone, Debug)]
pub struct ScanRecipe {
    pub scan_id: String,
    tissues: [Tissue; 3],
    region_scale: f64,
    background_level: f64,
    salt: u64,
}

#[derive(Clone, Debug)]
pub struct CorpusParams {
    pub scans: usize,
    pub pool: usize,
    /// Full-resolution pixels per region noise cell.
    pub region_scale: f64,
    pub background_level: f64,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            scans: 6,
            pool: 6,
            region_scale: 600.0,
            background_level: 0.12,
            seed: 2024,
        }
    }
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn lattice(ix: i64, iy: i64, salt: u64) -> f64 {
    let h = splitmix(salt ^ splitmix((ix as u64).wrapping_mul(0x1000_0000_01B3) ^ (iy as u64).rotate_left(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in [0, 1).
fn value_noise(x: f64, y: f64, salt: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (s(x - fx), s(y - fy));
    let a = lattice(ix, iy, salt);
    let b = lattice(ix + 1, iy, salt);
    let c = lattice(ix, iy + 1, salt);
    let d = lattice(ix + 1, iy + 1, salt);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

impl Tissue {
    fn random(rng: &mut impl Rng, salt: u64) -> Self {
        let pattern = *[Pattern::Grating, Pattern::Cells, Pattern::Fibers, Pattern::Speckle]
            .choose(rng)
            .expect("non-empty");
        Tissue {
            pattern,
            period: rng.random_range(10.0..36.0),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            mean: rng.random_range(80.0..170.0),
            contrast: rng.random_range(25.0..60.0),
            noise: rng.random_range(6.0..16.0),
            salt,
        }
    }

    fn jittered(&self, rng: &mut impl Rng, salt: u64) -> Self {
        Tissue {
            period: self.period * rng.random_range(0.85..1.15),
            angle: self.angle + rng.random_range(-0.3..0.3),
            mean: self.mean + rng.random_range(-12.0..12.0),
            contrast: self.contrast * rng.random_range(0.85..1.15),
            noise: self.noise * rng.random_range(0.8..1.25),
            salt,
            ..*self
        }
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let u = x * c + y * s;
        let v = -x * s + y * c;
        let base = match self.pattern {
            Pattern::Grating => {
                let wobble = 0.35 * self.period * (value_noise(x / 90.0, y / 90.0, self.salt) - 0.5);
                (2.0 * std::f64::consts::PI * (u + wobble) / self.period).sin()
            }
            Pattern::Cells => {
                let n = value_noise(x / self.period, y / self.period, self.salt);
                if n > 0.62 {
                    -1.0
                } else {
                    0.4 * (2.0 * n - 1.0)
                }
            }
            Pattern::Fibers => 2.0 * value_noise(u / (4.0 * self.period), v / (0.5 * self.period), self.salt) - 1.0,
            Pattern::Speckle => {
                let cell = (self.period / 6.0).max(2.0);
                2.0 * lattice((x / cell).floor() as i64, (y / cell).floor() as i64, self.salt) - 1.0
            }
        };
        let grain = 2.0 * lattice(x as i64, y as i64, self.salt ^ 0xA5A5) - 1.0;
        self.mean + self.contrast * base + self.noise * grain
    }
}

/// Recipes for every scan of a corpus.
pub fn recipes(params: &CorpusParams) -> Vec<ScanRecipe> {
    let mut rng = seed::stage_rng(params.seed, "synth/pool");
    let pool: Vec<Tissue> = (0..params.pool)
        .map(|i| Tissue::random(&mut rng, seed::derive(params.seed, &format!("synth/tissue/{i}"))))
        .collect();
    (0..params.scans)
        .map(|s| {
            let mut rng = seed::stage_rng(params.seed, &format!("synth/scan/{s}"));
            let mut picks: Vec<usize> = (0..pool.len()).collect();
            picks.shuffle(&mut rng);
            let tissues = [0, 1, 2].map(|j| {
                pool[picks[j % picks.len()]].jittered(&mut rng, seed::derive(params.seed, &format!("synth/scan/{s}/{j}")))
            });
            ScanRecipe {
                scan_id: format!("scan{s:02}"),
                tissues,
                region_scale: params.region_scale,
                background_level: params.background_level,
                salt: seed::derive(params.seed, &format!("synth/regions/{s}")),
            }
        })
        .collect()
}

impl ScanRecipe {
    fn pixel(&self, x: f64, y: f64) -> u8 {
        let r = value_noise(x / self.region_scale, y / self.region_scale, self.salt);
        let v = if r < self.background_level {
            240.0 + 8.0 * lattice(x as i64, y as i64, self.salt)
        } else {
            // remaining range split evenly across the three tissues
            let t = ((r - self.background_level) / (1.0 - self.background_level) * 3.0).floor() as usize;
            self.tissues[t.min(2)].value(x, y)
        };
        v.round().clamp(0.0, 255.0) as u8
    }

    /// Renders a `width x height` window whose top-left corner sits at `(x0, y0)` in
    /// scan coordinates.
    pub fn render(&self, x0: usize, y0: usize, width: usize, height: usize) -> Raster {
        let rows: Vec<Vec<u8>> = (0..height)
            .into_par_iter()
            .map(|y| {
                (0..width)
                    .map(|x| self.pixel((x0 + x) as f64, (y0 + y) as f64))
                    .collect()
            })
            .collect();
        Raster::new(width, height, 1, rows.concat()).expect("rendered raster has consistent size")
    }
}
