//! Independent reference implementations used by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use patchsieve::Raster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_gray(rng: &mut impl Rng, w: usize, h: usize) -> Raster {
    let data = (0..w * h).map(|_| rng.random::<u8>()).collect();
    Raster::new(w, h, 1, data).unwrap()
}

/// Gray image with a few intensity levels so that exact ties between neighbors occur.
pub fn coarse_gray(rng: &mut impl Rng, w: usize, h: usize, levels: u8) -> Raster {
    let step = 255 / (levels.max(2) - 1);
    let data = (0..w * h).map(|_| rng.random_range(0..levels) * step).collect();
    Raster::new(w, h, 1, data).unwrap()
}

/// Bilinear value at a real position, written directly from the four surrounding pixels.
fn bilinear(img: &Raster, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0 as usize, y0 as usize);
    let px = |xx: usize, yy: usize| {
        if xx < img.width() && yy < img.height() {
            img.gray_at(xx, yy) as f64
        } else {
            0.0
        }
    };
    let top = (1.0 - fx) * px(xi, yi) + fx * px(xi + 1, yi);
    let bottom = (1.0 - fx) * px(xi, yi + 1) + fx * px(xi + 1, yi + 1);
    (1.0 - fy) * top + fy * bottom
}

/// Naive uniform rotation-invariant LBP code: sample the circle point by point, compare
/// with the center (ties within 1e-9 count as brighter), count transitions.
pub fn oracle_code(img: &Raster, x: usize, y: usize, radius: f64, p: usize) -> usize {
    let c = img.gray_at(x, y) as f64;
    let bits: Vec<bool> = (0..p)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / p as f64;
            let sx = x as f64 + radius * t.cos();
            let sy = y as f64 - radius * t.sin();
            bilinear(img, sx, sy) - c >= -1e-9
        })
        .collect();
    let transitions = (0..p).filter(|&k| bits[k] != bits[(k + 1) % p]).count();
    if transitions <= 2 {
        bits.iter().filter(|&&b| b).count()
    } else {
        p + 1
    }
}

pub fn oracle_histogram(img: &Raster, radius: f64, p: usize) -> Vec<f64> {
    let m = radius.ceil() as usize;
    let mut h = vec![0.0; p + 2];
    for y in m..img.height() - m {
        for x in m..img.width() - m {
            h[oracle_code(img, x, y, radius, p)] += 1.0;
        }
    }
    h
}

/// Cyclic Jacobi eigensolver for symmetric matrices; returns (values, column vectors).
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i][i]).collect();
    let vectors = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (values, vectors)
}

/// Sample covariance (divisor n - 1) of row vectors.
pub fn covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    (mean, cov)
}

/// Exhaustive k-NN: squared f64 distance, ties broken by id.
pub fn brute_knn(entries: &[(String, Vec<f32>)], q: &[f32], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = entries
        .iter()
        .map(|(id, v)| {
            let d2: f64 = v.iter().zip(q).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            (id.clone(), d2)
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all.into_iter().map(|(id, d2)| (id, d2.sqrt())).collect()
}

/// Area-average of a `factor x factor` block, rounded half up.
pub fn block_mean(img: &Raster, bx: usize, by: usize, factor: usize) -> u8 {
    let mut sum = 0u32;
    for y in by * factor..(by + 1) * factor {
        for x in bx * factor..(bx + 1) * factor {
            sum += img.gray_at(x, y) as u32;
        }
    }
    let n = (factor * factor) as f64;
    (sum as f64 / n + 0.5).floor() as u8
}

/// Standard normal draw by Box-Muller.
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Reference accuracy rows, percent scale: (fraction %, feature, length, eta_p, eta_w, eta_total).
pub const REFERENCE_ROWS: [(u32, &str, usize, f64, f64, f64); 15] = [
    (10, "LBP", 36, 58.41, 58.03, 33.7),
    (10, "VGG", 1078, 59.32, 61.47, 36.46),
    (15, "LBP", 36, 60.38, 60.87, 36.75),
    (15, "VGG", 1078, 57.28, 57.91, 33.17),
    (20, "LBP", 36, 60.98, 61.82, 37.7),
    (20, "VGG", 1078, 57.28, 59.51, 34.08),
    (30, "LBP", 36, 63.54, 63.27, 40.21),
    (30, "VGG", 1078, 57.96, 58.72, 34.03),
    (40, "LBP", 36, 64.83, 64.98, 42.13),
    (40, "VGG", 1078, 61.58, 64.01, 39.42),
    (50, "LBP", 36, 65.28, 64.30, 41.98),
    (50, "VGG", 1078, 61.13, 63.33, 38.71),
    (100, "LBP", 36, 69.13, 69.40, 47.98),
    (100, "VGG", 1078, 63.25, 66.19, 41.86),
    (100, "LBP", 555, 66.11, 62.52, 41.33),
];

pub fn patchsieve(dir: &std::path::Path, args: &[&str], env: &[(&str, &str)]) -> std::process::Output {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_patchsieve"));
    cmd.current_dir(dir).env("SOURCE_DATE_EPOCH", "1700000000").args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

pub fn ok(out: std::process::Output) -> std::process::Output {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Corpus shape for a CLI run: (scans, patch edge, columns, train rows, query rows).
pub type Shape = (usize, usize, usize, usize, usize);

/// Runs synth, tile, extract-lbp, cluster, select, index, search, eval and sweep with
/// relative paths inside `dir`. Returns every artifact path written.
pub fn run_pipeline(dir: &std::path::Path, shape: Shape, env: &[(&str, &str)]) -> Vec<String> {
    let (scans, patch, cols, train_rows, query_rows) = shape;
    let s = |v: usize| v.to_string();
    let (scans_s, patch_s, cols_s, tr_s, qr_s) = (s(scans), s(patch), s(cols), s(train_rows), s(query_rows));
    let run = |args: &[&str]| ok(patchsieve(dir, args, env));
    run(&["synth", "--out", "corpus", "--scans", &scans_s, "--patch-size", &patch_s, "--cols", &cols_s, "--train-rows", &tr_s, "--query-rows", &qr_s]);
    for split in ["train", "queries"] {
        let mut args = vec!["tile".to_string(), "--out".into(), format!("{split}_tiles"), "--patch-size".into(), patch_s.clone(), "--downsample-to".into(), patch_s.clone()];
        for i in 0..scans {
            args.push("--input".into());
            args.push(format!("corpus/{split}/scan{:02}.png", i));
        }
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        run(&args);
        run(&["extract-lbp", "--manifest", &format!("{split}_tiles/manifest.json"), "--out", &format!("{split}.psel")]);
    }
    run(&["cluster", "--features", "train.psel", "--out", "clusters.json", "--map-side", "4", "--epochs", "5"]);
    run(&["select", "--features", "train.psel", "--clusters", "clusters.json", "--out", "selection.json", "--fraction", "0.3"]);
    run(&["index", "--features", "train.psel", "--selection", "selection.json", "--out", "index.bin"]);
    run(&["search", "--index", "index.bin", "--queries", "queries.psel", "--out", "results.csv", "--k", "3"]);
    run(&["eval", "--results", "results.csv", "--out", "report.json"]);
    run(&["sweep", "--features", "train.psel", "--queries", "queries.psel", "--clusters", "clusters.json", "--out", "sweep.csv", "--include-full"]);
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files);
    files.sort();
    files
}

fn collect_files(root: &std::path::Path, dir: &std::path::Path, out: &mut Vec<String>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect_files(root, &p, out);
        } else {
            out.push(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
        }
    }
}
