//! Interpretability analyses: PCA + KDE modality overlap, teacher-dimension vs
//! psych-dimension correlations, and n-gram correlations with
//! Benjamini-Hochberg adjustment.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::pearson;
use crate::psych::{tokenize, N_DIMS};
use crate::stats::pearson_p_value;

pub const GRID_SIZE: usize = 64;
const GRID_PAD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    pub coords: Array2<f64>,
    pub explained_variance_ratio: [f64; 2],
    /// d x 2, columns are the principal axes.
    pub components: Array2<f64>,
    pub mean: Array1<f64>,
}

impl Pca2 {
    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean).dot(&self.components)
    }
}

/// Project mean-centered rows onto the top two principal axes. Each axis is
/// signed so that its largest-magnitude loading is positive.
pub fn pca_2d(x: ArrayView2<f64>) -> Result<Pca2> {
    let (n, d) = x.dim();
    if n < 3 || d < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs n >= 3 and d >= 2, got {n} x {d}")));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 3");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let total: f64 = cov.diag().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("PCA input has rank 0".into()));
    }
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Array2::zeros((d, 2));
    let mut ratio = [0.0; 2];
    for (k, &idx) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
            .expect("d >= 2");
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[j, k]] = sign * v[j];
        }
        ratio[k] = eig.eigenvalues[idx].max(0.0) / total;
    }
    Ok(Pca2 {
        coords: centered.dot(&components),
        explained_variance_ratio: ratio,
        components,
        mean,
    })
}

/// Gaussian KDE in 2D with Scott's-rule bandwidth: kernel covariance
/// `n^(-1/3) * cov(points)`.
#[derive(Debug, Clone)]
pub struct Kde2 {
    points: Array2<f64>,
    inv_cov: [[f64; 2]; 2],
    norm: f64,
}

impl Kde2 {
    pub fn fit(points: ArrayView2<f64>) -> Result<Self> {
        let n = points.nrows();
        if n < 2 || points.ncols() != 2 {
            return Err(Error::InvalidArgument(format!(
                "KDE needs at least 2 two-dimensional points, got {:?}",
                points.dim()
            )));
        }
        let mean = points.mean_axis(Axis(0)).expect("n >= 2");
        let c = &points - &mean;
        let cov = c.t().dot(&c) / (n - 1) as f64;
        let factor = (n as f64).powf(-1.0 / 3.0);
        let (a, b, d) = (cov[[0, 0]] * factor, cov[[0, 1]] * factor, cov[[1, 1]] * factor);
        let det = a * d - b * b;
        if !(det > 1e-12 * (a * d).max(f64::MIN_POSITIVE)) || !(a > 0.0 && d > 0.0) {
            return Err(Error::Degenerate("KDE points have a singular covariance".into()));
        }
        Ok(Self {
            points: points.to_owned(),
            inv_cov: [[d / det, -b / det], [-b / det, a / det]],
            norm: 1.0 / (2.0 * PI * det.sqrt() * n as f64),
        })
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        let [[ia, ib], [_, id]] = self.inv_cov;
        self.points
            .rows()
            .into_iter()
            .map(|p| {
                let (dx, dy) = (x - p[0], y - p[1]);
                (-0.5 * (ia * dx * dx + 2.0 * ib * dx * dy + id * dy * dy)).exp()
            })
            .sum::<f64>()
            * self.norm
    }
}

/// Both densities evaluated at the cell centers of a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub size: usize,
    /// size x size, indexed [row (y), col (x)].
    pub density_a: Array2<f64>,
    pub density_b: Array2<f64>,
    pub cell_area: f64,
    pub overlap: f64,
}

impl KdeGrid {
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let dx = (self.x_max - self.x_min) / self.size as f64;
        let dy = (self.y_max - self.y_min) / self.size as f64;
        (self.x_min + (col as f64 + 0.5) * dx, self.y_min + (row as f64 + 0.5) * dy)
    }

    /// `x y density_a density_b` per line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for r in 0..self.size {
            for c in 0..self.size {
                let (x, y) = self.cell_center(r, c);
                let _ = writeln!(out, "{x} {y} {} {}", self.density_a[[r, c]], self.density_b[[r, c]]);
            }
        }
        out
    }

    /// Density image: set A in the blue channel, set B in the red channel.
    pub fn render_png(&self, path: &Path, scale: u32) -> Result<()> {
        let max_a = self.density_a.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let max_b = self.density_b.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let side = self.size as u32 * scale;
        let img = image::RgbImage::from_fn(side, side, |px, py| {
            let c = (px / scale) as usize;
            // image rows grow downward, grid rows grow with y
            let r = self.size - 1 - (py / scale) as usize;
            let a = self.density_a[[r, c]] / max_a;
            let b = self.density_b[[r, c]] / max_b;
            let fade = |v: f64| (255.0 * (1.0 - v)) as u8;
            image::Rgb([fade(a), fade(a.max(b)), fade(b)])
        });
        img.save(path).map_err(|e| Error::io(path, std::io::Error::other(e)))
    }
}

/// Densities of both sets on a 64 x 64 grid over the joint bounding box,
/// padded by 10% of its extent on every side.
pub fn kde_grid(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<KdeGrid> {
    let (ka, kb) = (Kde2::fit(a)?, Kde2::fit(b)?);
    let both = concatenate![Axis(0), a, b];
    let bounds = |col: usize| {
        let c = both.column(col);
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pad = GRID_PAD * (hi - lo);
        (lo - pad, hi + pad)
    };
    let ((x_min, x_max), (y_min, y_max)) = (bounds(0), bounds(1));
    let size = GRID_SIZE;
    let mut grid = KdeGrid {
        x_min,
        x_max,
        y_min,
        y_max,
        size,
        density_a: Array2::zeros((size, size)),
        density_b: Array2::zeros((size, size)),
        cell_area: (x_max - x_min) * (y_max - y_min) / (size * size) as f64,
        overlap: 0.0,
    };
    let mut overlap = 0.0;
    for r in 0..size {
        for c in 0..size {
            let (x, y) = grid.cell_center(r, c);
            let (pa, pb) = (ka.density(x, y), kb.density(x, y));
            grid.density_a[[r, c]] = pa;
            grid.density_b[[r, c]] = pb;
            overlap += pa.min(pb);
        }
    }
    grid.overlap = (overlap * grid.cell_area).clamp(0.0, 1.0);
    Ok(grid)
}

/// Overlapping coefficient of the two point sets' KDEs.
pub fn kde_overlap(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    Ok(kde_grid(a, b)?.overlap)
}

#[derive(Debug, Clone)]
pub struct OverlapReport {
    pub pca: Pca2,
    pub coords_a: Array2<f64>,
    pub coords_b: Array2<f64>,
    pub grid: KdeGrid,
}

impl OverlapReport {
    pub fn overlap(&self) -> f64 {
        self.grid.overlap
    }
}

fn l2_normalize_rows(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = m.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > 0.0) {
            return Err(Error::ZeroNorm { what: "embedding", row: i });
        }
        row /= n;
    }
    Ok(out)
}

/// Joint 2D PCA of two embedding sets followed by [`kde_grid`] on the
/// projected coordinates. With `normalize`, rows are scaled to unit length
/// first so only directions are compared.
pub fn modality_overlap(a: ArrayView2<f64>, b: ArrayView2<f64>, normalize: bool) -> Result<OverlapReport> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("embedding dims {} and {}", a.ncols(), b.ncols())));
    }
    let (a, b) = if normalize {
        (l2_normalize_rows(a)?, l2_normalize_rows(b)?)
    } else {
        (a.to_owned(), b.to_owned())
    };
    let both = concatenate![Axis(0), a, b];
    let pca = pca_2d(both.view())?;
    let coords_a = pca.coords.slice(s![..a.nrows(), ..]).to_owned();
    let coords_b = pca.coords.slice(s![a.nrows().., ..]).to_owned();
    let grid = kde_grid(coords_a.view(), coords_b.view())?;
    Ok(OverlapReport {
        pca,
        coords_a,
        coords_b,
        grid,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// teacher_dim x 10 Pearson r.
    pub r: Array2<f64>,
    pub degenerate: Array2<bool>,
}

impl Heatmap {
    /// CSV with a `dim` column followed by the ten psych codes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dim");
        for d in crate::psych::PsychDim::ALL {
            let _ = write!(out, ",{d}");
        }
        out.push('\n');
        for (i, row) in self.r.rows().into_iter().enumerate() {
            let _ = write!(out, "{i}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn dim_psych_heatmap(teacher: ArrayView2<f64>, psych: ArrayView2<f64>) -> Result<Heatmap> {
    let n = teacher.nrows();
    if psych.nrows() != n || psych.ncols() != N_DIMS {
        return Err(Error::Shape(format!(
            "teacher {:?} vs psych {:?}",
            teacher.dim(),
            psych.dim()
        )));
    }
    if n < 3 {
        return Err(Error::InvalidArgument("heatmap needs at least 3 rows".into()));
    }
    let d = teacher.ncols();
    let mut r = Array2::zeros((d, N_DIMS));
    let mut degenerate = Array2::from_elem((d, N_DIMS), false);
    let cols: Vec<Vec<f64>> = psych.columns().into_iter().map(|c| c.to_vec()).collect();
    for (i, tcol) in teacher.columns().into_iter().enumerate() {
        let t = tcol.to_vec();
        for (j, pcol) in cols.iter().enumerate() {
            let c = pearson(&t, pcol)?;
            r[[i, j]] = c.r;
            degenerate[[i, j]] = c.degenerate;
        }
    }
    Ok(Heatmap { r, degenerate })
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &idx) in order.iter().enumerate().rev() {
        let rank = pos + 1;
        running = running.min(p[idx] * m as f64 / rank as f64);
        // m / rank >= 1, but the product can round below p
        adjusted[idx] = running.min(1.0).max(p[idx]);
    }
    adjusted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramRow {
    pub ngram: String,
    pub r: f64,
    pub p_raw: f64,
    pub p_bh: f64,
    pub n_persons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramTable {
    /// r > 0, sorted by r descending.
    pub positive: Vec<NgramRow>,
    /// r < 0, sorted by r ascending.
    pub negative: Vec<NgramRow>,
    pub tested: usize,
}

impl NgramTable {
    /// Tab-separated `ngram r p p_bh` lines, at most `top` rows per list.
    pub fn to_tsv(rows: &[NgramRow], top: usize) -> String {
        let mut out = String::from("ngram\tr\tp\tp_bh\tpersons\n");
        for row in rows.iter().take(top) {
            let _ = writeln!(
                out,
                "{}\t{:.3}\t{:.3e}\t{:.3e}\t{}",
                row.ngram, row.r, row.p_raw, row.p_bh, row.n_persons
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramConfig {
    pub n_max: usize,
    pub min_person_freq: usize,
}

impl Default for NgramConfig {
    fn default() -> Self {
        Self {
            n_max: 3,
            min_person_freq: 3,
        }
    }
}

/// Correlate per-person relative n-gram frequencies with per-person scores.
///
/// `texts[i]` holds every segment text of person `i`; n-grams do not span
/// segment boundaries. A person's relative frequency for an n-gram is its
/// count over that person's total number of n-grams of the same order.
pub fn ngram_correlation(texts: &[Vec<String>], scores: &[f64], config: &NgramConfig) -> Result<NgramTable> {
    let n_persons = texts.len();
    if scores.len() != n_persons {
        return Err(Error::Shape(format!("{n_persons} persons, {} scores", scores.len())));
    }
    if n_persons < 3 {
        return Err(Error::InvalidArgument("n-gram correlation needs at least 3 persons".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("n-gram scores".into()));
    }
    if !(1..=3).contains(&config.n_max) {
        return Err(Error::InvalidArgument(format!("n_max must be 1..=3, got {}", config.n_max)));
    }

    // ngram -> per-person counts; totals[person][n-1]
    let mut counts: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    let mut totals = vec![[0u32; 3]; n_persons];
    let mut order_of: BTreeMap<String, usize> = BTreeMap::new();
    for (p, segs) in texts.iter().enumerate() {
        for seg in segs {
            let toks = tokenize(seg);
            for n in 1..=config.n_max {
                for w in toks.windows(n) {
                    let gram = w.join(" ");
                    totals[p][n - 1] += 1;
                    order_of.entry(gram.clone()).or_insert(n);
                    counts.entry(gram).or_insert_with(|| vec![0; n_persons])[p] += 1;
                }
            }
        }
    }

    let mut candidates = Vec::new();
    for (gram, c) in &counts {
        let present = c.iter().filter(|&&v| v > 0).count();
        if present < config.min_person_freq {
            continue;
        }
        let n = order_of[gram];
        let freq: Vec<f64> = c
            .iter()
            .zip(&totals)
            .map(|(&v, t)| if t[n - 1] > 0 { v as f64 / t[n - 1] as f64 } else { 0.0 })
            .collect();
        let corr = pearson(&freq, scores)?;
        let p_raw = if corr.degenerate { 1.0 } else { pearson_p_value(corr.r, n_persons) };
        candidates.push((gram.clone(), corr.r, p_raw, present));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no n-gram occurs for at least {} persons",
            config.min_person_freq
        )));
    }
    let raw: Vec<f64> = candidates.iter().map(|c| c.2).collect();
    let adjusted = bh_adjust(&raw);
    let rows: Vec<NgramRow> = candidates
        .into_iter()
        .zip(adjusted)
        .map(|((ngram, r, p_raw, n_persons), p_bh)| NgramRow {
            ngram,
            r,
            p_raw,
            p_bh,
            n_persons,
        })
        .collect();
    let tested = rows.len();
    let (mut positive, mut negative): (Vec<_>, Vec<_>) =
        rows.into_iter().filter(|r| r.r != 0.0).partition(|r| r.r > 0.0);
    positive.sort_by(|a, b| b.r.total_cmp(&a.r).then_with(|| a.ngram.cmp(&b.ngram)));
    negative.sort_by(|a, b| a.r.total_cmp(&b.r).then_with(|| a.ngram.cmp(&b.ngram)));
    Ok(NgramTable {
        positive,
        negative,
        tested,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, mx: f64, my: f64, sd: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, 2), |(_, j)| {
            let z: f64 = rng.sample(StandardNormal);
            sd * z + if j == 0 { mx } else { my }
        })
    }

    #[test]
    fn pca_rank_one() {
        let x = Array2::from_shape_fn((6, 3), |(i, j)| i as f64 * [1.0, -2.0, 0.5][j]);
        let p = pca_2d(x.view()).unwrap();
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
        assert!(p.explained_variance_ratio[1].abs() < 1e-9);
        assert!(pca_2d(Array2::from_elem((4, 3), 1.0).view()).is_err());
        assert!(pca_2d(Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn pca_axis_aligned_identity() {
        let x = array![[3.0, 0.5], [-2.0, -0.4], [1.0, 0.1], [-2.0, -0.2]];
        let p = pca_2d(x.view()).unwrap();
        let centered = &x - &x.mean_axis(Axis(0)).unwrap();
        // first axis picks up the wide x column, up to the fixed sign
        assert!((p.components[[0, 0]].abs() - 1.0).abs() < 0.05);
        assert!(p.components[[0, 0]] > 0.0);
        let recon = p.coords.dot(&p.components.t());
        assert!((recon - centered).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn kde_identical_and_disjoint() {
        let a = gaussian(400, 0.0, 0.0, 1.0, 1);
        assert!(kde_overlap(a.view(), a.view()).unwrap() > 0.99);
        let b = gaussian(200, 0.0, 0.0, 0.1, 2);
        let c = gaussian(200, 100.0, 0.0, 0.1, 3);
        assert!(kde_overlap(b.view(), c.view()).unwrap() < 0.01);
        let flat = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        assert!(matches!(kde_overlap(flat.view(), a.view()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn kde_symmetric_and_translation_invariant() {
        let a = gaussian(150, 0.0, 0.0, 1.0, 4);
        let b = gaussian(120, 1.0, 0.5, 0.7, 5);
        let ab = kde_overlap(a.view(), b.view()).unwrap();
        let ba = kde_overlap(b.view(), a.view()).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        let shift = array![7.5, -3.25];
        let moved = kde_overlap((&a + &shift).view(), (&b + &shift).view()).unwrap();
        assert!((ab - moved).abs() < 1e-9);
    }

    #[test]
    fn heatmap_anchors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let psych = Array2::from_shape_fn((50, N_DIMS), |_| rng.random_range(-1.0..1.0));
        let mut teacher = Array2::from_shape_fn((50, 3), |_| rng.random_range(-1.0..1.0));
        teacher.column_mut(0).assign(&psych.column(4));
        teacher.column_mut(1).assign(&psych.column(2).mapv(|v| -v));
        let h = dim_psych_heatmap(teacher.view(), psych.view()).unwrap();
        assert!((h.r[[0, 4]] - 1.0).abs() < 1e-12);
        assert!((h.r[[1, 2]] + 1.0).abs() < 1e-12);
        assert!(h.r.iter().all(|v| v.abs() <= 1.0));
        teacher.column_mut(2).fill(0.3);
        let h = dim_psych_heatmap(teacher.view(), psych.view()).unwrap();
        assert!(h.degenerate[[2, 0]] && h.r[[2, 0]] == 0.0);
    }

    #[test]
    fn heatmap_independent_columns_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let psych = Array2::from_shape_fn((1000, N_DIMS), |_| rng.sample::<f64, _>(StandardNormal));
        let teacher = Array2::from_shape_fn((1000, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let h = dim_psych_heatmap(teacher.view(), psych.view()).unwrap();
        assert!(h.r.iter().all(|v| v.abs() < 0.1));
    }

    /// O(m^2) step-up: adj_i = min(1, min over j with p_j >= p_i of m p_j / rank_j).
    fn bh_oracle(p: &[f64]) -> Vec<f64> {
        let m = p.len();
        p.iter()
            .map(|&pi| {
                p.iter()
                    .filter(|&&pj| pj >= pi)
                    .map(|&pj| {
                        let rank = p.iter().filter(|&&pk| pk <= pj).count();
                        pj * m as f64 / rank as f64
                    })
                    .fold(1.0f64, f64::min)
                    .max(pi)
            })
            .collect()
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh_adjust(&[0.01, 0.02, 0.03]), [0.03, 0.03, 0.03]);
        assert_eq!(bh_adjust(&[0.03, 0.01, 0.02]), bh_oracle(&[0.03, 0.01, 0.02]));
        assert_eq!(bh_adjust(&[0.9, 0.8]), [0.9, 0.9]);
    }

    #[test]
    fn ngram_perfect_correlation_and_filter() {
        // "calm" appears k times among 4 tokens for person k
        let texts: Vec<Vec<String>> = (1..=4)
            .map(|k| {
                let mut words = vec!["calm"; k];
                words.extend(vec!["x"; 4 - k]);
                vec![words.join(" ")]
            })
            .chain(std::iter::once(vec!["x x x x rare".to_string()]))
            .collect();
        let scores = [0.25, 0.5, 0.75, 1.0, 0.0];
        let cfg = NgramConfig { n_max: 1, min_person_freq: 2 };
        let table = ngram_correlation(&texts, &scores, &cfg).unwrap();
        let top = &table.positive[0];
        assert_eq!(top.ngram, "calm");
        assert!((top.r - 1.0).abs() < 1e-12);
        let min_p = table.positive.iter().chain(&table.negative).map(|r| r.p_raw).fold(1.0, f64::min);
        assert_eq!(top.p_raw, min_p);
        assert!(table.positive.iter().chain(&table.negative).all(|r| r.ngram != "rare"));
        assert!(table.positive.iter().chain(&table.negative).all(|r| r.p_bh >= r.p_raw));

        let cfg = NgramConfig { n_max: 1, min_person_freq: 6 };
        assert!(ngram_correlation(&texts, &scores, &cfg).is_err());
    }

    #[test]
    fn ngram_orders_up_to_three() {
        let texts: Vec<Vec<String>> = (0..5)
            .map(|i| vec![format!("my mental health is {}", if i % 2 == 0 { "good" } else { "bad" })])
            .collect();
        let scores = [1.0, 2.0, 1.5, 3.0, 0.5];
        let t = ngram_correlation(&texts, &scores, &NgramConfig { n_max: 3, min_person_freq: 2 }).unwrap();
        let all: Vec<&str> = t.positive.iter().chain(&t.negative).map(|r| r.ngram.as_str()).collect();
        assert!(all.contains(&"is bad"));
        assert!(all.contains(&"health is good"));
        assert!(t.positive.windows(2).all(|w| w[0].r >= w[1].r));
        assert!(t.negative.windows(2).all(|w| w[0].r <= w[1].r));
    }

    proptest! {
        #[test]
        fn bh_matches_brute_force(seed in any::<u64>(), m in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            if m > 3 { p[1] = p[0]; }
            let adj = bh_adjust(&p);
            prop_assert_eq!(&adj, &bh_oracle(&p));
            for i in 0..m {
                prop_assert!(adj[i] >= p[i]);
                for j in 0..m {
                    if p[i] <= p[j] { prop_assert!(adj[i] <= adj[j]); }
                }
            }
        }

        #[test]
        fn pca_row_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((12, 4), |(_, j)| rng.random_range(-1.0..1.0) * (4 - j) as f64);
            let mut perm: Vec<usize> = (0..12).collect();
            perm.shuffle(&mut rng);
            let a = pca_2d(x.view()).unwrap();
            let b = pca_2d(x.select(Axis(0), &perm).view()).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                for c in 0..2 {
                    prop_assert!((b.coords[[k, c]] - a.coords[[i, c]]).abs() < 1e-8);
                }
            }
        }
    }
}
