//! Image and landmark quality metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facs::{LandmarkPartition, LandmarkSequence};
use crate::image_buf::Image;

/// `10 log10(peak^2 / mse)`; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "psnr inputs differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidInput("psnr peak must be positive".into()));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable filter over the valid region of one `h x w` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM with an 11-tap Gaussian window (sigma 1.5) over the valid
/// region, averaged over channels.
pub fn ssim(a: &Image, b: &Image, dynamic_range: f64) -> Result<f64> {
    ssim_with_window(a, b, SSIM_WINDOW, dynamic_range)
}

pub fn ssim_with_window(a: &Image, b: &Image, window: usize, dynamic_range: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape("ssim inputs differ in shape".into()));
    }
    if window == 0 || a.width() < window || a.height() < window {
        return Err(Error::Shape(format!(
            "image {}x{} is smaller than the {window}x{window} window",
            a.width(),
            a.height()
        )));
    }
    if !(dynamic_range > 0.0) {
        return Err(Error::InvalidInput("dynamic range must be positive".into()));
    }
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let k = gaussian_window(window, SSIM_SIGMA);
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let mut total = 0.0;
    for c in 0..ch {
        let pa: Vec<f64> = (0..w * h).map(|i| a.data()[i * ch + c] as f64).collect();
        let pb: Vec<f64> = (0..w * h).map(|i| b.data()[i * ch + c] as f64).collect();
        let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u * v).collect() };
        let mu_a = filter_valid(&pa, w, h, &k);
        let mu_b = filter_valid(&pb, w, h, &k);
        let saa = filter_valid(&prod(&pa, &pa), w, h, &k);
        let sbb = filter_valid(&prod(&pb, &pb), w, h, &k);
        let sab = filter_valid(&prod(&pa, &pb), w, h, &k);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok((total / ch as f64).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LmdRegion {
    Mouth,
    Full,
}

/// Mean Euclidean distance over the selected points of every frame.
pub fn lmd(pred: &LandmarkSequence, gt: &LandmarkSequence, part: &LandmarkPartition, which: LmdRegion) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Alignment(format!("lmd: {} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("lmd of empty sequences".into()));
    }
    let all: Vec<usize>;
    let idx: &[usize] = match which {
        LmdRegion::Mouth => part.mouth(),
        LmdRegion::Full => {
            all = (0..crate::facs::NUM_LANDMARKS).collect();
            &all
        }
    };
    let mut total = 0.0;
    for (p, g) in pred.frames().iter().zip(gt.frames()) {
        for &i in idx {
            let (a, b) = (p.points()[i], g.points()[i]);
            total += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        }
    }
    Ok(total / (pred.len() * idx.len()) as f64)
}

/// `N x E` feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim || dim == 0 {
            return Err(Error::Shape(format!("embedding buffer of {} values is not {rows}x{dim}", data.len())));
        }
        if rows < 2 {
            return Err(Error::InvalidInput("an embedding set needs at least 2 rows".into()));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("embedding rows differ in length".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean and unbiased covariance.
    fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let m = DMatrix::from_row_slice(self.rows, self.dim, &self.data);
        let mean = m.row_mean().transpose();
        let mut centered = m.clone();
        for mut r in centered.row_iter_mut() {
            r -= mean.transpose();
        }
        let cov = centered.transpose() * &centered / (self.rows as f64 - 1.0);
        (mean, cov)
    }
}

pub const FRECHET_EPS: f64 = 1e-6;

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Gaussian Fréchet distance with `FRECHET_EPS * I` added to each covariance.
/// The cross term uses the symmetric form `(sx^1/2 sy sx^1/2)^1/2`.
pub fn frechet_distance(x: &EmbeddingSet, y: &EmbeddingSet) -> Result<f64> {
    if x.dim != y.dim {
        return Err(Error::Shape(format!("embedding dims differ: {} vs {}", x.dim, y.dim)));
    }
    let (mx, cx) = x.moments();
    let (my, cy) = y.moments();
    let eye = DMatrix::<f64>::identity(x.dim, x.dim) * FRECHET_EPS;
    let cx = cx + &eye;
    let cy = cy + &eye;
    if mx.iter().chain(my.iter()).chain(cx.iter()).chain(cy.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite embedding moments".into()));
    }
    let sx = sqrt_psd(&cx);
    let cross = sqrt_psd(&(&sx * &cy * &sx));
    let d = (&mx - &my).norm_squared();
    Ok(d + cx.trace() + cy.trace() - 2.0 * cross.trace())
}

/// Default extractor: 4x4 block means of the first channel, standardized per
/// image.
pub fn pixel_embedding(img: &Image) -> Vec<f64> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let (bw, bh) = (w.div_ceil(4), h.div_ceil(4));
    let mut out = Vec::with_capacity(16);
    for by in 0..4 {
        for bx in 0..4 {
            let (x0, y0) = ((bx * bw).min(w - 1), (by * bh).min(h - 1));
            let (x1, y1) = (((bx + 1) * bw).min(w).max(x0 + 1), ((by + 1) * bh).min(h).max(y0 + 1));
            let mut s = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    s += img.data()[(y * w + x) * ch] as f64;
                }
            }
            out.push(s / ((x1 - x0) * (y1 - y0)) as f64);
        }
    }
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / out.len() as f64).sqrt().max(1e-6);
    out.into_iter().map(|v| (v - mean) / sd).collect()
}

pub fn embed_images(images: &[Image]) -> Result<EmbeddingSet> {
    let rows: Vec<Vec<f64>> = images.iter().map(pixel_embedding).collect();
    EmbeddingSet::from_rows(&rows)
}

/// Per-clip scores. Image metrics are on `[0, 1]` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip: String,
    pub frames: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub m_lmd: f64,
    pub f_lmd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub clips: Vec<ClipMetrics>,
    pub psnr: f64,
    pub ssim: f64,
    pub m_lmd: f64,
    pub f_lmd: f64,
    /// Over all generated vs all ground-truth frames.
    pub frechet: f64,
}

impl MetricReport {
    /// Aggregates are plain means over clips; infinite PSNRs are skipped.
    pub fn from_clips(clips: Vec<ClipMetrics>, frechet: f64) -> Self {
        let mean = |f: &dyn Fn(&ClipMetrics) -> f64| {
            let v: Vec<f64> = clips.iter().map(f).filter(|x| x.is_finite()).collect();
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Self {
            psnr: mean(&|c| c.psnr),
            ssim: mean(&|c| c.ssim),
            m_lmd: mean(&|c| c.m_lmd),
            f_lmd: mean(&|c| c.f_lmd),
            frechet,
            clips,
        }
    }

    /// `key value` lines.
    pub fn to_text(&self) -> String {
        format!(
            "clips {}\npsnr {:.4}\nssim {:.5}\nm_lmd {:.6}\nf_lmd {:.6}\nfrechet {:.6}\n",
            self.clips.len(),
            self.psnr,
            self.ssim,
            self.m_lmd,
            self.f_lmd,
            self.frechet
        )
    }

    /// Columns: `clip,frames,psnr,ssim,m_lmd,f_lmd`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.clips {
            w.serialize(c).map_err(|e| Error::Parse(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
