//! Similarity alignment of landmark sets and keypoint rasters for the pose
//! guiders.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::facs::{LandmarkFrame, LandmarkPartition, LandmarkSequence, Region};

/// `p -> scale * rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    scale: f64,
    rotation: [[f64; 2]; 2],
    translation: [f64; 2],
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: [[1.0, 0.0], [0.0, 1.0]], translation: [0.0, 0.0] }
    }

    pub fn new(scale: f64, rotation: [[f64; 2]; 2], translation: [f64; 2]) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Invariant(format!("similarity scale must be positive, got {scale}")));
        }
        let r = Matrix2::new(rotation[0][0], rotation[0][1], rotation[1][0], rotation[1][1]);
        let err = (r.transpose() * r - Matrix2::identity()).abs().max();
        if !(err <= 1e-9) || r.determinant() <= 0.0 {
            return Err(Error::Invariant("rotation must be orthogonal with determinant +1".into()));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("translation must be finite".into()));
        }
        Ok(Self { scale, rotation, translation })
    }

    /// Rotation by `angle` radians counter-clockwise.
    pub fn from_angle(scale: f64, angle: f64, translation: [f64; 2]) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        Self::new(scale, [[c, -s], [s, c]], translation)
    }

    pub fn translation_only(dx: f64, dy: f64) -> Self {
        Self { translation: [dx, dy], ..Self::identity() }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> [[f64; 2]; 2] {
        self.rotation
    }

    pub fn translation(&self) -> [f64; 2] {
        self.translation
    }

    pub fn angle(&self) -> f64 {
        self.rotation[1][0].atan2(self.rotation[0][0])
    }

    pub fn apply_point(&self, p: [f64; 2]) -> [f64; 2] {
        let r = &self.rotation;
        [
            self.scale * (r[0][0] * p[0] + r[0][1] * p[1]) + self.translation[0],
            self.scale * (r[1][0] * p[0] + r[1][1] * p[1]) + self.translation[1],
        ]
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &SimilarityTransform) -> Self {
        let a = mat(&self.rotation);
        let b = mat(&first.rotation);
        let r = a * b;
        let t = self.apply_point(first.translation);
        Self { scale: self.scale * first.scale, rotation: unmat(&r), translation: t }
    }

    pub fn inverse(&self) -> Self {
        let rt = mat(&self.rotation).transpose();
        let s = 1.0 / self.scale;
        let t = -(rt * Vector2::new(self.translation[0], self.translation[1])) * s;
        Self { scale: s, rotation: unmat(&rt), translation: [t[0], t[1]] }
    }

    pub fn apply_frame(&self, frame: &LandmarkFrame) -> LandmarkFrame {
        let pts = frame.points().iter().map(|p| self.apply_point(*p)).collect();
        LandmarkFrame::new(pts).expect("same point count")
    }

    pub fn apply_sequence(&self, seq: &LandmarkSequence) -> LandmarkSequence {
        let frames = seq.frames().iter().map(|f| self.apply_frame(f)).collect();
        LandmarkSequence::new(frames, seq.fps()).expect("same frame count")
    }
}

fn mat(r: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1])
}

fn unmat(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

pub fn apply_transform(seq: &LandmarkSequence, xf: &SimilarityTransform) -> LandmarkSequence {
    xf.apply_sequence(seq)
}

/// Least-squares similarity taking `src` onto `reference` (Umeyama).
pub fn procrustes_points(src: &[[f64; 2]], reference: &[[f64; 2]]) -> Result<SimilarityTransform> {
    if src.len() != reference.len() {
        return Err(Error::Shape(format!("{} source points vs {} reference points", src.len(), reference.len())));
    }
    let n = src.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("alignment needs at least 2 points, got {n}")));
    }
    let nf = n as f64;
    let mean = |pts: &[[f64; 2]]| {
        pts.iter().fold(Vector2::zeros(), |acc, p| acc + Vector2::new(p[0], p[1])) / nf
    };
    let ms = mean(src);
    let mr = mean(reference);
    let mut var_s = 0.0;
    let mut cov = Matrix2::<f64>::zeros();
    for (s, r) in src.iter().zip(reference) {
        let ds = Vector2::new(s[0], s[1]) - ms;
        let dr = Vector2::new(r[0], r[1]) - mr;
        var_s += ds.norm_squared();
        cov += dr * ds.transpose();
    }
    var_s /= nf;
    cov /= nf;
    let spread = src.iter().map(|p| p[0].abs().max(p[1].abs())).fold(1.0, f64::max);
    if var_s <= (1e-12 * spread).powi(2) {
        return Err(Error::Degenerate("all source points coincide".into()));
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix2::identity();
    if u.determinant() * vt.determinant() < 0.0 {
        d[(1, 1)] = -1.0;
    }
    let r = u * d * vt;
    let scale = (Matrix2::from_diagonal(&svd.singular_values) * d).trace() / var_s;
    if !(scale > 0.0) {
        return Err(Error::Degenerate("all reference points coincide".into()));
    }
    let t = mr - r * ms * scale;
    Ok(SimilarityTransform { scale, rotation: unmat(&r), translation: [t[0], t[1]] })
}

pub fn procrustes_align(src: &LandmarkFrame, reference: &LandmarkFrame) -> Result<SimilarityTransform> {
    procrustes_points(src.points(), reference.points())
}

/// Sum of squared distances after applying `xf` to `src`.
pub fn alignment_residual(src: &[[f64; 2]], reference: &[[f64; 2]], xf: &SimilarityTransform) -> f64 {
    src.iter()
        .zip(reference)
        .map(|(s, r)| {
            let p = xf.apply_point(*s);
            (p[0] - r[0]).powi(2) + (p[1] - r[1]).powi(2)
        })
        .sum()
}

/// One transform from frame 0 onto the reference, applied to every frame.
pub fn align_sequence(seq: &LandmarkSequence, reference: &LandmarkFrame) -> Result<(LandmarkSequence, SimilarityTransform)> {
    let first = seq.frames().first().ok_or_else(|| Error::InvalidInput("empty landmark sequence".into()))?;
    let xf = procrustes_align(first, reference)?;
    Ok((xf.apply_sequence(seq), xf))
}

/// Single-channel `resolution x resolution` map, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointRaster {
    resolution: usize,
    data: Vec<f32>,
}

impl KeypointRaster {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.resolution + x]
    }

    /// `(x, y)` of the largest value, first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        (best % self.resolution, best / self.resolution)
    }
}

/// Blob standard deviation in pixels: 1.5 at 64 pixels, proportional otherwise.
pub fn blob_sigma(resolution: usize) -> f64 {
    1.5 * resolution as f64 / 64.0
}

/// Gaussian blob per point, truncated at three standard deviations and summed,
/// then clamped to `[0, 1]`. Pixel centres sit at `(i + 0.5) / resolution`;
/// the parts of blobs that fall outside the grid are dropped.
pub fn rasterize_points(points: &[[f64; 2]], resolution: usize) -> Result<KeypointRaster> {
    if resolution == 0 {
        return Err(Error::InvalidInput("raster resolution must be positive".into()));
    }
    let n = resolution;
    let sigma = blob_sigma(n);
    let reach = 3.0 * sigma;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut acc = vec![0.0f64; n * n];
    for p in points {
        if !p[0].is_finite() || !p[1].is_finite() {
            continue;
        }
        let cx = p[0] * n as f64 - 0.5;
        let cy = p[1] * n as f64 - 0.5;
        let x0 = (cx - reach).ceil().max(0.0);
        let x1 = (cx + reach).floor().min(n as f64 - 1.0);
        let y0 = (cy - reach).ceil().max(0.0);
        let y1 = (cy + reach).floor().min(n as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2 <= reach * reach {
                    acc[y * n + x] += (-d2 * inv).exp();
                }
            }
        }
    }
    Ok(KeypointRaster { resolution: n, data: acc.into_iter().map(|v| v.min(1.0) as f32).collect() })
}

pub fn rasterize_keypoints(
    frame: &LandmarkFrame,
    part: &LandmarkPartition,
    which: Region,
    resolution: usize,
) -> Result<KeypointRaster> {
    let pts: Vec<[f64; 2]> = part.indices(which).iter().map(|&i| frame.points()[i]).collect();
    rasterize_points(&pts, resolution)
}

pub fn rasterize_all(frame: &LandmarkFrame, resolution: usize) -> Result<KeypointRaster> {
    rasterize_points(frame.points(), resolution)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_order() {
        let a = SimilarityTransform::translation_only(1.0, 0.0);
        let b = SimilarityTransform::from_angle(2.0, std::f64::consts::FRAC_PI_2, [0.0, 0.0]).unwrap();
        // b after a: (0,0) -> (1,0) -> (0,2)
        let p = b.compose(&a).apply_point([0.0, 0.0]);
        assert!((p[0]).abs() < 1e-12 && (p[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reflection_is_not_returned() {
        let src = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let mirrored = [[0.0, 0.0], [-1.0, 0.0], [0.0, 1.0]];
        let xf = procrustes_points(&src, &mirrored).unwrap();
        let r = xf.rotation();
        assert!((r[0][0] * r[1][1] - r[0][1] * r[1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blob_is_truncated() {
        let c = 31.5 / 64.0;
        let r = rasterize_points(&[[c, c]], 64).unwrap();
        assert_eq!(r.get(31, 31 - 5), 0.0);
        assert!(r.get(31, 31 - 4) > 0.0);
    }
}
