//! Synthetic linear face rig.
//!
//! Landmarks are an exact linear function of the conditioning:
//! `L_t = L0 + B_au u_t + B_aud a_t + noise`, with a semantically shaped AU
//! basis (AU12 pulls the lip corners up and out, AU26 drops the jaw, ...)
//! and a seeded audio basis acting on the mouth and jaw. Each frame is also
//! rendered to a flat-shaded grayscale face so the video stage has paired
//! images.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facs::{
    layout, ActionUnitId, AuSequence, AuVector, LandmarkFrame, LandmarkSequence, LANDMARK_DIM,
    NUM_AUS, NUM_LANDMARKS,
};
use crate::image_buf::Image;
use crate::ingest::audio::AudioFeatureSequence;
use crate::ingest::dataset::{Appearance, Clip, Split, ToyDataset};

/// Landmark displacement per unit AU intensity, in normalized coordinates.
pub const AU_BASIS_SCALE: f64 = 0.01;
/// Landmark displacement per unit audio feature.
pub const AUDIO_BASIS_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    /// `L0`, flattened `x0, y0, ...`.
    pub base_face: Vec<f64>,
    /// `18 x 324`, row `ordinal(au)`.
    pub au_basis: Vec<f64>,
    /// `D x 324`.
    pub audio_basis: Vec<f64>,
    pub audio_width: usize,
    pub noise_std: f64,
    pub seed: u64,
}

/// Clip-level generation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub num_clips: usize,
    pub frames_per_clip: usize,
    pub fps: f64,
    pub image_size: usize,
    pub val_fraction: f64,
    pub au_knot_spacing: usize,
    pub audio_knot_spacing: usize,
    pub au_active_prob: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            num_clips: 100,
            frames_per_clip: 48,
            fps: 25.0,
            image_size: 64,
            val_fraction: 0.1,
            au_knot_spacing: 8,
            audio_knot_spacing: 5,
            au_active_prob: 0.5,
        }
    }
}

impl RigSpec {
    /// Built-in face geometry and AU basis, seeded audio basis.
    pub fn procedural(audio_width: usize, noise_std: f64, seed: u64) -> Result<Self> {
        if audio_width == 0 {
            return Err(Error::Config("rig audio width must be >= 1".into()));
        }
        let base = base_face_points();
        let mut au_basis = Vec::with_capacity(NUM_AUS * LANDMARK_DIM);
        for ord in 0..NUM_AUS {
            let au = ActionUnitId::from_ordinal(ord).expect("ordinal in range");
            au_basis.extend(au_pattern(au, &base).into_iter().flatten().map(|v| v * AU_BASIS_SCALE));
        }
        let patterns = audio_patterns(&base);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA0D1_0BA5);
        let norm = (patterns.len() as f64).sqrt();
        let mut audio_basis = Vec::with_capacity(audio_width * LANDMARK_DIM);
        for _ in 0..audio_width {
            let w: Vec<f64> = (0..patterns.len())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            for i in 0..NUM_LANDMARKS {
                for c in 0..2 {
                    let v: f64 = patterns.iter().zip(&w).map(|(p, w)| p[i][c] * w).sum();
                    audio_basis.push(v / norm * AUDIO_BASIS_SCALE);
                }
            }
        }
        let spec = Self {
            base_face: base.into_iter().flatten().collect(),
            au_basis,
            audio_basis,
            audio_width,
            noise_std,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_face.len() != LANDMARK_DIM {
            return Err(Error::Config("rig base face must have 324 values".into()));
        }
        if self.au_basis.len() != NUM_AUS * LANDMARK_DIM {
            return Err(Error::Config("rig AU basis must be 18 x 162 x 2".into()));
        }
        if self.audio_width == 0 || self.audio_basis.len() != self.audio_width * LANDMARK_DIM {
            return Err(Error::Config(format!(
                "rig audio basis must be {} x 162 x 2",
                self.audio_width
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("rig noise_std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn base_frame(&self) -> LandmarkFrame {
        LandmarkFrame::from_flat(&self.base_face).expect("validated")
    }

    /// Basis row for one AU (324 values).
    pub fn au_direction(&self, au: ActionUnitId) -> &[f64] {
        let o = au.ordinal();
        &self.au_basis[o * LANDMARK_DIM..(o + 1) * LANDMARK_DIM]
    }

    /// Noise-free landmarks for one frame of conditioning.
    pub fn evaluate(&self, u: &AuVector, audio: &[f64]) -> Vec<f64> {
        let mut out = self.base_face.clone();
        for (o, &w) in u.as_slice().iter().enumerate() {
            if w != 0.0 {
                let row = &self.au_basis[o * LANDMARK_DIM..(o + 1) * LANDMARK_DIM];
                out.iter_mut().zip(row).for_each(|(y, b)| *y += w * b);
            }
        }
        for (d, &w) in audio.iter().enumerate() {
            let row = &self.audio_basis[d * LANDMARK_DIM..(d + 1) * LANDMARK_DIM];
            out.iter_mut().zip(row).for_each(|(y, b)| *y += w * b);
        }
        out
    }
}

pub fn synth_rig_generate(spec: &RigSpec, opts: &SynthOptions) -> Result<ToyDataset> {
    spec.validate()?;
    if opts.num_clips == 0 {
        return Err(Error::Config("num_clips must be >= 1".into()));
    }
    if opts.frames_per_clip < 2 {
        return Err(Error::Config("frames_per_clip must be >= 2".into()));
    }
    if opts.image_size < 8 || opts.image_size > 512 {
        return Err(Error::Config("image_size must be within 8..=512".into()));
    }
    if opts.au_knot_spacing == 0 || opts.audio_knot_spacing == 0 {
        return Err(Error::Config("knot spacing must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&opts.val_fraction) {
        return Err(Error::Config("val_fraction must be in [0, 1)".into()));
    }
    let n_val = if opts.num_clips > 1 {
        ((opts.num_clips as f64 * opts.val_fraction).round() as usize).min(opts.num_clips - 1)
    } else {
        0
    };
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut clips = Vec::with_capacity(opts.num_clips);
    for idx in 0..opts.num_clips {
        let clip_seed: u64 = master.random();
        let split = if idx >= opts.num_clips - n_val { Split::Val } else { Split::Train };
        clips.push(generate_clip(spec, opts, idx, clip_seed, split)?);
    }
    Ok(ToyDataset {
        clips,
        rig: Some(spec.clone()),
        options: Some(opts.clone()),
    })
}

fn generate_clip(
    spec: &RigSpec,
    opts: &SynthOptions,
    idx: usize,
    seed: u64,
    split: Split,
) -> Result<Clip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_len = opts.frames_per_clip;
    let mut au_tracks = vec![vec![0.0; t_len]; NUM_AUS];
    for track in au_tracks.iter_mut() {
        let active = rng.random::<f64>() < opts.au_active_prob;
        let knots: Vec<f64> = (0..t_len / opts.au_knot_spacing + 2)
            .map(|_| rng.random_range(0.0..=5.0))
            .collect();
        if active {
            *track = smooth_track(&knots, opts.au_knot_spacing, t_len);
        }
    }
    let mut audio_tracks = Vec::with_capacity(spec.audio_width);
    for _ in 0..spec.audio_width {
        let knots: Vec<f64> = (0..t_len / opts.audio_knot_spacing + 2)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        audio_tracks.push(smooth_track(&knots, opts.audio_knot_spacing, t_len));
    }
    let appearance = Appearance {
        skin: rng.random_range(0.55..0.85),
        background: rng.random_range(0.05..0.35),
    };
    let noise = Normal::new(0.0, spec.noise_std.max(0.0))
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut au_frames = Vec::with_capacity(t_len);
    let mut audio = Vec::with_capacity(t_len * spec.audio_width);
    let mut lm_frames = Vec::with_capacity(t_len);
    let mut images = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut u: Vec<f64> = au_tracks.iter().map(|tr| tr[t].clamp(0.0, 5.0)).collect();
        // AU28 is presence-only in the OpenFace layout.
        let o28 = ActionUnitId::AU28.ordinal();
        u[o28] = if u[o28] >= 2.5 { 5.0 } else { 0.0 };
        let u = AuVector::new(&u)?;
        let a: Vec<f64> = audio_tracks.iter().map(|tr| tr[t]).collect();
        let mut l = spec.evaluate(&u, &a);
        if spec.noise_std > 0.0 {
            for v in l.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        let frame = LandmarkFrame::from_flat(&l)?;
        images.push(render_face(&frame, appearance, opts.image_size));
        lm_frames.push(frame);
        au_frames.push(u);
        audio.extend(a);
    }
    Ok(Clip {
        name: format!("clip_{idx:04}"),
        split,
        audio: AudioFeatureSequence::new(audio, spec.audio_width, opts.fps)?,
        aus: AuSequence::new(au_frames, opts.fps)?,
        landmarks: LandmarkSequence::new(lm_frames, opts.fps)?,
        frames: images,
        appearance: Some(appearance),
    })
}

/// Smoothstep interpolation between knots spaced `spacing` frames apart.
/// Stays within the knot range and is C1 at the knots.
fn smooth_track(knots: &[f64], spacing: usize, len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| {
            let i = t / spacing;
            let f = (t % spacing) as f64 / spacing as f64;
            let h = f * f * (3.0 - 2.0 * f);
            knots[i] * (1.0 - h) + knots[i + 1] * h
        })
        .collect()
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, theta: f64) -> [f64; 2] {
    [cx + rx * theta.cos(), cy - ry * theta.sin()]
}

/// Angle parameter of ring point `k` of `n`, starting at the left corner
/// (`theta = pi`) and running over the top first.
fn ring_theta(k: usize, n: usize) -> f64 {
    std::f64::consts::PI - 2.0 * std::f64::consts::PI * k as f64 / n as f64
}

const MOUTH_C: [f64; 2] = [0.5, 0.695];
const MOUTH_RX: f64 = 0.105;

pub fn base_face_points() -> Vec<[f64; 2]> {
    use std::f64::consts::PI;
    let mut p = vec![[0.0; 2]; NUM_LANDMARKS];
    for (k, i) in layout::JAW.enumerate() {
        let th = -PI / 2.0 + 2.0 * PI * k as f64 / layout::JAW.len() as f64;
        p[i] = [0.5 + 0.30 * th.cos(), 0.5 + 0.39 * th.sin()];
    }
    for (brow, mirror) in [(layout::LEFT_BROW, false), (layout::RIGHT_BROW, true)] {
        for (k, i) in brow.enumerate() {
            let (s, lower) = if k < 5 { (k as f64 / 4.0, 0.0) } else { ((9 - k) as f64 / 4.0, 0.014) };
            let x = 0.31 + 0.14 * s;
            let y = 0.345 - 0.012 * (PI * s).sin() + lower;
            p[i] = [if mirror { 1.0 - x } else { x }, y];
        }
    }
    for (eye, cx) in [(layout::LEFT_EYE, 0.385), (layout::RIGHT_EYE, 0.615)] {
        for (k, i) in eye.enumerate() {
            p[i] = ellipse(cx, 0.42, 0.055, 0.024, ring_theta(k, 16));
        }
    }
    for (k, i) in layout::NOSE.enumerate() {
        p[i] = if k < 9 {
            [0.5, 0.41 + 0.14 * k as f64 / 8.0]
        } else {
            ellipse(0.5, 0.575, 0.055, 0.022, ring_theta(k - 9, 18))
        };
    }
    for (k, i) in layout::CHEEKS.enumerate() {
        let (cx, j) = if k < 5 { (0.34, k) } else { (0.66, k - 5) };
        let th = PI / 2.0 + (j as f64 - 2.0) * 0.5;
        p[i] = [cx + 0.03 * th.cos(), 0.56 - 0.03 * th.sin()];
    }
    for (k, i) in layout::MOUTH_OUTER.enumerate() {
        p[i] = ellipse(MOUTH_C[0], MOUTH_C[1], MOUTH_RX, 0.032, ring_theta(k, 24));
    }
    for (k, i) in layout::MOUTH_INNER.enumerate() {
        p[i] = ellipse(MOUTH_C[0], MOUTH_C[1], 0.075, 0.006, ring_theta(k, 16));
    }
    p
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Unit-intensity displacement field for one AU.
fn au_pattern(au: ActionUnitId, base: &[[f64; 2]]) -> Vec<[f64; 2]> {
    use ActionUnitId as A;
    let mut d = vec![[0.0f64; 2]; NUM_LANDMARKS];
    let brows = layout::LEFT_BROW.chain(layout::RIGHT_BROW);
    let eyes = |upper: bool| {
        layout::LEFT_EYE
            .clone()
            .enumerate()
            .chain(layout::RIGHT_EYE.clone().enumerate())
            .filter(move |(k, _)| if upper { (1..8).contains(k) } else { (9..16).contains(k) })
            .map(|(k, i)| (i, (ring_theta(k, 16)).sin().abs()))
            .collect::<Vec<_>>()
    };
    let outer = || layout::MOUTH_OUTER.enumerate().map(|(k, i)| (i, ring_theta(k, 24)));
    let inner = || layout::MOUTH_INNER.enumerate().map(|(k, i)| (i, ring_theta(k, 16)));
    let corner_w = |th: f64| th.cos().abs().powi(3);
    let inner_brow_w = |x: f64| clamp01(1.0 - (x - 0.5).abs() / 0.19);
    match au {
        A::AU1 => brows.for_each(|i| d[i][1] -= 1.2 * inner_brow_w(base[i][0])),
        A::AU2 => brows.for_each(|i| d[i][1] -= 1.2 * clamp01(((base[i][0] - 0.5).abs() - 0.06) / 0.13)),
        A::AU4 => brows.for_each(|i| {
            d[i][1] += 0.8;
            d[i][0] -= 0.4 * (base[i][0] - 0.5).signum();
        }),
        A::AU5 => eyes(true).into_iter().for_each(|(i, w)| d[i][1] -= 0.7 * w),
        A::AU6 => {
            eyes(false).into_iter().for_each(|(i, w)| d[i][1] -= 0.4 * w);
            layout::CHEEKS.for_each(|i| d[i][1] -= 0.9);
            outer().for_each(|(i, th)| d[i][1] -= 0.15 * corner_w(th));
        }
        A::AU7 => {
            eyes(false).into_iter().for_each(|(i, w)| d[i][1] -= 0.5 * w);
            eyes(true).into_iter().for_each(|(i, w)| d[i][1] += 0.25 * w);
        }
        A::AU9 => {
            layout::NOSE.enumerate().for_each(|(k, i)| {
                d[i][1] -= if k < 9 { 0.3 * k as f64 / 8.0 } else { 0.6 };
            });
            brows.for_each(|i| d[i][1] += 0.3 * inner_brow_w(base[i][0]));
        }
        A::AU10 => {
            outer().filter(|(_, th)| th.sin() > 1e-9).for_each(|(i, th)| d[i][1] -= 0.8 * th.sin());
            inner().filter(|(_, th)| th.sin() > 1e-9).for_each(|(i, th)| d[i][1] -= 0.6 * th.sin());
            layout::NOSE.skip(9).for_each(|i| d[i][1] -= 0.2);
        }
        A::AU12 => {
            outer().chain(inner()).for_each(|(i, th)| {
                let s = if layout::MOUTH_INNER.contains(&i) { 0.7 } else { 1.0 };
                d[i][0] += s * 0.9 * th.cos() * th.cos().powi(2);
                d[i][1] -= s * 0.8 * corner_w(th);
            });
            layout::CHEEKS.for_each(|i| d[i][1] -= 0.3);
        }
        A::AU14 => {
            outer().chain(inner()).for_each(|(i, th)| d[i][0] += 0.5 * th.cos() * th.cos().powi(2));
            layout::CHEEKS.for_each(|i| d[i][0] += 0.3 * (base[i][0] - 0.5).signum());
        }
        A::AU15 => {
            outer().for_each(|(i, th)| d[i][1] += 0.9 * corner_w(th));
            inner().for_each(|(i, th)| d[i][1] += 0.6 * corner_w(th));
            layout::JAW.filter(|&i| base[i][1] > 0.8).for_each(|i| d[i][1] += 0.1);
        }
        A::AU17 => {
            outer().filter(|(_, th)| th.sin() < -1e-9).for_each(|(i, th)| d[i][1] -= 0.6 * th.sin().abs());
            inner().filter(|(_, th)| th.sin() < -1e-9).for_each(|(i, _)| d[i][1] -= 0.5);
            layout::JAW.for_each(|i| d[i][1] -= 0.5 * clamp01((base[i][1] - 0.8) / 0.09));
        }
        A::AU20 => layout::MOUTH.for_each(|i| d[i][0] += (base[i][0] - MOUTH_C[0]) / MOUTH_RX),
        A::AU23 => outer().for_each(|(i, th)| {
            d[i][0] -= 0.5 * (base[i][0] - MOUTH_C[0]) / MOUTH_RX;
            d[i][1] += 0.4 * th.sin();
        }),
        A::AU25 => {
            inner().for_each(|(i, th)| {
                let s = th.sin();
                d[i][1] += if s < 0.0 { 0.7 * s.abs() } else { -0.3 * s };
            });
            outer().filter(|(_, th)| th.sin() < 0.0).for_each(|(i, th)| d[i][1] += 0.3 * th.sin().abs());
        }
        A::AU26 => {
            layout::JAW.for_each(|i| d[i][1] += clamp01((base[i][1] - 0.55) / 0.34));
            outer().for_each(|(i, th)| {
                let s = th.sin();
                d[i][1] += if s < -1e-9 { 0.9 * s.abs() + 0.3 } else if s.abs() <= 1e-9 { 0.4 } else { 0.0 };
            });
            inner().for_each(|(i, th)| {
                if th.sin() < 1e-9 {
                    d[i][1] += 1.0 * th.sin().abs() + 0.3;
                }
            });
        }
        A::AU28 => {
            outer().for_each(|(i, th)| {
                d[i][1] += 0.7 * th.sin();
                d[i][0] -= 0.2 * (base[i][0] - MOUTH_C[0]) / MOUTH_RX;
            });
            inner().for_each(|(i, th)| d[i][1] += 0.2 * th.sin());
        }
        A::AU45 => {
            eyes(true).into_iter().for_each(|(i, w)| d[i][1] += 1.6 * w);
            eyes(false).into_iter().for_each(|(i, w)| d[i][1] -= 0.1 * w);
        }
        other => unreachable!("{other} has no rig pattern"),
    }
    d
}

/// Mouth shapes mixed into the seeded audio basis: open, spread, round,
/// upper-lip lift.
fn audio_patterns(base: &[[f64; 2]]) -> Vec<Vec<[f64; 2]>> {
    let open = au_pattern(ActionUnitId::AU26, base);
    let spread = au_pattern(ActionUnitId::AU20, base);
    let round: Vec<[f64; 2]> = spread.iter().map(|p| [-0.7 * p[0], -0.7 * p[1]]).collect();
    let lift = au_pattern(ActionUnitId::AU10, base);
    vec![open, spread, round, lift]
}

/// Flat-shaded grayscale rendering of a face, quantized to 8-bit levels.
pub fn render_face(frame: &LandmarkFrame, look: Appearance, size: usize) -> Image {
    let mut canvas = Canvas::new(size, look.background as f32);
    let pts = frame.points();
    let poly = |range: std::ops::Range<usize>| -> Vec<[f64; 2]> { pts[range].to_vec() };
    let skin = look.skin as f32;
    canvas.fill(&poly(layout::JAW), skin);
    canvas.fill(&poly(layout::NOSE.start + 9..layout::NOSE.end), skin * 0.82);
    canvas.fill(&poly(layout::LEFT_BROW), 0.18);
    canvas.fill(&poly(layout::RIGHT_BROW), 0.18);
    canvas.fill(&poly(layout::LEFT_EYE), 0.95);
    canvas.fill(&poly(layout::RIGHT_EYE), 0.95);
    canvas.fill(&poly(layout::MOUTH_OUTER), skin * 0.55);
    canvas.fill(&poly(layout::MOUTH_INNER), 0.06);
    let mut img = Image::new(size, size, 1, canvas.px).expect("canvas is size x size");
    img.quantize_u8();
    img
}

struct Canvas {
    size: usize,
    px: Vec<f32>,
}

const SUBROWS: usize = 4;

impl Canvas {
    fn new(size: usize, bg: f32) -> Self {
        Self {
            size,
            px: vec![bg; size * size],
        }
    }

    /// Even-odd polygon fill with 4 sub-scanlines per row and exact
    /// horizontal span coverage.
    fn fill(&mut self, poly: &[[f64; 2]], value: f32) {
        let n = self.size;
        let s = n as f64;
        let pts: Vec<[f64; 2]> = poly.iter().map(|p| [p[0] * s, p[1] * s]).collect();
        let (ymin, ymax) = pts
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
        let row_lo = ymin.floor().max(0.0) as usize;
        let row_hi = (ymax.ceil().max(0.0) as usize).min(n);
        let mut cover = vec![0.0f64; n];
        let mut xs = Vec::new();
        for row in row_lo..row_hi {
            cover.iter_mut().for_each(|c| *c = 0.0);
            for sub in 0..SUBROWS {
                let y = row as f64 + (sub as f64 + 0.5) / SUBROWS as f64;
                xs.clear();
                for k in 0..pts.len() {
                    let (a, b) = (pts[k], pts[(k + 1) % pts.len()]);
                    if (a[1] <= y) != (b[1] <= y) {
                        xs.push(a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
                    }
                }
                xs.sort_by(f64::total_cmp);
                for span in xs.chunks_exact(2) {
                    let (x0, x1) = (span[0].clamp(0.0, s), span[1].clamp(0.0, s));
                    if x1 <= x0 {
                        continue;
                    }
                    let (c0, c1) = (x0.floor() as usize, (x1.ceil() as usize).min(n));
                    for (c, cov) in cover.iter_mut().enumerate().take(c1).skip(c0) {
                        let overlap = (x1.min(c as f64 + 1.0) - x0.max(c as f64)).max(0.0);
                        *cov += overlap / SUBROWS as f64;
                    }
                }
            }
            for (c, &cov) in cover.iter().enumerate() {
                if cov > 0.0 {
                    let a = cov.min(1.0) as f32;
                    let p = &mut self.px[row * n + c];
                    *p = *p * (1.0 - a) + value * a;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_opts() -> SynthOptions {
        SynthOptions {
            num_clips: 4,
            frames_per_clip: 12,
            image_size: 32,
            ..SynthOptions::default()
        }
    }

    #[test]
    fn zero_conditioning_gives_base_face() {
        let spec = RigSpec::procedural(4, 0.0, 1).unwrap();
        let l = spec.evaluate(&AuVector::zeros(), &[0.0; 4]);
        assert_eq!(l, spec.base_face);
    }

    #[test]
    fn au12_displacement_is_five_times_basis() {
        let spec = RigSpec::procedural(4, 0.0, 1).unwrap();
        let mut u = AuVector::zeros();
        u.set(ActionUnitId::AU12, 5.0).unwrap();
        let l = spec.evaluate(&u, &[0.0; 4]);
        let dir = spec.au_direction(ActionUnitId::AU12);
        for p in 0..LANDMARK_DIM {
            let expect = 5.0 * dir[p];
            assert!((l[p] - spec.base_face[p] - expect).abs() < 1e-15);
        }
        // the corners actually move, up and outward
        let [lc, rc] = layout::MOUTH_CORNERS;
        assert!(dir[2 * lc] < 0.0 && dir[2 * rc] > 0.0);
        assert!(dir[2 * lc + 1] < 0.0 && dir[2 * rc + 1] < 0.0);
    }

    #[test]
    fn every_au_moves_something() {
        let spec = RigSpec::procedural(2, 0.0, 1).unwrap();
        for au in crate::facs::canonical_au_catalogue() {
            let n: f64 = spec.au_direction(*au).iter().map(|v| v * v).sum();
            assert!(n > 0.0, "{au} has an empty basis");
        }
    }

    #[test]
    fn seeded_determinism() {
        let a = synth_rig_generate(&RigSpec::procedural(3, 0.005, 9).unwrap(), &small_opts()).unwrap();
        let b = synth_rig_generate(&RigSpec::procedural(3, 0.005, 9).unwrap(), &small_opts()).unwrap();
        let c = synth_rig_generate(&RigSpec::procedural(3, 0.005, 10).unwrap(), &small_opts()).unwrap();
        assert_eq!(a.clips, b.clips);
        assert_ne!(a.clips[0].aus, c.clips[0].aus);
    }

    #[test]
    fn clip_modalities_agree() {
        let d = synth_rig_generate(&RigSpec::procedural(3, 0.0, 2).unwrap(), &small_opts()).unwrap();
        for clip in &d.clips {
            assert_eq!(clip.audio.len(), 12);
            assert_eq!(clip.aus.len(), 12);
            assert_eq!(clip.landmarks.len(), 12);
            assert_eq!(clip.frames.len(), 12);
            for f in clip.aus.frames() {
                assert!(f.as_slice().iter().all(|v| (0.0..=5.0).contains(v)));
            }
        }
        assert_eq!(d.clips.iter().filter(|c| c.split == Split::Val).count(), 0);
        let d = synth_rig_generate(
            &RigSpec::procedural(3, 0.0, 2).unwrap(),
            &SynthOptions { num_clips: 20, ..small_opts() },
        )
        .unwrap();
        assert_eq!(d.clips.iter().filter(|c| c.split == Split::Val).count(), 2);
    }

    #[test]
    fn rendering_responds_to_jaw_drop() {
        let spec = RigSpec::procedural(2, 0.0, 1).unwrap();
        let look = Appearance { skin: 0.7, background: 0.2 };
        let mut u = AuVector::zeros();
        let closed = render_face(&LandmarkFrame::from_flat(&spec.evaluate(&u, &[0.0; 2])).unwrap(), look, 64);
        u.set(ActionUnitId::AU26, 5.0).unwrap();
        let open = render_face(&LandmarkFrame::from_flat(&spec.evaluate(&u, &[0.0; 2])).unwrap(), look, 64);
        let dark = |im: &Image| im.data().iter().filter(|v| **v < 0.1).count();
        assert!(dark(&open) > dark(&closed));
        assert!(closed.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn linearity_of_rig() {
        let spec = RigSpec::procedural(3, 0.0, 4).unwrap();
        let a = [0.3, -1.2, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let u1: Vec<f64> = (0..18).map(|_| rng.random_range(0.0..2.5)).collect();
            let u2: Vec<f64> = (0..18).map(|_| rng.random_range(0.0..2.5)).collect();
            let sum: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| x + y).collect();
            let ev = |u: &[f64]| spec.evaluate(&AuVector::new(u).unwrap(), &a);
            let (l12, l1, l2, l0) = (ev(&sum), ev(&u1), ev(&u2), ev(&[0.0; 18]));
            for p in 0..LANDMARK_DIM {
                assert!((l12[p] - l1[p] - l2[p] + l0[p]).abs() < 1e-12);
            }
        }
    }
}
