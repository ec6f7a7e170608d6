use candle_core::{DType, Device, Tensor};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::facs::LANDMARK_DIM;
use crate::ingest::Clip;

/// Aligned `(B, T, ·)` tensors for one optimization step.
#[derive(Debug, Clone)]
pub struct MotionBatch {
    pub landmarks: Tensor,
    pub cond: Tensor,
    pub audio: Tensor,
}

/// Row-major host copies of one clip window.
#[derive(Debug, Clone)]
pub struct ClipWindow {
    pub landmarks: Vec<f64>,
    pub cond: Vec<f64>,
    pub audio: Vec<f64>,
}

pub fn clip_window(clip: &Clip, start: usize, len: usize) -> Result<ClipWindow> {
    if start + len > clip.len() || len == 0 {
        return Err(Error::Shape(format!(
            "window {start}+{len} exceeds clip {} of {} frames",
            clip.name,
            clip.len()
        )));
    }
    let cond = clip.conditioning()?;
    let cw = cond.width();
    let aw = clip.audio.width();
    Ok(ClipWindow {
        landmarks: clip.landmarks.to_flat()[start * LANDMARK_DIM..(start + len) * LANDMARK_DIM].to_vec(),
        cond: cond.data()[start * cw..(start + len) * cw].to_vec(),
        audio: clip.audio.data()[start * aw..(start + len) * aw].to_vec(),
    })
}

pub fn stack_windows(windows: &[ClipWindow], frames: usize, dtype: DType) -> Result<MotionBatch> {
    let b = windows.len();
    let cw = windows[0].cond.len() / frames;
    let aw = windows[0].audio.len() / frames;
    let cat = |f: fn(&ClipWindow) -> &Vec<f64>, w: usize| -> Result<Tensor> {
        let data: Vec<f64> = windows.iter().flat_map(|x| f(x).iter().copied()).collect();
        Ok(Tensor::from_vec(data, (b, frames, w), &Device::Cpu)?.to_dtype(dtype)?)
    };
    Ok(MotionBatch {
        landmarks: cat(|w| &w.landmarks, LANDMARK_DIM)?,
        cond: cat(|w| &w.cond, cw)?,
        audio: cat(|w| &w.audio, aw)?,
    })
}

/// Random `frames`-long windows from random clips.
pub fn sample_batch(
    clips: &[&Clip],
    batch: usize,
    frames: usize,
    rng: &mut ChaCha8Rng,
    dtype: DType,
) -> Result<MotionBatch> {
    let usable: Vec<&&Clip> = clips.iter().filter(|c| c.len() >= frames).collect();
    if usable.is_empty() {
        return Err(Error::Config(format!("no training clip has {frames} frames")));
    }
    let windows = (0..batch)
        .map(|_| {
            let clip = usable[rng.random_range(0..usable.len())];
            let start = rng.random_range(0..=clip.len() - frames);
            clip_window(clip, start, frames)
        })
        .collect::<Result<Vec<_>>>()?;
    stack_windows(&windows, frames, dtype)
}

/// Stacked rows of every clip, for normalization statistics.
pub fn pooled_rows(clips: &[&Clip]) -> Result<ClipWindow> {
    let mut out = ClipWindow { landmarks: Vec::new(), cond: Vec::new(), audio: Vec::new() };
    for c in clips {
        let w = clip_window(c, 0, c.len())?;
        out.landmarks.extend(w.landmarks);
        out.cond.extend(w.cond);
        out.audio.extend(w.audio);
    }
    Ok(out)
}

pub fn standard_normal(shape: &[usize], rng: &mut ChaCha8Rng, dtype: DType) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let x: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            x
        })
        .collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?.to_dtype(dtype)?)
}
