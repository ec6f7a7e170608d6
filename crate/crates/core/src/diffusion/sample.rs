use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::model::{M2vModel, Paths};
use crate::diffusion::schedule::ddim_sample_with;
use crate::diffusion::train::{frames_tensor, raster_tensors, tensor_to_frames};
use crate::error::{Error, Result};
use crate::facs::{AuSequence, LandmarkFrame, LandmarkPartition, LandmarkSequence};
use crate::geometry::align_sequence;
use crate::image_buf::Image;
use crate::ingest::AudioFeatureSequence;
use crate::motion::data::standard_normal;
use crate::motion::{generate_motion, VmgModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleOptions {
    pub seed: u64,
    /// `None` uses the model's configured count.
    pub ddim_steps: Option<usize>,
    /// Feed the last generated frames of each chunk into the next one.
    pub carry_context: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { seed: 0, ddim_steps: None, carry_context: true }
    }
}

/// Chunked deterministic sampling of `(T, c_z, h, w)` latents that follow
/// the given landmarks. Noise for chunk `k` is drawn in the same order
/// whether or not context is carried, so the two settings are paired.
pub fn sample_latents(
    model: &M2vModel,
    reference: &Image,
    landmarks: &LandmarkSequence,
    part: &LandmarkPartition,
    opts: &SampleOptions,
) -> Result<Tensor> {
    let cfg = &model.config;
    if landmarks.is_empty() {
        return Err(Error::InvalidInput("no frames to sample".into()));
    }
    let sched = cfg.schedule()?;
    let steps = opts.ddim_steps.unwrap_or(cfg.ddim_steps);
    sched.ddim_timesteps(steps)?;
    let dtype = model.dtype();
    let ref_img = frames_tensor(std::slice::from_ref(reference), cfg.image_size, dtype)?;
    let feats: Vec<Tensor> = model.reference_features(&ref_img)?.into_iter().map(|f| f.detach()).collect();
    let (mouth, face) = raster_tensors(landmarks, part, cfg.raster_size, dtype)?;
    let (c, l, ctx_n) = (cfg.latent_channels, cfg.latent_size(), cfg.context_frames);
    let total = landmarks.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out: Vec<Tensor> = Vec::new();
    let mut start = 0;
    while start < total {
        let n = cfg.chunk_frames.min(total - start);
        let z_t = standard_normal(&[1, n, c, l, l], &mut rng, dtype)?;
        let ctx_eps = standard_normal(&[1, ctx_n, c, l, l], &mut rng, dtype)?;
        let use_ctx = opts.carry_context && start > 0 && ctx_n > 0;
        let lo = if use_ctx { start - ctx_n } else { start };
        let k = start + n - lo;
        let m = mouth.narrow(0, lo, k)?.unsqueeze(0)?;
        let f = face.narrow(0, lo, k)?.unsqueeze(0)?;
        let pose = model.pose_residual(&m, &f)?.detach();
        let ctx = if use_ctx {
            let prev = Tensor::cat(&out, 0)?;
            Some(prev.narrow(0, prev.dim(0)? - ctx_n, ctx_n)?.unsqueeze(0)?)
        } else {
            None
        };
        let z0 = ddim_sample_with(&sched, z_t, steps, |z, t| {
            let input = match &ctx {
                Some(cz) => Tensor::cat(&[&sched.q_sample(cz, t, &ctx_eps)?, z], 1)?,
                None => z.clone(),
            };
            let eps = model.denoise_eps(&input, &[t], Some(&feats), Some(&pose), Paths::ALL)?;
            Ok(eps.narrow(1, k - n, n)?.detach())
        })?;
        out.push(z0.squeeze(0)?);
        start += n;
    }
    Ok(Tensor::cat(&out, 0)?)
}

pub fn decode_latents(model: &M2vModel, latents: &Tensor) -> Result<Vec<Image>> {
    let n = latents.dim(0)?;
    let mut frames = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let k = (n - i).min(16);
        frames.extend(tensor_to_frames(&model.ae.decode(&latents.narrow(0, i, k)?)?)?);
        i += k;
    }
    Ok(frames)
}

/// Sampled and decoded frames for a landmark sequence.
pub fn ddim_sample(
    model: &M2vModel,
    reference: &Image,
    landmarks: &LandmarkSequence,
    part: &LandmarkPartition,
    opts: &SampleOptions,
) -> Result<Vec<Image>> {
    decode_latents(model, &sample_latents(model, reference, landmarks, part, opts)?)
}

#[derive(Debug, Clone)]
pub struct GeneratedVideo {
    pub frames: Vec<Image>,
    /// Generated landmarks after alignment to the reference.
    pub landmarks: LandmarkSequence,
}

pub struct InferenceInputs<'a> {
    pub reference: &'a Image,
    pub reference_landmarks: &'a LandmarkFrame,
    pub audio: &'a AudioFeatureSequence,
    pub aus: &'a AuSequence,
}

/// Motion generation, alignment to the reference landmarks, then chunked
/// video sampling. Errors carry the name of the failing stage.
pub fn infer_pipeline(
    inputs: &InferenceInputs,
    vmg: &VmgModel,
    m2v: &M2vModel,
    part: &LandmarkPartition,
    opts: &SampleOptions,
) -> Result<GeneratedVideo> {
    if !m2v.ae.is_trained()? || m2v.phase1_steps()? == 0 {
        return Err(Error::Precondition("video model is untrained".into()).in_stage("load"));
    }
    let motion = generate_motion(vmg, inputs.audio, inputs.aus, opts.seed).map_err(|e| e.in_stage("generate_motion"))?;
    let (aligned, _) = align_sequence(&motion, inputs.reference_landmarks).map_err(|e| e.in_stage("align"))?;
    let frames = ddim_sample(m2v, inputs.reference, &aligned, part, opts).map_err(|e| e.in_stage("sample"))?;
    Ok(GeneratedVideo { frames, landmarks: aligned })
}

/// Mean absolute pixel change between consecutive frames, split into pairs
/// that straddle a chunk boundary and pairs inside a chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStats {
    pub boundary_mean: f64,
    pub intra_median: f64,
    pub boundary: Vec<f64>,
    pub intra: Vec<f64>,
}

pub fn frame_difference(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.data().len() as f64
}

pub fn boundary_stats(frames: &[Image], chunk: usize) -> Result<BoundaryStats> {
    if chunk == 0 || frames.len() <= chunk {
        return Err(Error::InvalidInput(format!("{} frames contain no boundary of {chunk}-frame chunks", frames.len())));
    }
    let mut boundary = Vec::new();
    let mut intra = Vec::new();
    for i in 1..frames.len() {
        let d = frame_difference(&frames[i - 1], &frames[i]);
        if i % chunk == 0 {
            boundary.push(d);
        } else {
            intra.push(d);
        }
    }
    let mut sorted = intra.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let m = sorted.len();
    let intra_median = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
    let boundary_mean = boundary.iter().sum::<f64>() / boundary.len() as f64;
    Ok(BoundaryStats { boundary_mean, intra_median, boundary, intra })
}

/// Latent-space counterpart of [`boundary_stats`] on `(T, c, h, w)`.
pub fn latent_boundary_stats(latents: &Tensor, chunk: usize) -> Result<BoundaryStats> {
    let frames: Vec<Image> = (0..latents.dim(0)?)
        .map(|i| {
            let v: Vec<f32> = latents.get(i)?.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
            Image::new(v.len(), 1, 1, v)
        })
        .collect::<Result<_>>()?;
    boundary_stats(&frames, chunk)
}
