use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::model::{is_autoencoder, is_temporal, M2vModel, Paths};
use crate::diffusion::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::facs::{LandmarkPartition, LandmarkSequence, Region};
use crate::geometry::rasterize_keypoints;
use crate::image_buf::Image;
use crate::ingest::Clip;
use crate::motion::data::standard_normal;
use crate::nn::{scalar, Adam, AdamConfig, NamedArray};

/// `(T, 1, H, W)` grayscale frames; multi-channel images are averaged.
pub fn frames_tensor(frames: &[Image], size: usize, dtype: DType) -> Result<Tensor> {
    let mut data = Vec::with_capacity(frames.len() * size * size);
    for f in frames {
        if f.width() != size || f.height() != size {
            return Err(Error::Shape(format!("frame is {}x{}, model expects {size}x{size}", f.width(), f.height())));
        }
        let c = f.channels();
        data.extend(f.data().chunks(c).map(|p| p.iter().sum::<f32>() / c as f32));
    }
    Ok(Tensor::from_vec(data, (frames.len(), 1, size, size), &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn tensor_to_frames(x: &Tensor) -> Result<Vec<Image>> {
    let (n, _, h, w) = x.dims4()?;
    let v: Vec<f32> = x.narrow(1, 0, 1)?.clamp(0.0, 1.0)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    (0..n).map(|i| Image::new(w, h, 1, v[i * h * w..(i + 1) * h * w].to_vec())).collect()
}

/// Mouth and face rasters `(T, 1, R, R)` for every frame.
pub fn raster_tensors(seq: &LandmarkSequence, part: &LandmarkPartition, resolution: usize, dtype: DType) -> Result<(Tensor, Tensor)> {
    let t = seq.len();
    let mut m = Vec::with_capacity(t * resolution * resolution);
    let mut f = Vec::with_capacity(t * resolution * resolution);
    for frame in seq.frames() {
        m.extend_from_slice(rasterize_keypoints(frame, part, Region::Mouth, resolution)?.data());
        f.extend_from_slice(rasterize_keypoints(frame, part, Region::Face, resolution)?.data());
    }
    let mk = |v: Vec<f32>| -> Result<Tensor> {
        Ok(Tensor::from_vec(v, (t, 1, resolution, resolution), &Device::Cpu)?.to_dtype(dtype)?)
    };
    Ok((mk(m)?, mk(f)?))
}

/// Frozen-autoencoder latents and rasters of one clip.
#[derive(Debug, Clone)]
pub struct ClipTensors {
    pub name: String,
    pub latents: Tensor,
    pub mouth: Tensor,
    pub face: Tensor,
}

impl ClipTensors {
    pub fn len(&self) -> usize {
        self.latents.dim(0).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn encode_frames(model: &M2vModel, frames: &Tensor) -> Result<Tensor> {
    let n = frames.dim(0)?;
    let mut parts = Vec::new();
    let mut i = 0;
    while i < n {
        let k = (n - i).min(16);
        parts.push(model.ae.encode(&frames.narrow(0, i, k)?)?.detach());
        i += k;
    }
    Ok(Tensor::cat(&parts, 0)?)
}

pub fn prepare_clips(model: &M2vModel, clips: &[&Clip], part: &LandmarkPartition) -> Result<Vec<ClipTensors>> {
    let cfg = &model.config;
    clips
        .iter()
        .map(|c| {
            if c.frames.len() != c.len() {
                return Err(Error::Precondition(format!("clip {} has no decoded frames", c.name)));
            }
            let frames = frames_tensor(&c.frames, cfg.image_size, model.dtype())?;
            let (mouth, face) = raster_tensors(&c.landmarks, part, cfg.raster_size, model.dtype())?;
            Ok(ClipTensors { name: c.name.clone(), latents: encode_frames(model, &frames)?, mouth, face })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeTrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self { steps: 300, batch: 4, lr: 2e-3, seed: 0 }
    }
}

/// Reconstruction-only training of the `ae.*` weights, then the latent scale
/// is set to one over the latent standard deviation.
pub fn train_autoencoder(model: &M2vModel, frames: &Tensor, cfg: &AeTrainConfig) -> Result<Vec<f64>> {
    let n = frames.dim(0)?;
    if n == 0 {
        return Err(Error::Precondition("no frames to train the autoencoder on".into()));
    }
    let mut opt = Adam::new(model.store.trainable(is_autoencoder), AdamConfig { lr: cfg.lr, ..AdamConfig::default() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    for step in 0..cfg.steps {
        let idx: Vec<u32> = (0..cfg.batch).map(|_| rng.random_range(0..n) as u32).collect();
        let x = frames.index_select(&Tensor::new(idx.as_slice(), &Device::Cpu)?, 0)?;
        let loss = (model.ae.decode_raw(&model.ae.encode_raw(&x)?)? - &x)?.sqr()?.mean_all()?;
        let v = scalar(&loss)?;
        if !v.is_finite() {
            return Err(Error::TrainingFault { term: "reconstruction".into(), step });
        }
        opt.set_lr(crate::motion::train::cosine_lr(cfg.lr, step, cfg.steps));
        opt.backward_step(&loss)?;
        history.push(v);
        if (step + 1) % 100 == 0 {
            log::info!("autoencoder step {}: reconstruction {v:.6}", step + 1);
        }
    }
    let mut acc = Vec::new();
    let mut i = 0;
    while i < n {
        let k = (n - i).min(16);
        acc.extend(model.ae.encode_raw(&frames.narrow(0, i, k)?)?.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?);
        i += k;
    }
    let mean = acc.iter().sum::<f64>() / acc.len() as f64;
    let sd = (acc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / acc.len() as f64).sqrt().max(1e-6);
    model.store.set_values("ae.buffer.latent_scale", &[1.0 / sd])?;
    model.store.set_values("ae.buffer.trained", &[1.0])?;
    Ok(history)
}

/// Everything a single noise-prediction loss needs, with the randomness
/// already drawn.
#[derive(Debug, Clone)]
pub struct DiffusionBatch {
    /// `(b, t, c_z, h, w)` clean latents; the first `context` frames are
    /// motion context and carry no loss.
    pub latents: Tensor,
    pub context: usize,
    /// `(b, c_z, h, w)` clean reference latents.
    pub reference: Tensor,
    /// `(b, t, 1, R, R)`.
    pub mouth: Tensor,
    pub face: Tensor,
    pub steps: Vec<usize>,
    pub eps: Tensor,
    pub keep_reference: Vec<bool>,
    pub keep_pose: Vec<bool>,
}

/// Mean squared error of a noise prediction.
pub fn noise_prediction_loss(eps_hat: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if eps_hat.dims() != eps.dims() {
        return Err(Error::Shape(format!("prediction {:?} vs noise {:?}", eps_hat.dims(), eps.dims())));
    }
    Ok((eps_hat - eps)?.sqr()?.mean_all()?)
}

fn keep_mask(keep: &[bool], rank: usize, dtype: DType) -> Result<Tensor> {
    let mut shape = vec![1; rank];
    shape[0] = keep.len();
    let v: Vec<f32> = keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn diffusion_loss(model: &M2vModel, sched: &DiffusionSchedule, batch: &DiffusionBatch, paths: Paths) -> Result<Tensor> {
    diffusion_loss_inner(model, sched, batch, paths, false)
}

/// `frozen_conditioning` cuts the graph at the ReferenceNet and guider
/// outputs so no gradient is computed for them.
fn diffusion_loss_inner(
    model: &M2vModel,
    sched: &DiffusionSchedule,
    batch: &DiffusionBatch,
    paths: Paths,
    frozen_conditioning: bool,
) -> Result<Tensor> {
    let z_t = sched.q_sample_batch(&batch.latents, &batch.steps, &batch.eps)?;
    let dtype = z_t.dtype();
    let mut feats = model.refnet.forward(&batch.reference)?;
    if frozen_conditioning {
        feats = feats.iter().map(|f| f.detach()).collect();
    }
    let feats = if batch.keep_reference.iter().all(|k| *k) {
        feats
    } else {
        let m = keep_mask(&batch.keep_reference, 4, dtype)?;
        feats.iter().map(|f| f.broadcast_mul(&m)).collect::<candle_core::Result<Vec<_>>>()?
    };
    let mut pose = model.pose_residual(&batch.mouth, &batch.face)?;
    if frozen_conditioning {
        pose = pose.detach();
    }
    if !batch.keep_pose.iter().all(|k| *k) {
        pose = pose.broadcast_mul(&keep_mask(&batch.keep_pose, 5, dtype)?)?;
    }
    let eps_hat = model.denoise_eps(&z_t, &batch.steps, Some(&feats), Some(&pose), paths)?;
    let t = z_t.dim(1)?;
    let n = t - batch.context;
    noise_prediction_loss(&eps_hat.narrow(1, batch.context, n)?, &batch.eps.narrow(1, batch.context, n)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Phase1Config {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub reference_dropout: f64,
    pub pose_dropout: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub autoencoder: AeTrainConfig,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self {
            steps: 600,
            batch: 4,
            lr: 1e-3,
            reference_dropout: 0.1,
            pose_dropout: 0.1,
            clip_norm: 1.0,
            seed: 0,
            log_every: 50,
            checkpoint_every: 200,
            autoencoder: AeTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Phase2Config {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub clip_frames: usize,
    /// Reject `clip_frames` other than 16.
    pub strict_clip_frames: bool,
    pub motion_dropout: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Self {
            steps: 500,
            batch: 1,
            lr: 1e-3,
            clip_frames: 16,
            strict_clip_frames: true,
            motion_dropout: 0.1,
            clip_norm: 1.0,
            seed: 0,
            log_every: 25,
            checkpoint_every: 100,
        }
    }
}

pub const PHASE2_CLIP_FRAMES: usize = 16;

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name} must be within [0, 1], got {p}")));
    }
    Ok(())
}

fn stack(parts: &[Tensor]) -> Result<Tensor> {
    Ok(Tensor::stack(parts, 0)?)
}

/// One frame per sample with a reference frame drawn from the same clip.
pub fn sample_phase1_batch(
    data: &[ClipTensors],
    batch: usize,
    sched: &DiffusionSchedule,
    cfg: &Phase1Config,
    rng: &mut ChaCha8Rng,
) -> Result<DiffusionBatch> {
    let (mut lat, mut refs, mut mouth, mut face, mut steps) = (vec![], vec![], vec![], vec![], vec![]);
    let (mut keep_r, mut keep_p) = (vec![], vec![]);
    for _ in 0..batch {
        let c = &data[rng.random_range(0..data.len())];
        let j = rng.random_range(0..c.len());
        let r = rng.random_range(0..c.len());
        lat.push(c.latents.narrow(0, j, 1)?);
        refs.push(c.latents.get(r)?);
        mouth.push(c.mouth.narrow(0, j, 1)?);
        face.push(c.face.narrow(0, j, 1)?);
        steps.push(rng.random_range(1..=sched.steps()));
        keep_r.push(rng.random::<f64>() >= cfg.reference_dropout);
        keep_p.push(rng.random::<f64>() >= cfg.pose_dropout);
    }
    let latents = stack(&lat)?;
    let eps = standard_normal(latents.dims(), rng, latents.dtype())?;
    Ok(DiffusionBatch {
        latents,
        context: 0,
        reference: stack(&refs)?,
        mouth: stack(&mouth)?,
        face: stack(&face)?,
        steps,
        eps,
        keep_reference: keep_r,
        keep_pose: keep_p,
    })
}

/// Windows of `context + clip_frames` consecutive frames; the whole batch
/// drops its motion context together with probability `motion_dropout`.
pub fn sample_phase2_batch(
    data: &[ClipTensors],
    context: usize,
    sched: &DiffusionSchedule,
    cfg: &Phase2Config,
    rng: &mut ChaCha8Rng,
) -> Result<DiffusionBatch> {
    let need = context + cfg.clip_frames;
    let usable: Vec<&ClipTensors> = data.iter().filter(|c| c.len() >= need).collect();
    if usable.is_empty() {
        return Err(Error::Precondition(format!("no clip has the {need} frames a phase-2 window needs")));
    }
    let ctx = if rng.random::<f64>() < cfg.motion_dropout { 0 } else { context };
    let (mut lat, mut refs, mut mouth, mut face, mut steps) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..cfg.batch {
        let c = usable[rng.random_range(0..usable.len())];
        let s = rng.random_range(context..=c.len() - cfg.clip_frames) - ctx;
        let n = ctx + cfg.clip_frames;
        lat.push(c.latents.narrow(0, s, n)?);
        mouth.push(c.mouth.narrow(0, s, n)?);
        face.push(c.face.narrow(0, s, n)?);
        refs.push(c.latents.get(rng.random_range(0..c.len()))?);
        steps.push(rng.random_range(1..=sched.steps()));
    }
    let latents = stack(&lat)?;
    let eps = standard_normal(latents.dims(), rng, latents.dtype())?;
    let b = cfg.batch;
    Ok(DiffusionBatch {
        latents,
        context: ctx,
        reference: stack(&refs)?,
        mouth: stack(&mouth)?,
        face: stack(&face)?,
        steps,
        eps,
        keep_reference: vec![true; b],
        keep_pose: vec![true; b],
    })
}

/// Shared optimization loop; on a non-finite loss the last good weights are
/// restored and written before the fault is returned.
struct Loop<'a> {
    model: &'a M2vModel,
    opt: Adam,
    lr: f64,
    steps: u64,
    log_every: u64,
    checkpoint_every: u64,
    checkpoint: Option<(PathBuf, String, &'static str)>,
    last_good: Vec<NamedArray>,
}

impl Loop<'_> {
    fn run(mut self, label: &str, mut next: impl FnMut() -> Result<Tensor>) -> Result<Vec<f64>> {
        let mut history = Vec::with_capacity(self.steps as usize);
        for step in 0..self.steps {
            let loss = next()?;
            let v = scalar(&loss)?;
            if !v.is_finite() {
                self.model.store.import(&self.last_good)?;
                if let Some((p, hash, phase)) = &self.checkpoint {
                    self.model.to_checkpoint(hash, phase)?.save(p)?;
                }
                return Err(Error::TrainingFault { term: "diffusion".into(), step });
            }
            self.opt.set_lr(crate::motion::train::cosine_lr(self.lr, step, self.steps));
            self.opt.backward_step(&loss)?;
            history.push(v);
            let done = step + 1;
            if done % self.log_every.max(1) == 0 || done == 1 {
                log::info!("{label} step {done}: loss {v:.5}");
            }
            if self.checkpoint_every > 0 && done % self.checkpoint_every == 0 {
                self.last_good = self.model.store.export()?;
                if let Some((p, hash, phase)) = &self.checkpoint {
                    self.model.to_checkpoint(hash, phase)?.save(p)?;
                }
            }
        }
        Ok(history)
    }
}

/// Where and under which config hash a training run writes checkpoints.
#[derive(Debug, Clone, Default)]
pub struct CheckpointTarget {
    pub path: Option<PathBuf>,
    pub config_hash: String,
}

/// Phase 1: single frames, temporal layers excluded, autoencoder frozen
/// (trained first if it never was).
pub fn train_phase1(
    model: &M2vModel,
    clips: &[&Clip],
    part: &LandmarkPartition,
    cfg: &Phase1Config,
    target: &CheckpointTarget,
) -> Result<Vec<f64>> {
    check_probability("reference_dropout", cfg.reference_dropout)?;
    check_probability("pose_dropout", cfg.pose_dropout)?;
    if clips.is_empty() {
        return Err(Error::Precondition("no training clips".into()));
    }
    if !model.ae.is_trained()? {
        let frames: Vec<Image> = clips.iter().flat_map(|c| c.frames.iter().cloned()).collect();
        let x = frames_tensor(&frames, model.config.image_size, model.dtype())?;
        train_autoencoder(model, &x, &cfg.autoencoder)?;
    }
    let data = prepare_clips(model, clips, part)?;
    let sched = model.config.schedule()?;
    let vars = model.store.trainable(|n| !is_autoencoder(n) && !is_temporal(n));
    let opt = Adam::new(vars, AdamConfig { lr: cfg.lr, clip_norm: Some(cfg.clip_norm).filter(|c| *c > 0.0), ..AdamConfig::default() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = model.phase1_steps()?;
    let lp = Loop {
        model,
        opt,
        lr: cfg.lr,
        steps: cfg.steps,
        log_every: cfg.log_every,
        checkpoint_every: cfg.checkpoint_every,
        checkpoint: target.path.clone().map(|p| (p, target.config_hash.clone(), "phase1")),
        last_good: model.store.export()?,
    };
    let paths = Paths { fusion: true, temporal: false };
    let history = lp.run("phase1", || {
        let b = sample_phase1_batch(&data, cfg.batch, &sched, cfg, &mut rng)?;
        diffusion_loss(model, &sched, &b, paths)
    })?;
    model.set_phase1_steps(start + cfg.steps)?;
    if let Some(p) = &target.path {
        model.to_checkpoint(&target.config_hash, "phase1")?.save(p)?;
    }
    Ok(history)
}

/// Phase 2: 16-frame windows with ground-truth motion context; only
/// temporal-attention weights update.
pub fn train_phase2(
    model: &M2vModel,
    clips: &[&Clip],
    part: &LandmarkPartition,
    cfg: &Phase2Config,
    target: &CheckpointTarget,
) -> Result<Vec<f64>> {
    if cfg.strict_clip_frames && cfg.clip_frames != PHASE2_CLIP_FRAMES {
        return Err(Error::Config(format!(
            "phase-2 clips must be {PHASE2_CLIP_FRAMES} frames, got {} (strict_clip_frames is on)",
            cfg.clip_frames
        )));
    }
    if cfg.clip_frames == 0 || cfg.batch == 0 {
        return Err(Error::Config("phase-2 clip_frames and batch must be positive".into()));
    }
    check_probability("motion_dropout", cfg.motion_dropout)?;
    if model.phase1_steps()? == 0 || !model.ae.is_trained()? {
        return Err(Error::Precondition("phase 2 needs a phase-1 checkpoint".into()));
    }
    if clips.is_empty() {
        return Err(Error::Precondition("no training clips".into()));
    }
    let data = prepare_clips(model, clips, part)?;
    let sched = model.config.schedule()?;
    let opt = Adam::new(model.store.trainable(is_temporal), AdamConfig { lr: cfg.lr, clip_norm: Some(cfg.clip_norm).filter(|c| *c > 0.0), ..AdamConfig::default() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let context = model.config.context_frames;
    let lp = Loop {
        model,
        opt,
        lr: cfg.lr,
        steps: cfg.steps,
        log_every: cfg.log_every,
        checkpoint_every: cfg.checkpoint_every,
        checkpoint: target.path.clone().map(|p| (p, target.config_hash.clone(), "phase2")),
        last_good: model.store.export()?,
    };
    let history = lp.run("phase2", || {
        let b = sample_phase2_batch(&data, context, &sched, cfg, &mut rng)?;
        diffusion_loss_inner(model, &sched, &b, Paths::ALL, true)
    })?;
    if let Some(p) = &target.path {
        model.to_checkpoint(&target.config_hash, "phase2")?.save(p)?;
    }
    Ok(history)
}
