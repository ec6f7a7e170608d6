use std::path::PathBuf;

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, RngState};
use crate::error::{Error, Result};
use crate::facs::{AuSequence, LandmarkSequence, LANDMARK_DIM};
use crate::ingest::{build_conditioning, AudioFeatureSequence, Clip};
use crate::motion::data::{pooled_rows, sample_batch, standard_normal};
use crate::motion::loss::{vmg_forward, LossValues, LossWeights};
use crate::motion::sync::SyncExpert;
use crate::motion::vmg::{VmgConfig, VmgModel, VMG_KIND};
use crate::nn::{Adam, AdamConfig, NamedArray};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VmgTrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub frames: usize,
    pub lr: f64,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Cosine decay of the learning rate to zero over `steps`.
    pub cosine_decay: bool,
    pub weights: LossWeights,
}

impl Default for VmgTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            frames: 16,
            lr: 3e-3,
            seed: 0,
            log_every: 100,
            checkpoint_every: 500,
            clip_norm: 1.0,
            cosine_decay: true,
            weights: LossWeights::default(),
        }
    }
}

impl VmgModel {
    pub fn to_checkpoint(&self, config_hash: &str) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(VMG_KIND, config_hash, self.store.export()?);
        c.meta = serde_json::json!({ "config": self.config });
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != VMG_KIND {
            return Err(Error::Schema(format!("expected a `{VMG_KIND}` checkpoint, got `{}`", ckpt.kind)));
        }
        let config: VmgConfig = serde_json::from_value(ckpt.meta["config"].clone())
            .map_err(|e| Error::Schema(format!("vmg checkpoint config: {e}")))?;
        let dtype = ckpt.params.first().map(|a| a.dtype).unwrap_or(DType::F32);
        let m = Self::new(config, dtype, 0)?;
        m.store.import(&ckpt.params)?;
        Ok(m)
    }

    pub fn fit_to_clips(&self, clips: &[&Clip]) -> Result<()> {
        let rows = pooled_rows(clips)?;
        self.fit_normalization(&rows.landmarks, &rows.cond)
    }
}

/// Single-writer training loop with exact resume: the checkpoint carries the
/// weights, Adam moments, step count and the position of the sampling RNG.
pub struct VmgTrainer<'a> {
    model: &'a VmgModel,
    sync: Option<&'a SyncExpert>,
    clips: Vec<&'a Clip>,
    cfg: VmgTrainConfig,
    opt: Adam,
    rng: ChaCha8Rng,
    step: u64,
    last_good: Vec<NamedArray>,
    config_hash: String,
    checkpoint_path: Option<PathBuf>,
}

impl<'a> VmgTrainer<'a> {
    pub fn new(
        model: &'a VmgModel,
        sync: Option<&'a SyncExpert>,
        clips: Vec<&'a Clip>,
        cfg: VmgTrainConfig,
    ) -> Result<Self> {
        cfg.weights.validate()?;
        if cfg.weights.sync > 0.0 && sync.is_none() {
            return Err(Error::Precondition(
                "sync loss weight is non-zero but no sync expert checkpoint was given".into(),
            ));
        }
        if let (Some(s), true) = (sync, cfg.weights.sync > 0.0) {
            if cfg.frames < s.window() {
                return Err(Error::Config(format!(
                    "training windows of {} frames are shorter than the sync window {}",
                    cfg.frames,
                    s.window()
                )));
            }
        }
        if clips.is_empty() {
            return Err(Error::Precondition("no training clips".into()));
        }
        let aw = clips[0].audio.width();
        if aw != model.config.audio_width {
            return Err(Error::Config(format!(
                "model expects audio width {}, data has {aw}",
                model.config.audio_width
            )));
        }
        if !model.is_fitted()? {
            model.fit_to_clips(&clips)?;
        }
        let opt = Adam::new(
            model.store.trainable(|_| true),
            AdamConfig { lr: cfg.lr, clip_norm: Some(cfg.clip_norm).filter(|c| *c > 0.0), ..AdamConfig::default() },
        )?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let last_good = model.store.export()?;
        Ok(Self {
            model,
            sync: if cfg.weights.sync > 0.0 { sync } else { None },
            clips,
            cfg,
            opt,
            rng,
            step: 0,
            last_good,
            config_hash: String::new(),
            checkpoint_path: None,
        })
    }

    pub fn with_checkpointing(mut self, path: PathBuf, config_hash: &str) -> Self {
        self.checkpoint_path = Some(path);
        self.config_hash = config_hash.to_string();
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut c = self.model.to_checkpoint(&self.config_hash)?;
        c.step = self.step;
        c.rng = Some(RngState::capture(&self.rng));
        c.optimizer = self.opt.export()?;
        c.meta["train"] = serde_json::to_value(&self.cfg).expect("config serializes");
        Ok(c)
    }

    pub fn resume(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.model.store.import(&ckpt.params)?;
        self.opt.import(ckpt.step, &ckpt.optimizer)?;
        self.rng = ckpt
            .rng
            .as_ref()
            .ok_or_else(|| Error::Schema("checkpoint has no RNG state".into()))?
            .restore()?;
        self.step = ckpt.step;
        self.last_good = ckpt.params.clone();
        Ok(())
    }

    pub fn train_step(&mut self) -> Result<LossValues> {
        let dtype = self.model.dtype();
        let batch = sample_batch(&self.clips, self.cfg.batch, self.cfg.frames, &mut self.rng, dtype)?;
        let noise = standard_normal(&[self.cfg.batch, self.cfg.frames, self.model.config.latent], &mut self.rng, dtype)?;
        let terms = vmg_forward(
            self.model,
            &batch.landmarks,
            &batch.cond,
            &batch.audio,
            &noise,
            self.sync,
            &self.cfg.weights,
        )?;
        let values = terms.values(self.step)?;
        if self.cfg.cosine_decay {
            self.opt.set_lr(cosine_lr(self.cfg.lr, self.step, self.cfg.steps));
        }
        self.opt.backward_step(&terms.total)?;
        self.step += 1;
        Ok(values)
    }

    /// Runs until `cfg.steps`. On a non-finite loss the last good weights
    /// are restored (and written, when checkpointing) before the fault is
    /// returned.
    pub fn run(&mut self) -> Result<Vec<LossValues>> {
        let mut history = Vec::new();
        while self.step < self.cfg.steps {
            let values = match self.train_step() {
                Ok(v) => v,
                Err(e @ Error::TrainingFault { .. }) => {
                    self.model.store.import(&self.last_good)?;
                    if let Some(p) = &self.checkpoint_path {
                        let mut c = self.model.to_checkpoint(&self.config_hash)?;
                        c.step = self.step;
                        c.save(p)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            if self.step % self.cfg.log_every.max(1) == 0 || self.step == 1 {
                log::info!(
                    "vmg step {}: total {:.5} mse {:.6} kl {:.4} cont {:.6} sync {:.4}",
                    self.step,
                    values.total,
                    values.mse,
                    values.kl,
                    values.cont,
                    values.sync
                );
            }
            history.push(values);
            if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
                self.last_good = self.model.store.export()?;
                if let Some(p) = &self.checkpoint_path {
                    self.checkpoint()?.save(p)?;
                }
            }
        }
        if let Some(p) = &self.checkpoint_path {
            self.checkpoint()?.save(p)?;
        }
        Ok(history)
    }
}

pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    let p = step as f64 / total.max(1) as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * p.min(1.0)).cos())
}

/// Trains from scratch and returns the per-step loss history.
pub fn train_vmg(
    model: &VmgModel,
    clips: Vec<&Clip>,
    sync: Option<&SyncExpert>,
    cfg: VmgTrainConfig,
) -> Result<Vec<LossValues>> {
    VmgTrainer::new(model, sync, clips, cfg)?.run()
}

/// Samples the flow prior with a seeded base draw and decodes.
pub fn generate_motion(
    model: &VmgModel,
    audio: &AudioFeatureSequence,
    aus: &AuSequence,
    seed: u64,
) -> Result<LandmarkSequence> {
    if !model.is_fitted()? {
        return Err(Error::Precondition("motion model is untrained".into()));
    }
    let cond = build_conditioning(audio, aus)?;
    let t = cond.len();
    let dtype = model.dtype();
    let c = candle_core::Tensor::from_vec(cond.data().to_vec(), (1, t, cond.width()), &candle_core::Device::Cpu)?
        .to_dtype(dtype)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = standard_normal(&[1, t, model.config.latent], &mut rng, dtype)?;
    let z = model.flow_inverse(&base, &c)?;
    let out: Vec<f64> = model.decode(&z, &c)?.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    debug_assert_eq!(out.len(), t * LANDMARK_DIM);
    LandmarkSequence::from_flat(&out, cond.fps())
}

/// Mean squared error of prior samples against ground truth over clips.
pub fn generation_mse(model: &VmgModel, clips: &[&Clip], seed: u64) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, clip) in clips.iter().enumerate() {
        let g = generate_motion(model, &clip.audio, &clip.aus, seed.wrapping_add(i as u64))?;
        for (a, b) in g.to_flat().iter().zip(clip.landmarks.to_flat()) {
            total += (a - b).powi(2);
            n += 1;
        }
    }
    Ok(total / n.max(1) as f64)
}

/// MSE of predicting the training mean face for every validation frame.
pub fn mean_predictor_mse(train: &[&Clip], val: &[&Clip]) -> Result<f64> {
    let rows = pooled_rows(train)?;
    let n = (rows.landmarks.len() / LANDMARK_DIM) as f64;
    let mut mean = vec![0.0; LANDMARK_DIM];
    for r in rows.landmarks.chunks(LANDMARK_DIM) {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for clip in val {
        for r in clip.landmarks.to_flat().chunks(LANDMARK_DIM) {
            total += r.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += LANDMARK_DIM;
        }
    }
    Ok(total / count.max(1) as f64)
}
