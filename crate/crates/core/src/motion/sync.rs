//! Audio/landmark synchrony expert: two mirrored window encoders whose
//! cosine similarity scores whether a landmark window matches an audio
//! window.

use candle_core::{DType, Device, Tensor, D};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::facs::{LandmarkPartition, LANDMARK_DIM};
use crate::ingest::Clip;
use crate::motion::data::pooled_rows;
use crate::nn::{scalar, silu, Adam, AdamConfig, Init, Linear, ParamStore, TapConv1d};

pub const SYNC_KIND: &str = "sync";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncConfig {
    pub window: usize,
    pub embed: usize,
    pub hidden: usize,
    pub margin: f64,
    pub audio_width: usize,
    /// Landmark indices fed to the landmark encoder.
    pub points: Vec<usize>,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            window: 5,
            embed: 64,
            hidden: 64,
            margin: 0.2,
            audio_width: 16,
            points: LandmarkPartition::default().mouth().to_vec(),
            steps: 4000,
            batch: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct WindowEncoder {
    c1: TapConv1d,
    c2: TapConv1d,
    head: Linear,
}

impl WindowEncoder {
    fn new(store: &mut ParamStore, name: &str, input: usize, cfg: &SyncConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            c1: TapConv1d::new(store, &format!("{name}.conv1"), input, cfg.hidden, 3, 1, false, rng)?,
            c2: TapConv1d::new(store, &format!("{name}.conv2"), cfg.hidden, cfg.hidden, 3, 1, false, rng)?,
            head: Linear::new(store, &format!("{name}.head"), cfg.hidden, cfg.embed, false, rng)?,
        })
    }

    /// `(N, W, F)` standardized → `(N, E)`
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = silu(&self.c1.forward(x)?)?;
        let h = silu(&self.c2.forward(&h)?)?;
        self.head.forward(&h.mean(1)?)
    }
}

#[derive(Debug)]
pub struct SyncExpert {
    pub config: SyncConfig,
    pub store: ParamStore,
    landmark_enc: WindowEncoder,
    audio_enc: WindowEncoder,
    /// Contiguous `(start, len)` column runs covering the selected points.
    column_runs: Vec<(usize, usize)>,
    lm_mean: Tensor,
    lm_std: Tensor,
    a_mean: Tensor,
    a_std: Tensor,
}

/// Row-wise cosine similarity of `(N, E)` tensors.
pub fn cosine_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let dot = (a * b)?.sum(D::Minus1)?;
    let na = (a.sqr()?.sum(D::Minus1)? + 1e-12)?.sqrt()?;
    let nb = (b.sqr()?.sum(D::Minus1)? + 1e-12)?.sqrt()?;
    Ok((dot / (na * nb)?)?)
}

/// All stride-1 windows of `(B, T, F)` stacked to `(B * (T - W + 1), W, F)`.
pub fn sliding_windows(x: &Tensor, w: usize) -> Result<Tensor> {
    let (_, t, _) = x.dims3()?;
    if t < w {
        return Err(Error::Shape(format!("{t} frames cannot hold a {w}-frame window")));
    }
    let parts = (0..=t - w).map(|s| x.narrow(1, s, w)).collect::<candle_core::Result<Vec<_>>>()?;
    Ok(Tensor::cat(&parts, 0)?)
}

impl SyncExpert {
    pub fn new(config: SyncConfig, dtype: DType) -> Result<Self> {
        if config.window == 0 || config.embed == 0 || config.hidden == 0 || config.points.is_empty() {
            return Err(Error::Config("sync expert widths must be positive".into()));
        }
        if let Some(&bad) = config.points.iter().find(|&&i| i >= LANDMARK_DIM / 2) {
            return Err(Error::Config(format!("landmark index {bad} out of range")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new(dtype);
        let lw = config.points.len() * 2;
        let landmark_enc = WindowEncoder::new(&mut store, "landmark", lw, &config, &mut rng)?;
        let audio_enc = WindowEncoder::new(&mut store, "audio", config.audio_width, &config, &mut rng)?;
        let lm_mean = store.create("buffer.landmark_mean", &[lw], Init::Zeros, &mut rng)?;
        let lm_std = store.create("buffer.landmark_std", &[lw], Init::Ones, &mut rng)?;
        let a_mean = store.create("buffer.audio_mean", &[config.audio_width], Init::Zeros, &mut rng)?;
        let a_std = store.create("buffer.audio_std", &[config.audio_width], Init::Ones, &mut rng)?;
        let mut column_runs: Vec<(usize, usize)> = Vec::new();
        for &p in &config.points {
            match column_runs.last_mut() {
                Some((start, len)) if *start + *len == 2 * p => *len += 2,
                _ => column_runs.push((2 * p, 2)),
            }
        }
        Ok(Self { config, store, landmark_enc, audio_enc, column_runs, lm_mean, lm_std, a_mean, a_std })
    }

    pub fn window(&self) -> usize {
        self.config.window
    }

    fn fit_normalization(&self, clips: &[&Clip]) -> Result<()> {
        let rows = pooled_rows(clips)?;
        let cols: Vec<usize> = self.config.points.iter().flat_map(|&p| [2 * p, 2 * p + 1]).collect();
        let picked: Vec<f64> = rows
            .landmarks
            .chunks(LANDMARK_DIM)
            .flat_map(|r| cols.iter().map(|&c| r[c]).collect::<Vec<_>>())
            .collect();
        let (lm, ls) = stats(&picked, cols.len());
        let (am, as_) = stats(&rows.audio, self.config.audio_width);
        self.store.set_values("buffer.landmark_mean", &lm)?;
        self.store.set_values("buffer.landmark_std", &ls)?;
        self.store.set_values("buffer.audio_mean", &am)?;
        self.store.set_values("buffer.audio_std", &as_)?;
        Ok(())
    }

    fn check_window(&self, x: &Tensor, width: usize, what: &str) -> Result<()> {
        let (_, w, f) = x.dims3()?;
        if w != self.config.window || f != width {
            return Err(Error::Shape(format!(
                "{what} window is {w}x{f}, expected {}x{width}",
                self.config.window
            )));
        }
        Ok(())
    }

    /// Selected point columns of `(·, ·, 324)`.
    fn select_points(&self, x: &Tensor) -> Result<Tensor> {
        let parts = self
            .column_runs
            .iter()
            .map(|&(s, l)| x.narrow(2, s, l))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(if parts.len() == 1 { parts[0].clone() } else { Tensor::cat(&parts, 2)? })
    }

    fn embed_selected(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.broadcast_sub(&self.lm_mean)?.broadcast_div(&self.lm_std)?;
        self.landmark_enc.forward(&x)
    }

    /// Full landmark windows `(N, W, 324)` → `(N, E)`.
    pub fn embed_landmarks(&self, windows: &Tensor) -> Result<Tensor> {
        self.check_window(windows, LANDMARK_DIM, "landmark")?;
        self.embed_selected(&self.select_points(windows)?)
    }

    /// Audio windows `(N, W, D)` → `(N, E)`.
    pub fn embed_audio(&self, windows: &Tensor) -> Result<Tensor> {
        self.check_window(windows, self.config.audio_width, "audio")?;
        let x = windows.broadcast_sub(&self.a_mean)?.broadcast_div(&self.a_std)?;
        self.audio_enc.forward(&x)
    }

    /// Cosine sync score per window pair, `(N,)`.
    pub fn score(&self, landmarks: &Tensor, audio: &Tensor) -> Result<Tensor> {
        cosine_rows(&self.embed_landmarks(landmarks)?, &self.embed_audio(audio)?)
    }

    /// `mean(1 - cos)` over all sliding windows of `(B, T, ·)` sequences.
    pub fn sequence_loss(&self, landmarks: &Tensor, audio: &Tensor) -> Result<Tensor> {
        let w = self.config.window;
        let lw = sliding_windows(&self.select_points(landmarks)?, w)?;
        let aw = sliding_windows(audio, w)?;
        self.check_window(&aw, self.config.audio_width, "audio")?;
        let s = cosine_rows(&self.embed_selected(&lw)?, &self.embed_audio(&aw)?)?;
        Ok((s.neg()? + 1.0)?.mean_all()?)
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(SYNC_KIND, config_hash, self.store.export()?);
        c.meta = serde_json::json!({ "config": self.config });
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != SYNC_KIND {
            return Err(Error::Schema(format!("expected a `{SYNC_KIND}` checkpoint, got `{}`", ckpt.kind)));
        }
        let config: SyncConfig = serde_json::from_value(ckpt.meta["config"].clone())
            .map_err(|e| Error::Schema(format!("sync checkpoint config: {e}")))?;
        let dtype = ckpt.params.first().map(|a| a.dtype).unwrap_or(DType::F32);
        let s = Self::new(config, dtype)?;
        s.store.import(&ckpt.params)?;
        Ok(s)
    }
}

fn stats(rows: &[f64], width: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (rows.len() / width).max(1) as f64;
    let mut mean = vec![0.0; width];
    rows.chunks(width).for_each(|r| mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n));
    let mut var = vec![0.0; width];
    rows.chunks(width)
        .for_each(|r| var.iter_mut().zip(r.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2) / n));
    (mean, var.into_iter().map(|v| v.sqrt().max(1e-4)).collect())
}

/// One landmark/audio window pair.
struct Pair {
    landmarks: Vec<f64>,
    audio: Vec<f64>,
}

struct ClipRows {
    landmarks: Vec<f64>,
    audio: Vec<f64>,
    audio_width: usize,
    len: usize,
}

impl ClipRows {
    fn new(clip: &Clip) -> Self {
        Self {
            landmarks: clip.landmarks.to_flat(),
            audio: clip.audio.data().to_vec(),
            audio_width: clip.audio.width(),
            len: clip.len(),
        }
    }

    fn pair(&self, lm_start: usize, audio_start: usize, w: usize) -> Pair {
        let aw = self.audio_width;
        Pair {
            landmarks: self.landmarks[lm_start * LANDMARK_DIM..(lm_start + w) * LANDMARK_DIM].to_vec(),
            audio: self.audio[audio_start * aw..(audio_start + w) * aw].to_vec(),
        }
    }
}

fn stack_pairs(pairs: &[Pair], w: usize, aw: usize, dtype: DType) -> Result<(Tensor, Tensor)> {
    let n = pairs.len();
    let l: Vec<f64> = pairs.iter().flat_map(|p| p.landmarks.iter().copied()).collect();
    let a: Vec<f64> = pairs.iter().flat_map(|p| p.audio.iter().copied()).collect();
    Ok((
        Tensor::from_vec(l, (n, w, LANDMARK_DIM), &Device::Cpu)?.to_dtype(dtype)?,
        Tensor::from_vec(a, (n, w, aw), &Device::Cpu)?.to_dtype(dtype)?,
    ))
}

/// Draws an offset at least `w` frames away from `s`; `None` when the clip
/// is too short to have one.
fn shifted_start(rng: &mut ChaCha8Rng, s: usize, w: usize, len: usize) -> Option<usize> {
    let last = len - w;
    let candidates: Vec<usize> = (0..=last).filter(|&o| o.abs_diff(s) >= w).collect();
    (!candidates.is_empty()).then(|| candidates[rng.random_range(0..candidates.len())])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncTrainReport {
    pub positive_loss: Vec<f64>,
    pub negative_loss: Vec<f64>,
}

/// Contrastive training: aligned windows are pulled to cosine 1, windows
/// shifted by at least `W` frames are pushed below the margin.
pub fn train_sync_expert(clips: &[&Clip], config: SyncConfig) -> Result<(SyncExpert, SyncTrainReport)> {
    let w = config.window;
    let usable: Vec<&Clip> = clips.iter().copied().filter(|c| c.len() >= 2 * w).collect();
    if usable.is_empty() {
        return Err(Error::Config(format!("no clip is long enough for {w}-frame positive and negative windows")));
    }
    if usable[0].audio.width() != config.audio_width {
        return Err(Error::Config(format!(
            "sync expert expects audio width {}, data has {}",
            config.audio_width,
            usable[0].audio.width()
        )));
    }
    let expert = SyncExpert::new(config.clone(), DType::F32)?;
    expert.fit_normalization(&usable)?;
    let rows: Vec<ClipRows> = usable.iter().map(|c| ClipRows::new(c)).collect();
    let mut opt = Adam::new(
        expert.store.trainable(|_| true),
        AdamConfig { lr: config.lr, ..AdamConfig::default() },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_5E7C);
    let mut report = SyncTrainReport { positive_loss: Vec::new(), negative_loss: Vec::new() };
    for step in 0..config.steps as u64 {
        let mut pos = Vec::with_capacity(config.batch);
        let mut neg = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            let clip = &rows[rng.random_range(0..rows.len())];
            let s = rng.random_range(0..=clip.len - w);
            pos.push(clip.pair(s, s, w));
            let o = shifted_start(&mut rng, s, w, clip.len).expect("clip holds two windows");
            neg.push(clip.pair(s, o, w));
        }
        let (pl, pa) = stack_pairs(&pos, w, config.audio_width, DType::F32)?;
        let (nl, na) = stack_pairs(&neg, w, config.audio_width, DType::F32)?;
        let lp = (expert.score(&pl, &pa)?.neg()? + 1.0)?.mean_all()?;
        let ln = (expert.score(&nl, &na)? - config.margin)?.relu()?.mean_all()?;
        let total = (&lp + &ln)?;
        let (p, n) = (scalar(&lp)?, scalar(&ln)?);
        if !p.is_finite() || !n.is_finite() {
            return Err(Error::TrainingFault { term: "sync".into(), step });
        }
        report.positive_loss.push(p);
        report.negative_loss.push(n);
        if step % 100 == 0 {
            log::info!("sync step {step}: positive {p:.4} negative {n:.4}");
        }
        opt.backward_step(&total)?;
    }
    Ok((expert, report))
}

/// Held-out discrimination: every window position is scored in sync and
/// against audio `shift` frames later; returns the Mann-Whitney AUC.
pub fn sync_auc(expert: &SyncExpert, clips: &[&Clip], shift: usize) -> Result<f64> {
    let w = expert.window();
    let aw = expert.config.audio_width;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for clip in clips {
        if clip.len() < w + shift {
            continue;
        }
        let rows = ClipRows::new(clip);
        for s in 0..=clip.len() - w - shift {
            pos.push(rows.pair(s, s, w));
            neg.push(rows.pair(s, s + shift, w));
        }
    }
    if pos.is_empty() {
        return Err(Error::Config(format!("no clip holds a {w}-frame window shifted by {shift}")));
    }
    let dtype = expert.store.dtype();
    let (pl, pa) = stack_pairs(&pos, w, aw, dtype)?;
    let (nl, na) = stack_pairs(&neg, w, aw, dtype)?;
    let sp: Vec<f64> = expert.score(&pl, &pa)?.to_dtype(DType::F64)?.to_vec1()?;
    let sn: Vec<f64> = expert.score(&nl, &na)?.to_dtype(DType::F64)?.to_vec1()?;
    Ok(auc(&sp, &sn))
}

/// `P(pos > neg) + 0.5 P(pos = neg)` over all pairs.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}
