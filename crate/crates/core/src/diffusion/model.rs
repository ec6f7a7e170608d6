use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::diffusion::blocks::{replicate_frames, upsample2, PoseGuider, ReferenceFusion, ResBlock, TemporalAttention};
use crate::diffusion::schedule::{DiffusionSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::nn::{scalar, silu, sinusoidal, Conv2d, GroupNorm, Init, Linear, ParamStore};

pub const M2V_KIND: &str = "m2v";
const PHASE1_STEPS: &str = "unet.buffer.phase1_steps";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct M2vConfig {
    /// Square grayscale frames.
    pub image_size: usize,
    /// Autoencoder downsampling factor, a power of two.
    pub ae_factor: usize,
    pub latent_channels: usize,
    pub ae_width: usize,
    /// Channel count per UNet level; one 2x downsampling between levels.
    pub channels: Vec<usize>,
    pub groups: usize,
    pub heads: usize,
    pub time_dim: usize,
    pub raster_size: usize,
    pub schedule: ScheduleKind,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddim_steps: usize,
    pub chunk_frames: usize,
    pub context_frames: usize,
}

impl Default for M2vConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            ae_factor: 4,
            latent_channels: 4,
            ae_width: 16,
            channels: vec![32, 64],
            groups: 8,
            heads: 4,
            time_dim: 32,
            raster_size: 64,
            schedule: ScheduleKind::Linear,
            schedule_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            ddim_steps: 40,
            chunk_frames: 16,
            context_frames: 2,
        }
    }
}

impl M2vConfig {
    pub fn latent_size(&self) -> usize {
        self.image_size / self.ae_factor.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.ae_factor;
        if f < 2 || !f.is_power_of_two() || self.image_size % f != 0 {
            return Err(Error::Config(format!("autoencoder factor {f} must be a power of two >= 2 dividing the image size")));
        }
        if self.channels.is_empty() || self.channels.iter().any(|&c| c == 0 || c % self.groups != 0 || (2 * c) % self.heads != 0 || c % self.heads != 0) {
            return Err(Error::Config("level channels must be positive multiples of the group and head counts".into()));
        }
        let levels = self.channels.len();
        if self.latent_size() % (1 << (levels - 1)) != 0 {
            return Err(Error::Config(format!("latent size {} cannot be halved {} times", self.latent_size(), levels - 1)));
        }
        if self.ae_width == 0 || self.latent_channels == 0 {
            return Err(Error::Config("invalid autoencoder width".into()));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::Config("time embedding width must be even".into()));
        }
        if self.chunk_frames == 0 {
            return Err(Error::Config("chunk_frames must be positive".into()));
        }
        if self.context_frames >= self.chunk_frames {
            return Err(Error::Config("context_frames must be smaller than chunk_frames".into()));
        }
        crate::diffusion::blocks::guider_stride_count(self.raster_size, self.latent_size())?;
        self.schedule()?.ddim_timesteps(self.ddim_steps)?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.schedule, self.schedule_steps, self.beta_start, self.beta_end)
    }
}

/// Small convolutional autoencoder standing in for a pretrained image VAE.
/// Frames in `[0, 1]` are mapped to `[-1, 1]` before encoding.
#[derive(Debug, Clone)]
pub struct ToyAutoencoder {
    enc_in: Conv2d,
    enc_down: Vec<Conv2d>,
    enc_out: Conv2d,
    dec_in: Conv2d,
    dec_up: Vec<Conv2d>,
    dec_out: Conv2d,
    scale: Tensor,
    trained: Tensor,
}

impl ToyAutoencoder {
    fn new(store: &mut ParamStore, cfg: &M2vConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let w = cfg.ae_width;
        let levels = cfg.ae_factor.trailing_zeros() as usize;
        let widths: Vec<usize> = (0..=levels).map(|i| w * (1 << i).min(2)).collect();
        let enc_in = Conv2d::same3(store, "ae.encoder.conv_in", 1, widths[0], rng)?;
        let mut enc_down = Vec::new();
        for i in 0..levels {
            enc_down.push(Conv2d::new(store, &format!("ae.encoder.down{i}"), widths[i], widths[i + 1], 4, 2, [1; 4], false, rng)?);
        }
        let enc_out = Conv2d::pointwise(store, "ae.encoder.conv_out", widths[levels], cfg.latent_channels, false, rng)?;
        let dec_in = Conv2d::same3(store, "ae.decoder.conv_in", cfg.latent_channels, widths[levels], rng)?;
        let mut dec_up = Vec::new();
        for i in (0..levels).rev() {
            dec_up.push(Conv2d::same3(store, &format!("ae.decoder.up{i}"), widths[i + 1], widths[i], rng)?);
        }
        let dec_out = Conv2d::same3(store, "ae.decoder.conv_out", widths[0], 1, rng)?;
        let scale = store.create("ae.buffer.latent_scale", &[1], Init::Ones, rng)?;
        let trained = store.create("ae.buffer.trained", &[1], Init::Zeros, rng)?;
        Ok(Self { enc_in, enc_down, enc_out, dec_in, dec_up, dec_out, scale, trained })
    }

    /// Unscaled latent of `(N, 1, H, W)` frames in `[0, 1]`.
    pub fn encode_raw(&self, img: &Tensor) -> Result<Tensor> {
        let mut h = silu(&self.enc_in.forward(&((img * 2.0)? - 1.0)?)?)?;
        for d in &self.enc_down {
            h = silu(&d.forward(&h)?)?;
        }
        self.enc_out.forward(&h)
    }

    pub fn decode_raw(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = silu(&self.dec_in.forward(z)?)?;
        for u in &self.dec_up {
            h = upsample2(&silu(&u.forward(&h)?)?)?;
        }
        Ok(((self.dec_out.forward(&h)? + 1.0)? * 0.5)?)
    }

    /// Latent multiplied by the fitted scale.
    pub fn encode(&self, img: &Tensor) -> Result<Tensor> {
        Ok(self.encode_raw(img)?.broadcast_mul(&self.scale.reshape((1, 1, 1, 1))?)?)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decode_raw(&z.broadcast_div(&self.scale.reshape((1, 1, 1, 1))?)?)
    }

    pub fn latent_scale(&self) -> Result<f64> {
        scalar(&self.scale.reshape(())?)
    }

    pub fn is_trained(&self) -> Result<bool> {
        Ok(scalar(&self.trained.reshape(())?)? > 0.5)
    }
}

#[derive(Debug, Clone)]
pub struct ResTransBlock {
    pub res: ResBlock,
    pub fusion: ReferenceFusion,
    pub temporal: TemporalAttention,
}

/// Which conditioning paths are active in a denoiser call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Paths {
    pub fusion: bool,
    pub temporal: bool,
}

impl Paths {
    pub const ALL: Paths = Paths { fusion: true, temporal: true };
    pub const BASE: Paths = Paths { fusion: false, temporal: false };
}

impl ResTransBlock {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        cfg: &M2vConfig,
        temb: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            res: ResBlock::new(store, &format!("{name}.res"), input, output, Some(temb), cfg.groups, rng)?,
            fusion: ReferenceFusion::new(store, &format!("{name}.fusion"), output, cfg.heads, rng)?,
            temporal: TemporalAttention::new(store, &format!("{name}.temporal"), output, cfg.heads, rng)?,
        })
    }

    fn forward(&self, x: &Tensor, temb: &Tensor, reference: Option<&Tensor>, batch: usize, paths: Paths) -> Result<Tensor> {
        let frames = x.dim(0)? / batch;
        let mut h = self.res.forward(x, Some(temb))?;
        if let (true, Some(r)) = (paths.fusion, reference) {
            h = self.fusion.forward(&h, r, frames)?;
        }
        if paths.temporal {
            h = self.temporal.forward(&h, batch)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct Unet {
    conv_in: Conv2d,
    time1: Linear,
    time2: Linear,
    time_dim: usize,
    down: Vec<ResTransBlock>,
    downsample: Vec<Conv2d>,
    mid: ResBlock,
    up: Vec<ResTransBlock>,
    upsample: Vec<Conv2d>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl Unet {
    fn new(store: &mut ParamStore, cfg: &M2vConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let ch = &cfg.channels;
        let l = ch.len();
        let temb = 4 * cfg.time_dim;
        let conv_in = Conv2d::same3(store, "unet.conv_in", cfg.latent_channels, ch[0], rng)?;
        let time1 = Linear::new(store, "unet.time.0", cfg.time_dim, temb, false, rng)?;
        let time2 = Linear::new(store, "unet.time.1", temb, temb, false, rng)?;
        let mut down = Vec::new();
        let mut downsample = Vec::new();
        for i in 0..l {
            let input = if i == 0 { ch[0] } else { ch[i - 1] };
            if i > 0 {
                downsample.push(Conv2d::new(store, &format!("unet.downsample.{}", i - 1), input, input, 3, 2, [1; 4], false, rng)?);
            }
            down.push(ResTransBlock::new(store, &format!("unet.down.{i}"), input, ch[i], cfg, temb, rng)?);
        }
        let mid = ResBlock::new(store, "unet.mid", ch[l - 1], ch[l - 1], Some(temb), cfg.groups, rng)?;
        let mut up = Vec::new();
        let mut upsample = Vec::new();
        for i in 0..l {
            let below = if i == l - 1 { ch[l - 1] } else { ch[i + 1] };
            up.push(ResTransBlock::new(store, &format!("unet.up.{i}"), below + ch[i], ch[i], cfg, temb, rng)?);
            if i > 0 {
                upsample.push(Conv2d::same3(store, &format!("unet.upsample.{}", i - 1), ch[i], ch[i], rng)?);
            }
        }
        let norm_out = GroupNorm::new(store, "unet.norm_out", ch[0], cfg.groups, rng)?;
        let conv_out = Conv2d::same3(store, "unet.conv_out", ch[0], cfg.latent_channels, rng)?;
        Ok(Self { conv_in, time1, time2, time_dim: cfg.time_dim, down, downsample, mid, up, upsample, norm_out, conv_out })
    }

    pub fn levels(&self) -> usize {
        self.down.len()
    }

    /// `x: (b*t, c_z, h, w)`, one step per batch entry, reference features
    /// `(b, c_k, h_k, w_k)` per level.
    fn forward(&self, x: &Tensor, steps: &[usize], reference: Option<&[Tensor]>, paths: Paths) -> Result<Tensor> {
        let b = steps.len();
        let pos: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
        let e = sinusoidal(&pos, self.time_dim, x.dtype(), x.device())?;
        let e = self.time2.forward(&silu(&self.time1.forward(&e)?)?)?;
        let frames = x.dim(0)? / b;
        let temb = replicate_frames(&e, frames)?;
        let r = |i: usize| reference.map(|r| &r[i]);
        let mut h = self.conv_in.forward(x)?;
        let mut skips = Vec::with_capacity(self.levels());
        for i in 0..self.levels() {
            if i > 0 {
                h = self.downsample[i - 1].forward(&h)?;
            }
            h = self.down[i].forward(&h, &temb, r(i), b, paths)?;
            skips.push(h.clone());
        }
        h = self.mid.forward(&h, Some(&temb))?;
        for i in (0..self.levels()).rev() {
            h = Tensor::cat(&[&h, &skips[i]], 1)?;
            h = self.up[i].forward(&h, &temb, r(i), b, paths)?;
            if i > 0 {
                h = self.upsample[i - 1].forward(&upsample2(&h)?)?;
            }
        }
        self.conv_out.forward(&silu(&self.norm_out.forward(&h)?)?)
    }
}

/// Mirror of the UNet down path applied to the clean reference latent.
#[derive(Debug, Clone)]
pub struct ReferenceNet {
    conv_in: Conv2d,
    downsample: Vec<Conv2d>,
    blocks: Vec<ResBlock>,
}

impl ReferenceNet {
    fn new(store: &mut ParamStore, cfg: &M2vConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let ch = &cfg.channels;
        let conv_in = Conv2d::same3(store, "refnet.conv_in", cfg.latent_channels, ch[0], rng)?;
        let mut downsample = Vec::new();
        let mut blocks = Vec::new();
        for i in 0..ch.len() {
            let input = if i == 0 { ch[0] } else { ch[i - 1] };
            if i > 0 {
                downsample.push(Conv2d::new(store, &format!("refnet.downsample.{}", i - 1), input, input, 3, 2, [1; 4], false, rng)?);
            }
            blocks.push(ResBlock::new(store, &format!("refnet.down.{i}"), input, ch[i], None, cfg.groups, rng)?);
        }
        Ok(Self { conv_in, downsample, blocks })
    }

    pub fn levels(&self) -> usize {
        self.blocks.len()
    }

    /// `z: (b, c_z, h, w)`, one map per level.
    pub fn forward(&self, z: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = self.conv_in.forward(z)?;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (i, blk) in self.blocks.iter().enumerate() {
            if i > 0 {
                h = self.downsample[i - 1].forward(&h)?;
            }
            h = blk.forward(&h, None)?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

/// Autoencoder, denoiser, ReferenceNet and the two pose guiders in one
/// parameter store. Name prefixes: `ae.`, `unet.`, `refnet.`, `pose_mouth.`,
/// `pose_face.`; temporal weights contain `.temporal.`.
pub struct M2vModel {
    pub config: M2vConfig,
    pub store: ParamStore,
    pub ae: ToyAutoencoder,
    pub unet: Unet,
    pub refnet: ReferenceNet,
    pub pose_mouth: PoseGuider,
    pub pose_face: PoseGuider,
}

pub fn is_autoencoder(name: &str) -> bool {
    name.starts_with("ae.")
}

pub fn is_temporal(name: &str) -> bool {
    name.contains(".temporal.")
}

impl M2vModel {
    pub fn new(config: M2vConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(dtype);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ae = ToyAutoencoder::new(&mut store, &config, &mut rng)?;
        let unet = Unet::new(&mut store, &config, &mut rng)?;
        let refnet = ReferenceNet::new(&mut store, &config, &mut rng)?;
        store.create(PHASE1_STEPS, &[1], Init::Zeros, &mut rng)?;
        let (r, l, c) = (config.raster_size, config.latent_size(), config.latent_channels);
        let pose_mouth = PoseGuider::new(&mut store, "pose_mouth", r, l, c, &mut rng)?;
        let pose_face = PoseGuider::new(&mut store, "pose_face", r, l, c, &mut rng)?;
        Ok(Self { config, store, ae, unet, refnet, pose_mouth, pose_face })
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn phase1_steps(&self) -> Result<u64> {
        Ok(self.store.values(PHASE1_STEPS)?[0] as u64)
    }

    pub(crate) fn set_phase1_steps(&self, steps: u64) -> Result<()> {
        self.store.set_values(PHASE1_STEPS, &[steps as f64])
    }

    /// `reference: (b, 1, H, W)` frames to per-level features.
    pub fn reference_features(&self, reference: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c, h, w) = reference.dims4()?;
        let s = self.config.image_size;
        if c != 1 || h != s || w != s {
            return Err(Error::Shape(format!("reference image {:?}, expected (b, 1, {s}, {s})", reference.dims())));
        }
        let z = self.ae.encode(reference)?;
        self.refnet.forward(&z)
    }

    /// Sum of both guider outputs for `(b, t, 1, R, R)` mouth and face rasters.
    pub fn pose_residual(&self, mouth: &Tensor, face: &Tensor) -> Result<Tensor> {
        let dims = mouth.dims().to_vec();
        if dims.len() != 5 || face.dims() != dims.as_slice() {
            return Err(Error::Shape(format!("rasters {:?} and {:?} must both be (b, t, 1, R, R)", mouth.dims(), face.dims())));
        }
        let (b, t) = (dims[0], dims[1]);
        let flat = |x: &Tensor| x.reshape((b * t, dims[2], dims[3], dims[4]));
        let y = (self.pose_mouth.forward(&flat(mouth)?)? + self.pose_face.forward(&flat(face)?)?)?;
        let (_, c, h, w) = y.dims4()?;
        Ok(y.reshape((b, t, c, h, w))?)
    }

    /// Predicted noise for `z_t: (b, t, c_z, h, w)`. The pose residual, if
    /// any, is added to `z_t` at the input; any motion-context frames are
    /// already part of the `t` axis.
    pub fn denoise_eps(
        &self,
        z_t: &Tensor,
        steps: &[usize],
        reference: Option<&[Tensor]>,
        pose: Option<&Tensor>,
        paths: Paths,
    ) -> Result<Tensor> {
        let (b, t, c, h, w) = z_t.dims5()?;
        let l = self.config.latent_size();
        if c != self.config.latent_channels || h != l || w != l || steps.len() != b || t == 0 {
            return Err(Error::Shape(format!("noisy latent {:?} with {} steps", z_t.dims(), steps.len())));
        }
        if let Some(r) = reference {
            if r.len() != self.unet.levels() {
                return Err(Error::Shape(format!("{} reference levels for a {}-level denoiser", r.len(), self.unet.levels())));
            }
        }
        let x = match pose {
            Some(p) => (z_t + p)?,
            None => z_t.clone(),
        };
        let y = self.unet.forward(&x.reshape((b * t, c, h, w))?, steps, reference, paths)?;
        Ok(y.reshape((b, t, c, h, w))?)
    }

    pub fn to_checkpoint(&self, config_hash: &str, phase: &str) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(M2V_KIND, config_hash, self.store.export()?);
        c.meta = serde_json::json!({ "config": self.config, "phase": phase });
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != M2V_KIND {
            return Err(Error::Schema(format!("expected a `{M2V_KIND}` checkpoint, got `{}`", ckpt.kind)));
        }
        let config: M2vConfig = serde_json::from_value(ckpt.meta["config"].clone())
            .map_err(|e| Error::Schema(format!("m2v checkpoint config: {e}")))?;
        let dtype = ckpt.params.first().map(|a| a.dtype).unwrap_or(DType::F32);
        let m = Self::new(config, dtype, 0)?;
        m.store.import(&ckpt.params)?;
        Ok(m)
    }
}

/// Training phase recorded in an m2v checkpoint.
pub fn checkpoint_phase(ckpt: &Checkpoint) -> &str {
    ckpt.meta["phase"].as_str().unwrap_or("")
}
