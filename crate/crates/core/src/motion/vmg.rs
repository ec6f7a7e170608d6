use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facs::LANDMARK_DIM;
use crate::nn::{silu, Init, ParamStore, TapConv1d};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VmgConfig {
    pub latent: usize,
    pub hidden: usize,
    /// Dilated layers per stack; dilation doubles from 1.
    pub layers: usize,
    pub kernel: usize,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub audio_width: usize,
}

impl Default for VmgConfig {
    fn default() -> Self {
        Self {
            latent: 16,
            hidden: 64,
            layers: 8,
            kernel: 3,
            flow_layers: 4,
            flow_hidden: 32,
            audio_width: 16,
        }
    }
}

impl VmgConfig {
    pub fn cond_width(&self) -> usize {
        self.audio_width + crate::facs::NUM_AUS
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.latent % 2 != 0 {
            return Err(Error::Config(format!("latent width must be even, got {}", self.latent)));
        }
        if self.hidden == 0 || self.layers == 0 || self.flow_hidden == 0 || self.audio_width == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("kernel size must be odd".into()));
        }
        Ok(())
    }
}

/// Input projection, residual dilated convolutions, output projection.
/// Tensors are channel-last `(B, T, C)`.
#[derive(Debug, Clone)]
struct DilatedStack {
    input: TapConv1d,
    layers: Vec<TapConv1d>,
    output: TapConv1d,
}

impl DilatedStack {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &VmgConfig,
        input: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let h = cfg.hidden;
        let layers = (0..cfg.layers)
            .map(|i| {
                TapConv1d::new(store, &format!("{name}.layers.{i}"), h, h, cfg.kernel, 1 << i, false, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            input: TapConv1d::new(store, &format!("{name}.input"), input, h, 1, 1, false, rng)?,
            layers,
            output: TapConv1d::new(store, &format!("{name}.output"), h, output, 1, 1, false, rng)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.input.forward(x)?;
        for l in &self.layers {
            h = (&h + l.forward(&silu(&h)?)?)?;
        }
        self.output.forward(&silu(&h)?)
    }
}

#[derive(Debug, Clone)]
struct Coupling {
    hidden: TapConv1d,
    out: TapConv1d,
    /// Even layers transform the second half conditioned on the first.
    parity: usize,
}

/// Stack of affine residual couplings mapping latents to a standard-normal
/// base. The final conditioner layer starts at zero, so an untrained flow is
/// the identity.
#[derive(Debug, Clone)]
pub struct FlowPrior {
    layers: Vec<Coupling>,
    latent: usize,
}

impl FlowPrior {
    fn new(store: &mut ParamStore, cfg: &VmgConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let half = cfg.latent / 2;
        let layers = (0..cfg.flow_layers)
            .map(|i| {
                let name = format!("flow.{i}");
                Ok(Coupling {
                    hidden: TapConv1d::new(
                        store,
                        &format!("{name}.hidden"),
                        half + cfg.cond_width(),
                        cfg.flow_hidden,
                        3,
                        1,
                        false,
                        rng,
                    )?,
                    out: TapConv1d::new(store, &format!("{name}.out"), cfg.flow_hidden, 2 * half, 3, 1, true, rng)?,
                    parity: i % 2,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers, latent: cfg.latent })
    }

    fn scale_shift(&self, layer: &Coupling, fixed: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let half = self.latent / 2;
        let h = silu(&layer.hidden.forward(&Tensor::cat(&[fixed, c], 2)?)?)?;
        let st = layer.out.forward(&h)?;
        Ok((st.narrow(2, 0, half)?.tanh()?, st.narrow(2, half, half)?))
    }

    fn halves(&self, z: &Tensor, parity: usize) -> Result<(Tensor, Tensor)> {
        let half = self.latent / 2;
        let a = z.narrow(2, 0, half)?;
        let b = z.narrow(2, half, half)?;
        Ok(if parity == 0 { (a, b) } else { (b, a) })
    }

    fn join(fixed: Tensor, moved: Tensor, parity: usize) -> Result<Tensor> {
        Ok(if parity == 0 {
            Tensor::cat(&[fixed, moved], 2)?
        } else {
            Tensor::cat(&[moved, fixed], 2)?
        })
    }

    /// Returns the base sample and per-frame log-det `(B, T)`.
    fn forward(&self, z: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, t, _) = z.dims3()?;
        let mut z = z.clone();
        let mut logdet = Tensor::zeros((b, t), z.dtype(), z.device())?;
        for layer in &self.layers {
            let (fixed, moved) = self.halves(&z, layer.parity)?;
            let (s, sh) = self.scale_shift(layer, &fixed, c)?;
            let moved = ((moved * s.exp()?)? + sh)?;
            logdet = (logdet + s.sum(2)?)?;
            z = Self::join(fixed, moved, layer.parity)?;
        }
        Ok((z, logdet))
    }

    fn inverse(&self, base: &Tensor, c: &Tensor) -> Result<Tensor> {
        let mut z = base.clone();
        for layer in self.layers.iter().rev() {
            let (fixed, moved) = self.halves(&z, layer.parity)?;
            let (s, sh) = self.scale_shift(layer, &fixed, c)?;
            let moved = ((moved - sh)? * s.neg()?.exp()?)?;
            z = Self::join(fixed, moved, layer.parity)?;
        }
        Ok(z)
    }
}

/// Per-frame Gaussian posterior, each `(B, T, Z)`; `log_sigma` is the log
/// standard deviation.
#[derive(Debug, Clone)]
pub struct PosteriorParams {
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

impl PosteriorParams {
    /// `z = mu + exp(log_sigma) * noise`
    pub fn reparameterize(&self, noise: &Tensor) -> Result<Tensor> {
        if noise.dims() != self.mu.dims() {
            return Err(Error::Shape(format!(
                "noise shape {:?} does not match posterior {:?}",
                noise.dims(),
                self.mu.dims()
            )));
        }
        Ok((&self.mu + (self.log_sigma.exp()? * noise)?)?)
    }

    /// `log q(z)` summed over latent dims, `(B, T)`.
    pub fn log_density(&self, z: &Tensor) -> Result<Tensor> {
        let zd = self.mu.dim(2)? as f64;
        let u = ((z - &self.mu)? * self.log_sigma.neg()?.exp()?)?;
        let per = ((u.sqr()? * -0.5)? - &self.log_sigma)?;
        Ok((per.sum(2)? - 0.5 * zd * (2.0 * std::f64::consts::PI).ln())?)
    }
}

/// Variational motion generator: dilated-conv encoder/decoder with a flow
/// prior. Landmarks and conditioning are standardized with statistics fitted
/// on training data and stored alongside the weights.
#[derive(Debug)]
pub struct VmgModel {
    pub config: VmgConfig,
    pub store: ParamStore,
    encoder: DilatedStack,
    decoder: DilatedStack,
    pub flow: FlowPrior,
    lm_mean: Tensor,
    lm_std: Tensor,
    c_mean: Tensor,
    c_std: Tensor,
}

pub const VMG_KIND: &str = "vmg";

impl VmgModel {
    pub fn new(config: VmgConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(dtype);
        let cw = config.cond_width();
        let z = config.latent;
        let encoder = DilatedStack::new(&mut store, "encoder", &config, LANDMARK_DIM + cw, 2 * z, &mut rng)?;
        let decoder = DilatedStack::new(&mut store, "decoder", &config, z + cw, LANDMARK_DIM, &mut rng)?;
        let flow = FlowPrior::new(&mut store, &config, &mut rng)?;
        let lm_mean = store.create("buffer.landmark_mean", &[LANDMARK_DIM], Init::Zeros, &mut rng)?;
        let lm_std = store.create("buffer.landmark_std", &[LANDMARK_DIM], Init::Ones, &mut rng)?;
        let c_mean = store.create("buffer.cond_mean", &[cw], Init::Zeros, &mut rng)?;
        let c_std = store.create("buffer.cond_std", &[cw], Init::Ones, &mut rng)?;
        store.create("buffer.fitted", &[1], Init::Zeros, &mut rng)?;
        Ok(Self { config, store, encoder, decoder, flow, lm_mean, lm_std, c_mean, c_std })
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn is_fitted(&self) -> Result<bool> {
        Ok(self.store.values("buffer.fitted")?[0] > 0.5)
    }

    /// Sets standardization statistics from row-major `N x 324` landmark and
    /// `N x C` conditioning rows.
    pub fn fit_normalization(&self, landmarks: &[f64], cond: &[f64]) -> Result<()> {
        let (lm, ls) = column_stats(landmarks, LANDMARK_DIM, 1e-4)?;
        let (cm, cs) = column_stats(cond, self.config.cond_width(), 1e-3)?;
        self.store.set_values("buffer.landmark_mean", &lm)?;
        self.store.set_values("buffer.landmark_std", &ls)?;
        self.store.set_values("buffer.cond_mean", &cm)?;
        self.store.set_values("buffer.cond_std", &cs)?;
        self.store.set_values("buffer.fitted", &[1.0])?;
        Ok(())
    }

    fn check_inputs(&self, lead: &Tensor, c: &Tensor, width: usize, what: &str) -> Result<()> {
        let (b, t, w) = lead.dims3()?;
        if w != width {
            return Err(Error::Shape(format!("{what} width {w}, expected {width}")));
        }
        let (cb, ct, cw) = c.dims3()?;
        if (cb, ct) != (b, t) {
            return Err(Error::Shape(format!("{what} is {b}x{t} frames, conditioning is {cb}x{ct}")));
        }
        if cw != self.config.cond_width() {
            return Err(Error::Shape(format!(
                "conditioning width {cw}, expected {}",
                self.config.cond_width()
            )));
        }
        Ok(())
    }

    /// Standardized conditioning.
    pub fn cond_norm(&self, c: &Tensor) -> Result<Tensor> {
        Ok(c.broadcast_sub(&self.c_mean)?.broadcast_div(&self.c_std)?)
    }

    /// `l: (B, T, 324)`, `c: (B, T, C)`.
    pub fn encode(&self, l: &Tensor, c: &Tensor) -> Result<PosteriorParams> {
        self.check_inputs(l, c, LANDMARK_DIM, "landmarks")?;
        let ln = l.broadcast_sub(&self.lm_mean)?.broadcast_div(&self.lm_std)?;
        let x = Tensor::cat(&[&ln, &self.cond_norm(c)?], 2)?;
        let out = self.encoder.forward(&x)?;
        let z = self.config.latent;
        Ok(PosteriorParams {
            mu: out.narrow(2, 0, z)?.contiguous()?,
            log_sigma: out.narrow(2, z, z)?.contiguous()?,
        })
    }

    /// `z: (B, T, Z)` → landmarks `(B, T, 324)`.
    pub fn decode(&self, z: &Tensor, c: &Tensor) -> Result<Tensor> {
        self.check_inputs(z, c, self.config.latent, "latent")?;
        let x = Tensor::cat(&[z, &self.cond_norm(c)?], 2)?;
        let out = self.decoder.forward(&x)?;
        Ok(out.broadcast_mul(&self.lm_std)?.broadcast_add(&self.lm_mean)?)
    }

    /// Latent → base; returns `(z_base, log_det)` with shapes `(B, T, Z)` and `(B, T)`.
    pub fn flow_forward(&self, z: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_inputs(z, c, self.config.latent, "latent")?;
        self.flow.forward(z, &self.cond_norm(c)?)
    }

    pub fn flow_inverse(&self, base: &Tensor, c: &Tensor) -> Result<Tensor> {
        self.check_inputs(base, c, self.config.latent, "latent")?;
        self.flow.inverse(base, &self.cond_norm(c)?)
    }

    /// `log p(z | c) = log N(z_base; 0, I) + log_det`, per frame `(B, T)`.
    pub fn prior_log_density(&self, z: &Tensor, c: &Tensor) -> Result<Tensor> {
        let (base, ld) = self.flow_forward(z, c)?;
        Ok((standard_normal_log_density(&base)? + ld)?)
    }
}

/// `log N(x; 0, I)` summed over the last dim.
pub fn standard_normal_log_density(x: &Tensor) -> Result<Tensor> {
    let d = x.dim(candle_core::D::Minus1)? as f64;
    Ok(((x.sqr()?.sum(candle_core::D::Minus1)? * -0.5)? - 0.5 * d * (2.0 * std::f64::consts::PI).ln())?)
}

fn column_stats(rows: &[f64], width: usize, floor: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rows.is_empty() || rows.len() % width != 0 {
        return Err(Error::Shape(format!("{} values do not form rows of width {width}", rows.len())));
    }
    let n = (rows.len() / width) as f64;
    let mut mean = vec![0.0; width];
    for r in rows.chunks(width) {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; width];
    for r in rows.chunks(width) {
        var.iter_mut().zip(r.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2) / n);
    }
    Ok((mean, var.into_iter().map(|v| v.sqrt().max(floor)).collect()))
}
