use std::str::FromStr;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `beta` linear from `beta_start` to `beta_end`.
    Linear,
    /// Squared-cosine `alpha_bar`, betas capped at 0.999.
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!("unknown schedule kind `{other}` (expected linear or cosine)"))),
        }
    }
}

/// Steps are 1-based; `alpha_bar(0) == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    kind: ScheduleKind,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!("invalid beta range {beta_start}..{beta_end}")));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps).map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64).collect()
        };
        Ok(Self::from_betas(ScheduleKind::Linear, &betas))
    }

    pub fn cosine(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        let s = 0.008;
        let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let betas: Vec<f64> =
            (0..steps).map(|i| (1.0 - f(i as f64 + 1.0) / f(i as f64)).clamp(1e-8, 0.999)).collect();
        Ok(Self::from_betas(ScheduleKind::Cosine, &betas))
    }

    pub fn new(kind: ScheduleKind, steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        match kind {
            ScheduleKind::Linear => Self::linear(steps, beta_start, beta_end),
            ScheduleKind::Cosine => Self::cosine(steps),
        }
    }

    fn from_betas(kind: ScheduleKind, betas: &[f64]) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Self { kind, alphas, alpha_bars }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alphas[t - 1])
    }

    /// Accepts `t == 0`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidInput(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// `sqrt(ab_t) z0 + sqrt(1 - ab_t) eps`.
    pub fn q_sample(&self, z0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        if z0.dims() != eps.dims() {
            return Err(Error::Shape(format!("z0 {:?} vs eps {:?}", z0.dims(), eps.dims())));
        }
        let ab = self.alpha_bars[t - 1];
        Ok(((z0 * ab.sqrt())? + (eps * (1.0 - ab).sqrt())?)?)
    }

    /// One step per leading-axis entry.
    pub fn q_sample_batch(&self, z0: &Tensor, ts: &[usize], eps: &Tensor) -> Result<Tensor> {
        if z0.dims() != eps.dims() {
            return Err(Error::Shape(format!("z0 {:?} vs eps {:?}", z0.dims(), eps.dims())));
        }
        let b = z0.dim(0)?;
        if ts.len() != b {
            return Err(Error::Shape(format!("{} steps for a batch of {b}", ts.len())));
        }
        let mut a = Vec::with_capacity(b);
        let mut s = Vec::with_capacity(b);
        for &t in ts {
            let ab = self.alpha_bar(t)?;
            a.push(ab.sqrt());
            s.push((1.0 - ab).sqrt());
        }
        let mut shape = vec![1; z0.rank()];
        shape[0] = b;
        let coef = |v: Vec<f64>| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, shape.clone(), &Device::Cpu)?.to_dtype(z0.dtype())?)
        };
        Ok((z0.broadcast_mul(&coef(a)?)? + eps.broadcast_mul(&coef(s)?)?)?)
    }

    /// Descending steps `t_k = ceil(k T / n)`, `k = n..1`.
    pub fn ddim_timesteps(&self, n: usize) -> Result<Vec<usize>> {
        let total = self.steps();
        if n == 0 || n > total {
            return Err(Error::Config(format!("{n} sampling steps do not fit a {total}-step schedule")));
        }
        Ok((1..=n).rev().map(|k| (k * total).div_ceil(n)).collect())
    }

    /// Deterministic update from `t` to `t_prev` given the predicted noise.
    pub fn ddim_step(&self, z: &Tensor, eps: &Tensor, t: usize, t_prev: usize) -> Result<Tensor> {
        let ab = self.alpha_bar(t)?;
        let ab_prev = self.alpha_bar(t_prev)?;
        let x0 = ((z - (eps * (1.0 - ab).sqrt())?)? / ab.sqrt())?;
        if t_prev == 0 {
            return Ok(x0);
        }
        Ok(((x0 * ab_prev.sqrt())? + (eps * (1.0 - ab_prev).sqrt())?)?)
    }
}

/// Runs the eta = 0 chain from `z_T` with any noise predictor
/// `eps_fn(z_t, t)` and returns the final clean estimate.
pub fn ddim_sample_with<F>(sched: &DiffusionSchedule, z_t: Tensor, num_steps: usize, mut eps_fn: F) -> Result<Tensor>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    let ts = sched.ddim_timesteps(num_steps)?;
    let mut z = z_t;
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        let eps = eps_fn(&z, t)?;
        if eps.dims() != z.dims() {
            return Err(Error::Shape(format!("noise prediction {:?} vs latent {:?}", eps.dims(), z.dims())));
        }
        z = sched.ddim_step(&z, &eps, t, t_prev)?;
    }
    Ok(z)
}
