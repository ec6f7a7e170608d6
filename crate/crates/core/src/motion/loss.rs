use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::sync::SyncExpert;
use crate::motion::vmg::{PosteriorParams, VmgModel};
use crate::nn::scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub mse: f64,
    pub kl: f64,
    pub cont: f64,
    pub sync: f64,
    /// Landmark terms are measured on coordinates multiplied by this factor
    /// (pixels of a frame this many pixels wide).
    pub coordinate_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mse: 5.0, kl: 0.5, cont: 3.0, sync: 0.01, coordinate_scale: 512.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.mse, self.kl, self.cont, self.sync].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.coordinate_scale > 0.0) || !self.coordinate_scale.is_finite() {
            return Err(Error::Config("coordinate scale must be positive".into()));
        }
        Ok(())
    }

    pub fn combine(&self, mse: f64, kl: f64, cont: f64, sync: f64) -> f64 {
        self.mse * mse + self.kl * kl + self.cont * cont + self.sync * sync
    }
}

#[derive(Debug, Clone)]
pub struct LossTerms {
    pub mse: Tensor,
    pub cont: Tensor,
    pub kl: Tensor,
    pub sync: Tensor,
    pub total: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub mse: f64,
    pub cont: f64,
    pub kl: f64,
    pub sync: f64,
    pub total: f64,
}

impl LossTerms {
    /// Host values; a non-finite term becomes a training fault naming it.
    pub fn values(&self, step: u64) -> Result<LossValues> {
        let v = LossValues {
            mse: scalar(&self.mse)?,
            cont: scalar(&self.cont)?,
            kl: scalar(&self.kl)?,
            sync: scalar(&self.sync)?,
            total: scalar(&self.total)?,
        };
        for (term, x) in [("mse", v.mse), ("cont", v.cont), ("kl", v.kl), ("sync", v.sync), ("total", v.total)] {
            if !x.is_finite() {
                return Err(Error::TrainingFault { term: term.into(), step });
            }
        }
        Ok(v)
    }
}

/// Mean over batch, frames and the 324 coordinates.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.dims(), target.dims())));
    }
    Ok((pred - target)?.sqr()?.mean_all()?)
}

/// Mean squared frame-to-frame change of the prediction over the `T - 1`
/// consecutive pairs, batch and coordinates. Zero for a single frame.
pub fn continuity_loss(pred: &Tensor) -> Result<Tensor> {
    let t = pred.dim(1)?;
    if t < 2 {
        return Ok(Tensor::zeros((), pred.dtype(), pred.device())?);
    }
    let d = (pred.narrow(1, 1, t - 1)? - pred.narrow(1, 0, t - 1)?)?;
    Ok(d.sqr()?.mean_all()?)
}

/// Single-sample `log q(z | L, c) - log p(z | c)`, summed over latent dims
/// and averaged over frames and batch.
pub fn kl_estimate(model: &VmgModel, post: &PosteriorParams, z: &Tensor, c: &Tensor) -> Result<Tensor> {
    let lq = post.log_density(z)?;
    let lp = model.prior_log_density(z, c)?;
    Ok((lq - lp)?.mean_all()?)
}

/// Per-frame single-sample KL estimates `(B, T)` for each of the given noise
/// draws; the mean over draws is the n-sample estimator.
pub fn kl_samples(model: &VmgModel, post: &PosteriorParams, noises: &[Tensor], c: &Tensor) -> Result<Vec<Tensor>> {
    noises
        .iter()
        .map(|n| {
            let z = post.reparameterize(n)?;
            Ok((post.log_density(&z)? - model.prior_log_density(&z, c)?)?)
        })
        .collect()
}

/// Assembles all four terms. The sync term needs an expert only when its
/// weight is non-zero.
#[allow(clippy::too_many_arguments)]
pub fn vmg_loss(
    model: &VmgModel,
    target: &Tensor,
    pred: &Tensor,
    post: &PosteriorParams,
    z: &Tensor,
    c: &Tensor,
    audio: &Tensor,
    sync: Option<&SyncExpert>,
    weights: &LossWeights,
) -> Result<LossTerms> {
    let k = weights.coordinate_scale;
    let (mse, cont) = if k == 1.0 {
        (mse_loss(pred, target)?, continuity_loss(pred)?)
    } else {
        let p = (pred * k)?;
        (mse_loss(&p, &(target * k)?)?, continuity_loss(&p)?)
    };
    let kl = kl_estimate(model, post, z, c)?;
    let sync = if weights.sync > 0.0 {
        let expert = sync.ok_or_else(|| {
            Error::Precondition("sync loss weight is non-zero but no sync expert is loaded".into())
        })?;
        expert.sequence_loss(pred, audio)?
    } else {
        Tensor::zeros((), pred.dtype(), pred.device())?
    };
    let total = ((((&mse * weights.mse)? + (&kl * weights.kl)?)? + (&cont * weights.cont)?)? + (&sync * weights.sync)?)?;
    Ok(LossTerms { mse, cont, kl, sync, total })
}

/// Encode, sample with the given standard-normal noise, decode, and score.
pub fn vmg_forward(
    model: &VmgModel,
    landmarks: &Tensor,
    cond: &Tensor,
    audio: &Tensor,
    noise: &Tensor,
    sync: Option<&SyncExpert>,
    weights: &LossWeights,
) -> Result<LossTerms> {
    let post = model.encode(landmarks, cond)?;
    let z = post.reparameterize(noise)?;
    let pred = model.decode(&z, cond)?;
    vmg_loss(model, landmarks, &pred, &post, &z, cond, audio, sync, weights)
}
