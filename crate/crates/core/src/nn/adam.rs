use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::params::NamedArray;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug)]
struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
}

/// Adam whose moment estimates can be exported and restored, so a resumed
/// run continues bit-for-bit.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    slots: Vec<Slot>,
}

impl Adam {
    pub fn new(vars: Vec<(String, Var)>, cfg: AdamConfig) -> Result<Self> {
        if !(cfg.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        let slots = vars
            .into_iter()
            .map(|(name, var)| {
                let m = var.as_tensor().zeros_like()?;
                let v = m.clone();
                Ok(Slot { name, var, m, v })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg, step: 0, slots })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    /// Global L2 norm of the gradients that exist in `grads`.
    pub fn grad_norm(&self, grads: &GradStore) -> Result<f64> {
        let mut total = 0.0;
        for s in &self.slots {
            if let Some(g) = grads.get(s.var.as_tensor()) {
                total += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            }
        }
        Ok(total.sqrt())
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, clip_norm } = self.cfg;
        let scale = match clip_norm {
            Some(c) => {
                let n = self.grad_norm(grads)?;
                if n > c { c / n } else { 1.0 }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for s in &mut self.slots {
            let Some(g) = grads.get(s.var.as_tensor()) else { continue };
            let g = (g.detach() * scale)?;
            s.m = ((&s.m * beta1)? + (&g * (1.0 - beta1))?)?.detach();
            s.v = ((&s.v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?.detach();
            let mhat = (&s.m / bc1)?;
            let vhat = (&s.v / bc2)?;
            let upd = (mhat / (vhat.sqrt()? + eps)?)?;
            let next = (s.var.as_tensor().detach() - (upd * lr)?)?;
            s.var.set(&next)?;
        }
        Ok(())
    }

    pub fn backward_step(&mut self, loss: &Tensor) -> Result<()> {
        let grads = loss.backward()?;
        self.step(&grads)
    }

    /// Moments as `<name>.m` / `<name>.v` arrays.
    pub fn export(&self) -> Result<Vec<NamedArray>> {
        let mut out = Vec::with_capacity(self.slots.len() * 2);
        for s in &self.slots {
            out.push(NamedArray::from_tensor(&format!("{}.m", s.name), &s.m)?);
            out.push(NamedArray::from_tensor(&format!("{}.v", s.name), &s.v)?);
        }
        Ok(out)
    }

    pub fn import(&mut self, step: u64, arrays: &[NamedArray]) -> Result<()> {
        if arrays.len() != self.slots.len() * 2 {
            return Err(Error::Schema(format!(
                "optimizer state has {} arrays, expected {}",
                arrays.len(),
                self.slots.len() * 2
            )));
        }
        let find = |name: &str| {
            arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Schema(format!("optimizer state lacks `{name}`")))
        };
        for s in &mut self.slots {
            let dev = s.var.device().clone();
            let dt = s.var.dtype();
            let m = find(&format!("{}.m", s.name))?;
            let v = find(&format!("{}.v", s.name))?;
            if m.shape != s.var.dims() || v.shape != s.var.dims() {
                return Err(Error::Schema(format!("optimizer state for `{}` has wrong shape", s.name)));
            }
            s.m = m.values.to_tensor(&m.shape, &dev)?.to_dtype(dt)?;
            s.v = v.values.to_tensor(&v.shape, &dev)?.to_dtype(dt)?;
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{Init, ParamStore};
    use candle_core::DType;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minimizes_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new(DType::F64);
        let x = s.create("x", &[2], Init::Values(vec![3.0, -2.0]), &mut rng).unwrap();
        let mut opt = Adam::new(s.trainable(|_| true), AdamConfig { lr: 0.05, ..Default::default() }).unwrap();
        for _ in 0..500 {
            let loss = x.sqr().unwrap().sum_all().unwrap();
            opt.backward_step(&loss).unwrap();
        }
        assert!(s.values("x").unwrap().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new(DType::F64);
        let x = s.create("x", &[1], Init::Values(vec![1.0]), &mut rng).unwrap();
        let mut opt =
            Adam::new(s.trainable(|_| true), AdamConfig { lr: 0.1, clip_norm: None, ..Default::default() }).unwrap();
        opt.backward_step(&(x.clone() * 7.0).unwrap().sum_all().unwrap()).unwrap();
        assert!((s.values("x").unwrap()[0] - 0.9).abs() < 1e-6);
    }
}
