#![allow(dead_code)]

use autalk_core::diffusion::{diffusion_loss, DiffusionBatch, M2vConfig, M2vModel, Paths};
use autalk_core::motion::{vmg_forward, LossTerms, LossWeights, SyncConfig, SyncExpert, VmgConfig, VmgModel};
use autalk_core::nn::{scalar, ParamStore};
use candle_core::{DType, Device, Tensor};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

/// Largest relative error between backprop and central differences over
/// `per_tensor` random coordinates of every trainable tensor.
pub fn max_relative_error(
    store: &ParamStore,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
    f: &dyn Fn() -> Tensor,
) -> (f64, usize) {
    let loss = f();
    let grads = loss.backward().unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (name, var) in store.trainable(|_| true) {
        let base = store.values(&name).unwrap();
        let g: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
            None => vec![0.0; base.len()],
        };
        for _ in 0..per_tensor {
            let i = rng.random_range(0..base.len());
            let mut v = base.clone();
            v[i] = base[i] + FD_STEP;
            store.set_values(&name, &v).unwrap();
            let up = scalar(&f()).unwrap();
            v[i] = base[i] - FD_STEP;
            store.set_values(&name, &v).unwrap();
            let down = scalar(&f()).unwrap();
            store.set_values(&name, &base).unwrap();
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = (g[i] - numeric).abs() / g[i].abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(err);
            checked += 1;
        }
    }
    (worst, checked)
}

pub struct VmgToy {
    pub model: VmgModel,
    pub expert: SyncExpert,
    pub landmarks: Tensor,
    pub cond: Tensor,
    pub audio: Tensor,
    pub noise: Tensor,
}

/// Z = 4, T = 5, 64-bit, every layer moved off its initialization.
pub fn vmg_toy(seed: u64) -> VmgToy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = VmgConfig { latent: 4, hidden: 8, layers: 2, kernel: 3, flow_layers: 2, flow_hidden: 8, audio_width: 3 };
    let model = VmgModel::new(cfg.clone(), DType::F64, seed).unwrap();
    model.store.perturb(0.2, &mut rng, |_| true).unwrap();
    let expert = SyncExpert::new(
        SyncConfig { window: 3, embed: 6, hidden: 6, audio_width: 3, ..SyncConfig::default() },
        DType::F64,
    )
    .unwrap();
    let t = 5;
    let landmarks = ((uniform(&[1, t, 324], &mut rng) * 0.2).unwrap() + 0.4).unwrap();
    let cond = randn(&[1, t, cfg.cond_width()], &mut rng);
    let audio = cond.narrow(2, 0, 3).unwrap().contiguous().unwrap();
    let noise = randn(&[1, t, 4], &mut rng);
    VmgToy { model, expert, landmarks, cond, audio, noise }
}

impl VmgToy {
    pub fn terms(&self) -> LossTerms {
        let w = LossWeights { coordinate_scale: 1.0, sync: 1.0, ..LossWeights::default() };
        vmg_forward(&self.model, &self.landmarks, &self.cond, &self.audio, &self.noise, Some(&self.expert), &w).unwrap()
    }
}

pub fn tiny_m2v_config() -> M2vConfig {
    M2vConfig {
        image_size: 8,
        ae_factor: 2,
        latent_channels: 2,
        ae_width: 4,
        channels: vec![4, 8],
        groups: 2,
        heads: 2,
        time_dim: 4,
        raster_size: 8,
        schedule_steps: 10,
        ddim_steps: 5,
        chunk_frames: 4,
        context_frames: 1,
        ..M2vConfig::default()
    }
}

pub struct DiffusionToy {
    pub model: M2vModel,
    pub batch: DiffusionBatch,
}

pub fn diffusion_toy(seed: u64) -> DiffusionToy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = M2vModel::new(tiny_m2v_config(), DType::F64, seed).unwrap();
    model.store.perturb(0.2, &mut rng, |_| true).unwrap();
    let (t, c, l, r) = (3, 2, 4, 8);
    let batch = DiffusionBatch {
        latents: randn(&[1, t, c, l, l], &mut rng),
        context: 1,
        reference: randn(&[1, c, l, l], &mut rng),
        mouth: uniform(&[1, t, 1, r, r], &mut rng),
        face: uniform(&[1, t, 1, r, r], &mut rng),
        steps: vec![7],
        eps: randn(&[1, t, c, l, l], &mut rng),
        keep_reference: vec![true],
        keep_pose: vec![true],
    };
    DiffusionToy { model, batch }
}

impl DiffusionToy {
    pub fn loss(&self) -> Tensor {
        let sched = self.model.config.schedule().unwrap();
        diffusion_loss(&self.model, &sched, &self.batch, Paths::ALL).unwrap()
    }
}

/// `(term, max relative error, coordinates checked)` for the four motion
/// terms and the diffusion loss.
pub fn gradient_suite() -> Vec<(&'static str, f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let toy = vmg_toy(5);
    let mut out = Vec::new();
    let pick: [(&str, fn(&LossTerms) -> &Tensor); 4] =
        [("mse", |t| &t.mse), ("kl", |t| &t.kl), ("cont", |t| &t.cont), ("sync", |t| &t.sync)];
    for (name, get) in pick {
        let (e, n) = max_relative_error(&toy.model.store, 3, &mut rng, &|| get(&toy.terms()).clone());
        out.push((name, e, n));
    }
    let d = diffusion_toy(6);
    let (e, n) = max_relative_error(&d.model.store, 2, &mut rng, &|| d.loss());
    out.push(("diffusion", e, n));
    out
}
