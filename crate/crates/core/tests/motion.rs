mod common;

use autalk_core::checkpoint::Checkpoint;
use autalk_core::facs::*;
use autalk_core::ingest::*;
use autalk_core::motion::loss::kl_samples;
use autalk_core::motion::sync::{cosine_rows, sliding_windows};
use autalk_core::motion::*;
use autalk_core::nn::scalar;
use candle_core::{DType, Device, Tensor};
use common::randn;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_vec(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn small_cfg() -> VmgConfig {
    VmgConfig { latent: 4, hidden: 16, layers: 3, kernel: 3, flow_layers: 2, flow_hidden: 8, audio_width: 4 }
}

fn data() -> ToyDataset {
    let opts = SynthOptions { num_clips: 6, frames_per_clip: 32, image_size: 16, ..SynthOptions::default() };
    synth_rig_generate(&RigSpec::procedural(4, 0.005, 3).unwrap(), &opts).unwrap()
}

fn small_train(steps: u64) -> VmgTrainConfig {
    VmgTrainConfig {
        steps,
        batch: 4,
        log_every: 1000,
        checkpoint_every: 0,
        weights: LossWeights { sync: 0.0, ..LossWeights::default() },
        ..VmgTrainConfig::default()
    }
}

#[test]
fn encoder_shapes_for_sixteen_frames_and_one_frame() {
    let m = VmgModel::new(VmgConfig::default(), DType::F32, 0).unwrap();
    for t in [16, 1] {
        let l = Tensor::zeros((1, t, 324), DType::F32, &Device::Cpu).unwrap();
        let c = Tensor::zeros((1, t, m.config.cond_width()), DType::F32, &Device::Cpu).unwrap();
        let post = m.encode(&l, &c).unwrap();
        assert_eq!(post.mu.dims(), &[1, t, 16]);
        assert_eq!(post.log_sigma.dims(), &[1, t, 16]);
    }
}

#[test]
fn zero_weights_give_bias_outputs() {
    let m = VmgModel::new(small_cfg(), DType::F64, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (name, _) in m.store.trainable(|n| n.starts_with("encoder") || n.starts_with("decoder")) {
        let n = m.store.values(&name).unwrap().len();
        let v = if name.ends_with("bias") { (0..n).map(|_| rng.random::<f64>()).collect() } else { vec![0.0; n] };
        m.store.set_values(&name, &v).unwrap();
    }
    let c = randn(&[1, 6, 22], &mut rng);
    let post = m.encode(&randn(&[1, 6, 324], &mut rng), &c).unwrap();
    let mu = to_vec(&post.mu);
    assert!(mu.chunks(4).all(|r| r == &mu[..4]));
    let out = to_vec(&m.decode(&randn(&[1, 6, 4], &mut rng), &c).unwrap());
    assert!(out.chunks(324).all(|r| r == &out[..324]));
}

#[test]
fn reparameterization() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mu = randn(&[1, 3, 4], &mut rng);
    let post = PosteriorParams { mu: mu.clone(), log_sigma: randn(&[1, 3, 4], &mut rng) };
    assert_eq!(to_vec(&post.reparameterize(&mu.zeros_like().unwrap()).unwrap()), to_vec(&mu));
    let tight = PosteriorParams { mu: mu.clone(), log_sigma: (mu.ones_like().unwrap() * -60.0).unwrap() };
    let z = to_vec(&tight.reparameterize(&randn(&[1, 3, 4], &mut rng)).unwrap());
    assert!(z.iter().zip(to_vec(&mu)).all(|(a, b)| (a - b).abs() < 1e-20));

    let n = 10_000;
    let unit = PosteriorParams {
        mu: Tensor::ones((1, n, 1), DType::F64, &Device::Cpu).unwrap(),
        log_sigma: Tensor::zeros((1, n, 1), DType::F64, &Device::Cpu).unwrap(),
    };
    let (m, v) = mean_var(&to_vec(&unit.reparameterize(&randn(&[1, n, 1], &mut rng)).unwrap()));
    assert!((m - 1.0).abs() < 0.05, "mean {m}");
    assert!((v.sqrt() - 1.0).abs() < 0.05, "std {}", v.sqrt());
}

#[test]
fn fresh_flow_is_the_identity() {
    let m = VmgModel::new(small_cfg(), DType::F64, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = randn(&[2, 5, 4], &mut rng);
    let c = randn(&[2, 5, 22], &mut rng);
    let (base, ld) = m.flow_forward(&z, &c).unwrap();
    assert_eq!(to_vec(&base), to_vec(&z));
    assert!(to_vec(&ld).iter().all(|v| *v == 0.0));
    let zero = Tensor::zeros((1, 1, 4), DType::F64, &Device::Cpu).unwrap();
    let lp = to_vec(&m.prior_log_density(&zero, &c.narrow(0, 0, 1).unwrap().narrow(1, 0, 1).unwrap()).unwrap())[0];
    assert!((lp + 2.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
}

#[test]
fn trained_flow_round_trips() {
    let toy = common::vmg_toy(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = randn(&[1, 5, 4], &mut rng);
    let (base, _) = toy.model.flow_forward(&z, &toy.cond).unwrap();
    let back = to_vec(&toy.model.flow_inverse(&base, &toy.cond).unwrap());
    let err = back.iter().zip(to_vec(&z)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn decode_is_deterministic_with_landmark_shape() {
    let toy = common::vmg_toy(5);
    let a = toy.model.decode(&toy.noise, &toy.cond).unwrap();
    assert_eq!(a.dims(), &[1, 5, 324]);
    assert_eq!(to_vec(&a), to_vec(&toy.model.decode(&toy.noise, &toy.cond).unwrap()));
}

#[test]
fn loss_term_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let frame = randn(&[1, 1, 324], &mut rng);
    let still = frame.broadcast_as((1, 7, 324)).unwrap().contiguous().unwrap();
    assert_eq!(scalar(&mse_loss(&still, &still).unwrap()).unwrap(), 0.0);
    assert_eq!(scalar(&continuity_loss(&still).unwrap()).unwrap(), 0.0);

    // One unit step in every coordinate between frames 3 and 4.
    let t = 7;
    let v: Vec<f64> = (0..t).flat_map(|f| vec![if f >= 4 { 1.0 } else { 0.0 }; 324]).collect();
    let jump = Tensor::from_vec(v, (1, t, 324), &Device::Cpu).unwrap();
    assert!((scalar(&continuity_loss(&jump).unwrap()).unwrap() - 1.0 / (t - 1) as f64).abs() < 1e-15);

    let e = randn(&[3, 8], &mut rng);
    let same = to_vec(&(cosine_rows(&e, &e).unwrap().neg().unwrap() + 1.0).unwrap());
    let anti = to_vec(&(cosine_rows(&e, &e.neg().unwrap()).unwrap().neg().unwrap() + 1.0).unwrap());
    assert!(same.iter().all(|v| v.abs() < 1e-12));
    assert!(anti.iter().all(|v| (v - 2.0).abs() < 1e-12));

    assert!((LossWeights::default().combine(1.0, 1.0, 1.0, 1.0) - 8.51).abs() < 1e-12);
}

#[test]
fn kl_matches_zero_for_matching_distributions() {
    let m = VmgModel::new(small_cfg(), DType::F64, 0).unwrap();
    let n = 10_000;
    let zeros = Tensor::zeros((1, n, 4), DType::F64, &Device::Cpu).unwrap();
    let post = PosteriorParams { mu: zeros.clone(), log_sigma: zeros };
    let c = Tensor::zeros((1, n, 22), DType::F64, &Device::Cpu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let kl = to_vec(&kl_samples(&m, &post, &[randn(&[1, n, 4], &mut rng)], &c).unwrap()[0]);
    let mean = kl.iter().sum::<f64>() / n as f64;
    assert!(mean.abs() < 0.02, "{mean}");
}

/// Across many posterior draws the standardized error of the averaged
/// single-sample estimate against the closed form behaves like N(0, 1).
#[test]
fn kl_errors_are_standard_normal() {
    let (z, n, pairs) = (4, 2000, 60);
    let m = VmgModel::new(small_cfg(), DType::F64, 0).unwrap();
    let c = Tensor::zeros((1, n, 22), DType::F64, &Device::Cpu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut scores = Vec::new();
    for _ in 0..pairs {
        let mu: Vec<f64> = (0..z).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sigma: Vec<f64> = (0..z).map(|_| rng.random_range(0.3..1.7)).collect();
        let closed: f64 = mu.iter().zip(&sigma).map(|(m, s)| 0.5 * (s * s + m * m - 1.0) - s.ln()).sum();
        let row = |v: Vec<f64>| Tensor::from_vec(v, (1, 1, z), &Device::Cpu).unwrap().broadcast_as((1, n, z)).unwrap().contiguous().unwrap();
        let post = PosteriorParams { mu: row(mu), log_sigma: row(sigma.iter().map(|s| s.ln()).collect()) };
        let d = to_vec(&kl_samples(&m, &post, &[randn(&[1, n, z], &mut rng)], &c).unwrap()[0]);
        let (mean, var) = mean_var(&d);
        scores.push((mean - closed) / (var / n as f64).sqrt());
    }
    let (mean, var) = mean_var(&scores);
    assert!(mean.abs() < 0.45, "mean z {mean}");
    assert!((0.5..1.6).contains(&var), "var z {var}");
}

#[test]
fn training_is_seed_deterministic() {
    let d = data();
    let run = || {
        let m = VmgModel::new(small_cfg(), DType::F32, 0).unwrap();
        train_vmg(&m, d.train(), None, small_train(100)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), 100);
    assert!((a[99].total - b[99].total).abs() < 1e-6);
    let first = a[..10].iter().map(|v| v.mse).sum::<f64>();
    let last = a[90..].iter().map(|v| v.mse).sum::<f64>();
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn sync_term_needs_an_expert_only_when_weighted() {
    let d = data();
    let m = VmgModel::new(small_cfg(), DType::F32, 0).unwrap();
    let mut cfg = small_train(2);
    assert!(train_vmg(&m, d.train(), None, cfg.clone()).is_ok());
    cfg.weights.sync = 0.01;
    let e = train_vmg(&m, d.train(), None, cfg).unwrap_err();
    assert_eq!(e.category(), "precondition");
}

#[test]
fn resume_matches_uninterrupted_training() {
    let d = data();
    let full = VmgModel::new(small_cfg(), DType::F32, 0).unwrap();
    let hist = train_vmg(&full, d.train(), None, small_train(20)).unwrap();

    let part = VmgModel::new(small_cfg(), DType::F32, 0).unwrap();
    let mut first = VmgTrainer::new(&part, None, d.train(), small_train(20)).unwrap();
    for _ in 0..10 {
        first.train_step().unwrap();
    }
    let ckpt = Checkpoint::from_bytes(&first.checkpoint().unwrap().to_bytes()).unwrap();
    let resumed = VmgModel::from_checkpoint(&ckpt).unwrap();
    let mut second = VmgTrainer::new(&resumed, None, d.train(), small_train(20)).unwrap();
    second.resume(&ckpt).unwrap();
    let mut last = None;
    while second.step_count() < 20 {
        last = Some(second.train_step().unwrap());
    }
    assert_eq!(last.unwrap().total, hist[19].total);
}

fn sync_cfg(steps: usize) -> SyncConfig {
    SyncConfig { embed: 16, hidden: 16, audio_width: 4, steps, batch: 16, ..SyncConfig::default() }
}

fn clip_tensors(clip: &Clip) -> (Tensor, Tensor) {
    let t = clip.len();
    let l = Tensor::from_vec(clip.landmarks.to_flat(), (1, t, 324), &Device::Cpu).unwrap().to_dtype(DType::F32).unwrap();
    let a = Tensor::from_vec(clip.audio.data().to_vec(), (1, t, 4), &Device::Cpu).unwrap().to_dtype(DType::F32).unwrap();
    (l, a)
}

#[test]
fn sync_expert_separates_shifted_audio() {
    let opts = SynthOptions { num_clips: 12, frames_per_clip: 48, image_size: 16, ..SynthOptions::default() };
    let d = synth_rig_generate(&RigSpec::procedural(4, 0.005, 9).unwrap(), &opts).unwrap();
    let (expert, report) = train_sync_expert(&d.train(), sync_cfg(300)).unwrap();
    let smooth = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(smooth(&report.positive_loss[80..100]) < smooth(&report.positive_loss[..20]));

    let (mut aligned, mut shifted) = (Vec::new(), Vec::new());
    for clip in d.val() {
        let (l, a) = clip_tensors(clip);
        let t = clip.len() - 10;
        let lw = sliding_windows(&l.narrow(1, 0, t).unwrap(), 5).unwrap();
        let aw = sliding_windows(&a.narrow(1, 0, t).unwrap(), 5).unwrap();
        let sw = sliding_windows(&a.narrow(1, 10, t).unwrap(), 5).unwrap();
        aligned.extend(to_vec(&expert.score(&lw, &aw).unwrap()));
        shifted.extend(to_vec(&expert.score(&lw, &sw).unwrap()));
    }
    assert!(mean_var(&aligned).0 > mean_var(&shifted).0);
}

#[test]
fn sync_expert_embeddings() {
    let d = data();
    let (expert, _) = train_sync_expert(&d.train(), sync_cfg(3)).unwrap();
    let (l, a) = clip_tensors(&d.clips[0]);
    let lw = sliding_windows(&l, 5).unwrap();
    let e = expert.embed_landmarks(&lw).unwrap();
    assert!(to_vec(&cosine_rows(&e, &e).unwrap()).iter().all(|c| (c - 1.0).abs() < 1e-5));
    assert_eq!(to_vec(&e), to_vec(&expert.embed_landmarks(&lw).unwrap()));
    let back = SyncExpert::from_checkpoint(&Checkpoint::from_bytes(&expert.to_checkpoint("h").unwrap().to_bytes()).unwrap()).unwrap();
    let aw = sliding_windows(&a, 5).unwrap();
    assert_eq!(to_vec(&back.score(&lw, &aw).unwrap()), to_vec(&expert.score(&lw, &aw).unwrap()));
}

fn inputs(t: usize, seed: u64) -> (AudioFeatureSequence, AuSequence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let audio = AudioFeatureSequence::new((0..t * 4).map(|_| rng.random::<f64>()).collect(), 4, 25.0).unwrap();
    let aus = AuSequence::constant(emotion_to_au_vector(EmotionLabel::Happy, 2.0).unwrap(), t, 25.0).unwrap();
    (audio, aus)
}

#[test]
fn generation_contract() {
    let d = data();
    let m = VmgModel::new(small_cfg(), DType::F32, 0).unwrap();
    let (a, u) = inputs(16, 0);
    assert_eq!(generate_motion(&m, &a, &u, 0).unwrap_err().category(), "precondition");
    train_vmg(&m, d.train(), None, small_train(5)).unwrap();
    for t in [1, 16, 100] {
        let (a, u) = inputs(t, t as u64);
        assert_eq!(generate_motion(&m, &a, &u, 1).unwrap().len(), t);
    }
    let (a2, u2) = inputs(20, 5);
    let first = generate_motion(&m, &a, &u, 7).unwrap();
    generate_motion(&m, &a2, &u2, 8).unwrap();
    assert_eq!(generate_motion(&m, &a, &u, 7).unwrap(), first);
    assert_ne!(generate_motion(&m, &a, &u, 9).unwrap(), first);
}

#[test]
fn checkpoint_round_trip_keeps_outputs() {
    let d = data();
    let m = VmgModel::new(small_cfg(), DType::F32, 0).unwrap();
    train_vmg(&m, d.train(), None, small_train(3)).unwrap();
    let back = VmgModel::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint("h").unwrap().to_bytes()).unwrap()).unwrap();
    let (a, u) = inputs(16, 1);
    assert_eq!(generate_motion(&back, &a, &u, 3).unwrap(), generate_motion(&m, &a, &u, 3).unwrap());
}
