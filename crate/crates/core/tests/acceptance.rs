//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs without the libtest harness so the lines always print.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use autalk_core::config::RunConfig;
use autalk_core::diffusion::train::frames_tensor;
use autalk_core::diffusion::{
    boundary_stats, ddim_sample_with, infer_pipeline, is_autoencoder, is_temporal, sample_latents, train_autoencoder,
    train_phase1, train_phase2, CheckpointTarget, InferenceInputs, M2vConfig, M2vModel, Paths, SampleOptions,
};
use autalk_core::facs::{
    emotion_to_aus, layout, ActionUnitId, AuSequence, AuVector, EmotionLabel, LandmarkFrame, LandmarkPartition,
    LandmarkSequence,
};
use autalk_core::image_buf::Image;
use autalk_core::ingest::{synth_rig_generate, Clip, RigSpec, ToyDataset};
use autalk_core::metrics::{frechet_distance, lmd, psnr, ssim, EmbeddingSet, LmdRegion};
use autalk_core::motion::loss::kl_samples;
use autalk_core::motion::{
    generate_motion, generation_mse, mean_predictor_mse, sync_auc, train_sync_expert, train_vmg, PosteriorParams,
    SyncExpert, VmgConfig, VmgModel,
};
use candle_core::{DType, Device, Tensor};
use common::{randn, uniform};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn all_frames(clips: &[&Clip]) -> Vec<Image> {
    clips.iter().flat_map(|c| c.frames.iter().cloned()).collect()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_dtype(DType::F64).unwrap().to_scalar().unwrap()
}

fn to_vec(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

// 1
fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let report = common::gradient_suite();
    let elapsed = t0.elapsed();
    let worst = report.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = report.iter().map(|(n, e, k)| format!("{n} {e:.1e} ({k})")).collect::<Vec<_>>().join(", ");
    outcome(worst < 1e-4 && elapsed < Duration::from_secs(60), format!("max rel err {worst:.2e} < 1e-4 [{detail}], {elapsed:.1?} < 60s"))
}

// 2
fn flow_prior() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_inv = 0.0f64;
    let mut worst_det = 0.0f64;
    for z_dim in [2, 4, 6] {
        let cfg = VmgConfig { latent: z_dim, hidden: 16, layers: 2, flow_layers: 4, flow_hidden: 16, audio_width: 4, ..VmgConfig::default() };
        let model = VmgModel::new(cfg.clone(), DType::F64, 3).unwrap();
        model.store.perturb(0.3, &mut rng, |n| n.starts_with("flow.")).unwrap();
        let z = randn(&[1, 1000, z_dim], &mut rng);
        let c = randn(&[1, 1000, cfg.cond_width()], &mut rng);
        let (base, _) = model.flow_forward(&z, &c).unwrap();
        worst_inv = worst_inv.max(max_abs_diff(&z, &model.flow_inverse(&base, &c).unwrap()));

        // Whole-sequence Jacobian of a 3-frame window by central differences.
        let t = 3;
        for _ in 0..5 {
            let z = randn(&[1, t, z_dim], &mut rng);
            let c = randn(&[1, t, cfg.cond_width()], &mut rng);
            let (_, logdet) = model.flow_forward(&z, &c).unwrap();
            let analytic: f64 = to_vec(&logdet).iter().sum();
            let n = t * z_dim;
            let zv = to_vec(&z);
            let h = 1e-6;
            let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
            for j in 0..n {
                let mut up = zv.clone();
                let mut dn = zv.clone();
                up[j] += h;
                dn[j] -= h;
                let f = |v: Vec<f64>| to_vec(&model.flow_forward(&Tensor::from_vec(v, (1, t, z_dim), &Device::Cpu).unwrap(), &c).unwrap().0);
                let (fu, fd) = (f(up), f(dn));
                for i in 0..n {
                    jac[(i, j)] = (fu[i] - fd[i]) / (2.0 * h);
                }
            }
            worst_det = worst_det.max((jac.determinant().abs().ln() - analytic).abs());
        }
    }
    outcome(worst_inv < 1e-5 && worst_det < 1e-3, format!("max |z - inv(fwd(z))| {worst_inv:.1e} < 1e-5, log-det error {worst_det:.1e} < 1e-3 (Z = 2, 4, 6)"))
}

// 3
fn kl_estimator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = 4;
    let cfg = VmgConfig { latent: z, audio_width: 4, ..VmgConfig::default() };
    let model = VmgModel::new(cfg.clone(), DType::F64, 0).unwrap();
    let n = 10_000;
    let c = Tensor::zeros((1, n, cfg.cond_width()), DType::F64, &Device::Cpu).unwrap();
    let mut inside = 0;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mu: Vec<f64> = (0..z).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let sigma: Vec<f64> = (0..z).map(|_| 0.3 + 1.4 * rng.random::<f64>()).collect();
        let closed: f64 = mu.iter().zip(&sigma).map(|(m, s)| 0.5 * (s * s + m * m - 1.0) - s.ln()).sum();
        let row = |v: &[f64]| Tensor::from_vec(v.to_vec(), (1, 1, z), &Device::Cpu).unwrap().broadcast_as((1, n, z)).unwrap().contiguous().unwrap();
        let log_sigma: Vec<f64> = sigma.iter().map(|s| s.ln()).collect();
        let post = PosteriorParams { mu: row(&mu), log_sigma: row(&log_sigma) };
        let noise = randn(&[1, n, z], &mut rng);
        let draws = to_vec(&kl_samples(&model, &post, &[noise], &c).unwrap()[0]);
        let (m, v) = mean_var(&draws);
        let se = (v / n as f64).sqrt();
        let k = (m - closed).abs() / se;
        worst = worst.max(k);
        if k <= 2.0 {
            inside += 1;
        }
    }
    outcome(inside == 20, format!("{inside}/20 pairs within 2 SE of the closed form (worst {worst:.2} SE)"))
}

struct Motion {
    ds: ToyDataset,
    expert: SyncExpert,
    vmg: VmgModel,
    vmg_time: Duration,
}

fn train_motion(cfg: &RunConfig) -> Motion {
    let spec = RigSpec::procedural(cfg.rig.audio_width, cfg.rig.noise_std, cfg.seed).unwrap();
    let ds = synth_rig_generate(&spec, &cfg.rig.synth_options()).unwrap();
    let (expert, _) = train_sync_expert(&ds.train(), cfg.sync_expert.clone()).unwrap();
    let vmg = VmgModel::new(cfg.vmg.model.clone(), DType::F32, cfg.seed).unwrap();
    let t0 = Instant::now();
    train_vmg(&vmg, ds.train(), Some(&expert), cfg.vmg.train.clone()).unwrap();
    Motion { ds, expert, vmg, vmg_time: t0.elapsed() }
}

// 4
fn vmg_recovery(m: &Motion, cfg: &RunConfig) -> Outcome {
    let (train, val) = (m.ds.train(), m.ds.val());
    let base = mean_predictor_mse(&train, &val).unwrap();
    let gen = generation_mse(&m.vmg, &val, 0).unwrap();
    let ratio = gen / base;

    let rig = m.ds.rig.as_ref().unwrap();
    let dir = rig.au_direction(ActionUnitId::AU12);
    let clip = val[0];
    let t = clip.len();
    let sweep = |v: f64| {
        let mut u = AuVector::zeros();
        u.set(ActionUnitId::AU12, v).unwrap();
        let aus = AuSequence::constant(u, t, clip.audio.fps()).unwrap();
        generate_motion(&m.vmg, &clip.audio, &aus, 0).unwrap()
    };
    let (lo, hi) = (sweep(0.0), sweep(5.0));
    let mut moved = Vec::new();
    let mut basis = Vec::new();
    for &p in &layout::MOUTH_CORNERS {
        for k in 0..2 {
            let d: f64 = lo.frames().iter().zip(hi.frames()).map(|(a, b)| b.points()[p][k] - a.points()[p][k]).sum::<f64>() / t as f64;
            moved.push(d);
            basis.push(dir[2 * p + k]);
        }
    }
    let dot: f64 = moved.iter().zip(&basis).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = dot / (norm(&moved) * norm(&basis));
    let minutes = m.vmg_time.as_secs_f64() / 60.0;
    outcome(
        ratio < 0.25 && cos > 0.8 && minutes < 60.0,
        format!(
            "val MSE ratio {ratio:.3} < 0.25 after {} steps, AU12 corner cosine {cos:.3} > 0.8, training {minutes:.1} min < 60",
            cfg.vmg.train.steps
        ),
    )
}

// 5
fn sync_expert(m: &Motion) -> Outcome {
    let auc = sync_auc(&m.expert, &m.ds.val(), 10).unwrap();
    outcome(auc > 0.8, format!("held-out AUC {auc:.3} > 0.8"))
}

// 6
fn diffusion_law() -> Outcome {
    let cfg = M2vConfig::default();
    let sched = cfg.schedule().unwrap();
    let big_t = cfg.schedule_steps;
    let beta = |s: usize| cfg.beta_start + (cfg.beta_end - cfg.beta_start) * (s - 1) as f64 / (big_t - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 10_000;
    let z0 = 0.7;
    let mut worst = 0.0f64;
    let mut steps = Vec::new();
    for _ in 0..5 {
        let t = rng.random_range(1..=big_t);
        steps.push(t);
        let mut iterated = vec![z0; n];
        for s in 1..=t {
            let a = 1.0 - beta(s);
            let eps = randn(&[n], &mut rng);
            for (z, e) in iterated.iter_mut().zip(to_vec(&eps)) {
                *z = a.sqrt() * *z + (1.0 - a).sqrt() * e;
            }
        }
        let z0t = Tensor::full(z0, n, &Device::Cpu).unwrap();
        let closed = to_vec(&sched.q_sample(&z0t, t, &randn(&[n], &mut rng)).unwrap());
        let (m1, v1) = mean_var(&iterated);
        let (m2, v2) = mean_var(&closed);
        let se_m = (v1 / n as f64 + v2 / n as f64).sqrt();
        let se_v = ((v1 * v1 + v2 * v2) * 2.0 / (n - 1) as f64).sqrt();
        worst = worst.max((m1 - m2).abs() / se_m).max((v1 - v2).abs() / se_v);
    }
    outcome(worst <= 3.0, format!("steps {steps:?}: worst mean/variance gap {worst:.2} sigma <= 3"))
}

// 7
fn zero_init() -> Outcome {
    let cfg = M2vConfig::default();
    let model = M2vModel::new(cfg.clone(), DType::F64, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (t, r, l, c) = (3, cfg.raster_size, cfg.latent_size(), cfg.latent_channels);
    let mouth = uniform(&[1, t, 1, r, r], &mut rng);
    let face = uniform(&[1, t, 1, r, r], &mut rng);
    let pose = model.pose_residual(&mouth, &face).unwrap();
    let pose_zero = to_vec(&pose).iter().all(|v| *v == 0.0);
    let reference = uniform(&[1, 1, cfg.image_size, cfg.image_size], &mut rng);
    let feats = model.reference_features(&reference).unwrap();
    let z = randn(&[1, t, c, l, l], &mut rng);
    let full = to_vec(&model.denoise_eps(&z, &[40], Some(&feats), Some(&pose), Paths::ALL).unwrap());
    let bare = to_vec(&model.denoise_eps(&z, &[40], None, None, Paths::BASE).unwrap());
    let identical = full.iter().zip(&bare).all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(pose_zero && identical, format!("pose guider output all zero: {pose_zero}; conditioned denoiser bitwise equal to unconditioned: {identical}"))
}

struct Video {
    model: M2vModel,
    ae_hash: (String, String),
    frozen_hash: (String, String),
}

fn train_video(cfg: &RunConfig, ds: &ToyDataset, part: &LandmarkPartition) -> Video {
    let model = M2vModel::new(cfg.m2v.model.clone(), DType::F32, cfg.seed).unwrap();
    let train = ds.train();
    let x = frames_tensor(&all_frames(&train), cfg.m2v.model.image_size, DType::F32).unwrap();
    train_autoencoder(&model, &x, &cfg.m2v.phase1.autoencoder).unwrap();
    let ae = |m: &M2vModel| m.store.hash(is_autoencoder).unwrap();
    let frozen = |m: &M2vModel| m.store.hash(|n| !is_temporal(n)).unwrap();
    let ae_before = ae(&model);
    train_phase1(&model, &train, part, &cfg.m2v.phase1, &CheckpointTarget::default()).unwrap();
    let ae_after = ae(&model);
    let frozen_before = frozen(&model);
    train_phase2(&model, &train, part, &cfg.m2v.phase2, &CheckpointTarget::default()).unwrap();
    let frozen_after = frozen(&model);
    Video { model, ae_hash: (ae_before, ae_after), frozen_hash: (frozen_before, frozen_after) }
}

// 8
fn freeze_contracts(v: &Video) -> Outcome {
    let ae = v.ae_hash.0 == v.ae_hash.1;
    let frozen = v.frozen_hash.0 == v.frozen_hash.1;
    outcome(ae && frozen, format!("autoencoder unchanged by phase 1: {ae}; non-temporal weights unchanged by phase 2: {frozen}"))
}

// 9
fn ddim(v: &Video, ds: &ToyDataset, part: &LandmarkPartition) -> Outcome {
    let clip = ds.val()[0];
    let lm = clip.landmarks.slice(0, 16).unwrap();
    let opts = SampleOptions { seed: 9, ..SampleOptions::default() };
    let a = sample_latents(&v.model, &clip.frames[0], &lm, part, &opts).unwrap();
    let b = sample_latents(&v.model, &clip.frames[0], &lm, part, &opts).unwrap();
    let det = max_abs_diff(&a, &b);

    let cfg = &v.model.config;
    let sched = cfg.schedule().unwrap();
    let big_t = cfg.schedule_steps;
    let abar_t: f64 = (1..=big_t)
        .map(|s| 1.0 - (cfg.beta_start + (cfg.beta_end - cfg.beta_start) * (s - 1) as f64 / (big_t - 1) as f64))
        .product();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z_t = randn(&[2, 4, 8, 8], &mut rng);
    let out = ddim_sample_with(&sched, z_t.clone(), cfg.ddim_steps, |z, _| Ok(z.zeros_like()?)).unwrap();
    let chain = max_abs_diff(&out, &(z_t / abar_t.sqrt()).unwrap());
    let default_steps = M2vConfig::default().ddim_steps == 40 && RunConfig::default().inference.ddim_steps == 40;
    outcome(
        det <= 1e-6 && chain <= 1e-6 && default_steps,
        format!("repeat divergence {det:.1e} <= 1e-6 (f32), zero-eps chain error {chain:.1e} <= 1e-6, default steps 40: {default_steps}"),
    )
}

// 10
fn end_to_end(v: &Video, m: &Motion, part: &LandmarkPartition) -> Outcome {
    let clip = m.ds.val()[0];
    let inputs = InferenceInputs {
        reference: &clip.frames[0],
        reference_landmarks: &clip.landmarks.frames()[0],
        audio: &clip.audio,
        aus: &clip.aus,
    };
    let run = |carry: bool| {
        let opts = SampleOptions { seed: 10, carry_context: carry, ..SampleOptions::default() };
        infer_pipeline(&inputs, &m.vmg, &v.model, part, &opts).unwrap()
    };
    let a = run(true);
    let b = run(true);
    let ablated = run(false);
    let count = a.frames.len() == clip.aus.len();
    let repro = a.frames == b.frames && a.landmarks == b.landmarks;
    let chunk = v.model.config.chunk_frames;
    let with = boundary_stats(&a.frames, chunk).unwrap();
    let without = boundary_stats(&ablated.frames, chunk).unwrap();
    let continuity = with.boundary_mean <= 2.0 * with.intra_median;
    let worse = without.boundary_mean > with.boundary_mean;
    outcome(
        count && repro && continuity && worse,
        format!(
            "{} frames for {} AU frames; bit-reproducible: {repro}; boundary {:.4} <= 2 x intra median {:.4}; ablated boundary {:.4} > {:.4}",
            a.frames.len(),
            clip.aus.len(),
            with.boundary_mean,
            with.intra_median,
            without.boundary_mean,
            with.boundary_mean
        ),
    )
}

// 11
fn metric_identities() -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rand_img = |rng: &mut ChaCha8Rng| Image::new(16, 16, 1, (0..256).map(|_| rng.random::<f32>()).collect()).unwrap();
    let a = rand_img(&mut rng);
    let b = rand_img(&mut rng);
    checks.push(("psnr(a, a) is the infinite sentinel", psnr(&a, &a, 1.0).unwrap() == f64::INFINITY));
    let zeros = Image::filled(8, 8, 1, 0.0);
    let grey = Image::filled(8, 8, 1, 128.0);
    let expected = 10.0 * (255.0f64 * 255.0 / (128.0 * 128.0)).log10();
    checks.push(("psnr 0 vs 128 = 5.987 dB", (psnr(&zeros, &grey, 255.0).unwrap() - expected).abs() < 1e-3 && (expected - 5.987).abs() < 1e-3));
    checks.push(("psnr symmetric", psnr(&a, &b, 1.0).unwrap() == psnr(&b, &a, 1.0).unwrap()));
    checks.push(("ssim(a, a) = 1", ssim(&a, &a, 1.0).unwrap() == 1.0));
    let pattern: Vec<f32> = (0..256).map(|i| ((i / 16 + i % 16) % 2) as f32).collect();
    let p = Image::new(16, 16, 1, pattern.clone()).unwrap();
    let q = Image::new(16, 16, 1, pattern.iter().map(|v| 1.0 - v).collect()).unwrap();
    checks.push(("ssim binary pattern vs inverse < 0.5", ssim(&p, &q, 1.0).unwrap() < 0.5));
    checks.push((
        "ssim within [-1, 1]",
        (0..20).all(|_| {
            let s = ssim(&rand_img(&mut rng), &rand_img(&mut rng), 1.0).unwrap();
            (-1.0..=1.0).contains(&s)
        }),
    ));

    let part = LandmarkPartition::default();
    let seq = |rng: &mut ChaCha8Rng, shift: [f64; 2]| {
        let base: Vec<LandmarkFrame> = (0..4)
            .map(|_| LandmarkFrame::new((0..162).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()).unwrap())
            .collect();
        let moved = base
            .iter()
            .map(|f| LandmarkFrame::new(f.points().iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect()).unwrap())
            .collect();
        (LandmarkSequence::new(base, 25.0).unwrap(), LandmarkSequence::new(moved, 25.0).unwrap())
    };
    let (gt, shifted) = seq(&mut rng, [0.01, 0.0]);
    checks.push(("lmd(gt, gt) = 0", lmd(&gt, &gt, &part, LmdRegion::Full).unwrap() == 0.0));
    checks.push(("lmd of a (0.01, 0) shift = 0.01", (lmd(&shifted, &gt, &part, LmdRegion::Full).unwrap() - 0.01).abs() < 1e-12));
    let mut frames: Vec<LandmarkFrame> = gt.frames().to_vec();
    let mut pts = frames[0].points().to_vec();
    pts[part.face()[0]][0] += 0.3;
    frames[0] = LandmarkFrame::new(pts).unwrap();
    let face_moved = LandmarkSequence::new(frames, 25.0).unwrap();
    checks.push((
        "M-LMD ignores face-only points",
        lmd(&face_moved, &shifted, &part, LmdRegion::Mouth).unwrap() == lmd(&gt, &shifted, &part, LmdRegion::Mouth).unwrap(),
    ));

    let x = EmbeddingSet::new(50, 3, (0..150).map(|_| rng.random::<f64>()).collect()).unwrap();
    let y = EmbeddingSet::new(60, 3, (0..180).map(|_| 2.0 * rng.random::<f64>()).collect()).unwrap();
    checks.push(("frechet(x, x) = 0", frechet_distance(&x, &x).unwrap().abs() < 1e-6));
    let c0 = EmbeddingSet::new(10, 1, vec![0.0; 10]).unwrap();
    let c1 = EmbeddingSet::new(10, 1, vec![1.0; 10]).unwrap();
    checks.push(("1-D frechet of constants 0 and 1 = 1", (frechet_distance(&c0, &c1).unwrap() - 1.0).abs() < 1e-3));
    checks.push((
        "frechet symmetric",
        (frechet_distance(&x, &y).unwrap() - frechet_distance(&y, &x).unwrap()).abs() < 1e-8,
    ));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(failed.is_empty(), format!("{}/{} identities hold{}", checks.len() - failed.len(), checks.len(), if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }))
}

// 12
fn emotion_mapping() -> Outcome {
    let listed = [
        ("angry", "AU4 + AU7 + AU10 + AU23"),
        ("disgust", "AU7 + AU14 + AU17"),
        ("fear", "AU2 + AU4 + AU5 + AU7 + AU26"),
        ("happy", "AU6 + AU12"),
        ("sad", "AU4 + AU7 + AU15"),
        ("surprised", "AU1 + AU2 + AU5 + AU26"),
        ("contempt", "AU12 + AU14"),
    ];
    let mut bad = Vec::new();
    for (label, aus) in listed {
        let want: BTreeSet<u8> = aus.split('+').map(|s| s.trim().trim_start_matches("AU").parse().unwrap()).collect();
        let e: EmotionLabel = label.parse().unwrap();
        let got: BTreeSet<u8> = emotion_to_aus(e).into_iter().map(|a| a.number()).collect();
        if got != want {
            bad.push(label);
        }
    }
    outcome(bad.is_empty(), format!("{}/7 emotions match the listed AU sets{}", 7 - bad.len(), if bad.is_empty() { String::new() } else { format!("; mismatched {bad:?}") }))
}

fn main() {
    let cfg = RunConfig::default();
    let part = LandmarkPartition::default();
    let mut results: Vec<(usize, &str, Outcome, Duration)> = Vec::new();
    let mut check = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let el = t0.elapsed();
        println!("criterion {n:>2} {} {name}: {} ({el:.1?})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o, el));
    };
    check(1, "gradient suite", &mut gradient_suite);
    check(2, "flow prior", &mut flow_prior);
    check(3, "KL estimator", &mut kl_estimator);
    check(6, "diffusion law", &mut diffusion_law);
    check(7, "zero-init identities", &mut zero_init);
    check(11, "metric identities", &mut metric_identities);
    check(12, "emotion mapping", &mut emotion_mapping);

    let t0 = Instant::now();
    let motion = catch_unwind(AssertUnwindSafe(|| train_motion(&cfg))).ok();
    println!("motion stage trained in {:.1?}", t0.elapsed());
    match &motion {
        Some(m) => {
            check(4, "VMG oracle recovery", &mut || vmg_recovery(m, &cfg));
            check(5, "sync expert", &mut || sync_expert(m));
        }
        None => {
            check(4, "VMG oracle recovery", &mut || outcome(false, "motion training panicked"));
            check(5, "sync expert", &mut || outcome(false, "motion training panicked"));
        }
    }
    let t0 = Instant::now();
    let video = motion.as_ref().and_then(|m| catch_unwind(AssertUnwindSafe(|| train_video(&cfg, &m.ds, &part))).ok());
    println!("video stage trained in {:.1?}", t0.elapsed());
    match (&video, &motion) {
        (Some(v), Some(m)) => {
            check(8, "freeze contracts", &mut || freeze_contracts(v));
            check(9, "DDIM", &mut || ddim(v, &m.ds, &part));
            check(10, "end-to-end toy", &mut || end_to_end(v, m, &part));
        }
        _ => {
            for (n, name) in [(8, "freeze contracts"), (9, "DDIM"), (10, "end-to-end toy")] {
                check(n, name, &mut || outcome(false, "video training did not complete"));
            }
        }
    }

    results.sort_by_key(|r| r.0);
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
