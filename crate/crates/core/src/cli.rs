//! The `autalk` command line.
//!
//! Every command reads one optional TOML config (`--config`) plus
//! `--set section.key=value` overrides. Relative output paths are resolved
//! under `AUTALK_OUTPUT_ROOT` when it is set. Failures print one JSON line
//! `{"category": ..., "message": ...}` on stderr and exit nonzero.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use candle_core::DType;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::diffusion::{
    checkpoint_phase, infer_pipeline, train_phase1, train_phase2, CheckpointTarget, InferenceInputs, M2vModel,
    SampleOptions, M2V_KIND,
};
use crate::error::{Error, Result};
use crate::facs::{emotion_to_au_vector, AuSequence, EmotionLabel, LandmarkPartition};
use crate::ingest::audio::read_wav;
use crate::ingest::dataset::{load_frames, sha256_hex};
use crate::ingest::landmark_io::{read_landmark_file_at, write_landmark_file};
use crate::ingest::{
    audio::read_audio_features, read_landmark_file, read_openface_au_csv, synth_rig_generate,
    AudioFeatureProvider, AudioFeatureSequence, RigSpec, SpectralEnergyProvider, ToyDataset,
};
use crate::metrics::{embed_images, frechet_distance, lmd, psnr, ssim_with_window, ClipMetrics, LmdRegion, MetricReport};
use crate::motion::{train_sync_expert, SyncExpert, VmgModel, VmgTrainer, SYNC_KIND, VMG_KIND};
use crate::plot::plot_landmarks;

pub const OUTPUT_ROOT_ENV: &str = "AUTALK_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "autalk", version, about = "AU-driven talking-head toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `section.key=value`, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Mouth/face index file; the built-in split is used otherwise.
    #[arg(long, global = true)]
    pub partition: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic rig dataset.
    SynthData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage.
    Train(TrainArgs),
    /// Generate a video from a reference image, audio and AUs.
    Infer(InferArgs),
    /// Score predicted clips against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a landmark CSV as per-frame PNG plots.
    PlotLandmarks {
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frames to draw under the points.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Vmg,
    Sync,
    M2vPhase1,
    M2vPhase2,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Vmg => "vmg",
            Stage::Sync => "sync",
            Stage::M2vPhase1 => "m2v-phase1",
            Stage::M2vPhase2 => "m2v-phase2",
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(value_enum)]
    pub stage: Stage,
    /// Dataset directory written by `synth-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Sync expert checkpoint, needed by `vmg` when the sync weight is non-zero.
    #[arg(long)]
    pub sync: Option<PathBuf>,
    /// Starting checkpoint; `m2v-phase2` requires a phase-1 one.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Continue a `vmg` run from the checkpoint at `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Loss CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Reference frame (PNG).
    #[arg(long)]
    pub reference: PathBuf,
    /// Landmarks of the reference frame; the first row is used.
    #[arg(long)]
    pub reference_landmarks: PathBuf,
    #[arg(long, conflicts_with = "audio_features", required_unless_present = "audio_features")]
    pub audio: Option<PathBuf>,
    #[arg(long)]
    pub audio_features: Option<PathBuf>,
    /// OpenFace-style AU intensity CSV.
    #[arg(long, conflicts_with = "emotion", required_unless_present = "emotion")]
    pub aus: Option<PathBuf>,
    /// Emotion label expanded to a constant AU vector over the audio length.
    #[arg(long)]
    pub emotion: Option<String>,
    #[arg(long, requires = "emotion")]
    pub intensity: Option<f64>,
    #[arg(long)]
    pub vmg: PathBuf,
    #[arg(long)]
    pub m2v: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", json!({ "category": "usage", "message": e.to_string().trim() }));
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            1
        }
    }
}

pub fn error_json(e: &Error) -> String {
    json!({ "category": e.category(), "message": e.to_string() }).to_string()
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load_with_overrides(cli.common.config.as_deref(), &cli.common.overrides)?;
    let part = match &cli.common.partition {
        Some(p) => LandmarkPartition::from_index_file(p)?,
        None => LandmarkPartition::default(),
    };
    match &cli.command {
        Command::SynthData { out } => cmd_synth_data(&cfg, &resolve_out(out)).map(|_| ()),
        Command::Train(a) => cmd_train(&cfg, &part, a).map(|_| ()),
        Command::Infer(a) => cmd_infer(&cfg, &part, a),
        Command::Eval { pred, gt, out } => cmd_eval(&cfg, &part, pred, gt, &resolve_out(out)).map(|_| ()),
        Command::PlotLandmarks { landmarks, out, frames, size } => {
            cmd_plot(&part, landmarks, frames.as_deref(), *size, &resolve_out(out))
        }
    }
}

pub fn resolve_out(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

pub fn cmd_synth_data(cfg: &RunConfig, out: &Path) -> Result<ToyDataset> {
    let spec = RigSpec::procedural(cfg.rig.audio_width, cfg.rig.noise_std, cfg.seed)?;
    let ds = synth_rig_generate(&spec, &cfg.rig.synth_options())?;
    ds.save(out, Some(cfg.hash()))?;
    log::info!("wrote {} clips to {}", ds.clips.len(), out.display());
    Ok(ds)
}

pub fn cmd_train(cfg: &RunConfig, part: &LandmarkPartition, a: &TrainArgs) -> Result<PathBuf> {
    let stage = a.stage.name();
    let out = resolve_out(&a.out);
    let log_path = a.log.as_ref().map(|p| resolve_out(p)).unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    if a.resume && a.stage != Stage::Vmg {
        return Err(Error::Config(format!("--resume is only supported for vmg, not {stage}")));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    let ds = ToyDataset::load(&a.data)?;
    let train = ds.train();
    let hash = cfg.hash();
    let staged = |e: Error| e.in_stage(stage);
    match a.stage {
        Stage::Vmg => {
            let sync = match &a.sync {
                Some(p) => Some(SyncExpert::from_checkpoint(&Checkpoint::load_kind(p, SYNC_KIND)?).map_err(staged)?),
                None if cfg.vmg.train.weights.sync > 0.0 => {
                    return Err(staged(Error::Precondition(
                        "the sync loss weight is non-zero; pass --sync with a checkpoint from `train sync`".into(),
                    )))
                }
                None => None,
            };
            let resume_ckpt = if a.resume { Some(Checkpoint::load_kind(&out, VMG_KIND)?) } else { None };
            let model = match (&resume_ckpt, &a.init) {
                (Some(c), _) => VmgModel::from_checkpoint(c)?,
                (None, Some(p)) => VmgModel::from_checkpoint(&Checkpoint::load_kind(p, VMG_KIND)?)?,
                (None, None) => VmgModel::new(cfg.vmg.model.clone(), DType::F32, cfg.seed)?,
            };
            let mut trainer =
                VmgTrainer::new(&model, sync.as_ref(), train, cfg.vmg.train.clone())?.with_checkpointing(out.clone(), &hash);
            if let Some(c) = &resume_ckpt {
                trainer.resume(c)?;
            }
            let first = trainer.step_count();
            let history = trainer.run().map_err(staged)?;
            let mut csv = if a.resume && log_path.exists() {
                std::fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?
            } else {
                "step,mse,kl,cont,sync,total\n".to_string()
            };
            for (i, v) in history.iter().enumerate() {
                csv.push_str(&format!("{},{:?},{:?},{:?},{:?},{:?}\n", first + i as u64 + 1, v.mse, v.kl, v.cont, v.sync, v.total));
            }
            write(&log_path, &csv)?;
        }
        Stage::Sync => {
            let (expert, report) = train_sync_expert(&train, cfg.sync_expert.clone()).map_err(staged)?;
            expert.to_checkpoint(&hash)?.save(&out)?;
            let mut csv = "step,positive,negative\n".to_string();
            for (i, (p, n)) in report.positive_loss.iter().zip(&report.negative_loss).enumerate() {
                csv.push_str(&format!("{},{p:?},{n:?}\n", i + 1));
            }
            write(&log_path, &csv)?;
        }
        Stage::M2vPhase1 | Stage::M2vPhase2 => {
            let model = match &a.init {
                Some(p) => M2vModel::from_checkpoint(&Checkpoint::load_kind(p, M2V_KIND)?)?,
                None if a.stage == Stage::M2vPhase2 => {
                    return Err(staged(Error::Precondition(
                        "needs a phase-1 checkpoint; pass --init with the output of `train m2v-phase1`".into(),
                    )))
                }
                None => M2vModel::new(cfg.m2v.model.clone(), DType::F32, cfg.seed)?,
            };
            let target = CheckpointTarget { path: Some(out.clone()), config_hash: hash };
            let history = if a.stage == Stage::M2vPhase1 {
                train_phase1(&model, &train, part, &cfg.m2v.phase1, &target)
            } else {
                train_phase2(&model, &train, part, &cfg.m2v.phase2, &target)
            }
            .map_err(staged)?;
            let mut csv = "step,loss\n".to_string();
            for (i, v) in history.iter().enumerate() {
                csv.push_str(&format!("{},{v:?}\n", i + 1));
            }
            write(&log_path, &csv)?;
        }
    }
    log::info!("{stage}: checkpoint {}, losses {}", out.display(), log_path.display());
    Ok(out)
}

fn load_stage<T>(path: &Path, kind: &str, stage: &'static str, f: impl Fn(&Checkpoint) -> Result<T>) -> Result<T> {
    Checkpoint::load_kind(path, kind).and_then(|c| f(&c)).map_err(|e| e.in_stage(stage))
}

pub fn cmd_infer(cfg: &RunConfig, part: &LandmarkPartition, a: &InferArgs) -> Result<()> {
    let out = resolve_out(&a.out);
    let vmg = load_stage(&a.vmg, VMG_KIND, "load vmg", VmgModel::from_checkpoint)?;
    let m2v = load_stage(&a.m2v, M2V_KIND, "load m2v", |c| {
        if checkpoint_phase(c) != "phase2" {
            log::warn!("m2v checkpoint is from {:?}, not phase 2", checkpoint_phase(c));
        }
        M2vModel::from_checkpoint(c)
    })?;
    let fps = cfg.rig.fps;
    let audio = match (&a.audio, &a.audio_features) {
        (Some(wav), _) => {
            let (samples, rate) = read_wav(wav)?;
            SpectralEnergyProvider::new(vmg.config.audio_width)?.extract(&samples, rate, fps)?
        }
        (None, Some(csv)) => read_audio_features(csv, fps)?,
        (None, None) => return Err(Error::InvalidInput("pass --audio or --audio-features".into())),
    };
    let aus = match (&a.aus, &a.emotion) {
        (Some(p), _) => {
            let s = read_openface_au_csv(p)?;
            AuSequence::new(s.frames().to_vec(), fps)?
        }
        (None, Some(label)) => {
            let label: EmotionLabel = label.parse()?;
            let v = emotion_to_au_vector(label, a.intensity.unwrap_or(cfg.inference.emotion_intensity))?;
            AuSequence::constant(v, audio.len(), fps)?
        }
        (None, None) => return Err(Error::InvalidInput("pass --aus or --emotion".into())),
    };
    let audio = fit_audio(audio, aus.len())?;
    let reference = crate::image_buf::Image::load_png(&a.reference)?;
    let ref_lm = read_landmark_file(&a.reference_landmarks)?;
    let inputs = InferenceInputs {
        reference: &reference,
        reference_landmarks: &ref_lm.frames()[0],
        audio: &audio,
        aus: &aus,
    };
    let opts = SampleOptions {
        seed: a.seed,
        ddim_steps: Some(cfg.inference.ddim_steps),
        carry_context: cfg.inference.carry_context,
    };
    let video = infer_pipeline(&inputs, &vmg, &m2v, part, &opts)?;
    let frames_dir = out.join("frames");
    let plots_dir = out.join("plots");
    mkdir(&frames_dir)?;
    mkdir(&plots_dir)?;
    for (i, (f, lm)) in video.frames.iter().zip(video.landmarks.frames()).enumerate() {
        f.save_png(&frames_dir.join(format!("{i:06}.png")))?;
        plot_landmarks(lm, part, 256, Some(f)).save_png(&plots_dir.join(format!("{i:06}.png")))?;
    }
    write_landmark_file(&video.landmarks, &out.join("landmarks.csv"))?;
    let mut inputs_json = serde_json::Map::new();
    for (k, p) in [
        ("reference", Some(&a.reference)),
        ("reference_landmarks", Some(&a.reference_landmarks)),
        ("audio", a.audio.as_ref()),
        ("audio_features", a.audio_features.as_ref()),
        ("aus", a.aus.as_ref()),
        ("vmg", Some(&a.vmg)),
        ("m2v", Some(&a.m2v)),
    ] {
        if let Some(p) = p {
            inputs_json.insert(k.into(), json!({ "path": p, "sha256": file_hash(p)? }));
        }
    }
    let manifest = json!({
        "command": "infer",
        "config_hash": cfg.hash(),
        "seed": a.seed,
        "emotion": a.emotion,
        "intensity": a.emotion.as_ref().map(|_| a.intensity.unwrap_or(cfg.inference.emotion_intensity)),
        "frames": video.frames.len(),
        "fps": fps,
        "ddim_steps": opts.ddim_steps,
        "carry_context": opts.carry_context,
        "inputs": inputs_json,
    });
    write(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest).expect("json"))?;
    log::info!("wrote {} frames to {}", video.frames.len(), out.display());
    Ok(())
}

/// Audio is cut to the AU length; shorter audio is an error.
fn fit_audio(audio: AudioFeatureSequence, frames: usize) -> Result<AudioFeatureSequence> {
    match audio.len().cmp(&frames) {
        std::cmp::Ordering::Equal => Ok(audio),
        std::cmp::Ordering::Greater => audio.slice(0, frames),
        std::cmp::Ordering::Less => Err(Error::Alignment(format!(
            "audio covers {} frames, AUs need {frames}",
            audio.len()
        ))),
    }
}

/// Sub-directories that hold a `landmarks.csv`.
pub fn clip_inventory(root: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for e in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let p = e.map_err(|e| Error::io(root, e))?.path();
        if p.join("landmarks.csv").is_file() {
            out.insert(p.file_name().expect("entry has a name").to_string_lossy().into_owned());
        }
    }
    Ok(out)
}

pub fn cmd_eval(cfg: &RunConfig, part: &LandmarkPartition, pred: &Path, gt: &Path, out: &Path) -> Result<MetricReport> {
    let (pc, gc) = (clip_inventory(pred)?, clip_inventory(gt)?);
    if pc != gc || pc.is_empty() {
        let missing: Vec<&String> = gc.difference(&pc).collect();
        let extra: Vec<&String> = pc.difference(&gc).collect();
        return Err(Error::InvalidInput(format!(
            "clip inventories differ: missing from predictions {missing:?}, not in ground truth {extra:?}"
        )));
    }
    let m = &cfg.metrics;
    let (mut all_pred, mut all_gt, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for name in &pc {
        let (pd, gd) = (pred.join(name), gt.join(name));
        let pl = read_landmark_file_at(&pd.join("landmarks.csv"), cfg.rig.fps)?;
        let gl = read_landmark_file_at(&gd.join("landmarks.csv"), cfg.rig.fps)?;
        let pf = load_frames(&pd.join("frames"))?;
        let gf = load_frames(&gd.join("frames"))?;
        if pf.len() != gf.len() || pf.is_empty() {
            return Err(Error::InvalidInput(format!("clip {name}: {} predicted frames, {} ground-truth frames", pf.len(), gf.len())));
        }
        let n = pf.len() as f64;
        let mut ps = 0.0;
        let mut ss = 0.0;
        for (a, b) in pf.iter().zip(&gf) {
            ps += psnr(a, b, m.psnr_peak)?.min(m.psnr_cap);
            ss += ssim_with_window(a, b, m.ssim_window, m.ssim_dynamic_range)?;
        }
        rows.push(ClipMetrics {
            clip: name.clone(),
            frames: pf.len(),
            psnr: ps / n,
            ssim: ss / n,
            m_lmd: lmd(&pl, &gl, part, LmdRegion::Mouth)?,
            f_lmd: lmd(&pl, &gl, part, LmdRegion::Full)?,
        });
        all_pred.extend(pf);
        all_gt.extend(gf);
    }
    let frechet = frechet_distance(&embed_images(&all_pred)?, &embed_images(&all_gt)?)?;
    let report = MetricReport::from_clips(rows, frechet);
    mkdir(out)?;
    write(&out.join("report.txt"), &report.to_text())?;
    write(&out.join("report.csv"), &report.to_csv()?)?;
    write(&out.join("report.json"), &serde_json::to_string_pretty(&report).expect("json"))?;
    Ok(report)
}

pub fn cmd_plot(part: &LandmarkPartition, landmarks: &Path, frames: Option<&Path>, size: usize, out: &Path) -> Result<()> {
    if size == 0 {
        return Err(Error::InvalidInput("plot size must be positive".into()));
    }
    let seq = read_landmark_file(landmarks)?;
    let bg = match frames {
        Some(d) => load_frames(d)?,
        None => Vec::new(),
    };
    if !bg.is_empty() && bg.len() != seq.len() {
        return Err(Error::InvalidInput(format!("{} frames for {} landmark rows", bg.len(), seq.len())));
    }
    mkdir(out)?;
    for (i, f) in seq.frames().iter().enumerate() {
        plot_landmarks(f, part, size, bg.get(i)).save_png(&out.join(format!("{i:06}.png")))?;
    }
    Ok(())
}
