//! In-memory dataset of paired clips and its on-disk layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/rig.json                        (synthetic datasets only)
//! <dir>/<split>/<clip>/audio.csv
//! <dir>/<split>/<clip>/aus.csv          (OpenFace layout)
//! <dir>/<split>/<clip>/landmarks.csv
//! <dir>/<split>/<clip>/frames/000000.png ...
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::facs::{AuSequence, LandmarkSequence};
use crate::image_buf::Image;
use crate::ingest::audio::{read_audio_features, write_audio_features, AudioFeatureSequence};
use crate::ingest::conditioning::{build_conditioning, ConditioningSequence};
use crate::ingest::landmark_io::{read_landmark_file_at, write_landmark_file};
use crate::ingest::openface::{read_openface_au_csv, write_openface_au_csv};
use crate::ingest::rig::{RigSpec, SynthOptions};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RIG_FILE: &str = "rig.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub skin: f64,
    pub background: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub name: String,
    pub split: Split,
    pub audio: AudioFeatureSequence,
    pub aus: AuSequence,
    pub landmarks: LandmarkSequence,
    pub frames: Vec<Image>,
    pub appearance: Option<Appearance>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn conditioning(&self) -> Result<ConditioningSequence> {
        build_conditioning(&self.audio, &self.aus)
    }

    fn check(&self) -> Result<()> {
        let t = self.landmarks.len();
        if self.audio.len() != t || self.aus.len() != t || (!self.frames.is_empty() && self.frames.len() != t) {
            return Err(Error::Alignment(format!(
                "clip {}: frame counts differ (audio {}, aus {}, landmarks {t}, images {})",
                self.name,
                self.audio.len(),
                self.aus.len(),
                self.frames.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub clips: Vec<Clip>,
    pub rig: Option<RigSpec>,
    pub options: Option<SynthOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub name: String,
    pub split: Split,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<Appearance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: Option<u64>,
    /// SHA-256 of `rig.json` when the dataset is synthetic.
    pub spec_hash: Option<String>,
    pub config_hash: Option<String>,
    pub fps: f64,
    pub audio_width: usize,
    pub image_size: Option<usize>,
    pub clips: Vec<ClipEntry>,
}

impl ToyDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Clip> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn train(&self) -> Vec<&Clip> {
        self.split(Split::Train).collect()
    }

    pub fn val(&self) -> Vec<&Clip> {
        self.split(Split::Val).collect()
    }

    pub fn audio_width(&self) -> Result<usize> {
        self.clips
            .first()
            .map(|c| c.audio.width())
            .ok_or_else(|| Error::Precondition("dataset has no clips".into()))
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.audio_width()?;
        for c in &self.clips {
            c.check()?;
            if c.audio.width() != w {
                return Err(Error::Shape(format!("clip {} has audio width {}", c.name, c.audio.width())));
            }
        }
        Ok(())
    }

    pub fn manifest(&self, config_hash: Option<String>) -> Result<DatasetManifest> {
        let first = self
            .clips
            .first()
            .ok_or_else(|| Error::Precondition("dataset has no clips".into()))?;
        Ok(DatasetManifest {
            format_version: 1,
            seed: self.rig.as_ref().map(|r| r.seed),
            spec_hash: self.rig.as_ref().map(|r| sha256_hex(rig_json(r).as_bytes())),
            config_hash,
            fps: first.landmarks.fps(),
            audio_width: first.audio.width(),
            image_size: first.frames.first().map(|f| f.width()),
            clips: self
                .clips
                .iter()
                .map(|c| ClipEntry {
                    name: c.name.clone(),
                    split: c.split,
                    frames: c.len(),
                    appearance: c.appearance,
                })
                .collect(),
        })
    }

    pub fn save(&self, dir: &Path, config_hash: Option<String>) -> Result<DatasetManifest> {
        self.validate()?;
        let manifest = self.manifest(config_hash)?;
        mkdir(dir)?;
        if let Some(rig) = &self.rig {
            write_text(&dir.join(RIG_FILE), &rig_json(rig))?;
        }
        for clip in &self.clips {
            let cdir = clip_dir(dir, clip.split, &clip.name);
            let fdir = cdir.join("frames");
            mkdir(&fdir)?;
            write_audio_features(&clip.audio, &cdir.join("audio.csv"))?;
            write_openface_au_csv(&clip.aus, &cdir.join("aus.csv"))?;
            write_landmark_file(&clip.landmarks, &cdir.join("landmarks.csv"))?;
            for (t, im) in clip.frames.iter().enumerate() {
                im.save_png(&fdir.join(format!("{t:06}.png")))?;
            }
        }
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_text(&dir.join(MANIFEST_FILE), &text)?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", mpath.display())))?;
        let rig_path = dir.join(RIG_FILE);
        let rig = if rig_path.exists() {
            let t = std::fs::read_to_string(&rig_path).map_err(|e| Error::io(&rig_path, e))?;
            Some(serde_json::from_str(&t).map_err(|e| Error::Parse(format!("{}: {e}", rig_path.display())))?)
        } else {
            None
        };
        let mut clips = Vec::with_capacity(manifest.clips.len());
        for entry in &manifest.clips {
            let cdir = clip_dir(dir, entry.split, &entry.name);
            let landmarks = read_landmark_file_at(&cdir.join("landmarks.csv"), manifest.fps)?;
            let audio = read_audio_features(&cdir.join("audio.csv"), manifest.fps)?;
            let aus = read_openface_au_csv(&cdir.join("aus.csv"))?;
            let aus = AuSequence::new(aus.frames().to_vec(), manifest.fps)?;
            let frames = load_frames(&cdir.join("frames"))?;
            let clip = Clip {
                name: entry.name.clone(),
                split: entry.split,
                audio,
                aus,
                landmarks,
                frames,
                appearance: entry.appearance,
            };
            clip.check()?;
            clips.push(clip);
        }
        let ds = ToyDataset {
            clips,
            rig,
            options: None,
        };
        ds.validate()?;
        Ok(ds)
    }
}

pub fn clip_dir(root: &Path, split: Split, name: &str) -> PathBuf {
    root.join(split.dir_name()).join(name)
}

/// All `*.png` in a directory, in file-name order.
pub fn load_frames(dir: &Path) -> Result<Vec<Image>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    names.sort();
    names.iter().map(|p| Image::load_png(p)).collect()
}

fn rig_json(rig: &RigSpec) -> String {
    serde_json::to_string(rig).expect("rig serializes")
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::rig::synth_rig_generate;

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = RigSpec::procedural(3, 0.005, 11).unwrap();
        let opts = SynthOptions {
            num_clips: 3,
            frames_per_clip: 5,
            image_size: 16,
            val_fraction: 0.34,
            ..SynthOptions::default()
        };
        let ds = synth_rig_generate(&spec, &opts).unwrap();
        let m1 = ds.save(dir.path(), None).unwrap();
        let back = ToyDataset::load(dir.path()).unwrap();
        assert_eq!(back.clips, ds.clips);
        assert_eq!(back.rig, ds.rig);
        assert_eq!(back.manifest(None).unwrap(), m1);
        assert!(dir.path().join("val/clip_0002/frames/000004.png").exists());
    }
}
