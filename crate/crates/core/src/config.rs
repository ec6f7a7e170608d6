//! Run configuration: one TOML file plus `section.key=value` overrides.
//!
//! ```toml
//! seed = 0                 # rig generation and model initialization
//! [rig]                    # synthetic dataset
//! [vmg.model]  [vmg.train]  [vmg.train.weights]
//! [sync_expert]
//! [m2v.model]  [m2v.phase1]  [m2v.phase1.autoencoder]  [m2v.phase2]
//! [inference]
//! [metrics]
//! ```
//!
//! Every key is optional; missing keys take their defaults and unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{M2vConfig, Phase1Config, Phase2Config};
use crate::error::{Error, Result};
use crate::ingest::SynthOptions;
use crate::motion::{SyncConfig, VmgConfig, VmgTrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub audio_width: usize,
    pub noise_std: f64,
    pub num_clips: usize,
    pub frames_per_clip: usize,
    pub fps: f64,
    pub image_size: usize,
    pub val_fraction: f64,
    pub au_knot_spacing: usize,
    pub audio_knot_spacing: usize,
    pub au_active_prob: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        let o = SynthOptions::default();
        Self {
            audio_width: 16,
            noise_std: 0.005,
            num_clips: o.num_clips,
            frames_per_clip: o.frames_per_clip,
            fps: o.fps,
            image_size: o.image_size,
            val_fraction: o.val_fraction,
            au_knot_spacing: o.au_knot_spacing,
            audio_knot_spacing: o.audio_knot_spacing,
            au_active_prob: o.au_active_prob,
        }
    }
}

impl RigConfig {
    pub fn synth_options(&self) -> SynthOptions {
        SynthOptions {
            num_clips: self.num_clips,
            frames_per_clip: self.frames_per_clip,
            fps: self.fps,
            image_size: self.image_size,
            val_fraction: self.val_fraction,
            au_knot_spacing: self.au_knot_spacing,
            audio_knot_spacing: self.audio_knot_spacing,
            au_active_prob: self.au_active_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VmgSection {
    pub model: VmgConfig,
    pub train: VmgTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct M2vSection {
    pub model: M2vConfig,
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub ddim_steps: usize,
    pub carry_context: bool,
    /// Intensity used when an emotion label stands in for an AU file.
    pub emotion_intensity: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { ddim_steps: 40, carry_context: true, emotion_intensity: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Frames are compared on a `[0, 1]` scale.
    pub psnr_peak: f64,
    pub ssim_dynamic_range: f64,
    pub ssim_window: usize,
    /// Per-frame PSNR ceiling in dB, reached by identical frames.
    pub psnr_cap: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { psnr_peak: 1.0, ssim_dynamic_range: 1.0, ssim_window: 11, psnr_cap: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub rig: RigConfig,
    pub vmg: VmgSection,
    pub sync_expert: SyncConfig,
    pub m2v: M2vSection,
    pub inference: InferenceConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Optional file, then overrides in order.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical form: every key written out, fixed order.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.vmg.model.validate()?;
        self.vmg.train.weights.validate()?;
        self.m2v.model.validate()?;
        if self.rig.num_clips == 0 {
            return Err(Error::Config("rig.num_clips must be >= 1".into()));
        }
        if self.vmg.model.audio_width != self.rig.audio_width || self.sync_expert.audio_width != self.rig.audio_width {
            return Err(Error::Config(format!(
                "audio widths differ: rig {}, vmg {}, sync_expert {}",
                self.rig.audio_width, self.vmg.model.audio_width, self.sync_expert.audio_width
            )));
        }
        Ok(())
    }
}

/// `a.b.c=value`; the value is parsed as a TOML value and falls back to a
/// plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cur = table;
    for p in &path[..path.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn canonical_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let c = RunConfig::load_with_overrides(None, &["vmg.train.steps=7".into(), "m2v.model.schedule=cosine".into()]).unwrap();
        assert_eq!(c.vmg.train.steps, 7);
        assert_ne!(c.hash(), RunConfig::default().hash());
        let e = RunConfig::load_with_overrides(None, &["vmg.train.stepz=7".into()]).unwrap_err();
        assert_eq!(e.category(), "config");
        let e = RunConfig::load_with_overrides(None, &["seed.x=1".into()]).unwrap_err();
        assert_eq!(e.category(), "config");
    }
}
