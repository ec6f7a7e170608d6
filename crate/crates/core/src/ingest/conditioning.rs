use crate::error::{Error, Result};
use crate::facs::{AuSequence, AuVector, NUM_AUS};
use crate::ingest::audio::AudioFeatureSequence;

/// Per-frame `[audio features ; AU intensities]`, row-major `T x (D + 18)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSequence {
    data: Vec<f64>,
    audio_width: usize,
    fps: f64,
}

impl ConditioningSequence {
    pub fn width(&self) -> usize {
        self.audio_width + NUM_AUS
    }

    pub fn audio_width(&self) -> usize {
        self.audio_width
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let w = self.width();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn audio(&self) -> AudioFeatureSequence {
        let data = (0..self.len())
            .flat_map(|t| self.row(t)[..self.audio_width].to_vec())
            .collect();
        AudioFeatureSequence::new(data, self.audio_width, self.fps)
            .expect("audio columns came from a valid sequence")
    }

    pub fn aus(&self) -> AuSequence {
        let frames = (0..self.len())
            .map(|t| AuVector::new(&self.row(t)[self.audio_width..]).expect("AU columns validated"))
            .collect();
        AuSequence::new(frames, self.fps).expect("non-empty")
    }
}

pub fn build_conditioning(
    audio: &AudioFeatureSequence,
    aus: &AuSequence,
) -> Result<ConditioningSequence> {
    if audio.len() != aus.len() {
        return Err(Error::Alignment(format!(
            "audio has {} frames, AU sequence has {}",
            audio.len(),
            aus.len()
        )));
    }
    if (audio.fps() - aus.fps()).abs() > 1e-6 {
        return Err(Error::Alignment(format!(
            "audio at {} fps, AUs at {} fps",
            audio.fps(),
            aus.fps()
        )));
    }
    let mut data = Vec::with_capacity(audio.len() * (audio.width() + NUM_AUS));
    for (t, u) in aus.frames().iter().enumerate() {
        data.extend_from_slice(audio.row(t));
        data.extend_from_slice(u.as_slice());
    }
    Ok(ConditioningSequence {
        data,
        audio_width: audio.width(),
        fps: audio.fps(),
    })
}
