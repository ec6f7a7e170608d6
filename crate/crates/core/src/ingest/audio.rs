//! Frame-level audio features behind a provider interface. The default
//! provider computes log band energies of a Hann-windowed spectrum; a
//! pretrained speech model can be plugged in behind the same trait.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::facs::check_fps;

pub const AUDIO_SAMPLE_RATE: u32 = 16_000;

/// `T x D` row-major features at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureSequence {
    data: Vec<f64>,
    width: usize,
    fps: f64,
}

impl AudioFeatureSequence {
    pub fn new(data: Vec<f64>, width: usize, fps: f64) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidInput("audio feature width must be >= 1".into()));
        }
        if data.is_empty() || data.len() % width != 0 {
            return Err(Error::Shape(format!(
                "{} audio values do not form rows of width {width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite audio feature".into()));
        }
        check_fps(fps)?;
        Ok(Self { data, width, fps })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::Shape("audio slice out of range".into()));
        }
        Self::new(
            self.data[start * self.width..(start + len) * self.width].to_vec(),
            self.width,
            self.fps,
        )
    }
}

pub trait AudioFeatureProvider: Send + Sync {
    fn width(&self) -> usize;

    fn extract(&self, waveform: &[f32], sample_rate: u32, fps: f64) -> Result<AudioFeatureSequence>;
}

/// Log band energies from a Hann-windowed FFT. Window length is two hops,
/// centred on each frame; bands are log-spaced between 60 Hz and Nyquist.
#[derive(Debug, Clone)]
pub struct SpectralEnergyProvider {
    width: usize,
}

impl SpectralEnergyProvider {
    pub fn new(width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("audio feature width must be >= 1".into()));
        }
        Ok(Self { width })
    }

    fn band_edges(&self, nbins: usize, sample_rate: u32) -> Vec<usize> {
        let nyquist = sample_rate as f64 / 2.0;
        let lo = 60.0f64.min(nyquist / 2.0);
        let hz_per_bin = nyquist / (nbins - 1) as f64;
        (0..=self.width)
            .map(|k| {
                let hz = lo * (nyquist / lo).powf(k as f64 / self.width as f64);
                ((hz / hz_per_bin).round() as usize).clamp(1, nbins - 1)
            })
            .collect()
    }
}

impl AudioFeatureProvider for SpectralEnergyProvider {
    fn width(&self) -> usize {
        self.width
    }

    fn extract(&self, waveform: &[f32], sample_rate: u32, fps: f64) -> Result<AudioFeatureSequence> {
        if waveform.is_empty() {
            return Err(Error::InvalidInput("empty waveform".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        check_fps(fps)?;
        let frames = frame_count(waveform.len(), sample_rate, fps);
        let hop = sample_rate as f64 / fps;
        let win = ((2.0 * hop).round() as usize).max(8);
        let fft: Arc<dyn rustfft::Fft<f64>> = FftPlanner::new().plan_fft_forward(win);
        let hann: Vec<f64> = (0..win)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
            .collect();
        let nbins = win / 2 + 1;
        let edges = self.band_edges(nbins, sample_rate);

        let mut data = Vec::with_capacity(frames * self.width);
        let mut buf = vec![Complex::new(0.0, 0.0); win];
        for t in 0..frames {
            let centre = ((t as f64 + 0.5) * hop).round() as i64;
            let start = centre - (win / 2) as i64;
            for (i, slot) in buf.iter_mut().enumerate() {
                let idx = start + i as i64;
                let s = if idx >= 0 && (idx as usize) < waveform.len() {
                    waveform[idx as usize] as f64
                } else {
                    0.0
                };
                *slot = Complex::new(s * hann[i], 0.0);
            }
            fft.process(&mut buf);
            for b in 0..self.width {
                let (lo, hi) = (edges[b], edges[b + 1].max(edges[b] + 1).min(nbins));
                let lo = lo.min(hi - 1);
                let power: f64 =
                    buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>() / (hi - lo) as f64;
                data.push((power / win as f64 + 1e-10).ln());
            }
        }
        AudioFeatureSequence::new(data, self.width, fps)
    }
}

/// `ceil(duration * fps)` with a guard against float noise on exact multiples.
pub fn frame_count(samples: usize, sample_rate: u32, fps: f64) -> usize {
    let exact = samples as f64 * fps / sample_rate as f64;
    ((exact - 1e-9).ceil() as usize).max(1)
}

pub fn audio_features(
    provider: &dyn AudioFeatureProvider,
    waveform: &[f32],
    fps: f64,
) -> Result<AudioFeatureSequence> {
    provider.extract(waveform, AUDIO_SAMPLE_RATE, fps)
}

/// Mono 16 kHz PCM from a WAV file; multi-channel input is averaged.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(e.to_string()))?
        }
    };
    let mono = samples
        .chunks(channels)
        .map(|c| c.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Feature CSV: header `a0,...,a{D-1}`, one row per frame.
pub fn write_audio_features(seq: &AudioFeatureSequence, path: &Path) -> Result<()> {
    let mut out = (0..seq.width())
        .map(|i| format!("a{i}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for t in 0..seq.len() {
        let row: Vec<String> = seq.row(t).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_audio_features(path: &Path, fps: f64) -> Result<AudioFeatureSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let width = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.len();
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))?;
        for f in rec.iter() {
            data.push(f.trim().parse::<f64>().map_err(|_| {
                Error::Parse(format!("line {}: `{f}` is not a number", i + 2))
            })?);
        }
    }
    AudioFeatureSequence::new(data, width, fps)
}
