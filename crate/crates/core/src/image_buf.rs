//! Minimal float image buffer used for rig frames, decoded video frames and
//! metric inputs. Layout is row-major HWC with values nominally in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Shape("image dimensions must be positive".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "image buffer has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel-planar copy (`C x H x W`), the tensor layout.
    pub fn to_chw(&self) -> Vec<f32> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut out = vec![0.0; w * h * c];
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    out[k * w * h + y * w + x] = self.data[(y * w + x) * c + k];
                }
            }
        }
        out
    }

    pub fn from_chw(width: usize, height: usize, channels: usize, chw: &[f32]) -> Result<Self> {
        if chw.len() != width * height * channels {
            return Err(Error::Shape("planar buffer size mismatch".into()));
        }
        let mut data = vec![0.0; chw.len()];
        for k in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data[(y * width + x) * channels + k] = chw[k * width * height + y * width + x];
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    /// Round every value to the nearest 8-bit level, clamped to `[0, 1]`.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match self.channels {
            1 => image::GrayImage::from_raw(w, h, bytes).map(|im| im.save(path)),
            3 => image::RgbImage::from_raw(w, h, bytes).map(|im| im.save(path)),
            c => return Err(Error::Shape(format!("cannot write {c}-channel PNG"))),
        };
        match res {
            Some(Ok(())) => Ok(()),
            Some(Err(e)) => Err(Error::Parse(format!("{}: {e}", path.display()))),
            None => Err(Error::Shape("image buffer does not match dimensions".into())),
        }
    }

    /// Loads an 8-bit PNG. Grayscale stays single channel, anything else is
    /// converted to RGB.
    pub fn load_png(path: &Path) -> Result<Self> {
        let dynimg = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Parse(format!("{}: {other}", path.display())),
        })?;
        let (channels, w, h, raw) = match dynimg {
            image::DynamicImage::ImageLuma8(g) => (1, g.width(), g.height(), g.into_raw()),
            other => {
                let rgb = other.to_rgb8();
                (3, rgb.width(), rgb.height(), rgb.into_raw())
            }
        };
        let data = raw.into_iter().map(|b| b as f32 / 255.0).collect();
        Self::new(w as usize, h as usize, channels, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chw_roundtrip() {
        let data: Vec<f32> = (0..24).map(|i| i as f32).collect();
        let im = Image::new(4, 2, 3, data).unwrap();
        let back = Image::from_chw(4, 2, 3, &im.to_chw()).unwrap();
        assert_eq!(back, im);
    }

    #[test]
    fn png_roundtrip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let mut im = Image::new(3, 2, 1, vec![0.0, 0.1, 0.5, 0.7, 0.99, 1.0]).unwrap();
        im.quantize_u8();
        let p = dir.path().join("a.png");
        im.save_png(&p).unwrap();
        assert_eq!(Image::load_png(&p).unwrap(), im);
    }
}
