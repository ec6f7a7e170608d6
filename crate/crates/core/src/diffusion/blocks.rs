use candle_core::{Tensor, D};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{silu, sinusoidal, Conv2d, GroupNorm, Linear, ParamStore, SelfAttention};

/// Nearest-neighbour 2x upsampling of `(N, C, H, W)`.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x.reshape((n, c, h, 1, w, 1))?.broadcast_as((n, c, h, 2, w, 2))?.reshape((n, c, 2 * h, 2 * w))?)
}

#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    temb: Option<Linear>,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        temb_dim: Option<usize>,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), input, groups, rng)?,
            conv1: Conv2d::same3(store, &format!("{name}.conv1"), input, output, rng)?,
            temb: temb_dim
                .map(|d| Linear::new(store, &format!("{name}.time_proj"), d, output, false, rng))
                .transpose()?,
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), output, groups, rng)?,
            conv2: Conv2d::same3(store, &format!("{name}.conv2"), output, output, rng)?,
            skip: if input != output {
                Some(Conv2d::pointwise(store, &format!("{name}.skip"), input, output, false, rng)?)
            } else {
                None
            },
        })
    }

    /// `x: (N, C, H, W)`, `temb: (N, E)`.
    pub fn forward(&self, x: &Tensor, temb: Option<&Tensor>) -> Result<Tensor> {
        let mut h = self.conv1.forward(&silu(&self.norm1.forward(x)?)?)?;
        if let (Some(p), Some(e)) = (&self.temb, temb) {
            let e = p.forward(&silu(e)?)?;
            let (n, c) = e.dims2()?;
            h = h.broadcast_add(&e.reshape((n, c, 1, 1))?)?;
        }
        let h = self.conv2.forward(&silu(&self.norm2.forward(&h)?)?)?;
        let s = match &self.skip {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        Ok((s + h)?)
    }
}

/// Reference features joined to every frame along channels, spatial
/// self-attention on the `2c` tokens with a residual, first `c` channels kept.
#[derive(Debug, Clone)]
pub struct ReferenceFusion {
    attn: SelfAttention,
    channels: usize,
}

impl ReferenceFusion {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let attn = SelfAttention::new(store, &format!("{name}.attn"), 2 * channels, channels, 2 * channels, heads, true, rng)?;
        Ok(Self { attn, channels })
    }

    /// `x: (b*t, c, h, w)` frame-major within each batch entry, `reference: (b, c, h, w)`.
    pub fn forward(&self, x: &Tensor, reference: &Tensor, frames: usize) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let (b, rc, rh, rw) = reference.dims4()?;
        if c != self.channels || rc != c || rh != h || rw != w || b * frames != n {
            return Err(Error::Shape(format!(
                "fusion: features {:?} vs reference {:?} with {frames} frames",
                x.dims(),
                reference.dims()
            )));
        }
        let r = replicate_frames(reference, frames)?;
        let joined = Tensor::cat(&[x, &r], 1)?;
        let tokens = joined.permute((0, 2, 3, 1))?.reshape((n, h * w, 2 * c))?;
        let out = (&tokens + self.attn.forward(&tokens)?)?;
        Ok(out.narrow(2, 0, c)?.reshape((n, h, w, c))?.permute((0, 3, 1, 2))?.contiguous()?)
    }
}

/// `(b, ...)` to `(b * frames, ...)`, each entry repeated `frames` times.
pub fn replicate_frames(x: &Tensor, frames: usize) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let mut expanded = vec![dims[0], frames];
    expanded.extend_from_slice(&dims[1..]);
    let mut flat = vec![dims[0] * frames];
    flat.extend_from_slice(&dims[1..]);
    Ok(x.unsqueeze(1)?.broadcast_as(expanded)?.reshape(flat)?)
}

/// Self-attention along the frame axis at every spatial position.
#[derive(Debug, Clone)]
pub struct TemporalAttention {
    attn: SelfAttention,
    channels: usize,
}

impl TemporalAttention {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let attn = SelfAttention::new(store, &format!("{name}.attn"), channels, channels, channels, heads, true, rng)?;
        Ok(Self { attn, channels })
    }

    /// `(b, t, c, h, w)` to the attention operand `(b*h*w, t, c)`.
    pub fn to_sequences(x: &Tensor, batch: usize) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let t = n / batch;
        Ok(x.reshape((batch, t, c, h, w))?.permute((0, 3, 4, 1, 2))?.reshape((batch * h * w, t, c))?)
    }

    fn from_sequences(s: &Tensor, batch: usize, h: usize, w: usize) -> Result<Tensor> {
        let (_, t, c) = s.dims3()?;
        Ok(s.reshape((batch, h, w, t, c))?.permute((0, 3, 4, 1, 2))?.reshape((batch * t, c, h, w))?)
    }

    /// `x: (b*t, c, h, w)`.
    pub fn forward(&self, x: &Tensor, batch: usize) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels || batch == 0 || n % batch != 0 {
            return Err(Error::Shape(format!("temporal attention: {:?} with batch {batch}", x.dims())));
        }
        let t = n / batch;
        let seq = Self::to_sequences(x, batch)?;
        let pos: Vec<f64> = (0..t).map(|i| i as f64).collect();
        let pe = sinusoidal(&pos, c, x.dtype(), x.device())?;
        let out = (&seq + self.attn.forward(&seq.broadcast_add(&pe)?)?)?;
        Self::from_sequences(&out, batch, h, w)
    }
}

/// Keypoint raster to a latent-shaped residual: four 4x4 convolutions
/// (16, 32, 64, 128 channels) then a zero-initialized 1x1 projection.
#[derive(Debug, Clone)]
pub struct PoseGuider {
    convs: Vec<Conv2d>,
    proj: Conv2d,
    raster: usize,
    latent: usize,
}

pub const GUIDER_CHANNELS: [usize; 4] = [16, 32, 64, 128];

impl PoseGuider {
    /// The first `log2(raster / latent)` convolutions have stride 2, the rest
    /// stride 1 with `(1, 2)` padding so the size is kept.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        raster: usize,
        latent: usize,
        latent_channels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let strided = guider_stride_count(raster, latent)?;
        let mut convs = Vec::with_capacity(4);
        let mut input = 1;
        for (i, &ch) in GUIDER_CHANNELS.iter().enumerate() {
            let (stride, pad) = if i < strided { (2, [1; 4]) } else { (1, [1, 2, 1, 2]) };
            convs.push(Conv2d::new(store, &format!("{name}.conv{i}"), input, ch, 4, stride, pad, false, rng)?);
            input = ch;
        }
        let proj = Conv2d::pointwise(store, &format!("{name}.proj"), input, latent_channels, true, rng)?;
        Ok(Self { convs, proj, raster, latent })
    }

    /// `r: (N, 1, raster, raster)` to `(N, c_z, latent, latent)`.
    pub fn forward(&self, r: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = r.dims4()?;
        if c != 1 || h != self.raster || w != self.raster {
            return Err(Error::Shape(format!("pose raster {:?}, expected (N, 1, {r}, {r})", r.dims(), r = self.raster)));
        }
        let mut x = r.clone();
        for conv in &self.convs {
            x = silu(&conv.forward(&x)?)?;
        }
        let y = self.proj.forward(&x)?;
        debug_assert_eq!(y.dim(D::Minus1)?, self.latent);
        Ok(y)
    }
}

pub fn guider_stride_count(raster: usize, latent: usize) -> Result<usize> {
    let mut k = 0;
    while k <= 4 && latent << k < raster {
        k += 1;
    }
    if latent == 0 || latent << k != raster || k > 4 {
        return Err(Error::Config(format!(
            "a {raster}px raster cannot reach a {latent}px latent with at most four stride-2 convolutions"
        )));
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn upsample_repeats() {
        let x = Tensor::arange(0f32, 4.0, &Device::Cpu).unwrap().reshape((1, 1, 2, 2)).unwrap();
        let y: Vec<f32> = upsample2(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(y, vec![0., 0., 1., 1., 0., 0., 1., 1., 2., 2., 3., 3., 2., 2., 3., 3.]);
    }

    #[test]
    fn stride_counts() {
        assert_eq!(guider_stride_count(64, 16).unwrap(), 2);
        assert_eq!(guider_stride_count(16, 16).unwrap(), 0);
        assert_eq!(guider_stride_count(512, 32).unwrap(), 4);
        assert!(guider_stride_count(48, 16).is_err());
        assert!(guider_stride_count(1024, 32).is_err());
    }

    #[test]
    fn replicate_is_frame_major() {
        let x = Tensor::new(&[[1f64], [2.0]], &Device::Cpu).unwrap();
        let y: Vec<Vec<f64>> = replicate_frames(&x, 3).unwrap().to_dtype(DType::F64).unwrap().to_vec2().unwrap();
        assert_eq!(y, vec![vec![1.0], vec![1.0], vec![1.0], vec![2.0], vec![2.0], vec![2.0]]);
    }
}
