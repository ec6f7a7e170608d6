use candle_core::{DType, Tensor, D};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::params::{Init, ParamStore};

fn fan_in_init(fan_in: usize) -> Init {
    Init::Uniform(1.0 / (fan_in.max(1) as f64).sqrt())
}

/// Softmax along the last dimension with the max subtracted first.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        zero: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let init = if zero { Init::Zeros } else { fan_in_init(input) };
        let w = store.create(&format!("{name}.weight"), &[output, input], init, rng)?;
        let b = store.create(&format!("{name}.bias"), &[output], Init::Zeros, rng)?;
        Ok(Self { w, b })
    }

    /// `x: (..., input)`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let input = *dims.last().ok_or_else(|| Error::Shape("linear input is a scalar".into()))?;
        let rows = x.elem_count() / input.max(1);
        let y = x.reshape((rows, input))?.matmul(&self.w.t()?)?.broadcast_add(&self.b)?;
        let mut out = dims;
        *out.last_mut().unwrap() = self.b.dim(0)?;
        Ok(y.reshape(out)?)
    }
}

/// `out[t] = x[t + s]` along `axis`, zero outside the sequence.
pub fn shift_along(x: &Tensor, axis: usize, s: isize) -> Result<Tensor> {
    let t = x.dim(axis)?;
    let a = s.unsigned_abs();
    if s == 0 {
        return Ok(x.clone());
    }
    if a >= t {
        return Ok(x.zeros_like()?);
    }
    Ok(if s > 0 {
        x.narrow(axis, a, t - a)?.pad_with_zeros(axis, 0, a)?
    } else {
        x.narrow(axis, 0, t - a)?.pad_with_zeros(axis, a, 0)?
    })
}

/// Same-length dilated 1-D convolution over channel-last `(B, T, C)`
/// sequences, written as one matmul over stacked shifted copies of the
/// input. Taps that fall entirely outside the sequence are dropped.
#[derive(Debug, Clone)]
pub struct TapConv1d {
    w: Tensor,
    b: Tensor,
    kernel: usize,
    dilation: usize,
    input: usize,
    output: usize,
}

impl TapConv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        dilation: usize,
        zero: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if kernel % 2 == 0 || dilation == 0 {
            return Err(Error::Config("conv1d needs an odd kernel and dilation >= 1".into()));
        }
        let init = if zero { Init::Zeros } else { fan_in_init(input * kernel) };
        let w = store.create(&format!("{name}.weight"), &[output, kernel, input], init, rng)?;
        let b = store.create(&format!("{name}.bias"), &[output], Init::Zeros, rng)?;
        Ok(Self { w, b, kernel, dilation, input, output })
    }

    /// `x: (B, T, input)` → `(B, T, output)`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (bsz, t, c) = x.dims3()?;
        if c != self.input {
            return Err(Error::Shape(format!("conv1d expects {} channels, got {c}", self.input)));
        }
        let centre = (self.kernel / 2) as isize;
        let live: Vec<usize> = (0..self.kernel)
            .filter(|&k| (((k as isize - centre) * self.dilation as isize).unsigned_abs()) < t)
            .collect();
        let (k0, n) = (live[0], live.len());
        let taps = live
            .iter()
            .map(|&k| shift_along(x, 1, (k as isize - centre) * self.dilation as isize))
            .collect::<Result<Vec<_>>>()?;
        let xs = if n == 1 { taps[0].clone() } else { Tensor::cat(&taps, 2)? };
        let xs = xs.reshape((bsz * t, n * self.input))?;
        let w = self.w.narrow(1, k0, n)?.reshape((self.output, n * self.input))?;
        let y = xs.matmul(&w.t()?)?.broadcast_add(&self.b)?;
        Ok(y.reshape((bsz, t, self.output))?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    w: Tensor,
    b: Tensor,
    stride: usize,
    /// left, right, top, bottom
    pad: [usize; 4],
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        pad: [usize; 4],
        zero: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let init = if zero { Init::Zeros } else { fan_in_init(input * kernel * kernel) };
        let w = store.create(&format!("{name}.weight"), &[output, input, kernel, kernel], init, rng)?;
        let b = store.create(&format!("{name}.bias"), &[output], Init::Zeros, rng)?;
        Ok(Self { w, b, stride, pad })
    }

    /// 3x3, stride 1, same padding.
    pub fn same3(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::new(store, name, input, output, 3, 1, [1; 4], false, rng)
    }

    /// 1x1 projection.
    pub fn pointwise(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        zero: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::new(store, name, input, output, 1, 1, [0; 4], zero, rng)
    }

    pub fn output_channels(&self) -> usize {
        self.b.dim(0).unwrap_or(0)
    }

    /// `x: (N, C, H, W)`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let [l, r, t, b] = self.pad;
        let x = if self.pad == [l, l, l, l] {
            x.clone()
        } else {
            x.pad_with_zeros(3, l, r)?.pad_with_zeros(2, t, b)?
        };
        let sym = if self.pad == [l, l, l, l] { l } else { 0 };
        let y = x.conv2d(&self.w, sym, self.stride, 1, 1)?;
        let c = self.b.dim(0)?;
        Ok(y.broadcast_add(&self.b.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: Tensor,
    beta: Tensor,
    groups: usize,
    eps: f64,
}

impl GroupNorm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Config(format!("{channels} channels do not split into {groups} groups")));
        }
        let gamma = store.create(&format!("{name}.weight"), &[channels], Init::Ones, rng)?;
        let beta = store.create(&format!("{name}.bias"), &[channels], Init::Zeros, rng)?;
        Ok(Self { gamma, beta, groups, eps: 1e-5 })
    }

    /// `x: (N, C, H, W)`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let g = x.reshape((n, self.groups, (c / self.groups) * h * w))?;
        let mean = g.mean_keepdim(2)?;
        let centred = g.broadcast_sub(&mean)?;
        let var = centred.sqr()?.mean_keepdim(2)?;
        let normed = centred.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let normed = normed.reshape((n, c, h, w))?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

/// Multi-head self-attention over `(N, L, d)`; the output projection can be
/// zero-initialized so the block starts as an exact no-op residual.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    dim: usize,
}

impl SelfAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        inner: usize,
        out_dim: usize,
        heads: usize,
        zero_out: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || inner % heads != 0 {
            return Err(Error::Config(format!("attention width {inner} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.to_q"), dim, inner, false, rng)?,
            k: Linear::new(store, &format!("{name}.to_k"), dim, inner, false, rng)?,
            v: Linear::new(store, &format!("{name}.to_v"), dim, inner, false, rng)?,
            out: Linear::new(store, &format!("{name}.to_out"), inner, out_dim, zero_out, rng)?,
            heads,
            dim: inner,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, l, _) = x.dims3()?;
        let hd = self.dim / self.heads;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((n, l, self.heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?;
        let a = softmax_last(&scores)?;
        let o = a.matmul(&v)?.transpose(1, 2)?.reshape((n, l, self.dim))?;
        self.out.forward(&o)
    }
}

/// Sinusoidal features of scalar positions, `(len(pos), dim)`.
pub fn sinusoidal(positions: &[f64], dim: usize, dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
            data.push((p * freq).sin());
        }
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
            data.push((p * freq).cos());
        }
        if dim % 2 == 1 {
            data.push(0.0);
        }
    }
    Ok(Tensor::from_vec(data, (positions.len(), dim), device)?.to_dtype(dtype)?)
}
