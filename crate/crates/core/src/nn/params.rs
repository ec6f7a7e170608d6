use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Name segment marking non-trainable state (normalization statistics).
pub const BUFFER_SEGMENT: &str = "buffer";

#[derive(Debug, Clone)]
pub enum Init {
    Zeros,
    Ones,
    /// `U(-bound, bound)`
    Uniform(f64),
    Normal(f64),
    Values(Vec<f64>),
}

/// Ordered collection of named variables. Ordering is by name, which keeps
/// hashing, checkpoints and optimizer state deterministic.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub values: ArrayValues,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayValues {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayValues {
    pub fn to_tensor(&self, shape: &[usize], device: &Device) -> Result<Tensor> {
        Ok(match self {
            ArrayValues::F32(v) => Tensor::from_vec(v.clone(), shape, device)?,
            ArrayValues::F64(v) => Tensor::from_vec(v.clone(), shape, device)?,
        })
    }

    fn write_bytes(&self, out: &mut Vec<u8>) {
        match self {
            ArrayValues::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayValues::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

impl NamedArray {
    pub fn from_tensor(name: &str, t: &Tensor) -> Result<Self> {
        let flat = t.flatten_all()?;
        let values = match t.dtype() {
            DType::F32 => ArrayValues::F32(flat.to_vec1()?),
            DType::F64 => ArrayValues::F64(flat.to_vec1()?),
            other => return Err(Error::Shape(format!("unsupported dtype {other:?}"))),
        };
        Ok(Self {
            name: name.to_string(),
            dtype: t.dtype(),
            shape: t.dims().to_vec(),
            values,
        })
    }

    pub fn byte_len(&self) -> usize {
        self.shape.iter().product::<usize>() * if self.dtype == DType::F64 { 8 } else { 4 }
    }

    pub fn bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        self.values.write_bytes(&mut out);
        out
    }
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Creates a new variable; names must be unique.
    pub fn create(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("parameter `{name}` defined twice")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..=b)).collect(),
            Init::Normal(std) => (0..n)
                .map(|_| std * { let v: f64 = StandardNormal.sample(rng); v })
                .collect::<Vec<f64>>(),
            Init::Values(v) => {
                if v.len() != n {
                    return Err(Error::Shape(format!(
                        "init values for `{name}` have length {}, expected {n}",
                        v.len()
                    )));
                }
                v
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn is_buffer(name: &str) -> bool {
        name.split('.').any(|seg| seg == BUFFER_SEGMENT)
    }

    /// Trainable variables whose name satisfies `filter`.
    pub fn trainable(&self, filter: impl Fn(&str) -> bool) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(n, _)| !Self::is_buffer(n) && filter(n))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect()
    }

    pub fn num_parameters(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.trainable(filter).iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Overwrites a variable in place; every tensor handed out for it sees
    /// the new value.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if var.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    pub fn set_values(&self, name: &str, values: &[f64]) -> Result<()> {
        let dims = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?
            .dims()
            .to_vec();
        self.set(name, &Tensor::from_vec(values.to_vec(), dims, &self.device)?)
    }

    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        Ok(var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?)
    }

    pub fn export(&self) -> Result<Vec<NamedArray>> {
        self.vars
            .iter()
            .map(|(n, v)| NamedArray::from_tensor(n, v.as_tensor()))
            .collect()
    }

    /// Loads every array; the set of names must match exactly.
    pub fn import(&self, arrays: &[NamedArray]) -> Result<()> {
        if arrays.len() != self.vars.len() {
            return Err(Error::Schema(format!(
                "checkpoint has {} arrays, model has {}",
                arrays.len(),
                self.vars.len()
            )));
        }
        for a in arrays {
            let t = a.values.to_tensor(&a.shape, &self.device)?;
            self.set(&a.name, &t).map_err(|e| match e {
                Error::Config(_) => Error::Schema(format!("checkpoint array `{}` not in model", a.name)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and raw bytes of the selected variables
    /// (buffers included).
    pub fn hash(&self, filter: impl Fn(&str) -> bool) -> Result<String> {
        let mut h = Sha256::new();
        for (n, v) in self.vars.iter().filter(|(n, _)| filter(n)) {
            let a = NamedArray::from_tensor(n, v.as_tensor())?;
            h.update(n.as_bytes());
            h.update(format!("{:?}", a.shape).as_bytes());
            h.update(a.bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Adds `N(0, std^2)` to every selected trainable variable. Used to move
    /// zero-initialized layers off their identity point in tests.
    pub fn perturb(&self, std: f64, rng: &mut ChaCha8Rng, filter: impl Fn(&str) -> bool) -> Result<()> {
        for (name, var) in self.trainable(filter) {
            let n = var.elem_count();
            let noise: Vec<f64> = (0..n).map(|_| std * { let v: f64 = StandardNormal.sample(rng); v }).collect();
            let noise = Tensor::from_vec(noise, var.dims(), &self.device)?.to_dtype(self.dtype)?;
            let updated = (var.as_tensor() + noise)?;
            self.set(&name, &updated)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn set_is_visible_through_handles() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new(DType::F64);
        let h = s.create("a.w", &[2], Init::Zeros, &mut rng).unwrap();
        s.set_values("a.w", &[1.0, 2.0]).unwrap();
        assert_eq!(h.to_vec1::<f64>().unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn export_import_and_hash() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new(DType::F32);
        s.create("x.w", &[3, 2], Init::Uniform(1.0), &mut rng).unwrap();
        s.create("x.buffer.mean", &[2], Init::Values(vec![0.5, 0.25]), &mut rng).unwrap();
        let arrays = s.export().unwrap();
        let h = s.hash(|_| true).unwrap();

        let mut t = ParamStore::new(DType::F32);
        t.create("x.w", &[3, 2], Init::Zeros, &mut rng).unwrap();
        t.create("x.buffer.mean", &[2], Init::Zeros, &mut rng).unwrap();
        assert_ne!(t.hash(|_| true).unwrap(), h);
        t.import(&arrays).unwrap();
        assert_eq!(t.hash(|_| true).unwrap(), h);
        assert_eq!(s.trainable(|_| true).len(), 1);
    }
}
