use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TensorError};
use crate::tensor::{Real, Tensor};
use crate::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Named parameters of one network instance, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, tensor });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Copies values from `other` by name. Every parameter here must be
    /// present in `other` with the same shape; extra entries in `other` are
    /// an error too.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(TensorError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for p in &mut self.params {
            let src = other
                .id(&p.name)
                .map(|id| other.get(id))
                .ok_or_else(|| TensorError::UnknownParam(p.name.clone()))?;
            if src.tensor.shape() != p.tensor.shape() {
                return Err(TensorError::Shape {
                    op: "load_from",
                    lhs: p.tensor.shape().to_vec(),
                    rhs: src.tensor.shape().to_vec(),
                });
            }
            p.tensor = src.tensor.clone();
        }
        Ok(())
    }
}

/// Zero-initialized gradient storage aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GradBuffer<T> {
    grads: Vec<Vec<T>>,
}

impl<T: Real> GradBuffer<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            grads: store.params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.grads[id.0]
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.grads.iter_mut().flatten() {
            *g = *g * factor;
        }
    }

    pub fn is_all_zero(&self, id: ParamId) -> bool {
        self.grads[id.0].iter().all(|&g| g == T::zero())
    }

    pub fn has_non_finite(&self) -> bool {
        self.grads.iter().flatten().any(|g| !g.is_finite())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seeded parameter initialization. Each parameter draws from its own stream
/// keyed by `(seed, name)`, so adding or removing a parameter never perturbs
/// the values of the others.
#[derive(Copy, Clone, Debug)]
pub struct Initializer {
    pub seed: u64,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()))
    }

    pub fn uniform<T: Real>(&self, store: &mut ParamStore<T>, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let mut rng = self.rng(name);
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        store.add(name, Tensor::from_f64(shape.to_vec(), &values)?)
    }

    pub fn normal<T: Real>(&self, store: &mut ParamStore<T>, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let mut rng = self.rng(name);
        let dist = Normal::new(0.0, std).expect("positive std");
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        store.add(name, Tensor::from_f64(shape.to_vec(), &values)?)
    }

    pub fn constant<T: Real>(&self, store: &mut ParamStore<T>, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        store.add(name, Tensor::full(shape, T::lit(value)))
    }
}

/// Writes a little-endian `CTFW` container.
pub fn write_checkpoint(mut w: impl Write, store: &ParamStore<f32>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in &store.params {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| TensorError::Checkpoint(format!("name too long: {}", p.name)))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.tensor.shape();
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.tensor.numel() * 4);
        for v in p.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| TensorError::Checkpoint(format!("truncated: {e}")))?;
    Ok(b)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ParamStore<f32>> {
    let magic: [u8; 4] = read_exact(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = u16::from_le_bytes(read_exact(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_exact(&mut r)?);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| TensorError::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        let rank = read_exact::<1>(&mut r)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_exact(&mut r)?) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)
            .map_err(|e| TensorError::Checkpoint(format!("truncated values of {name}: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.add(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a.w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(s.add("a.w", Tensor::zeros(&[2])), Err(TensorError::DuplicateParam(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let init = Initializer::new(7);
        let mut s = ParamStore::<f32>::new();
        init.normal(&mut s, "fusion.block1.attn.wq", &[3, 4], 1.0).unwrap();
        init.uniform(&mut s, "b", &[5], 0.5).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &s).unwrap();
        assert_eq!(&bytes[..4], b"CTFW");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]), 2);
        let back = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(back, s);
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn init_streams_are_independent_of_registration_order() {
        let init = Initializer::new(3);
        let mut a = ParamStore::<f64>::new();
        init.normal(&mut a, "x", &[4], 1.0).unwrap();
        init.normal(&mut a, "y", &[4], 1.0).unwrap();
        let mut b = ParamStore::<f64>::new();
        init.normal(&mut b, "y", &[4], 1.0).unwrap();
        assert_eq!(a.get(a.id("y").unwrap()).tensor, b.get(b.id("y").unwrap()).tensor);
    }
}
