use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::Gradients;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Magic bytes opening every checkpoint file.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EMIXCKPT";
/// Current checkpoint layout version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Adaptive-moment optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Slot {
    value: Tensor2,
    m: Tensor2,
    v: Tensor2,
}

/// Named parameters plus their optimizer moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("ParamStore::insert"));
        }
        let (r, c) = value.shape();
        self.slots.insert(name.into(), Slot { value, m: Tensor2::zeros(r, c), v: Tensor2::zeros(r, c) });
        Ok(())
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2> {
        self.slots.get(name).map(|s| &s.value).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        self.slots.get_mut(name).map(|s| &mut s.value).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// First and second moment buffers of `name`.
    pub fn moments(&self, name: &str) -> Result<(&Tensor2, &Tensor2)> {
        self.slots.get(name).map(|s| (&s.m, &s.v)).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor2)> {
        self.slots.iter().map(|(k, s)| (k, &s.value))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.slots.keys()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    /// All parameter values concatenated in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.slots.values().flat_map(|s| s.value.data().iter().copied()).collect()
    }

    /// Overwrites the values whose names start with `prefix` in `self` with the
    /// value stored under the same name in `source`.
    pub fn copy_values_from(&mut self, source: &ParamStore, prefix: &str) -> Result<()> {
        for (name, slot) in self.slots.iter_mut().filter(|(k, _)| k.starts_with(prefix)) {
            let src = source.value(name)?;
            slot.value.check_same_shape(src, "copy_values_from")?;
            slot.value.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// One adaptive-moment step minimizing the loss whose gradient is `grads`.
    ///
    /// Parameters without an entry in `grads` are updated as if their gradient
    /// were zero.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads.iter() {
            let slot = self.slots.get(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
            slot.value.check_same_shape(g, "adam_step")?;
            if !g.is_finite() {
                return Err(Error::NonFinite("adam_step gradient"));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, slot) in self.slots.iter_mut() {
            let g = grads.get(name);
            let n = slot.value.len();
            for k in 0..n {
                let gk = g.map_or(0.0, |g| g.data()[k]);
                let m = cfg.beta1 * slot.m.data()[k] + (1.0 - cfg.beta1) * gk;
                let v = cfg.beta2 * slot.v.data()[k] + (1.0 - cfg.beta2) * gk * gk;
                slot.m.data_mut()[k] = m;
                slot.v.data_mut()[k] = v;
                let update = cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
                slot.value.data_mut()[k] -= update;
            }
        }
        Ok(())
    }

    /// Serializes parameter values (not moments) to the checkpoint layout:
    /// magic, version, count, then per parameter name length, name bytes,
    /// rows, cols and little-endian `f64` payload. Integers are `u32` LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.slots.len() as u32).to_le_bytes());
        for (name, slot) in &self.slots {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(slot.value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(slot.value.cols() as u32).to_le_bytes());
            for v in slot.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| Error::Checkpoint("truncated name".into()))?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated payload".into()))?;
                data.push(f64::from_le_bytes(b));
            }
            store.insert(name, Tensor2::new(rows, cols, data)?)?;
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated integer".into()))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a.w", Tensor2::new(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap()).unwrap();
        s.insert("a.b", Tensor2::new(1, 2, vec![0.1, -0.2]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_values_and_zero_moments() {
        let mut s = store();
        let before = s.clone();
        let mut g = Gradients::new();
        g.insert("a.w", Tensor2::zeros(2, 2));
        s.adam_step(&g, &AdamConfig::default()).unwrap();
        assert_eq!(s.flatten(), before.flatten());
        assert_eq!(s.step(), 1);
        assert!(s.moments("a.w").unwrap().0.data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With zero moments, t = 1: m̂ = g, v̂ = g², update = lr·g/(|g|+eps).
        let mut s = store();
        let cfg = AdamConfig::default();
        let g_val = 0.37;
        let mut g = Gradients::new();
        g.insert("a.b", Tensor2::filled(1, 2, g_val));
        s.adam_step(&g, &cfg).unwrap();
        let expected = cfg.lr * g_val / (g_val + cfg.eps);
        let b = s.value("a.b").unwrap();
        assert!((0.1 - b.get(0, 0) - expected).abs() < 1e-15);
        assert!((-0.2 - b.get(0, 1) - expected).abs() < 1e-15);
        assert!((expected - cfg.lr).abs() < 1e-10);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut a = store();
        let mut b = store();
        let mut g = Gradients::new();
        g.insert("a.w", Tensor2::new(2, 2, vec![0.3, -0.1, 2.0, 0.0]).unwrap());
        for _ in 0..2 {
            a.adam_step(&g, &AdamConfig::default()).unwrap();
            b.adam_step(&g, &AdamConfig::default()).unwrap();
        }
        let bits = |s: &ParamStore| s.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.step(), 2);
    }

    #[test]
    fn adam_rejects_bad_gradients() {
        let mut s = store();
        let mut g = Gradients::new();
        g.insert("a.w", Tensor2::zeros(1, 2));
        assert!(matches!(s.adam_step(&g, &AdamConfig::default()), Err(Error::Shape { .. })));
        let mut g = Gradients::new();
        g.insert("nope", Tensor2::zeros(1, 1));
        assert!(matches!(s.adam_step(&g, &AdamConfig::default()), Err(Error::UnknownParam(_))));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn checkpoint_layout() {
        let s = store();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..8], b"EMIXCKPT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        // First entry in name order is "a.b": len 3, name, 1x2, two f64.
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(&bytes[20..23], b"a.b");
        assert_eq!(f64::from_le_bytes(bytes[31..39].try_into().unwrap()), 0.1);
        let back = ParamStore::from_bytes(&bytes).unwrap();
        assert_eq!(back.flatten(), s.flatten());
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ParamStore::from_bytes(&bad).is_err());
    }
}
