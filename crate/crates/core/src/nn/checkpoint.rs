//! Little-endian binary checkpoint format.
//!
//! ```text
//! magic      4 bytes  "NTW1"
//! count      u32      number of entries
//! table      count x { name_len u16, name utf-8, dtype u8 (0 = f32, 1 = f64),
//!                      rank u8, dims rank x u32 }
//! payloads   entries in table order, raw little-endian elements
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NTW1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            TensorData::F32(_) => f32::DTYPE_TAG,
            TensorData::F64(_) => f64::DTYPE_TAG,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("unexpected end of file".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().unwrap()))
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Checkpoint(format!("entry `{name}`: shape/data mismatch")));
        }
        if name.len() > u16::MAX as usize || shape.len() > u8::MAX as usize {
            return Err(Error::Checkpoint(format!("entry `{name}` cannot be encoded")));
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Checkpoint(format!("duplicate entry `{name}`")));
        }
        self.entries.push(CheckpointEntry { name, shape, data });
        Ok(())
    }

    pub fn push_f32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        self.push(name, shape, TensorData::F32(data))
    }

    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get_f32(&self, name: &str) -> Result<&[f32]> {
        match self.get(name).map(|e| &e.data) {
            Some(TensorData::F32(v)) => Ok(v),
            Some(TensorData::F64(_)) => Err(Error::Checkpoint(format!("entry `{name}` is f64"))),
            None => Err(Error::Checkpoint(format!("missing entry `{name}`"))),
        }
    }

    /// Adds every parameter of `store` under `prefix`.
    pub fn insert_store(&mut self, prefix: &str, store: &ParamStore<f32>) -> Result<()> {
        for p in store.iter() {
            self.push_f32(
                format!("{prefix}{}", p.name),
                p.value.shape().to_vec(),
                p.value.data().to_vec(),
            )?;
        }
        Ok(())
    }

    /// Overwrites parameter values of `store` from entries under `prefix`.
    pub fn restore_store(&self, prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
        for p in store.iter_mut() {
            let name = format!("{prefix}{}", p.name);
            let entry = self
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))?;
            if entry.shape != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "entry `{name}` has shape {:?}, expected {:?}",
                    entry.shape,
                    p.value.shape()
                )));
            }
            let data = self.get_f32(&name)?.to_vec();
            p.value = Tensor::new(entry.shape.clone(), data)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.data.tag());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for e in &self.entries {
            match &e.data {
                TensorData::F32(v) => v.iter().for_each(|x| x.write_le(&mut out)),
                TensorData::F64(v) => v.iter().for_each(|x| x.write_le(&mut out)),
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let b = &mut bytes;
        if take(b, 4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, expected NTW1".into()));
        }
        let count = read_u32(b)? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(b, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(b, name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not utf-8".into()))?;
            let tag = take(b, 1)?[0];
            let rank = take(b, 1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| read_u32(b).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            table.push((name, tag, shape));
        }
        let mut ckpt = Checkpoint::new();
        for (name, tag, shape) in table {
            let n: usize = shape.iter().product();
            let data = match tag {
                0 => TensorData::F32(take(b, n * 4)?.chunks_exact(4).map(f32::read_le).collect()),
                1 => TensorData::F64(take(b, n * 8)?.chunks_exact(8).map(f64::read_le).collect()),
                t => return Err(Error::Checkpoint(format!("unknown dtype tag {t}"))),
            };
            ckpt.push(name, shape, data)?;
        }
        if !b.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", b.len())));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_of_a_single_entry() {
        let mut c = Checkpoint::new();
        c.push_f32("w", vec![2], vec![1.0, -2.5]).unwrap();
        let bytes = c.to_bytes();
        let mut expected = b"NTW1".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.push(b'w');
        expected.push(0);
        expected.push(1);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut c = Checkpoint::new();
        c.push_f32("a", vec![1, 3], vec![0.0; 3]).unwrap();
        let mut bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(
            entries in proptest::collection::vec(
                (proptest::collection::vec(1usize..4, 0..3), any::<bool>(), any::<u64>()),
                0..5,
            )
        ) {
            let mut c = Checkpoint::new();
            for (i, (shape, wide, bits)) in entries.into_iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = if wide {
                    TensorData::F64((0..n).map(|k| f64::from_bits(bits.rotate_left(k as u32))).collect())
                } else {
                    TensorData::F32((0..n).map(|k| f32::from_bits((bits >> (k % 32)) as u32)).collect())
                };
                c.push(format!("p{i}"), shape, data).unwrap();
            }
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
