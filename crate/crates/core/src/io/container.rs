//! The LVWT weight container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LVWT"  u32 version = 1  u64 entry_count
//! per entry: u32 name_len, name (UTF-8), u8 dtype (0 = f32), u8 rank,
//!            rank × u64 dims, u64 data_offset (absolute, from file start)
//! data section: one f32 LE run per entry, in entry order, each starting
//!               at the next 64-byte boundary
//! ```
//!
//! An empty container is exactly the 16-byte header.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{format_err, invalid, Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LVWT";
pub const VERSION: u32 = 1;
pub const ALIGN: usize = 64;
pub const DTYPE_F32: u8 = 0;
pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if shape.len() > MAX_RANK {
            return Err(invalid(format!("tensor `{name}` has rank {} > {MAX_RANK}", shape.len())));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(invalid(format!(
                "tensor `{name}`: shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Self { name: name.into(), shape: t.shape().to_vec(), data: t.data().to_vec() }
    }

    pub fn vector(name: impl Into<String>, v: &[f32]) -> Self {
        Self { name: name.into(), shape: vec![v.len()], data: v.to_vec() }
    }

    pub fn scalar(name: impl Into<String>, v: f32) -> Self {
        Self { name: name.into(), shape: vec![1], data: vec![v] }
    }

    /// Interpret as a 4-D tensor, left-padding the shape with ones.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let mut shape = [1usize; 4];
        let r = self.shape.len();
        shape[4 - r..].copy_from_slice(&self.shape);
        Tensor::new(shape, self.data.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightContainer {
    entries: Vec<TensorEntry>,
}

fn align_up(v: usize) -> usize {
    v.div_ceil(ALIGN) * ALIGN
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<TensorEntry>) -> Result<Self> {
        let mut c = Self::new();
        for e in entries {
            c.push(e)?;
        }
        Ok(c)
    }

    pub fn push(&mut self, entry: TensorEntry) -> Result<()> {
        if self.get(&entry.name).is_some() {
            return Err(invalid(format!("duplicate tensor name `{}`", entry.name)));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn require(&self, name: &str) -> Result<&TensorEntry> {
        self.get(name).ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut TensorEntry> {
        self.entries.iter_mut().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let index_len: usize = self
            .entries
            .iter()
            .map(|e| 4 + e.name.len() + 2 + 8 * e.shape.len() + 8)
            .sum();
        let mut offsets = Vec::with_capacity(self.entries.len());
        let mut cursor = 16 + index_len;
        for e in &self.entries {
            cursor = align_up(cursor);
            offsets.push(cursor);
            cursor += 4 * e.data.len();
        }
        let total = if self.entries.is_empty() { 16 } else { cursor };

        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (e, &off) in self.entries.iter().zip(&offsets) {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(DTYPE_F32);
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(off as u64).to_le_bytes());
        }
        for (e, &off) in self.entries.iter().zip(&offsets) {
            out.resize(off, 0);
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        debug_assert_eq!(out.len(), total);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(format_err(0, format!("bad magic {magic:?}, expected \"LVWT\"")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(format_err(4, format!("unsupported version {version}")));
        }
        let count = r.u64("entry count")?;

        let mut seen = HashSet::new();
        let mut index = Vec::new();
        for i in 0..count {
            let entry_pos = r.pos as u64;
            let name_len = r.u32("name length")? as usize;
            let name_pos = r.pos as u64;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| format_err(name_pos, "tensor name is not valid UTF-8"))?
                .to_string();
            let dtype_pos = r.pos as u64;
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(format_err(dtype_pos, format!("unknown dtype {dtype} for `{name}`")));
            }
            let rank = r.u8("rank")? as usize;
            if rank > MAX_RANK {
                return Err(format_err(dtype_pos + 1, format!("rank {rank} > {MAX_RANK} for `{name}`")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("dimension")? as usize);
            }
            let off_pos = r.pos as u64;
            let offset = r.u64("data offset")?;
            if !seen.insert(name.clone()) {
                return Err(format_err(entry_pos, format!("duplicate tensor name `{name}` (entry {i})")));
            }
            index.push((name, shape, offset, off_pos));
        }

        let index_end = r.pos as u64;
        let mut spans = Vec::with_capacity(index.len());
        let mut entries = Vec::with_capacity(index.len());
        for (name, shape, offset, off_pos) in index {
            let byte_len = shape
                .iter()
                .try_fold(4u64, |acc, &d| acc.checked_mul(d as u64))
                .ok_or_else(|| format_err(off_pos, format!("size of `{name}` overflows")))?;
            if offset < index_end {
                return Err(format_err(off_pos, format!("data of `{name}` overlaps the index")));
            }
            let end = offset
                .checked_add(byte_len)
                .filter(|&e| e <= bytes.len() as u64)
                .ok_or_else(|| {
                    format_err(bytes.len() as u64, format!("truncated data for `{name}`"))
                })?;
            spans.push((offset, end, off_pos));
            let raw = &bytes[offset as usize..end as usize];
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(TensorEntry { name, shape, data });
        }
        spans.sort_unstable();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(format_err(w[1].2, "overlapping tensor data"));
            }
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn write_container(entries: &WeightContainer, path: impl AsRef<Path>) -> Result<()> {
    entries.write(path)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<WeightContainer> {
    WeightContainer::read(path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(format_err(
                self.pos as u64,
                format!("truncated file while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightContainer {
        WeightContainer::from_entries(vec![
            TensorEntry::new("a.weight", vec![2, 3, 1, 1], (0..6).map(|v| v as f32).collect()).unwrap(),
            TensorEntry::vector("a.bias", &[0.5, -0.25]),
            TensorEntry::scalar("a.bn.eps", 1e-5),
        ])
        .unwrap()
    }

    #[test]
    fn empty_container_is_sixteen_bytes() {
        let bytes = WeightContainer::new().to_bytes();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..4], b"LVWT");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert!(WeightContainer::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn single_value_round_trips() {
        let c = WeightContainer::from_entries(vec![TensorEntry::scalar("x", 1.0)]).unwrap();
        let bytes = c.to_bytes();
        // header 16 + index (4 + 1 + 2 + 8 + 8) = 39, data at 64
        assert_eq!(bytes.len(), 68);
        assert_eq!(&bytes[64..], &1.0f32.to_le_bytes());
        assert_eq!(WeightContainer::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn data_offsets_are_aligned() {
        let bytes = sample().to_bytes();
        let c = WeightContainer::from_bytes(&bytes).unwrap();
        assert_eq!(c, sample());
        // first entry offset sits after u32 len + name + dtype + rank + 4 dims
        let off_at = 16 + 4 + "a.weight".len() + 2 + 32;
        let off = u64::from_le_bytes(bytes[off_at..off_at + 8].try_into().unwrap());
        assert_eq!(off % ALIGN as u64, 0);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        match WeightContainer::from_bytes(&bytes) {
            Err(Error::Format { pos: 0, .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncation_everywhere() {
        let bytes = sample().to_bytes();
        for cut in [3, 10, 20, 40, bytes.len() - 1] {
            let err = WeightContainer::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn rejects_duplicates_and_overlaps() {
        let e = TensorEntry::scalar("x", 1.0);
        assert!(WeightContainer::from_entries(vec![e.clone(), e.clone()]).is_err());

        // hand-forge a duplicate by renaming the second entry on disk
        let c = WeightContainer::from_entries(vec![TensorEntry::scalar("x", 1.0), TensorEntry::scalar("y", 2.0)])
            .unwrap();
        let mut bytes = c.to_bytes();
        let second_name = 16 + (4 + 1 + 2 + 8 + 8) + 4;
        assert_eq!(bytes[second_name], b'y');
        bytes[second_name] = b'x';
        let err = WeightContainer::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");

        // point the second entry's data at the first entry's data
        let mut bytes = c.to_bytes();
        let first_off = 16 + 4 + 1 + 2 + 8;
        let second_off = first_off + 8 + 4 + 1 + 2 + 8;
        let off = bytes[first_off..first_off + 8].to_vec();
        bytes[second_off..second_off + 8].copy_from_slice(&off);
        let err = WeightContainer::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("overlapping"), "{err}");
    }

    #[test]
    fn rejects_bad_rank_and_dtype() {
        assert!(TensorEntry::new("t", vec![1; 5], vec![0.0]).is_err());
        let mut bytes = WeightContainer::from_entries(vec![TensorEntry::scalar("x", 1.0)]).unwrap().to_bytes();
        bytes[16 + 4 + 1] = 7;
        assert!(matches!(WeightContainer::from_bytes(&bytes), Err(Error::Format { pos: 21, .. })));
    }

    #[test]
    fn entry_to_tensor_pads_rank() {
        let t = TensorEntry::vector("b", &[1.0, 2.0, 3.0]).to_tensor().unwrap();
        assert_eq!(t.shape(), [1, 1, 1, 3]);
    }
}
