//! Binary parameter checkpoints.
//!
//! Layout: `b"WSCD"`, version byte `1`, then one record per parameter in
//! lexicographic name order: `u16` name length, UTF-8 name, `u8` rank,
//! `rank × u32` dims, then the values as little-endian `f32`. All integers
//! are little-endian. The file ends after the last record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{ParamStore, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"WSCD";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub params: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    /// Snapshot of every parameter whose name starts with one of `prefixes`
    /// (all parameters when `prefixes` is empty).
    pub fn from_store<T: Real>(store: &ParamStore<T>, prefixes: &[&str]) -> Self {
        let params = store
            .iter()
            .filter(|p| prefixes.is_empty() || prefixes.iter().any(|pre| p.name.starts_with(pre)))
            .map(|p| {
                let mut t: Tensor<f32> = p.value.cast();
                t.drop_grad();
                (p.name.clone(), t)
            })
            .collect();
        Self { params }
    }

    /// Copies matching parameters into `store`. Every checkpoint entry
    /// starting with `prefix` must exist in the store with the same shape.
    pub fn load_into<T: Real>(&self, store: &mut ParamStore<T>, prefix: &str) -> Result<usize> {
        let mut loaded = 0;
        for (name, t) in self.params.iter().filter(|(n, _)| n.starts_with(prefix)) {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Format(format!("parameter {name} not present in model")))?;
            if store.value(id).shape() != t.shape() {
                return Err(Error::dim(
                    "checkpoint",
                    format!(
                        "{name}: model has {:?}, checkpoint has {:?}",
                        store.value(id).shape(),
                        t.shape()
                    ),
                ));
            }
            store.set_value(id, t.cast())?;
            loaded += 1;
        }
        Ok(loaded)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.params.get(name)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[FORMAT_VERSION])?;
        for (name, t) in &self.params {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(bytes)?;
            let rank = u8::try_from(t.rank()).map_err(|_| Error::Format("rank > 255".into()))?;
            w.write_all(&[rank])?;
            for d in t.shape() {
                let d = u32::try_from(*d).map_err(|_| Error::Format("dimension > u32".into()))?;
                w.write_all(&d.to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = cur.take(1)?[0];
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut params = BTreeMap::new();
        let mut last: Option<String> = None;
        while cur.pos < bytes.len() {
            let len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            if last.as_ref().is_some_and(|prev| *prev >= name) {
                return Err(Error::Format(format!("parameter {name} out of order")));
            }
            let rank = cur.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize);
            }
            let count: usize = shape.iter().product();
            let raw = cur.take(
                count
                    .checked_mul(4)
                    .ok_or_else(|| Error::Format("size overflow".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.insert(name.clone(), Tensor::new(shape, data)?);
            last = Some(name);
        }
        Ok(Self { params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format("truncated checkpoint".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = BTreeMap::new();
        params.insert("b".to_string(), Tensor::new(vec![2], vec![1.5f32, -2.0]).unwrap());
        params.insert("a".to_string(), Tensor::new(vec![1, 1, 1], vec![0.25f32]).unwrap());
        Checkpoint { params }
    }

    #[test]
    fn exact_byte_layout() {
        let bytes = sample().to_bytes();
        let mut expect = b"WSCD\x01".to_vec();
        // "a": rank 3, dims 1,1,1
        expect.extend([1, 0, b'a', 3, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        expect.extend(0.25f32.to_le_bytes());
        expect.extend([1, 0, b'b', 1, 2, 0, 0, 0]);
        expect.extend(1.5f32.to_le_bytes());
        expect.extend((-2.0f32).to_le_bytes());
        assert_eq!(bytes, expect);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), sample());
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Format(_))));
        for cut in [3, 6, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn load_into_checks_shapes() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::zeros(&[1, 1, 1])).unwrap();
        store.add("b", Tensor::zeros(&[3])).unwrap();
        let err = sample().load_into(&mut store, "").unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
        assert_eq!(sample().load_into(&mut store, "a").unwrap(), 1);
        assert_eq!(store.by_name("a").unwrap().value.data(), &[0.25]);
    }
}
