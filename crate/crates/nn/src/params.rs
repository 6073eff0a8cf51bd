//! Named parameter storage and the checkpoint archive format.
//!
//! Archive layout (all integers little-endian):
//!
//! ```text
//! "EPRGNN01\n"
//! metadata lines "key=value\n" ... terminated by an empty line "\n"
//! u32 parameter count
//! per parameter: u32 name length, name bytes (UTF-8), u32 rank,
//!                u64 per dimension, f64 per value
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::Tensor;
use crate::NnError;

const MAGIC: &[u8] = b"EPRGNN01\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Overwrites values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<(), NnError> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let id = other
                .by_name(name)
                .ok_or_else(|| NnError::Checkpoint(format!("missing parameter {name}")))?;
            let src = other.get(id);
            if src.shape() != t.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "load_from",
                    left: t.shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            *t = src.clone();
        }
        Ok(())
    }

    pub fn write_archive<W: Write>(&self, mut w: W, metadata: &BTreeMap<String, String>) -> Result<(), NnError> {
        w.write_all(MAGIC)?;
        for (k, v) in metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(NnError::Checkpoint(format!("bad metadata entry {k:?}")));
            }
            writeln!(w, "{k}={v}")?;
        }
        w.write_all(b"\n")?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in self.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_archive<R: BufRead>(mut r: R) -> Result<(ParamSet, BTreeMap<String, String>), NnError> {
        let mut magic = vec![0u8; MAGIC.len()];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(NnError::Checkpoint("not a parameter archive".into()));
        }
        let mut metadata = BTreeMap::new();
        loop {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(NnError::Checkpoint("truncated metadata header".into()));
            }
            let line = line.trim_end_matches('\n');
            if line.is_empty() {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NnError::Checkpoint(format!("bad metadata line {line:?}")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        let count = read_u32(&mut r)? as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name =
                String::from_utf8(name).map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            set.add(name, Tensor::new(shape, data)?);
        }
        Ok((set, metadata))
    }

    pub fn save(&self, path: &Path, metadata: &BTreeMap<String, String>) -> Result<(), NnError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_archive(&mut w, metadata)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(ParamSet, BTreeMap<String, String>), NnError> {
        Self::read_archive(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip() {
        let mut p = ParamSet::new();
        p.add(
            "dense.w",
            Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-300, -7.25]).unwrap(),
        );
        p.add("dense.b", Tensor::vector(vec![0.5, 0.25, f64::MIN_POSITIVE]));
        let mut meta = BTreeMap::new();
        meta.insert("hidden".to_string(), "64".to_string());
        meta.insert("seed".to_string(), "7".to_string());
        let mut buf = Vec::new();
        p.write_archive(&mut buf, &meta).unwrap();
        let (q, m) = ParamSet::read_archive(&buf[..]).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta, m);
    }

    #[test]
    fn rejects_foreign_bytes() {
        let err = ParamSet::read_archive(&b"hello world\n\n"[..]).unwrap_err();
        assert!(matches!(err, NnError::Checkpoint(_)));
    }

    #[test]
    fn load_from_checks_shapes() {
        let mut a = ParamSet::new();
        a.add("w", Tensor::zeros(&[2, 2]));
        let mut b = ParamSet::new();
        b.add("w", Tensor::zeros(&[3, 2]));
        assert!(a.load_from(&b).is_err());
    }
}
