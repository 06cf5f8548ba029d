//! Versioned little-endian model checkpoints.
//!
//! Layout (all integers little-endian, reals as `f64`):
//!
//! ```text
//! magic  b"ERSV"
//! u16    version
//! u8     kind        1 = binary, 2 = multiclass
//! binary:      u32 dim, f64 c, f64 bias, f64 * dim weights
//! multiclass:  u32 n_classes, i32 * n_classes, then one binary body per
//!              component in coding-matrix column order
//! ```

use super::{BinarySvm, MulticlassSvm};
use crate::error::{Error, Result};
use crate::Scalar;

pub const SNAPSHOT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"ERSV";
const KIND_BINARY: u8 = 1;
const KIND_MULTICLASS: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot<T> {
    Binary(BinarySvm<T>),
    Multiclass(MulticlassSvm<T>),
}

fn header(kind: u8) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.push(kind);
    out
}

fn put_binary<T: Scalar>(out: &mut Vec<u8>, m: &BinarySvm<T>) {
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    out.extend_from_slice(&m.c().as_f64().to_le_bytes());
    out.extend_from_slice(&m.bias().as_f64().to_le_bytes());
    for w in m.weights() {
        out.extend_from_slice(&w.as_f64().to_le_bytes());
    }
}

pub fn encode_binary<T: Scalar>(m: &BinarySvm<T>) -> Vec<u8> {
    let mut out = header(KIND_BINARY);
    put_binary(&mut out, m);
    out
}

pub fn encode_multiclass<T: Scalar>(m: &MulticlassSvm<T>) -> Vec<u8> {
    let mut out = header(KIND_MULTICLASS);
    out.extend_from_slice(&(m.classes().len() as u32).to_le_bytes());
    for c in m.classes() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for comp in m.components() {
        put_binary(&mut out, comp);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::Snapshot(format!("truncated at byte {}", self.at)))?;
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn binary<T: Scalar>(&mut self) -> Result<BinarySvm<T>> {
        let dim = self.u32()? as usize;
        let c = T::lit(self.f64()?);
        let bias = T::lit(self.f64()?);
        let weights = (0..dim)
            .map(|_| self.f64().map(T::lit))
            .collect::<Result<Vec<_>>>()?;
        Ok(BinarySvm::new(weights, bias, c))
    }
}

pub fn decode_snapshot<T: Scalar>(bytes: &[u8]) -> Result<Snapshot<T>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let snap = match r.take(1)?[0] {
        KIND_BINARY => Snapshot::Binary(r.binary()?),
        KIND_MULTICLASS => {
            let n = r.u32()? as usize;
            let classes = (0..n).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
            let l = n * n.saturating_sub(1) / 2;
            let comps = (0..l).map(|_| r.binary()).collect::<Result<Vec<_>>>()?;
            Snapshot::Multiclass(MulticlassSvm::new(classes, comps)?)
        }
        k => return Err(Error::Snapshot(format!("unknown kind {k}"))),
    };
    if r.at != bytes.len() {
        return Err(Error::Snapshot(format!(
            "{} trailing bytes",
            bytes.len() - r.at
        )));
    }
    Ok(snap)
}
