//! Parameter checkpoint files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "CLDSSMPK"
//! version    u32      1
//! kind       u8       0 = transition θ, 1 = recognition φ
//! n_widths   u32
//! widths     n_widths × u64
//! d_z, d_u, d_x       3 × u64
//! count      u64      number of parameters P
//! payload    P × f64  registry-flattened order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CLDSSMPK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Transition,
    Recognition,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub kind: ParamKind,
    pub widths: Vec<usize>,
    pub d_z: usize,
    pub d_u: usize,
    pub d_x: usize,
}

pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 8 * values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(match header.kind {
        ParamKind::Transition => 0,
        ParamKind::Recognition => 1,
    });
    buf.extend_from_slice(&(header.widths.len() as u32).to_le_bytes());
    for &w in &header.widths {
        buf.extend_from_slice(&(w as u64).to_le_bytes());
    }
    for d in [header.d_z, header.d_u, header.d_x, values.len()] {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::IncompatibleCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::IncompatibleCheckpoint(format!("unsupported version {version}")));
    }
    let kind = match r.take(1)?[0] {
        0 => ParamKind::Transition,
        1 => ParamKind::Recognition,
        k => return Err(Error::IncompatibleCheckpoint(format!("unknown kind {k}"))),
    };
    let n_widths = r.u32()? as usize;
    let widths = (0..n_widths).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let (d_z, d_u, d_x, count) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
    let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::IncompatibleCheckpoint("trailing bytes".into()));
    }
    Ok((
        CheckpointHeader {
            kind,
            widths,
            d_z,
            d_u,
            d_x,
        },
        values,
    ))
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.bytes.len().saturating_mul(8).max(1 << 20))
            .ok_or_else(|| Error::IncompatibleCheckpoint(format!("implausible size {v}")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
