//! Importance-state files.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic       8 bytes  "CLDSSMIS"
//! version     u32      1
//! kind        u8
//! λ, γ, ε     3 × f64
//! P           u64
//! tasks       u64      consolidated task count J
//! payload     kind-dependent:
//!   ewc_online  anchor, M̃                     2P × f64
//!   mas         anchor, Ω                     2P × f64
//!   si          anchor, Λ, ω, θ_start         4P × f64
//!   ewc_vanilla J × (θ*_k, M_k)               2PJ × f64
//!   lwf         anchor P × f64, then J contexts, each
//!               task_id, seed, N, d_z, H, d_u, d_x   7 × u64
//!               init N·d_z, controls H·d_u, forecast H·d_x   f64
//! ```

use std::path::Path;

use super::{ForecastContext, ImportanceState, RegularizerConfig, RegularizerKind};
use crate::nets::Reader;
use crate::numcore::Matrix;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CLDSSMIS";
const VERSION: u32 = 1;

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_f64s(r: &mut Reader, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| r.f64()).collect()
}

fn get_matrix(r: &mut Reader, rows: usize, cols: usize) -> Result<Matrix> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::IncompatibleCheckpoint("matrix size overflow".into()))?;
    Matrix::from_vec(rows, cols, get_f64s(r, n)?)
}

impl ImportanceState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(self.config.kind.code());
        put_f64s(&mut buf, &[self.config.lambda, self.config.gamma, self.config.epsilon]);
        put_u64(&mut buf, self.param_count as u64);
        put_u64(&mut buf, self.task_count as u64);
        match self.config.kind {
            RegularizerKind::None => {}
            RegularizerKind::EwcOnline | RegularizerKind::Mas => {
                put_f64s(&mut buf, &self.anchor);
                put_f64s(&mut buf, &self.weights);
            }
            RegularizerKind::Si => {
                put_f64s(&mut buf, &self.anchor);
                put_f64s(&mut buf, &self.weights);
                put_f64s(&mut buf, &self.omega);
                put_f64s(&mut buf, &self.theta_start);
            }
            RegularizerKind::EwcVanilla => {
                for (a, m) in &self.pairs {
                    put_f64s(&mut buf, a);
                    put_f64s(&mut buf, m);
                }
            }
            RegularizerKind::Lwf => {
                put_f64s(&mut buf, &self.anchor);
                for c in &self.contexts {
                    put_u64(&mut buf, c.task_id as u64);
                    put_u64(&mut buf, c.seed);
                    for d in [
                        c.init.rows(),
                        c.init.cols(),
                        c.controls.rows(),
                        c.controls.cols(),
                        c.forecast.cols(),
                    ] {
                        put_u64(&mut buf, d as u64);
                    }
                    put_f64s(&mut buf, c.init.as_slice());
                    put_f64s(&mut buf, c.controls.as_slice());
                    put_f64s(&mut buf, c.forecast.as_slice());
                }
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::IncompatibleCheckpoint("not an importance-state file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::IncompatibleCheckpoint(format!("unsupported version {version}")));
        }
        let code = r.take(1)?[0];
        let kind = RegularizerKind::from_code(code)
            .ok_or_else(|| Error::IncompatibleCheckpoint(format!("unknown regularizer code {code}")))?;
        let config = RegularizerConfig {
            kind,
            lambda: r.f64()?,
            gamma: r.f64()?,
            epsilon: r.f64()?,
        };
        let p = r.usize()?;
        let tasks = r.usize()?;
        let mut s = ImportanceState::new(config, p).map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
        s.task_count = tasks;
        match kind {
            RegularizerKind::None => {}
            RegularizerKind::EwcOnline | RegularizerKind::Mas => {
                s.anchor = get_f64s(&mut r, p)?;
                s.weights = get_f64s(&mut r, p)?;
            }
            RegularizerKind::Si => {
                s.anchor = get_f64s(&mut r, p)?;
                s.weights = get_f64s(&mut r, p)?;
                s.omega = get_f64s(&mut r, p)?;
                s.theta_start = get_f64s(&mut r, p)?;
            }
            RegularizerKind::EwcVanilla => {
                for _ in 0..tasks {
                    let a = get_f64s(&mut r, p)?;
                    let m = get_f64s(&mut r, p)?;
                    s.pairs.push((a, m));
                }
            }
            RegularizerKind::Lwf => {
                s.anchor = get_f64s(&mut r, p)?;
                for _ in 0..tasks {
                    let task_id = r.usize()?;
                    let seed = r.u64()?;
                    let (n, d_z, h, d_u, d_x) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?);
                    s.contexts.push(ForecastContext {
                        task_id,
                        seed,
                        init: get_matrix(&mut r, n, d_z)?,
                        controls: get_matrix(&mut r, h, d_u)?,
                        forecast: get_matrix(&mut r, h, d_x)?,
                    });
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::IncompatibleCheckpoint("trailing bytes".into()));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
