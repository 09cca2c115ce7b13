use std::f64::consts::PI;

use super::{Tape, Var};
use crate::{Error, Result};

/// Diagonal Gaussian stored as mean and log-variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDiag {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianDiag {
    pub fn new(mean: Vec<f64>, logvar: Vec<f64>) -> Result<Self> {
        if mean.len() != logvar.len() {
            return Err(Error::dims("GaussianDiag", mean.len(), logvar.len()));
        }
        Ok(Self { mean, logvar })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            logvar: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Places both vectors on the tape as `1 × d` constants.
    pub fn to_tape(&self, tape: &mut Tape) -> GaussianDiagVar {
        GaussianDiagVar {
            mean: tape.constant(super::Matrix::row_vector(&self.mean)),
            logvar: tape.constant(super::Matrix::row_vector(&self.logvar)),
        }
    }
}

/// A diagonal Gaussian whose mean and log-variance live on a tape as `1 × d` rows.
#[derive(Clone, Copy, Debug)]
pub struct GaussianDiagVar {
    pub mean: Var,
    pub logvar: Var,
}

impl GaussianDiagVar {
    pub fn dim(&self, tape: &Tape) -> usize {
        tape.value(self.mean).cols()
    }

    pub fn to_values(&self, tape: &Tape) -> GaussianDiag {
        GaussianDiag {
            mean: tape.value(self.mean).as_slice().to_vec(),
            logvar: tape.value(self.logvar).as_slice().to_vec(),
        }
    }
}

/// `log N(x; mean, cov)` on the tape, with `x` and `mean` as `1 × d` rows.
///
/// Differentiable in all three arguments.
pub fn gaussian_logpdf(tape: &mut Tape, x: Var, mean: Var, cov: Var) -> Result<Var> {
    let d = tape.value(x).cols();
    if tape.value(x).rows() != 1 || tape.value(mean).shape() != (1, d) || tape.value(cov).shape() != (d, d) {
        return Err(Error::dims(
            "gaussian_logpdf",
            format!("1x{d} rows and {d}x{d} covariance"),
            format!(
                "x {:?}, mean {:?}, cov {:?}",
                tape.value(x).shape(),
                tape.value(mean).shape(),
                tape.value(cov).shape()
            ),
        ));
    }
    let r = tape.sub(x, mean);
    let rt = tape.transpose(r);
    let sol = tape.spd_solve(cov, rt)?;
    let quad = tape.matmul(r, sol);
    let logdet = tape.spd_logdet(cov)?;
    let s = tape.add(quad, logdet);
    let s = tape.scale(s, -0.5);
    Ok(tape.add_const(s, -0.5 * d as f64 * (2.0 * PI).ln()))
}
