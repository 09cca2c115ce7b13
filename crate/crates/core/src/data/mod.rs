//! Time-series ingestion, standardization, task partitioning and synthetic
//! benchmark generators.

mod csv_io;
mod partition;
mod synth;

pub use csv_io::{load_csv, write_csv, ColumnRef, SeriesSpec};
pub use partition::{partition_tasks, PartitionConfig, Standardization, TaskDataset, Window};
pub use synth::{
    kalman_oracle, observation_matrix, regime_trajectory, synth_lgssm, synth_regime_series, synth_regimes,
    KalmanOracle, LgssmParams, LgssmSample, RegimeConfig,
};

use crate::numcore::Matrix;
use crate::{Error, Result};

/// Observations (`rows × d_x`) and aligned controls (`rows × d_u`).
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub x: Matrix,
    pub u: Matrix,
}

impl Series {
    pub fn new(x: Matrix, u: Matrix) -> Result<Self> {
        if x.rows() != u.rows() {
            return Err(Error::dims("Series controls", x.rows(), u.rows()));
        }
        Ok(Self { x, u })
    }

    /// Series without controls.
    pub fn observations(x: Matrix) -> Self {
        let u = Matrix::zeros(x.rows(), 0);
        Self { x, u }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn d_x(&self) -> usize {
        self.x.cols()
    }

    pub fn d_u(&self) -> usize {
        self.u.cols()
    }

    pub fn slice(&self, start: usize, end: usize) -> Series {
        Series {
            x: self.x.slice_rows(start, end),
            u: self.u.slice_rows(start, end),
        }
    }

    /// Concatenates series with matching widths in order.
    pub fn concat(parts: &[Series]) -> Result<Series> {
        let first = parts.first().ok_or(Error::InsufficientData {
            required: 1,
            available: 0,
        })?;
        let (dx, du) = (first.d_x(), first.d_u());
        let mut xs = Vec::new();
        let mut us = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.d_x() != dx || p.d_u() != du {
                return Err(Error::dims(
                    "Series::concat",
                    format!("{dx}+{du} columns"),
                    format!("{}+{}", p.d_x(), p.d_u()),
                ));
            }
            xs.extend_from_slice(p.x.as_slice());
            us.extend_from_slice(p.u.as_slice());
            rows += p.len();
        }
        Series::new(Matrix::from_vec(rows, dx, xs)?, Matrix::from_vec(rows, du, us)?)
    }
}
