//! Neural components of the state-space model and their parameter layout.

mod checkpoint;
mod recognition;
mod registry;
mod transition;

use rand::Rng;

pub(crate) use checkpoint::Reader;
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, ParamKind};
pub use recognition::RecognitionNet;
pub use registry::{ParamEntry, ParamRegistry};
pub use transition::{process_noise, sample_process_noise, scale_noise, BoundTheta, TransitionNet, INITIAL_LOG_NOISE};

use crate::numcore::Matrix;
use crate::rng::SimRng;

/// Uniform in `±√(6 / (fan_in + fan_out))`.
pub(crate) fn glorot(rng: &mut SimRng, fan_in: usize, fan_out: usize) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("shape matches draw count")
}
