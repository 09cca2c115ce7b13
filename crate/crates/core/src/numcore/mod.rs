//! Dense linear algebra and reverse-mode automatic differentiation.

mod fd;
mod gaussian;
pub mod linalg;
mod matrix;
mod tape;

pub use fd::finite_diff_grad;
pub use gaussian::{gaussian_logpdf, GaussianDiag, GaussianDiagVar};
pub use linalg::{cholesky, cholesky_jittered, DEFAULT_JITTER};
pub use matrix::Matrix;
pub use tape::{Tape, Var};
