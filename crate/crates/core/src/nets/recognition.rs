use super::{glorot, ParamRegistry};
use crate::numcore::{GaussianDiagVar, Matrix, Tape, Var};
use crate::rng::SimRng;
use crate::{Error, Result};

const ENTRIES: [&str; 10] = [
    "recognition.gate.wx",
    "recognition.gate.wh",
    "recognition.gate.b",
    "recognition.cand.wx",
    "recognition.cand.wh",
    "recognition.cand.b",
    "recognition.mean.w",
    "recognition.mean.b",
    "recognition.logvar.w",
    "recognition.logvar.b",
];

/// Recurrent encoder for the initial latent state.
///
/// A single gated cell `h' = h + σ(g) ⊙ (tanh(c) − h)`, i.e.
/// `(1 − σ(g))·h + σ(g)·tanh(c)`, where `g` and `c` are affine in `(x_t, h)`.
/// Two linear heads map the final hidden state to mean and log-variance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecognitionNet {
    pub d_x: usize,
    pub hidden: usize,
    pub d_z: usize,
}

impl RecognitionNet {
    pub fn new(d_x: usize, hidden: usize, d_z: usize) -> Self {
        Self { d_x, hidden, d_z }
    }

    pub fn widths(&self) -> Vec<usize> {
        vec![self.d_x, self.hidden, self.d_z]
    }

    pub fn param_count(&self) -> usize {
        let (dx, h, dz) = (self.d_x, self.hidden, self.d_z);
        2 * (dx * h + h * h + h) + 2 * (h * dz + dz)
    }

    fn shapes(&self) -> [(usize, usize); 10] {
        let (dx, h, dz) = (self.d_x, self.hidden, self.d_z);
        [
            (dx, h),
            (h, h),
            (1, h),
            (dx, h),
            (h, h),
            (1, h),
            (h, dz),
            (1, dz),
            (h, dz),
            (1, dz),
        ]
    }

    pub fn init_params(&self, rng: &mut SimRng) -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        for (name, (r, c)) in ENTRIES.iter().zip(self.shapes()) {
            let m = if r == 1 { Matrix::zeros(1, c) } else { glorot(rng, r, c) };
            reg.push(*name, m);
        }
        reg
    }

    pub fn zero_params(&self) -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        for (name, (r, c)) in ENTRIES.iter().zip(self.shapes()) {
            reg.push(*name, Matrix::zeros(r, c));
        }
        reg
    }

    pub fn check(&self, phi: &ParamRegistry) -> Result<()> {
        let ok = phi.entries().len() == ENTRIES.len()
            && phi
                .entries()
                .iter()
                .zip(self.shapes())
                .all(|(e, s)| e.value.shape() == s);
        if ok {
            Ok(())
        } else {
            Err(Error::dims("recognition parameters", self.param_count(), phi.len()))
        }
    }

    /// Encodes an observation window `T × d_x` into `q(z₀ | x_{1:T})`.
    pub fn forward(&self, tape: &mut Tape, phi: &[Var], x_seq: &Matrix) -> Result<GaussianDiagVar> {
        if x_seq.cols() != self.d_x {
            return Err(Error::dims("recognition_forward", self.d_x, x_seq.cols()));
        }
        if x_seq.rows() == 0 {
            return Err(Error::dims("recognition_forward", "T >= 1", 0));
        }
        let [gwx, gwh, gb, cwx, cwh, cb, mw, mb, vw, vb] = phi else {
            return Err(Error::dims("recognition parameters", ENTRIES.len(), phi.len()));
        };
        let mut h = tape.constant(Matrix::zeros(1, self.hidden));
        for t in 0..x_seq.rows() {
            let x = tape.constant(Matrix::row_vector(x_seq.row(t)));
            let g = affine2(tape, x, *gwx, h, *gwh, *gb);
            let c = affine2(tape, x, *cwx, h, *cwh, *cb);
            let gate = tape.sigmoid(g);
            let cand = tape.tanh(c);
            let diff = tape.sub(cand, h);
            let step = tape.mul(gate, diff);
            h = tape.add(h, step);
        }
        let mean = tape.matmul(h, *mw);
        let mean = tape.add(mean, *mb);
        let logvar = tape.matmul(h, *vw);
        let logvar = tape.add(logvar, *vb);
        Ok(GaussianDiagVar { mean, logvar })
    }
}

fn affine2(tape: &mut Tape, x: Var, wx: Var, h: Var, wh: Var, b: Var) -> Var {
    let a = tape.matmul(x, wx);
    let c = tape.matmul(h, wh);
    let s = tape.add(a, c);
    tape.add(s, b)
}
