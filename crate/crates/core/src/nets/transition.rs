use super::{glorot, ParamRegistry};
use crate::numcore::{Matrix, Tape, Var};
use crate::rng::{standard_normal, SimRng};
use crate::{Error, Result};

/// Initial process-noise log-variance, `ln 0.1`.
pub const INITIAL_LOG_NOISE: f64 = -std::f64::consts::LN_10;

/// Architecture of the transition MLP `F([z; u])`.
///
/// Hidden layers use `tanh`; the output layer is linear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionNet {
    pub d_z: usize,
    pub d_u: usize,
    pub hidden: Vec<usize>,
}

impl TransitionNet {
    pub fn new(d_z: usize, d_u: usize, hidden: Vec<usize>) -> Self {
        Self { d_z, d_u, hidden }
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.d_z + self.d_u);
        w.extend_from_slice(&self.hidden);
        w.push(self.d_z);
        w
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    /// Parameter count of the network plus the `d_z` noise log-variances.
    pub fn param_count(&self) -> usize {
        let w = self.widths();
        w.windows(2).map(|p| p[0] * p[1] + p[1]).sum::<usize>() + self.d_z
    }

    /// Fresh θ: Glorot-uniform weights, zero biases, `β = ln 0.1`.
    pub fn init_params(&self, rng: &mut SimRng) -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        for (i, p) in self.widths().windows(2).enumerate() {
            reg.push(format!("transition.{i}.weight"), glorot(rng, p[0], p[1]));
            reg.push(format!("transition.{i}.bias"), Matrix::zeros(1, p[1]));
        }
        reg.push("noise.beta", Matrix::filled(1, self.d_z, INITIAL_LOG_NOISE));
        reg
    }

    /// θ with every entry zero (and `β = 0`).
    pub fn zero_params(&self) -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        for (i, p) in self.widths().windows(2).enumerate() {
            reg.push(format!("transition.{i}.weight"), Matrix::zeros(p[0], p[1]));
            reg.push(format!("transition.{i}.bias"), Matrix::zeros(1, p[1]));
        }
        reg.push("noise.beta", Matrix::zeros(1, self.d_z));
        reg
    }

    pub fn check(&self, theta: &ParamRegistry) -> Result<()> {
        if theta.len() != self.param_count() || theta.entries().len() != 2 * self.n_layers() + 1 {
            return Err(Error::dims("transition parameters", self.param_count(), theta.len()));
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, theta: &ParamRegistry, differentiable: bool) -> BoundTheta {
        let vars = if differentiable {
            theta.bind(tape)
        } else {
            theta.bind_constant(tape)
        };
        BoundTheta::from_vars(vars)
    }

    /// Mean next state for a batch of rows: `z` is `N × d_z`, `u` is `N × d_u`
    /// (or `None` when `d_u = 0`).
    pub fn forward(&self, tape: &mut Tape, theta: &BoundTheta, z: Var, u: Option<Var>) -> Result<Var> {
        let (n, dz) = tape.value(z).shape();
        if dz != self.d_z {
            return Err(Error::dims("transition_forward z", self.d_z, dz));
        }
        let mut h = match u {
            Some(u) => {
                let us = tape.value(u).shape();
                if us != (n, self.d_u) {
                    return Err(Error::dims(
                        "transition_forward u",
                        format!("{n}x{}", self.d_u),
                        format!("{}x{}", us.0, us.1),
                    ));
                }
                tape.concat_cols(z, u)
            }
            None if self.d_u == 0 => z,
            None => return Err(Error::dims("transition_forward u", self.d_u, 0)),
        };
        let last = theta.layers.len() - 1;
        for (i, &(w, b)) in theta.layers.iter().enumerate() {
            let a = tape.matmul(h, w);
            let a = tape.add_row(a, b);
            h = if i < last { tape.tanh(a) } else { a };
        }
        Ok(h)
    }

    /// Plain-value convenience wrapper around [`forward`](Self::forward).
    pub fn forward_values(&self, theta: &ParamRegistry, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check(theta)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, theta, false);
        let zv = tape.constant(Matrix::row_vector(z));
        let uv = (self.d_u > 0 || !u.is_empty()).then(|| tape.constant(Matrix::row_vector(u)));
        let out = self.forward(&mut tape, &bound, zv, uv)?;
        Ok(tape.value(out).as_slice().to_vec())
    }
}

/// θ placed on a tape: one `(weight, bias)` pair per layer, then β.
#[derive(Clone, Debug)]
pub struct BoundTheta {
    pub layers: Vec<(Var, Var)>,
    pub beta: Var,
    pub vars: Vec<Var>,
}

impl BoundTheta {
    /// Groups registry-ordered leaves into layers and β.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        let beta = *vars.last().expect("theta has a noise entry");
        let layers = vars[..vars.len() - 1].chunks(2).map(|c| (c[0], c[1])).collect();
        Self { layers, beta, vars }
    }
}

/// Reparameterized process noise `diag(exp(β/2))·ε` for each row of `eps`.
pub fn process_noise(tape: &mut Tape, beta: Var, eps: Var) -> Var {
    let half = tape.scale(beta, 0.5);
    let std = tape.exp(half);
    tape.mul_row(eps, std)
}

/// One draw `diag(exp(β/2))·ε`, `ε ~ N(0, I)`.
pub fn sample_process_noise(beta: &[f64], rng: &mut SimRng) -> Vec<f64> {
    let eps = standard_normal(rng, 1, beta.len());
    scale_noise(beta, eps.as_slice())
}

pub fn scale_noise(beta: &[f64], eps: &[f64]) -> Vec<f64> {
    beta.iter().zip(eps).map(|(b, e)| (0.5 * b).exp() * e).collect()
}
