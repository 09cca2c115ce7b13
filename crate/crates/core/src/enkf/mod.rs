//! Differentiable ensemble Kalman filtering.
//!
//! Every quantity here lives on a [`Tape`], so the total log-likelihood of a
//! sequence is a differentiable function of the transition parameters θ and
//! (through the initial ensemble) of the recognition parameters φ. Noise is
//! drawn from an explicit generator and entered as constants, which is the
//! reparameterization that makes the map differentiable.
//!
//! The measurement update uses perturbed observations:
//! `zⁿ ← ẑⁿ + K(x + ηⁿ − H ẑⁿ)` with `ηⁿ ~ N(0, R)` and
//! `K = Ĉ Hᵀ (H Ĉ Hᵀ + R)⁻¹`.

use crate::nets::{process_noise, BoundTheta, ParamRegistry, RecognitionNet, TransitionNet};
use crate::numcore::{cholesky, gaussian_logpdf, GaussianDiag, GaussianDiagVar, Matrix, Tape, Var};
use crate::rng::{standard_normal, SimRng};
use crate::{Error, Result};

/// Fixed linear-Gaussian emission `x = H z + η`, `η ~ N(0, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionModel {
    pub h: Matrix,
    pub r: Matrix,
    r_chol: Matrix,
}

impl EmissionModel {
    pub fn new(h: Matrix, r: Matrix) -> Result<Self> {
        let d_x = h.rows();
        if r.shape() != (d_x, d_x) {
            return Err(Error::dims(
                "EmissionModel R",
                format!("{d_x}x{d_x}"),
                format!("{:?}", r.shape()),
            ));
        }
        let r_chol = cholesky(&r)?;
        Ok(Self { h, r, r_chol })
    }

    /// `H = [I | 0]` observing the first `d_x` latent coordinates, `R = r·I`.
    pub fn selector(d_x: usize, d_z: usize, r: f64) -> Result<Self> {
        if d_x > d_z {
            return Err(Error::dims("EmissionModel::selector", format!("d_x <= {d_z}"), d_x));
        }
        let mut h = Matrix::zeros(d_x, d_z);
        for i in 0..d_x {
            h[(i, i)] = 1.0;
        }
        Self::new(h, Matrix::identity(d_x).scale(r))
    }

    pub fn d_x(&self) -> usize {
        self.h.rows()
    }

    pub fn d_z(&self) -> usize {
        self.h.cols()
    }

    fn bind(&self, tape: &mut Tape) -> BoundEmission {
        BoundEmission {
            h: tape.constant(self.h.clone()),
            ht: tape.constant(self.h.transpose()),
            r: tape.constant(self.r.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct BoundEmission {
    h: Var,
    ht: Var,
    r: Var,
}

/// Transition network, θ and emission placed on one tape.
pub struct BoundModel<'a> {
    pub net: &'a TransitionNet,
    pub theta: BoundTheta,
    pub emission: &'a EmissionModel,
    em: BoundEmission,
}

impl<'a> BoundModel<'a> {
    /// Binds θ as differentiable leaves (`differentiable = true`) or constants.
    pub fn bind(
        tape: &mut Tape,
        net: &'a TransitionNet,
        theta: &ParamRegistry,
        emission: &'a EmissionModel,
        differentiable: bool,
    ) -> Result<Self> {
        net.check(theta)?;
        let theta = net.bind(tape, theta, differentiable);
        Self::from_bound(tape, net, theta, emission)
    }

    /// Wraps θ that is already on the tape.
    pub fn from_bound(
        tape: &mut Tape,
        net: &'a TransitionNet,
        theta: BoundTheta,
        emission: &'a EmissionModel,
    ) -> Result<Self> {
        if emission.d_z() != net.d_z {
            return Err(Error::dims("emission H columns", net.d_z, emission.d_z()));
        }
        if theta.layers.len() != net.n_layers() {
            return Err(Error::dims(
                "bound transition layers",
                net.n_layers(),
                theta.layers.len(),
            ));
        }
        let em = emission.bind(tape);
        Ok(Self {
            net,
            theta,
            emission,
            em,
        })
    }
}

/// `N × d_z` particle matrix on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Ensemble {
    pub particles: Var,
}

impl Ensemble {
    pub fn new(tape: &Tape, particles: Var) -> Result<Self> {
        if tape.value(particles).rows() < 2 {
            return Err(Error::dims("Ensemble", "N >= 2", tape.value(particles).rows()));
        }
        Ok(Self { particles })
    }

    pub fn from_values(tape: &mut Tape, values: Matrix) -> Result<Self> {
        let v = tape.constant(values);
        Self::new(tape, v)
    }

    pub fn size(&self, tape: &Tape) -> usize {
        tape.value(self.particles).rows()
    }

    pub fn values<'t>(&self, tape: &'t Tape) -> &'t Matrix {
        tape.value(self.particles)
    }

    pub fn mean(&self, tape: &Tape) -> Vec<f64> {
        tape.value(self.particles).mean_rows().into_vec()
    }
}

/// Sample mean `m̂` (`1 × d_z`) and unbiased covariance `Ĉ` (`d_z × d_z`).
#[derive(Clone, Copy, Debug)]
pub struct ForecastMoments {
    pub mean: Var,
    pub cov: Var,
}

fn control_rows(tape: &mut Tape, u_t: Option<&[f64]>, n: usize) -> Option<Var> {
    u_t.filter(|u| !u.is_empty())
        .map(|u| tape.constant(Matrix::repeat_row(u, n)))
}

/// Propagates every particle through `F` and adds fresh process noise.
fn propagate(
    tape: &mut Tape,
    model: &BoundModel,
    ens: Ensemble,
    u_t: Option<&[f64]>,
    rng: &mut SimRng,
) -> Result<Ensemble> {
    let n = ens.size(tape);
    let u = control_rows(tape, u_t, n);
    let mean = model.net.forward(tape, &model.theta, ens.particles, u)?;
    let eps = tape.constant(standard_normal(rng, n, model.net.d_z));
    let noise = process_noise(tape, model.theta.beta, eps);
    Ok(Ensemble {
        particles: tape.add(mean, noise),
    })
}

fn moments(tape: &mut Tape, ens: Ensemble) -> ForecastMoments {
    let n = ens.size(tape);
    let mean = tape.mean_rows(ens.particles);
    let centered = tape.sub_row(ens.particles, mean);
    let ct = tape.transpose(centered);
    let scatter = tape.matmul(ct, centered);
    let cov = tape.scale(scatter, 1.0 / (n as f64 - 1.0));
    let cov = tape.symmetrize(cov);
    ForecastMoments { mean, cov }
}

/// Forecast step: `ẑⁿ = F(zⁿ, u_t) + ξⁿ` and the sample moments of `ẑ`.
pub fn forecast_step(
    tape: &mut Tape,
    model: &BoundModel,
    ens: Ensemble,
    u_t: Option<&[f64]>,
    rng: &mut SimRng,
) -> Result<(Ensemble, ForecastMoments)> {
    let forecast = propagate(tape, model, ens, u_t, rng)?;
    let m = moments(tape, forecast);
    Ok((forecast, m))
}

fn innovation_cov(tape: &mut Tape, em: BoundEmission, cov: Var) -> Var {
    let hc = tape.matmul(em.h, cov);
    let s = tape.matmul(hc, em.ht);
    let s = tape.add(s, em.r);
    tape.symmetrize(s)
}

fn check_obs(model: &BoundModel, x_t: &[f64]) -> Result<()> {
    if x_t.len() != model.emission.d_x() {
        return Err(Error::dims("observation", model.emission.d_x(), x_t.len()));
    }
    Ok(())
}

fn update(
    tape: &mut Tape,
    model: &BoundModel,
    forecast: Ensemble,
    m: ForecastMoments,
    s: Var,
    x_t: &[f64],
    rng: &mut SimRng,
) -> Result<(Ensemble, Var)> {
    let em = model.em;
    let n = forecast.size(tape);
    let hc = tape.matmul(em.h, m.cov);
    // S⁻¹ H Ĉ = Kᵀ since Ĉ and S are symmetric.
    let gain_t = tape.spd_solve(s, hc)?;
    let gain = tape.transpose(gain_t);

    let eta = standard_normal(rng, n, model.emission.d_x()).matmul_nt(&model.emission.r_chol);
    let mut target = eta;
    for i in 0..n {
        for (v, &x) in target.row_mut(i).iter_mut().zip(x_t) {
            *v += x;
        }
    }
    let target = tape.constant(target);
    let predicted = tape.matmul(forecast.particles, em.ht);
    let innovation = tape.sub(target, predicted);
    let correction = tape.matmul(innovation, gain_t);
    let filtered = tape.add(forecast.particles, correction);
    Ok((Ensemble { particles: filtered }, gain))
}

/// Perturbed-observation measurement update. Returns the filtered ensemble
/// and the gain `K̂` (`d_z × d_x`).
pub fn filter_step(
    tape: &mut Tape,
    model: &BoundModel,
    forecast: Ensemble,
    m: ForecastMoments,
    x_t: &[f64],
    rng: &mut SimRng,
) -> Result<(Ensemble, Var)> {
    check_obs(model, x_t)?;
    let s = innovation_cov(tape, model.em, m.cov);
    update(tape, model, forecast, m, s, x_t, rng)
}

fn loglik(tape: &mut Tape, model: &BoundModel, m: ForecastMoments, s: Var, x_t: &[f64]) -> Result<Var> {
    let x = tape.constant(Matrix::row_vector(x_t));
    let mean = tape.matmul(m.mean, model.em.ht);
    gaussian_logpdf(tape, x, mean, s)
}

/// `log N(x_t; H m̂, H Ĉ Hᵀ + R)`.
pub fn step_loglik(tape: &mut Tape, model: &BoundModel, m: ForecastMoments, x_t: &[f64]) -> Result<Var> {
    check_obs(model, x_t)?;
    let s = innovation_cov(tape, model.em, m.cov);
    loglik(tape, model, m, s, x_t)
}

/// Closed-form `KL(q ‖ p)` for diagonal Gaussians.
///
/// Written as `½ Σ [expm1(δ) − δ + (μq − μp)² e^{−lv_p}]` with
/// `δ = lv_q − lv_p`, which is exactly zero for `q == p` and never negative.
pub fn kl_gaussian_diag(tape: &mut Tape, q: GaussianDiagVar, p: GaussianDiagVar) -> Result<Var> {
    let d = q.dim(tape);
    if p.dim(tape) != d {
        return Err(Error::dims("kl_gaussian_diag", d, p.dim(tape)));
    }
    let delta = tape.sub(q.logvar, p.logvar);
    let em1 = tape.expm1(delta);
    let ratio = tape.sub(em1, delta);
    let diff = tape.sub(q.mean, p.mean);
    let sq = tape.square(diff);
    let neg = tape.scale(p.logvar, -1.0);
    let prec = tape.exp(neg);
    let maha = tape.mul(sq, prec);
    let terms = tape.add(ratio, maha);
    let s = tape.sum(terms);
    Ok(tape.scale(s, 0.5))
}

/// Plain-value KL convenience.
pub fn kl_values(q: &GaussianDiag, p: &GaussianDiag) -> Result<f64> {
    let mut tape = Tape::new();
    let qv = q.to_tape(&mut tape);
    let pv = p.to_tape(&mut tape);
    let kl = kl_gaussian_diag(&mut tape, qv, pv)?;
    Ok(tape.scalar(kl))
}

/// Draws `N` particles `μ + exp(lv/2) ⊙ ε` from a diagonal Gaussian.
pub fn sample_ensemble(tape: &mut Tape, q: GaussianDiagVar, n: usize, rng: &mut SimRng) -> Result<Ensemble> {
    let d = q.dim(tape);
    let eps = tape.constant(standard_normal(rng, n, d));
    let half = tape.scale(q.logvar, 0.5);
    let std = tape.exp(half);
    let scaled = tape.mul_row(eps, std);
    let particles = tape.add_row(scaled, q.mean);
    Ensemble::new(tape, particles)
}

/// Outcome of filtering a whole window.
pub struct FilterRun {
    /// `Σ_t log p(x_t | x_{1:t−1})`.
    pub loglik: Var,
    /// Filtered ensembles, one per time step.
    pub filtered: Vec<Ensemble>,
    pub step_logliks: Vec<Var>,
}

impl FilterRun {
    pub fn last(&self) -> Ensemble {
        *self.filtered.last().expect("non-empty window")
    }
}

fn control_row(u_seq: Option<&Matrix>, t: usize) -> Option<&[f64]> {
    u_seq.filter(|u| u.cols() > 0).map(|u| u.row(t))
}

/// Alternates forecast and filter steps over `x_seq` (`T × d_x`).
pub fn filter_sequence(
    tape: &mut Tape,
    model: &BoundModel,
    init: Ensemble,
    x_seq: &Matrix,
    u_seq: Option<&Matrix>,
    rng: &mut SimRng,
) -> Result<FilterRun> {
    let t_len = x_seq.rows();
    if t_len == 0 {
        return Err(Error::dims("filter_sequence", "T >= 1", 0));
    }
    if let Some(u) = u_seq {
        if u.rows() != t_len || u.cols() != model.net.d_u {
            return Err(Error::dims(
                "filter_sequence controls",
                format!("{t_len}x{}", model.net.d_u),
                format!("{:?}", u.shape()),
            ));
        }
    }
    let mut ens = init;
    let mut filtered = Vec::with_capacity(t_len);
    let mut step_logliks = Vec::with_capacity(t_len);
    let mut total: Option<Var> = None;
    for t in 0..t_len {
        let x_t = x_seq.row(t);
        check_obs(model, x_t)?;
        let (fc, m) = forecast_step(tape, model, ens, control_row(u_seq, t), rng)?;
        let s = innovation_cov(tape, model.em, m.cov);
        let ll = loglik(tape, model, m, s, x_t)?;
        let (next, _) = update(tape, model, fc, m, s, x_t, rng)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, ll),
            None => ll,
        });
        step_logliks.push(ll);
        filtered.push(next);
        ens = next;
    }
    Ok(FilterRun {
        loglik: total.expect("T >= 1"),
        filtered,
        step_logliks,
    })
}

/// Draws the initial ensemble from `q_φ(z₀ | x_seq)` and filters `x_seq`.
#[allow(clippy::too_many_arguments)]
pub fn encode_and_filter(
    tape: &mut Tape,
    model: &BoundModel,
    recognition: &RecognitionNet,
    phi: &[Var],
    x_seq: &Matrix,
    u_seq: Option<&Matrix>,
    n: usize,
    rng: &mut SimRng,
) -> Result<(GaussianDiagVar, FilterRun)> {
    if recognition.d_z != model.net.d_z {
        return Err(Error::dims("recognition d_z", model.net.d_z, recognition.d_z));
    }
    let q = recognition.forward(tape, phi, x_seq)?;
    let init = sample_ensemble(tape, q, n, rng)?;
    let run = filter_sequence(tape, model, init, x_seq, u_seq, rng)?;
    Ok((q, run))
}

/// Scalar training objective and its parts.
pub struct SequenceLoss {
    /// `−Σ_t log p(x_t | x_{1:t−1}) + KL(q(z₀|x) ‖ N(0, I))`.
    pub loss: Var,
    pub loglik: Var,
    pub kl: Var,
    pub run: FilterRun,
}

/// Negative EnKF evidence of one window plus the recognition KL term.
///
/// The initial ensemble is drawn from `q_φ(z₀ | x_seq)`; `rng` supplies all
/// noise, so replaying the same seed gives the same function of (θ, φ).
#[allow(clippy::too_many_arguments)]
pub fn sequence_loss(
    tape: &mut Tape,
    model: &BoundModel,
    recognition: &RecognitionNet,
    phi: &[Var],
    x_seq: &Matrix,
    u_seq: Option<&Matrix>,
    n: usize,
    rng: &mut SimRng,
) -> Result<SequenceLoss> {
    let (q, run) = encode_and_filter(tape, model, recognition, phi, x_seq, u_seq, n, rng)?;
    let prior = GaussianDiag::standard(model.net.d_z).to_tape(tape);
    let kl = kl_gaussian_diag(tape, q, prior)?;
    let nll = tape.scale(run.loglik, -1.0);
    let loss = tape.add(nll, kl);
    Ok(SequenceLoss {
        loss,
        loglik: run.loglik,
        kl,
        run,
    })
}

/// Free-running forecast: repeated forecast steps without filtering.
///
/// Row `t` of the result is `H · mean(ensemble_t)`, one `1 × d_x` node per step.
pub fn rollout_forecast(
    tape: &mut Tape,
    model: &BoundModel,
    init: Ensemble,
    u_future: Option<&Matrix>,
    horizon: usize,
    rng: &mut SimRng,
) -> Result<Vec<Var>> {
    if horizon == 0 {
        return Err(Error::dims("rollout_forecast", "horizon >= 1", 0));
    }
    if let Some(u) = u_future.filter(|u| u.cols() > 0) {
        if u.rows() < horizon || u.cols() != model.net.d_u {
            return Err(Error::dims(
                "rollout_forecast controls",
                format!("{horizon}x{}", model.net.d_u),
                format!("{:?}", u.shape()),
            ));
        }
    }
    let mut ens = init;
    let mut rows = Vec::with_capacity(horizon);
    for t in 0..horizon {
        ens = propagate(tape, model, ens, control_row(u_future, t), rng)?;
        let mean = tape.mean_rows(ens.particles);
        rows.push(tape.matmul(mean, model.em.ht));
    }
    Ok(rows)
}

/// Stacks per-step `1 × d_x` forecast rows into a `horizon × d_x` matrix.
pub fn stack_rows(tape: &Tape, rows: &[Var]) -> Matrix {
    let d = rows.first().map_or(0, |r| tape.value(*r).cols());
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        data.extend_from_slice(tape.value(*r).as_slice());
    }
    Matrix::from_vec(rows.len(), d, data).expect("uniform row width")
}
