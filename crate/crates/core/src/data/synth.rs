use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use super::{partition_tasks, PartitionConfig, Series, TaskDataset};
use crate::numcore::Matrix;
use crate::rng::{derive_seed, seeded, standard_normal, SimRng};
use crate::{Error, Result};

/// Linear-Gaussian system `z_t = A z_{t−1} + ξ`, `x_t = H z_t + η` with
/// `ξ ~ N(0, Q)`, `η ~ N(0, R)` and `z_0 ~ N(m0, P0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LgssmParams {
    pub a: Matrix,
    pub h: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub m0: Vec<f64>,
    /// May be all zeros, in which case `z_0 = m0` exactly.
    pub p0: Matrix,
}

impl LgssmParams {
    /// Scalar system with `H = 1`.
    pub fn scalar(a: f64, q: f64, r: f64, m0: f64, p0: f64) -> Self {
        Self {
            a: Matrix::scalar(a),
            h: Matrix::scalar(1.0),
            q: Matrix::scalar(q),
            r: Matrix::scalar(r),
            m0: vec![m0],
            p0: Matrix::scalar(p0),
        }
    }

    pub fn d_z(&self) -> usize {
        self.a.rows()
    }

    pub fn d_x(&self) -> usize {
        self.h.rows()
    }

    fn validate(&self) -> Result<()> {
        let (dz, dx) = (self.d_z(), self.d_x());
        let checks = [
            ("A", self.a.shape(), (dz, dz)),
            ("H", self.h.shape(), (dx, dz)),
            ("Q", self.q.shape(), (dz, dz)),
            ("R", self.r.shape(), (dx, dx)),
            ("P0", self.p0.shape(), (dz, dz)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::InvalidConfig(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        if self.m0.len() != dz {
            return Err(Error::InvalidConfig(format!(
                "m0 has length {}, expected {dz}",
                self.m0.len()
            )));
        }
        Ok(())
    }
}

/// Exact Kalman filter moments and log-evidence of an observed series.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanOracle {
    pub pred_mean: Vec<Vec<f64>>,
    pub pred_cov: Vec<Matrix>,
    pub filt_mean: Vec<Vec<f64>>,
    pub filt_cov: Vec<Matrix>,
    pub step_loglik: Vec<f64>,
    /// `Σ_t log p(x_t | x_{1:t−1})`.
    pub loglik: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LgssmSample {
    pub series: Series,
    /// Latent states `z_1..z_T`.
    pub states: Matrix,
    pub oracle: KalmanOracle,
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

fn chol_factor(m: &DMatrix<f64>, name: &str) -> Result<Option<DMatrix<f64>>> {
    if m.iter().all(|v| *v == 0.0) {
        return Ok(None);
    }
    Cholesky::new(m.clone())
        .map(|c| Some(c.l()))
        .ok_or_else(|| Error::InvalidConfig(format!("{name} is not positive definite")))
}

fn draw(rng: &mut SimRng, l: &Option<DMatrix<f64>>, d: usize) -> DVector<f64> {
    match l {
        Some(l) => l * DVector::from_vec(standard_normal(rng, d, 1).into_vec()),
        None => DVector::zeros(d),
    }
}

/// Kalman filter on `x` (`T × d_x`), computed with dense `nalgebra` algebra.
pub fn kalman_oracle(p: &LgssmParams, x: &Matrix) -> Result<KalmanOracle> {
    p.validate()?;
    let (a, h, q, r) = (to_na(&p.a), to_na(&p.h), to_na(&p.q), to_na(&p.r));
    let mut m = DVector::from_column_slice(&p.m0);
    let mut c = to_na(&p.p0);
    let d_x = p.d_x() as f64;
    let mut out = KalmanOracle {
        pred_mean: Vec::new(),
        pred_cov: Vec::new(),
        filt_mean: Vec::new(),
        filt_cov: Vec::new(),
        step_loglik: Vec::new(),
        loglik: 0.0,
    };
    for t in 0..x.rows() {
        let mp = &a * &m;
        let cp = &a * &c * a.transpose() + &q;
        let s = &h * &cp * h.transpose() + &r;
        let s = (&s + s.transpose()) * 0.5;
        let chol = Cholesky::new(s.clone())
            .ok_or_else(|| Error::InvalidConfig("innovation covariance is not positive definite".into()))?;
        let resid = DVector::from_column_slice(x.row(t)) - &h * &mp;
        let sol = chol.solve(&resid);
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let ll = -0.5 * (d_x * (2.0 * std::f64::consts::PI).ln() + logdet + resid.dot(&sol));
        let gain = &cp * h.transpose() * chol.inverse();
        m = &mp + &gain * &resid;
        c = &cp - &gain * &h * &cp;
        c = (&c + c.transpose()) * 0.5;
        out.pred_mean.push(mp.iter().copied().collect());
        out.pred_cov.push(from_na(&cp));
        out.filt_mean.push(m.iter().copied().collect());
        out.filt_cov.push(from_na(&c));
        out.step_loglik.push(ll);
        out.loglik += ll;
    }
    Ok(out)
}

/// Simulates `t_total` steps and runs the exact Kalman filter on the result.
pub fn synth_lgssm(p: &LgssmParams, t_total: usize, seed: u64) -> Result<LgssmSample> {
    p.validate()?;
    let (dz, dx) = (p.d_z(), p.d_x());
    let (a, h) = (to_na(&p.a), to_na(&p.h));
    let lq = chol_factor(&to_na(&p.q), "Q")?;
    let lr = chol_factor(&to_na(&p.r), "R")?;
    let lp0 = chol_factor(&to_na(&p.p0), "P0")?;
    let mut rng = seeded(seed);
    let mut z = DVector::from_column_slice(&p.m0) + draw(&mut rng, &lp0, dz);
    let mut states = Matrix::zeros(t_total, dz);
    let mut x = Matrix::zeros(t_total, dx);
    for t in 0..t_total {
        z = &a * &z + draw(&mut rng, &lq, dz);
        let obs = &h * &z + draw(&mut rng, &lr, dx);
        states.row_mut(t).copy_from_slice(z.as_slice());
        x.row_mut(t).copy_from_slice(obs.as_slice());
    }
    let oracle = kalman_oracle(p, &x)?;
    Ok(LgssmSample {
        series: Series::observations(x),
        states,
        oracle,
    })
}

/// Settings of the rotating-regime benchmark.
///
/// Task `j` (1-based) follows a damped 2-D rotation by `angle_step · j`
/// radians per step, observed through a shared `d_x × 2` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeConfig {
    pub n_tasks: usize,
    pub d_x: usize,
    pub window_len: usize,
    pub n_windows: usize,
    pub test_len: usize,
    pub decay: f64,
    pub angle_step: f64,
    pub process_std: f64,
    pub obs_std: f64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            n_tasks: 2,
            d_x: 2,
            window_len: 50,
            n_windows: 4,
            test_len: 50,
            decay: 0.995,
            angle_step: 0.1,
            process_std: 0.05,
            obs_std: 0.05,
        }
    }
}

impl RegimeConfig {
    pub fn task_len(&self) -> usize {
        self.window_len * self.n_windows + self.test_len
    }

    pub fn angle(&self, task: usize) -> f64 {
        self.angle_step * task as f64
    }

    fn validate(&self) -> Result<()> {
        if self.n_tasks < 2 {
            return Err(Error::InvalidConfig(
                "the regime benchmark needs at least 2 tasks".into(),
            ));
        }
        if self.d_x == 0 || self.window_len == 0 || self.n_windows == 0 || self.test_len == 0 {
            return Err(Error::InvalidConfig("regime lengths and d_x must be positive".into()));
        }
        if !(self.process_std >= 0.0 && self.obs_std >= 0.0) {
            return Err(Error::InvalidConfig("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// Shared observation matrix with rows `(cos(iπ/d_x), sin(iπ/d_x))`.
pub fn observation_matrix(d_x: usize) -> Matrix {
    let mut c = Matrix::zeros(d_x, 2);
    for i in 0..d_x {
        let a = i as f64 * std::f64::consts::PI / d_x as f64;
        c[(i, 0)] = a.cos();
        c[(i, 1)] = a.sin();
    }
    c
}

fn rotate(z: [f64; 2], angle: f64, decay: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [decay * (c * z[0] - s * z[1]), decay * (s * z[0] + c * z[1])]
}

/// Noiseless latent trajectory `z_t = decay · Rot(angle) · z_{t−1}`, `steps × 2`.
pub fn regime_trajectory(angle: f64, decay: f64, z0: [f64; 2], steps: usize) -> Matrix {
    let mut out = Matrix::zeros(steps, 2);
    let mut z = z0;
    for t in 0..steps {
        z = rotate(z, angle, decay);
        out.row_mut(t).copy_from_slice(&z);
    }
    out
}

/// Raw (unstandardized) observation series of every task.
pub fn synth_regime_series(cfg: &RegimeConfig, seed: u64) -> Result<Vec<Series>> {
    cfg.validate()?;
    let c = observation_matrix(cfg.d_x);
    (1..=cfg.n_tasks)
        .map(|j| {
            let mut rng = seeded(derive_seed(seed, &[j as u64]));
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let mut z = [phase.cos(), phase.sin()];
            let mut x = Matrix::zeros(cfg.task_len(), cfg.d_x);
            for t in 0..cfg.task_len() {
                let xi = standard_normal(&mut rng, 1, 2);
                z = rotate(z, cfg.angle(j), cfg.decay);
                z[0] += cfg.process_std * xi.as_slice()[0];
                z[1] += cfg.process_std * xi.as_slice()[1];
                let eta = standard_normal(&mut rng, 1, cfg.d_x);
                for (i, v) in x.row_mut(t).iter_mut().enumerate() {
                    *v = c[(i, 0)] * z[0] + c[(i, 1)] * z[1] + cfg.obs_std * eta.as_slice()[i];
                }
            }
            Ok(Series::observations(x))
        })
        .collect()
}

/// The regime benchmark as sequential tasks, standardized with task-1 statistics.
pub fn synth_regimes(cfg: &RegimeConfig, seed: u64) -> Result<Vec<TaskDataset>> {
    let parts = synth_regime_series(cfg, seed)?;
    let series = Series::concat(&parts)?;
    let pcfg = PartitionConfig {
        n_tasks: cfg.n_tasks,
        train_len: cfg.task_len(),
        window_len: cfg.window_len,
        n_windows: cfg.n_windows,
        test_len: cfg.test_len,
    };
    partition_tasks(&series, &pcfg, seed)
}
