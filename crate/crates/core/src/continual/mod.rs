//! Regularization-based continual learning.
//!
//! Each method contributes a differentiable penalty on θ while a task is
//! trained, and updates its [`ImportanceState`] once the task is finished.
//! Recognition parameters φ are task-specific and never penalized.

mod importance;
mod serialize;

pub use importance::{empirical_fisher, lwf_context, mas_importance, state_importance, TaskContext};

use std::fmt;
use std::str::FromStr;

use crate::enkf::{rollout_forecast, BoundModel, EmissionModel, Ensemble};
use crate::nets::{ParamRegistry, TransitionNet};
use crate::numcore::{Matrix, Tape, Var};
use crate::rng::seeded;
use crate::{Error, Result};

/// Default SI damping `ε`.
pub const SI_DAMPING: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegularizerKind {
    /// Plain sequential fine-tuning.
    None,
    /// One `(θ*_k, M_k)` pair per finished task.
    EwcVanilla,
    /// A single decayed running Fisher sum.
    EwcOnline,
    Mas,
    Si,
    Lwf,
}

impl RegularizerKind {
    pub const ALL: [RegularizerKind; 6] = [
        RegularizerKind::None,
        RegularizerKind::EwcVanilla,
        RegularizerKind::EwcOnline,
        RegularizerKind::Mas,
        RegularizerKind::Si,
        RegularizerKind::Lwf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::EwcVanilla => "ewc_vanilla",
            RegularizerKind::EwcOnline => "ewc_online",
            RegularizerKind::Mas => "mas",
            RegularizerKind::Si => "si",
            RegularizerKind::Lwf => "lwf",
        }
    }

    /// Weights used for the reported experiments: 1000 for EWC, 800 for MAS,
    /// 1 for SI and LwF.
    pub fn default_lambda(self) -> f64 {
        match self {
            RegularizerKind::None => 0.0,
            RegularizerKind::EwcVanilla | RegularizerKind::EwcOnline => 1000.0,
            RegularizerKind::Mas => 800.0,
            RegularizerKind::Si | RegularizerKind::Lwf => 1.0,
        }
    }

    fn code(self) -> u8 {
        match self {
            RegularizerKind::None => 0,
            RegularizerKind::EwcVanilla => 1,
            RegularizerKind::EwcOnline => 2,
            RegularizerKind::Mas => 3,
            RegularizerKind::Si => 4,
            RegularizerKind::Lwf => 5,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == c)
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;

    /// Accepts the canonical names plus `dssm`/`baseline` for `none` and
    /// `ewc` for `ewc_online`, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let k = s.trim().to_ascii_lowercase().replace('-', "_");
        match k.as_str() {
            "none" | "dssm" | "baseline" => Ok(RegularizerKind::None),
            "ewc_vanilla" => Ok(RegularizerKind::EwcVanilla),
            "ewc" | "ewc_online" | "online_ewc" => Ok(RegularizerKind::EwcOnline),
            "mas" => Ok(RegularizerKind::Mas),
            "si" => Ok(RegularizerKind::Si),
            "lwf" => Ok(RegularizerKind::Lwf),
            _ => Err(Error::InvalidConfig(format!("unknown regularizer `{s}`"))),
        }
    }
}

/// Method and its hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    /// Penalty weight `λ ≥ 0`.
    pub lambda: f64,
    /// Online-EWC decay `0 ≤ γ ≤ 1`.
    pub gamma: f64,
    /// SI damping `ε > 0`.
    pub epsilon: f64,
}

impl RegularizerConfig {
    /// Default weights, `γ = 1` and `ε = 0.01`.
    pub fn new(kind: RegularizerKind) -> Self {
        Self {
            kind,
            lambda: kind.default_lambda(),
            gamma: 1.0,
            epsilon: SI_DAMPING,
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Stored inputs and old-model output of one task's LwF forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastContext {
    pub task_id: usize,
    /// Seed replayed for every regeneration of the forecast.
    pub seed: u64,
    /// Initial ensemble, `N × d_z`.
    pub init: Matrix,
    /// Controls over the horizon, `H × d_u`.
    pub controls: Matrix,
    /// Forecast of the anchored model, `H × d_x`.
    pub forecast: Matrix,
}

impl ForecastContext {
    pub fn horizon(&self) -> usize {
        self.controls.rows()
    }

    /// Forecast rows (`1 × d_x` each) of the bound model from this context.
    pub fn regenerate(&self, tape: &mut Tape, model: &BoundModel) -> Result<Vec<Var>> {
        let init = Ensemble::from_values(tape, self.init.clone())?;
        let controls = (self.controls.cols() > 0).then_some(&self.controls);
        rollout_forecast(tape, model, init, controls, self.horizon(), &mut seeded(self.seed))
    }
}

/// Hooks a training loop calls around each task.
pub trait Regularizer {
    /// Called once before the first optimizer step of a task.
    fn begin_task(&mut self, _theta: &[f64]) {}

    /// Penalty on the bound θ, or `None` when it is identically zero.
    fn penalty(&self, tape: &mut Tape, model: &BoundModel) -> Result<Option<Var>>;

    /// Called after every optimizer step with the task-loss gradient and θ
    /// before and after the step.
    fn after_step(&mut self, _task_grad: &[f64], _before: &[f64], _after: &[f64]) {}

    /// Called once after a task is trained.
    fn consolidate(&mut self, theta_star: &ParamRegistry, ctx: &TaskContext) -> Result<()>;
}

/// Consolidation record of one regularizer.
///
/// Every vector has the flat parameter length `P`. Fields unused by the
/// configured kind stay empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceState {
    config: RegularizerConfig,
    param_count: usize,
    task_count: usize,
    anchor: Vec<f64>,
    /// `M̃` (Online-EWC), `Ω` (MAS) or `Λ` (SI).
    weights: Vec<f64>,
    /// Online SI path integral `ω` of the current task.
    omega: Vec<f64>,
    /// θ at the start of the current SI task.
    theta_start: Vec<f64>,
    /// Vanilla EWC `(θ*_k, M_k)` pairs.
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
    contexts: Vec<ForecastContext>,
}

impl ImportanceState {
    pub fn new(config: RegularizerConfig, param_count: usize) -> Result<Self> {
        config.validate()?;
        let p = |used: bool| if used { vec![0.0; param_count] } else { Vec::new() };
        use RegularizerKind as K;
        let k = config.kind;
        Ok(Self {
            config,
            param_count,
            task_count: 0,
            anchor: p(matches!(k, K::EwcOnline | K::Mas | K::Si | K::Lwf)),
            weights: p(matches!(k, K::EwcOnline | K::Mas | K::Si)),
            omega: p(k == K::Si),
            theta_start: p(k == K::Si),
            pairs: Vec::new(),
            contexts: Vec::new(),
        })
    }

    pub fn config(&self) -> &RegularizerConfig {
        &self.config
    }

    pub fn kind(&self) -> RegularizerKind {
        self.config.kind
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Number of consolidated tasks.
    pub fn task_count(&self) -> usize {
        self.task_count
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    /// `M̃`, `Ω` or `Λ`, depending on the kind.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn theta_start(&self) -> &[f64] {
        &self.theta_start
    }

    pub fn pairs(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.pairs
    }

    pub fn contexts(&self) -> &[ForecastContext] {
        &self.contexts
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.param_count {
            return Err(Error::LengthMismatch {
                expected: self.param_count,
                got: v.len(),
            });
        }
        Ok(())
    }

    fn expect_kind(&self, ok: bool, op: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("{op} does not apply to {}", self.kind())))
        }
    }

    /// Whether the penalty can be non-zero.
    pub fn is_active(&self) -> bool {
        self.kind() != RegularizerKind::None && self.task_count > 0
    }

    /// Penalty on the θ bound in `model` (registry order).
    pub fn penalty(&self, tape: &mut Tape, model: &BoundModel) -> Result<Option<Var>> {
        if !self.is_active() {
            return Ok(None);
        }
        let vars = &model.theta.vars;
        let total: usize = vars.iter().map(|v| tape.value(*v).len()).sum();
        if total != self.param_count {
            return Err(Error::LengthMismatch {
                expected: self.param_count,
                got: total,
            });
        }
        let out = match self.kind() {
            RegularizerKind::Lwf => {
                let mut acc: Option<Var> = None;
                for ctx in &self.contexts {
                    let rows = ctx.regenerate(tape, model)?;
                    let m = forecast_mse(tape, &rows, &ctx.forecast)?;
                    acc = Some(match acc {
                        Some(a) => tape.add(a, m),
                        None => m,
                    });
                }
                let acc = acc.expect("one context per consolidated task");
                tape.scale(acc, self.config.lambda / self.contexts.len() as f64)
            }
            _ => self.quadratic(tape, vars),
        };
        Ok(Some(out))
    }

    /// Quadratic penalty of the EWC, MAS and SI kinds on registry-ordered leaves.
    fn quadratic(&self, tape: &mut Tape, vars: &[Var]) -> Var {
        let lambda = self.config.lambda;
        match self.kind() {
            RegularizerKind::EwcOnline => {
                let q = weighted_sq_dist(tape, vars, &self.anchor, &self.weights);
                tape.scale(q, 0.5 * lambda)
            }
            RegularizerKind::Mas | RegularizerKind::Si => {
                let q = weighted_sq_dist(tape, vars, &self.anchor, &self.weights);
                tape.scale(q, lambda)
            }
            RegularizerKind::EwcVanilla => {
                let mut acc: Option<Var> = None;
                for (anchor, fisher) in &self.pairs {
                    let q = weighted_sq_dist(tape, vars, anchor, fisher);
                    acc = Some(match acc {
                        Some(a) => tape.add(a, q),
                        None => q,
                    });
                }
                let acc = acc.expect("one pair per consolidated task");
                tape.scale(acc, 0.5 * lambda)
            }
            RegularizerKind::None | RegularizerKind::Lwf => {
                unreachable!("not a quadratic penalty")
            }
        }
    }

    /// Penalty value at a plain θ.
    pub fn penalty_value(&self, net: &TransitionNet, emission: &EmissionModel, theta: &ParamRegistry) -> Result<f64> {
        let mut tape = Tape::new();
        let model = BoundModel::bind(&mut tape, net, theta, emission, false)?;
        Ok(self.penalty(&mut tape, &model)?.map_or(0.0, |v| tape.scalar(v)))
    }

    /// Online-EWC: `M̃ ← γ M̃ + M_j`; vanilla EWC: append `(θ*, M_j)`.
    /// The anchor becomes `θ*`.
    pub fn ewc_consolidate(&mut self, fisher: &[f64], theta_star: &[f64]) -> Result<()> {
        self.check_len(fisher)?;
        self.check_len(theta_star)?;
        match self.kind() {
            RegularizerKind::EwcOnline => {
                let g = self.config.gamma;
                for (w, m) in self.weights.iter_mut().zip(fisher) {
                    *w = g * *w + m;
                }
                self.anchor.copy_from_slice(theta_star);
            }
            RegularizerKind::EwcVanilla => {
                self.pairs.push((theta_star.to_vec(), fisher.to_vec()));
            }
            _ => return self.expect_kind(false, "ewc_consolidate"),
        }
        self.task_count += 1;
        Ok(())
    }

    /// MAS: `Ω ← Ω + Ω_j`, anchor `θ*`.
    pub fn mas_consolidate(&mut self, importance: &[f64], theta_star: &[f64]) -> Result<()> {
        self.expect_kind(self.kind() == RegularizerKind::Mas, "mas_consolidate")?;
        self.check_len(importance)?;
        self.check_len(theta_star)?;
        for (w, o) in self.weights.iter_mut().zip(importance) {
            *w += o;
        }
        self.anchor.copy_from_slice(theta_star);
        self.task_count += 1;
        Ok(())
    }

    /// SI path integral: `ω += −g · (θ_after − θ_before)`.
    pub fn si_step_update(&mut self, grads: &[f64], before: &[f64], after: &[f64]) -> Result<()> {
        self.expect_kind(self.kind() == RegularizerKind::Si, "si_step_update")?;
        self.check_len(grads)?;
        self.check_len(before)?;
        self.check_len(after)?;
        for (((w, g), b), a) in self.omega.iter_mut().zip(grads).zip(before).zip(after) {
            *w += -g * (a - b);
        }
        Ok(())
    }

    /// Sets the SI start point of the coming task.
    pub fn si_begin(&mut self, theta: &[f64]) -> Result<()> {
        self.expect_kind(self.kind() == RegularizerKind::Si, "si_begin")?;
        self.check_len(theta)?;
        self.theta_start.copy_from_slice(theta);
        Ok(())
    }

    /// `Λ += max(ω, 0) / (Δ² + ε)` with `Δ = θ_end − θ_start`, then `ω ← 0`,
    /// `θ_start ← θ_end` and anchor `θ_end`.
    ///
    /// Under Adam a parameter's path integral can come out negative; those
    /// contributions are clipped so `Λ` stays a valid non-negative weight.
    pub fn si_consolidate(&mut self, theta_end: &[f64]) -> Result<()> {
        self.expect_kind(self.kind() == RegularizerKind::Si, "si_consolidate")?;
        self.check_len(theta_end)?;
        let eps = self.config.epsilon;
        for (((w, o), end), start) in self
            .weights
            .iter_mut()
            .zip(&self.omega)
            .zip(theta_end)
            .zip(&self.theta_start)
        {
            let delta = end - start;
            *w += o.max(0.0) / (delta * delta + eps);
        }
        self.omega.iter_mut().for_each(|w| *w = 0.0);
        self.theta_start.copy_from_slice(theta_end);
        self.anchor.copy_from_slice(theta_end);
        self.task_count += 1;
        Ok(())
    }

    /// Stores `context` and re-renders every stored forecast with `θ*`, so
    /// the penalty compares against the latest anchored model.
    pub fn lwf_snapshot(
        &mut self,
        context: ForecastContext,
        theta_star: &ParamRegistry,
        net: &TransitionNet,
        emission: &EmissionModel,
    ) -> Result<()> {
        self.expect_kind(self.kind() == RegularizerKind::Lwf, "lwf_snapshot")?;
        let flat = theta_star.flatten();
        self.check_len(&flat)?;
        self.contexts.push(context);
        for ctx in &mut self.contexts {
            let mut tape = Tape::new();
            let model = BoundModel::bind(&mut tape, net, theta_star, emission, false)?;
            let rows = ctx.regenerate(&mut tape, &model)?;
            ctx.forecast = crate::enkf::stack_rows(&tape, &rows);
        }
        self.anchor = flat;
        self.task_count += 1;
        Ok(())
    }
}

impl Regularizer for ImportanceState {
    fn begin_task(&mut self, theta: &[f64]) {
        if self.kind() == RegularizerKind::Si && self.task_count == 0 {
            self.si_begin(theta).expect("θ length matches the state");
        }
    }

    fn penalty(&self, tape: &mut Tape, model: &BoundModel) -> Result<Option<Var>> {
        ImportanceState::penalty(self, tape, model)
    }

    fn after_step(&mut self, task_grad: &[f64], before: &[f64], after: &[f64]) {
        if self.kind() == RegularizerKind::Si {
            self.si_step_update(task_grad, before, after)
                .expect("gradient length matches the state");
        }
    }

    fn consolidate(&mut self, theta_star: &ParamRegistry, ctx: &TaskContext) -> Result<()> {
        let flat = theta_star.flatten();
        match self.kind() {
            RegularizerKind::None => Ok(()),
            RegularizerKind::EwcOnline | RegularizerKind::EwcVanilla => {
                let fisher = empirical_fisher(ctx, theta_star)?;
                self.ewc_consolidate(&fisher, &flat)
            }
            RegularizerKind::Mas => {
                let omega = mas_importance(ctx, theta_star)?;
                self.mas_consolidate(&omega, &flat)
            }
            RegularizerKind::Si => self.si_consolidate(&flat),
            RegularizerKind::Lwf => {
                let c = lwf_context(ctx, theta_star)?;
                self.lwf_snapshot(c, theta_star, ctx.net, ctx.emission)
            }
        }
    }
}

/// `Σ_i w_i (θ_i − a_i)²` over registry-ordered leaves.
fn weighted_sq_dist(tape: &mut Tape, vars: &[Var], anchor: &[f64], weights: &[f64]) -> Var {
    let mut offset = 0;
    let mut acc: Option<Var> = None;
    for &v in vars {
        let (r, c) = tape.value(v).shape();
        let n = r * c;
        let a = Matrix::from_vec(r, c, anchor[offset..offset + n].to_vec()).expect("sized slice");
        let w = Matrix::from_vec(r, c, weights[offset..offset + n].to_vec()).expect("sized slice");
        offset += n;
        let a = tape.constant(a);
        let w = tape.constant(w);
        let d = tape.sub(v, a);
        let sq = tape.square(d);
        let ws = tape.mul(sq, w);
        let s = tape.sum(ws);
        acc = Some(match acc {
            Some(x) => tape.add(x, s),
            None => s,
        });
    }
    acc.unwrap_or_else(|| tape.constant(Matrix::scalar(0.0)))
}

/// Mean squared difference between forecast rows and a stored forecast.
fn forecast_mse(tape: &mut Tape, rows: &[Var], target: &Matrix) -> Result<Var> {
    if rows.len() != target.rows() {
        return Err(Error::dims("LwF forecast horizon", target.rows(), rows.len()));
    }
    let mut acc: Option<Var> = None;
    for (t, &r) in rows.iter().enumerate() {
        let y = tape.constant(Matrix::row_vector(target.row(t)));
        let d = tape.sub(r, y);
        let sq = tape.square(d);
        let s = tape.sum(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, s),
            None => s,
        });
    }
    let acc = acc.expect("horizon >= 1");
    Ok(tape.scale(acc, 1.0 / target.len() as f64))
}

#[cfg(test)]
mod tests;
