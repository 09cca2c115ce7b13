//! Adam, per-task training, sequential-task runs and test metrics.

mod adam;
mod report;

use std::time::Instant;

use rand::seq::SliceRandom;

pub use adam::{adam_step, AdamState};
pub use report::{mean_std, mse, summary_csv, TaskReport};

use crate::continual::{ImportanceState, Regularizer, RegularizerConfig, RegularizerKind, TaskContext};
use crate::data::TaskDataset;
use crate::enkf::{encode_and_filter, rollout_forecast, sequence_loss, stack_rows, BoundModel, EmissionModel};
use crate::nets::{ParamRegistry, RecognitionNet, TransitionNet};
use crate::numcore::{Matrix, Tape, Var};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

const THETA_INIT_STREAM: u64 = 0x5449;
const PHI_INIT_STREAM: u64 = 0x5049;
const SHUFFLE_STREAM: u64 = 0x5348;
const STEP_STREAM: u64 = 0x5354;
const CONSOLIDATE_STREAM: u64 = 0x434f;
const EVAL_STREAM: u64 = 0x4556;

/// Architecture and emission settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_z: usize,
    /// Hidden widths of the transition MLP.
    pub hidden: Vec<usize>,
    /// Recurrent width of the recognition network.
    pub recognition_hidden: usize,
    /// Observation noise variance `r` in `R = r·I`.
    pub obs_noise: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_z: 4,
            hidden: vec![32],
            recognition_hidden: 32,
            obs_noise: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, d_x: usize, d_u: usize) -> Result<Model> {
        if self.d_z == 0 || self.recognition_hidden == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be >= 1".into()));
        }
        if !(self.obs_noise > 0.0 && self.obs_noise.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "observation noise must be > 0, got {}",
                self.obs_noise
            )));
        }
        if d_x > self.d_z {
            return Err(Error::InvalidConfig(format!(
                "d_z = {} cannot be smaller than d_x = {d_x}",
                self.d_z
            )));
        }
        Ok(Model {
            net: TransitionNet::new(self.d_z, d_u, self.hidden.clone()),
            recognition: RecognitionNet::new(d_x, self.recognition_hidden, self.d_z),
            emission: EmissionModel::selector(d_x, self.d_z, self.obs_noise)?,
        })
    }
}

/// The fixed structure shared by every task.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: TransitionNet,
    pub recognition: RecognitionNet,
    pub emission: EmissionModel,
}

impl Model {
    pub fn d_x(&self) -> usize {
        self.emission.d_x()
    }

    pub fn d_u(&self) -> usize {
        self.net.d_u
    }

    fn check_task(&self, task: &TaskDataset) -> Result<()> {
        if task.d_x() != self.d_x() {
            return Err(Error::dims("task observations", self.d_x(), task.d_x()));
        }
        if task.d_u() != self.d_u() {
            return Err(Error::dims("task controls", self.d_u(), task.d_u()));
        }
        if task.windows.is_empty() {
            return Err(Error::InvalidConfig(format!("task {} has no windows", task.id)));
        }
        Ok(())
    }

    /// Initial θ of a run.
    pub fn init_theta(&self, seed: u64) -> ParamRegistry {
        self.net
            .init_params(&mut seeded(derive_seed(seed, &[THETA_INIT_STREAM])))
    }
}

/// Optimizer and run settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub n_particles: usize,
    pub seed: u64,
    /// Per-kind overrides of the default regularizer settings.
    pub regularizers: Vec<RegularizerConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            epochs: 400,
            batch_size: 1,
            n_particles: 100,
            seed: 0,
            regularizers: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.n_particles < 2 {
            return Err(Error::InvalidConfig("ensemble size must be >= 2".into()));
        }
        for r in &self.regularizers {
            r.validate()?;
        }
        Ok(())
    }

    /// Settings for `kind`: the last override if any, else the defaults.
    pub fn regularizer(&self, kind: RegularizerKind) -> RegularizerConfig {
        self.regularizers
            .iter()
            .rev()
            .find(|r| r.kind == kind)
            .copied()
            .unwrap_or_else(|| RegularizerConfig::new(kind))
    }

    pub fn set_regularizer(&mut self, config: RegularizerConfig) {
        self.regularizers.retain(|r| r.kind != config.kind);
        self.regularizers.push(config);
    }
}

/// Regularizer that never contributes; training with it never touches any
/// continual-learning state.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoRegularizer;

impl Regularizer for NoRegularizer {
    fn penalty(&self, _tape: &mut Tape, _model: &BoundModel) -> Result<Option<Var>> {
        Ok(None)
    }

    fn consolidate(&mut self, _theta_star: &ParamRegistry, _ctx: &TaskContext) -> Result<()> {
        Ok(())
    }
}

/// Result of training on one task.
#[derive(Clone, Debug)]
pub struct TaskOutcome {
    /// Recognition parameters fitted alongside θ.
    pub phi: ParamRegistry,
    /// Mean sequence loss per epoch.
    pub losses: Vec<f64>,
    /// Mean penalty per epoch.
    pub penalties: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

struct StepGrads {
    loss: f64,
    penalty: f64,
    task_grad: Vec<f64>,
    total_grad: Vec<f64>,
    phi_grad: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn batch_gradients<R: Regularizer + ?Sized>(
    model: &Model,
    task: &TaskDataset,
    theta: &ParamRegistry,
    phi: &ParamRegistry,
    reg: &R,
    cfg: &TrainConfig,
    epoch: usize,
    batch: &[usize],
) -> Result<StepGrads> {
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, &model.net, theta, &model.emission, true)?;
    let phi_vars = phi.bind(&mut tape);
    let mut total: Option<Var> = None;
    for &w in batch {
        let window = &task.windows[w];
        let mut rng = seeded(derive_seed(
            cfg.seed,
            &[STEP_STREAM, task.id as u64, epoch as u64, w as u64],
        ));
        let out = sequence_loss(
            &mut tape,
            &bound,
            &model.recognition,
            &phi_vars,
            &window.x,
            window.controls(),
            cfg.n_particles,
            &mut rng,
        )?;
        total = Some(match total {
            Some(t) => tape.add(t, out.loss),
            None => out.loss,
        });
    }
    let sum = total.expect("non-empty batch");
    let loss = tape.scale(sum, 1.0 / batch.len() as f64);
    tape.backward(loss);
    let task_grad = theta.gradient(&tape, &bound.theta.vars);
    let phi_grad = phi.gradient(&tape, &phi_vars);
    let (penalty, total_grad) = match reg.penalty(&mut tape, &bound)? {
        Some(p) => {
            // Leaf gradients accumulate, so this adds the penalty gradient.
            tape.backward(p);
            (tape.scalar(p), theta.gradient(&tape, &bound.theta.vars))
        }
        None => (0.0, task_grad.clone()),
    };
    Ok(StepGrads {
        loss: tape.scalar(loss),
        penalty,
        task_grad,
        total_grad,
        phi_grad,
    })
}

/// Trains θ (in place) and a freshly initialized φ on one task.
///
/// Windows are visited in a per-epoch seeded shuffle, `batch_size` windows per
/// Adam step. The regularizer sees `begin_task` once, its penalty at every
/// step and `after_step` after every θ update.
pub fn train_task<R: Regularizer + ?Sized>(
    model: &Model,
    task: &TaskDataset,
    theta: &mut ParamRegistry,
    reg: &mut R,
    cfg: &TrainConfig,
) -> Result<TaskOutcome> {
    cfg.validate()?;
    model.check_task(task)?;
    model.net.check(theta)?;
    let id = task.id as u64;
    let mut phi = model
        .recognition
        .init_params(&mut seeded(derive_seed(cfg.seed, &[PHI_INIT_STREAM, id])));
    let mut opt_theta = AdamState::new(theta.len());
    let mut opt_phi = AdamState::new(phi.len());
    reg.begin_task(&theta.flatten());

    let n_windows = task.windows.len();
    let mut order: Vec<usize> = (0..n_windows).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut penalties = Vec::with_capacity(cfg.epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut seeded(derive_seed(cfg.seed, &[SHUFFLE_STREAM, id, epoch as u64])));
        let (mut loss_sum, mut pen_sum) = (0.0, 0.0);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let non_finite = Error::NonFiniteLoss {
                task: task.id,
                epoch: epoch + 1,
                batch: b + 1,
            };
            let g = match batch_gradients(model, task, theta, &phi, reg, cfg, epoch, batch) {
                Ok(g) => g,
                Err(Error::NotPositiveDefinite { value, .. }) if !value.is_finite() => return Err(non_finite),
                Err(e) => return Err(e),
            };
            let finite = g.loss.is_finite()
                && g.penalty.is_finite()
                && g.total_grad.iter().chain(&g.phi_grad).all(|v| v.is_finite());
            if !finite {
                return Err(non_finite);
            }
            let before = theta.flatten();
            let mut after = before.clone();
            adam_step(&mut opt_theta, &mut after, &g.total_grad, cfg.lr)?;
            theta.assign(&after)?;
            let mut phi_flat = phi.flatten();
            adam_step(&mut opt_phi, &mut phi_flat, &g.phi_grad, cfg.lr)?;
            phi.assign(&phi_flat)?;
            reg.after_step(&g.task_grad, &before, &after);
            loss_sum += g.loss * batch.len() as f64;
            pen_sum += g.penalty * batch.len() as f64;
        }
        losses.push(loss_sum / n_windows as f64);
        penalties.push(pen_sum / n_windows as f64);
        epoch_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(TaskOutcome {
        phi,
        losses,
        penalties,
        epoch_seconds,
    })
}

/// Test-segment forecast of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// `H × d_x` forecast on the standardized scale.
    pub pred: Matrix,
    pub mse: f64,
}

/// Filters the last training window of `task` with (θ, φ), then rolls the
/// ensemble forward over the test segment under its controls.
pub fn evaluate_task(
    model: &Model,
    theta: &ParamRegistry,
    phi: &ParamRegistry,
    task: &TaskDataset,
    n_particles: usize,
    seed: u64,
) -> Result<Evaluation> {
    model.check_task(task)?;
    model.recognition.check(phi)?;
    let mut rng = seeded(seed);
    let mut tape = Tape::new();
    let bound = BoundModel::bind(&mut tape, &model.net, theta, &model.emission, false)?;
    let phi_vars = phi.bind_constant(&mut tape);
    let window = task.last_window();
    let (_, run) = encode_and_filter(
        &mut tape,
        &bound,
        &model.recognition,
        &phi_vars,
        &window.x,
        window.controls(),
        n_particles,
        &mut rng,
    )?;
    let rows = rollout_forecast(
        &mut tape,
        &bound,
        run.last(),
        task.test.controls(),
        task.test.len(),
        &mut rng,
    )?;
    let pred = stack_rows(&tape, &rows);
    let mse = mse(&pred, &task.test.x)?;
    Ok(Evaluation { pred, mse })
}

/// Evaluation seed of a task; fixed across stages so that MSE changes reflect
/// θ alone.
pub fn eval_seed(seed: u64, task_id: usize) -> u64 {
    derive_seed(seed, &[EVAL_STREAM, task_id as u64])
}

/// Seed handed to consolidation routines.
pub fn consolidation_seed(seed: u64) -> u64 {
    derive_seed(seed, &[CONSOLIDATE_STREAM])
}

/// Trains on `tasks` in order with `reg`, consolidating after each task and
/// evaluating every task seen so far.
pub fn run_sequence_with<R: Regularizer + ?Sized>(
    model: &Model,
    tasks: &[TaskDataset],
    kind: RegularizerKind,
    reg: &mut R,
    cfg: &TrainConfig,
) -> Result<TaskReport> {
    if tasks.is_empty() {
        return Err(Error::InvalidConfig("at least one task is required".into()));
    }
    cfg.validate()?;
    for t in tasks {
        model.check_task(t)?;
    }
    let mut theta = model.init_theta(cfg.seed);
    let p = theta.len();
    let mut report = TaskReport {
        kind,
        seed: cfg.seed,
        grid: Vec::with_capacity(tasks.len()),
        loss_traces: Vec::with_capacity(tasks.len()),
        epoch_seconds: Vec::with_capacity(tasks.len()),
        theta: theta.clone(),
        phis: Vec::with_capacity(tasks.len()),
    };
    for task in tasks {
        let out = train_task(model, task, &mut theta, reg, cfg)?;
        assert_eq!(theta.len(), p, "parameter count changed during training");
        let ctx = TaskContext {
            net: &model.net,
            emission: &model.emission,
            recognition: &model.recognition,
            phi: &out.phi,
            task,
            n_particles: cfg.n_particles,
            seed: consolidation_seed(cfg.seed),
        };
        reg.consolidate(&theta, &ctx)?;
        report.phis.push(out.phi);
        report.loss_traces.push(out.losses);
        report.epoch_seconds.push(out.epoch_seconds);
        let row = tasks
            .iter()
            .zip(&report.phis)
            .map(|(t, phi)| {
                evaluate_task(model, &theta, phi, t, cfg.n_particles, eval_seed(cfg.seed, t.id)).map(|e| e.mse)
            })
            .collect::<Result<Vec<f64>>>()?;
        report.grid.push(row);
    }
    report.theta = theta;
    Ok(report)
}

/// Sequential run with the regularizer configured for `kind` in `cfg`;
/// returns the report and the final consolidation state.
pub fn run_sequence(
    model: &Model,
    tasks: &[TaskDataset],
    kind: RegularizerKind,
    cfg: &TrainConfig,
) -> Result<(TaskReport, ImportanceState)> {
    let mut state = ImportanceState::new(cfg.regularizer(kind), model.net.param_count())?;
    let report = run_sequence_with(model, tasks, kind, &mut state, cfg)?;
    Ok((report, state))
}
