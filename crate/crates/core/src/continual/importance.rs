use super::ForecastContext;
use crate::data::TaskDataset;
use crate::enkf::{encode_and_filter, sequence_loss, BoundModel, EmissionModel};
use crate::nets::{ParamRegistry, RecognitionNet, TransitionNet};
use crate::numcore::{Matrix, Tape};
use crate::rng::{derive_seed, seeded};
use crate::Result;

const FISHER_STREAM: u64 = 0x4649;
const MAS_STREAM: u64 = 0x4d41;
const LWF_INIT_STREAM: u64 = 0x4c49;
const LWF_ROLLOUT_STREAM: u64 = 0x4c52;

/// Everything a consolidation needs about the task that just finished.
pub struct TaskContext<'a> {
    pub net: &'a TransitionNet,
    pub emission: &'a EmissionModel,
    pub recognition: &'a RecognitionNet,
    /// Trained recognition parameters of this task.
    pub phi: &'a ParamRegistry,
    pub task: &'a TaskDataset,
    pub n_particles: usize,
    pub seed: u64,
}

/// Empirical diagonal Fisher: mean over windows of the squared θ-gradient
/// of the sequence loss at `theta`.
pub fn empirical_fisher(ctx: &TaskContext, theta: &ParamRegistry) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; theta.len()];
    for (w, window) in ctx.task.windows.iter().enumerate() {
        let mut tape = Tape::new();
        let model = BoundModel::bind(&mut tape, ctx.net, theta, ctx.emission, true)?;
        let phi = ctx.phi.bind_constant(&mut tape);
        let mut rng = seeded(derive_seed(ctx.seed, &[FISHER_STREAM, ctx.task.id as u64, w as u64]));
        let out = sequence_loss(
            &mut tape,
            &model,
            ctx.recognition,
            &phi,
            &window.x,
            window.controls(),
            ctx.n_particles,
            &mut rng,
        )?;
        tape.backward(out.loss);
        for (a, g) in acc.iter_mut().zip(theta.gradient(&tape, &model.theta.vars)) {
            *a += g * g;
        }
    }
    let n = ctx.task.windows.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// MAS importance: mean over filtered states `z_t` of
/// `|∂‖F(z_t, u_t)‖² / ∂θ|`, with `z_t` the filtered ensemble mean.
pub fn mas_importance(ctx: &TaskContext, theta: &ParamRegistry) -> Result<Vec<f64>> {
    let mut states = Vec::new();
    for (w, window) in ctx.task.windows.iter().enumerate() {
        let mut rng = seeded(derive_seed(ctx.seed, &[MAS_STREAM, ctx.task.id as u64, w as u64]));
        let mut tape = Tape::new();
        let model = BoundModel::bind(&mut tape, ctx.net, theta, ctx.emission, false)?;
        let phi = ctx.phi.bind_constant(&mut tape);
        let (_, run) = encode_and_filter(
            &mut tape,
            &model,
            ctx.recognition,
            &phi,
            &window.x,
            window.controls(),
            ctx.n_particles,
            &mut rng,
        )?;
        for (t, e) in run.filtered.iter().enumerate() {
            let u = window.controls().map(|u| u.row(t).to_vec());
            states.push((e.mean(&tape), u));
        }
    }
    state_importance(ctx.net, theta, &states)
}

/// Mean over `(z, u)` pairs of `|∂‖F(z, u)‖² / ∂θ|`.
pub fn state_importance(
    net: &TransitionNet,
    theta: &ParamRegistry,
    states: &[(Vec<f64>, Option<Vec<f64>>)],
) -> Result<Vec<f64>> {
    net.check(theta)?;
    let mut acc = vec![0.0; theta.len()];
    for (z, u) in states {
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, theta, true);
        let zv = tape.constant(Matrix::row_vector(z));
        let uv = u.as_ref().map(|u| tape.constant(Matrix::row_vector(u)));
        let f = net.forward(&mut tape, &bound, zv, uv)?;
        let sq = tape.square(f);
        let norm = tape.sum(sq);
        tape.backward(norm);
        for (a, g) in acc.iter_mut().zip(theta.gradient(&tape, &bound.vars)) {
            *a += g.abs();
        }
    }
    let n = states.len().max(1) as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// LwF context of a finished task: the filtered ensemble at the end of its
/// last training window, the test-segment controls and a fresh rollout seed.
/// The stored forecast is filled in by the snapshot.
pub fn lwf_context(ctx: &TaskContext, theta: &ParamRegistry) -> Result<ForecastContext> {
    let id = ctx.task.id as u64;
    let window = ctx.task.last_window();
    let mut rng = seeded(derive_seed(ctx.seed, &[LWF_INIT_STREAM, id]));
    let mut tape = Tape::new();
    let model = BoundModel::bind(&mut tape, ctx.net, theta, ctx.emission, false)?;
    let phi = ctx.phi.bind_constant(&mut tape);
    let (_, run) = encode_and_filter(
        &mut tape,
        &model,
        ctx.recognition,
        &phi,
        &window.x,
        window.controls(),
        ctx.n_particles,
        &mut rng,
    )?;
    let init = run.last().values(&tape).clone();
    let horizon = ctx.task.test.len();
    Ok(ForecastContext {
        task_id: ctx.task.id,
        seed: derive_seed(ctx.seed, &[LWF_ROLLOUT_STREAM, id]),
        init,
        controls: ctx.task.test.u.clone(),
        forecast: Matrix::zeros(horizon, ctx.emission.d_x()),
    })
}
