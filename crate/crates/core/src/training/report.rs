use std::fmt::Write as _;

use crate::continual::RegularizerKind;
use crate::nets::ParamRegistry;
use crate::numcore::Matrix;
use crate::{Error, Result};

/// Mean over all entries of the squared difference.
pub fn mse(pred: &Matrix, truth: &Matrix) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::dims(
            "mse",
            format!("{:?}", truth.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let n = pred.as_slice().len();
    if n == 0 {
        return Err(Error::dims("mse", "non-empty", "0 entries"));
    }
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / n as f64)
}

/// Outcome of one sequential run over `J` tasks.
#[derive(Clone, Debug)]
pub struct TaskReport {
    pub kind: RegularizerKind,
    pub seed: u64,
    /// `grid[j][k]`: test MSE of task `k` after training task `j`, for `k ≤ j`.
    pub grid: Vec<Vec<f64>>,
    /// Per-task, per-epoch mean training loss.
    pub loss_traces: Vec<Vec<f64>>,
    /// Per-task, per-epoch wall-clock seconds.
    pub epoch_seconds: Vec<Vec<f64>>,
    /// θ after the last task.
    pub theta: ParamRegistry,
    /// Recognition parameters trained on each task.
    pub phis: Vec<ParamRegistry>,
}

impl TaskReport {
    pub fn n_tasks(&self) -> usize {
        self.grid.len()
    }

    /// Averaged MSE over tasks `1..=j` after stage `j` (0-based index).
    pub fn stage_average(&self, stage: usize) -> f64 {
        let row = &self.grid[stage];
        row.iter().sum::<f64>() / row.len() as f64
    }

    pub fn stage_averages(&self) -> Vec<f64> {
        (0..self.n_tasks()).map(|j| self.stage_average(j)).collect()
    }

    /// `MSE(task k after the last stage) − MSE(task k right after learning it)`.
    pub fn forgetting(&self, task: usize) -> f64 {
        self.grid[self.n_tasks() - 1][task] - self.grid[task][task]
    }

    /// `stage,task,mse` rows with 1-based indices; `task = 0` holds the stage
    /// average.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,task,mse\n");
        for (j, row) in self.grid.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                writeln!(out, "{},{},{}", j + 1, k + 1, v).expect("string write");
            }
            writeln!(out, "{},0,{}", j + 1, self.stage_average(j)).expect("string write");
        }
        out
    }

    /// `task,epoch,loss,seconds` rows.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("task,epoch,loss,seconds\n");
        for (k, (losses, secs)) in self.loss_traces.iter().zip(&self.epoch_seconds).enumerate() {
            for (e, (l, s)) in losses.iter().zip(secs).enumerate() {
                writeln!(out, "{},{},{},{:.6}", k + 1, e + 1, l, s).expect("string write");
            }
        }
        out
    }
}

/// Sample mean and standard deviation (`n − 1` denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Table of stage-averaged MSE, one row per kind, mean and std over seeds as
/// two columns per stage. Kinds appear in first-seen order.
pub fn summary_csv(reports: &[TaskReport]) -> Result<String> {
    let Some(first) = reports.first() else {
        return Err(Error::InvalidConfig("no reports to summarize".into()));
    };
    let stages = first.n_tasks();
    if reports.iter().any(|r| r.n_tasks() != stages) {
        return Err(Error::InvalidConfig("reports disagree on task count".into()));
    }
    let mut kinds: Vec<RegularizerKind> = Vec::new();
    for r in reports {
        if !kinds.contains(&r.kind) {
            kinds.push(r.kind);
        }
    }
    let mut out = String::from("kind,seeds");
    for j in 1..=stages {
        write!(out, ",stage{j}_mean,stage{j}_std").expect("string write");
    }
    out.push('\n');
    for kind in kinds {
        let runs: Vec<&TaskReport> = reports.iter().filter(|r| r.kind == kind).collect();
        write!(out, "{},{}", kind.name(), runs.len()).expect("string write");
        for j in 0..stages {
            let avgs: Vec<f64> = runs.iter().map(|r| r.stage_average(j)).collect();
            let (m, s) = mean_std(&avgs);
            write!(out, ",{m},{s}").expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}
