use std::path::Path;

use clap::Args;
use serde_json::json;

use cldssm::data::{observation_matrix, synth_lgssm, synth_regime_series, write_csv, LgssmParams, RegimeConfig};

use crate::CliError;

/// Scalar linear-Gaussian system `z_t = a z_{t−1} + ξ`, `x_t = z_t + η`.
#[derive(Args, Debug, Default)]
pub struct LgssmArgs {
    #[arg(long, help = "[lgssm] transition coefficient (default 0.9)")]
    pub a: Option<f64>,
    #[arg(long, help = "[lgssm] process noise variance (default 0.1)")]
    pub q: Option<f64>,
    #[arg(long, help = "[lgssm] observation noise variance (default 0.1)")]
    pub r: Option<f64>,
    #[arg(long, help = "[lgssm] initial state mean (default 0)")]
    pub m0: Option<f64>,
    #[arg(long, help = "[lgssm] initial state variance (default 1)")]
    pub p0: Option<f64>,
    #[arg(long, help = "[lgssm] number of samples (default 100)")]
    pub steps: Option<usize>,
}

/// Rotating/decaying two-dimensional regimes, one series per task.
#[derive(Args, Debug, Default)]
pub struct RegimeArgs {
    #[arg(long, help = "[regimes] number of tasks (default 4)")]
    pub tasks: Option<usize>,
    #[arg(long, help = "[regimes] observation dimension (default 2)")]
    pub dim: Option<usize>,
    #[arg(long, help = "[regimes] training window length (default 50)")]
    pub window_len: Option<usize>,
    #[arg(long, help = "[regimes] training windows per task (default 4)")]
    pub windows: Option<usize>,
    #[arg(long, help = "[regimes] test segment length (default 50)")]
    pub test_len: Option<usize>,
    #[arg(long, help = "[regimes] per-step decay (default 0.995)")]
    pub decay: Option<f64>,
    #[arg(long, help = "[regimes] rotation angle increment between tasks (default 0.1)")]
    pub angle_step: Option<f64>,
    #[arg(long, help = "[regimes] process noise std (default 0.05)")]
    pub process_std: Option<f64>,
    #[arg(long, help = "[regimes] observation noise std (default 0.05)")]
    pub obs_std: Option<f64>,
}

impl LgssmArgs {
    fn any(&self) -> bool {
        self.a.is_some()
            || self.q.is_some()
            || self.r.is_some()
            || self.m0.is_some()
            || self.p0.is_some()
            || self.steps.is_some()
    }
}

impl RegimeArgs {
    fn any(&self) -> bool {
        self.tasks.is_some()
            || self.dim.is_some()
            || self.window_len.is_some()
            || self.windows.is_some()
            || self.test_len.is_some()
            || self.decay.is_some()
            || self.angle_step.is_some()
            || self.process_std.is_some()
            || self.obs_std.is_some()
    }

    pub fn config(&self) -> RegimeConfig {
        let d = RegimeConfig {
            n_tasks: 4,
            ..RegimeConfig::default()
        };
        RegimeConfig {
            n_tasks: self.tasks.unwrap_or(d.n_tasks),
            d_x: self.dim.unwrap_or(d.d_x),
            window_len: self.window_len.unwrap_or(d.window_len),
            n_windows: self.windows.unwrap_or(d.n_windows),
            test_len: self.test_len.unwrap_or(d.test_len),
            decay: self.decay.unwrap_or(d.decay),
            angle_step: self.angle_step.unwrap_or(d.angle_step),
            process_std: self.process_std.unwrap_or(d.process_std),
            obs_std: self.obs_std.unwrap_or(d.obs_std),
        }
    }
}

fn create_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn lgssm(out: &Path, seed: u64, args: &LgssmArgs, other: &RegimeArgs) -> Result<(), CliError> {
    if other.any() {
        return Err(CliError::Config(
            "regime options are not valid with --kind lgssm".into(),
        ));
    }
    let (a, q, r) = (args.a.unwrap_or(0.9), args.q.unwrap_or(0.1), args.r.unwrap_or(0.1));
    let (m0, p0) = (args.m0.unwrap_or(0.0), args.p0.unwrap_or(1.0));
    let steps = args.steps.unwrap_or(100);
    if steps == 0 {
        return Err(CliError::Config("--steps must be >= 1".into()));
    }
    let sample = synth_lgssm(&LgssmParams::scalar(a, q, r, m0, p0), steps, seed)?;
    create_dir(out)?;
    write_csv(&out.join("lgssm.csv"), &sample.series)?;
    write_json(
        &out.join("lgssm.json"),
        &json!({
            "kind": "lgssm",
            "seed": seed,
            "steps": steps,
            "a": a,
            "h": 1.0,
            "q": q,
            "r": r,
            "m0": m0,
            "p0": p0,
            "log_evidence": sample.oracle.loglik,
            "states": sample.states.as_slice(),
        }),
    )?;
    println!("wrote {} samples to {}", steps, out.join("lgssm.csv").display());
    Ok(())
}

pub fn regimes(out: &Path, seed: u64, args: &RegimeArgs, other: &LgssmArgs) -> Result<(), CliError> {
    if other.any() {
        return Err(CliError::Config(
            "lgssm options are not valid with --kind regimes".into(),
        ));
    }
    let cfg = args.config();
    let series = synth_regime_series(&cfg, seed)?;
    create_dir(out)?;
    let mut files = Vec::new();
    for (k, s) in series.iter().enumerate() {
        let name = format!("regime_{}.csv", k + 1);
        write_csv(&out.join(&name), s)?;
        files.push(name);
    }
    let h = observation_matrix(cfg.d_x);
    let h_rows: Vec<&[f64]> = (0..h.rows()).map(|i| h.row(i)).collect();
    let angles: Vec<f64> = (0..cfg.n_tasks).map(|j| cfg.angle(j)).collect();
    write_json(
        &out.join("regimes.json"),
        &json!({
            "kind": "regimes",
            "seed": seed,
            "n_tasks": cfg.n_tasks,
            "d_x": cfg.d_x,
            "window_len": cfg.window_len,
            "n_windows": cfg.n_windows,
            "test_len": cfg.test_len,
            "task_len": cfg.task_len(),
            "decay": cfg.decay,
            "angles": angles,
            "process_std": cfg.process_std,
            "obs_std": cfg.obs_std,
            "observation_matrix": h_rows,
            "files": files,
        }),
    )?;
    println!("wrote {} task series to {}", cfg.n_tasks, out.display());
    Ok(())
}
