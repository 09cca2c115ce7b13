use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use cldssm::continual::{ImportanceState, RegularizerKind};
use cldssm::data::{load_csv, partition_tasks, synth_regimes, write_csv, Series, TaskDataset};
use cldssm::training::{run_sequence, summary_csv, Model, TaskReport, TrainConfig};

use crate::artifacts::{save_phi, save_theta};
use crate::config::{DataSource, ExperimentConfig};
use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn load_tasks(cfg: &ExperimentConfig) -> Result<Vec<TaskDataset>, CliError> {
    Ok(match &cfg.data {
        DataSource::Synthetic(rc) => synth_regimes(rc, cfg.partition_seed)?,
        DataSource::Csv { path, spec } => {
            let series = load_csv(path, spec)?;
            partition_tasks(&series, &cfg.partition, cfg.partition_seed)?
        }
    })
}

/// Last training window followed by the test segment, standardized: the
/// input layout of `cldssm eval`.
fn eval_series(task: &TaskDataset) -> Result<Series, CliError> {
    let w = task.last_window();
    let last = Series::new(w.x.clone(), w.u.clone())?;
    let test = Series::new(task.test.x.clone(), task.test.u.clone())?;
    Ok(Series::concat(&[last, test])?)
}

fn run_dir(out: &Path, kind: RegularizerKind, seed: u64) -> PathBuf {
    out.join("runs").join(format!("{}_seed{seed}", kind.name()))
}

fn write_run(dir: &Path, model: &Model, report: &TaskReport, state: &ImportanceState) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_text(&dir.join("report.csv"), &report.to_csv())?;
    write_text(&dir.join("trace.csv"), &report.trace_csv())?;
    save_theta(&dir.join("theta.ckpt"), &model.net, model.d_x(), &report.theta)?;
    for (k, phi) in report.phis.iter().enumerate() {
        save_phi(
            &dir.join(format!("phi_task{}.ckpt", k + 1)),
            &model.recognition,
            model.d_u(),
            phi,
        )?;
    }
    state.save(&dir.join("state.bin"))?;
    Ok(())
}

pub fn run(config: &Path, jobs: usize, env_seeds: Option<Vec<u64>>) -> Result<(), CliError> {
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be >= 1".into()));
    }
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seeds) = env_seeds {
        cfg.seeds = seeds;
    }
    let tasks = load_tasks(&cfg)?;
    let model = cfg.model.build(tasks[0].d_x(), tasks[0].d_u())?;

    let task_dir = cfg.out.join("tasks");
    std::fs::create_dir_all(&task_dir).map_err(|e| io_err(&task_dir, e))?;
    for t in &tasks {
        write_csv(&task_dir.join(format!("task{}.csv", t.id)), &eval_series(t)?)?;
    }

    let queue: Vec<(RegularizerKind, u64)> = cfg
        .kinds
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<TaskReport, CliError>>>> = Mutex::new(queue.iter().map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(kind, seed)) = queue.get(i) else { break };
        let train = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let outcome = run_sequence(&model, &tasks, kind, &train)
            .map_err(CliError::from)
            .and_then(|(report, state)| {
                write_run(&run_dir(&cfg.out, kind, seed), &model, &report, &state)?;
                eprintln!(
                    "{kind} seed {seed}: final averaged mse {}",
                    report.stage_average(report.n_tasks() - 1)
                );
                Ok(report)
            });
        let failed = outcome.is_err();
        results.lock().expect("results lock")[i] = Some(outcome);
        if failed {
            // Stop handing out further jobs.
            next.store(queue.len(), Ordering::Relaxed);
        }
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.min(queue.len()) {
            s.spawn(worker);
        }
        worker();
    });

    let mut reports = Vec::with_capacity(queue.len());
    for r in results.into_inner().expect("results lock").into_iter().flatten() {
        reports.push(r?);
    }
    let summary = summary_csv(&reports)?;
    write_text(&cfg.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}
