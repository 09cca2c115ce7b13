use std::fmt::Write as _;
use std::path::PathBuf;

use cldssm::continual::ImportanceState;
use cldssm::data::{load_csv, SeriesSpec, Standardization, TaskDataset, Window};
use cldssm::enkf::EmissionModel;
use cldssm::training::{evaluate_task, Model};
use cldssm::Error;

use crate::artifacts::{load_phi, load_theta};
use crate::CliError;

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub state: PathBuf,
    pub data: PathBuf,
    pub horizon: usize,
    pub phi: Option<PathBuf>,
    pub out: PathBuf,
    pub particles: usize,
    pub obs_noise: f64,
    pub seed: u64,
}

fn incompatible(msg: String) -> CliError {
    CliError::Core(Error::IncompatibleCheckpoint(msg))
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    if args.horizon == 0 {
        return Err(CliError::Config("--horizon must be >= 1".into()));
    }
    if args.particles < 2 {
        return Err(CliError::Config("--particles must be >= 2".into()));
    }
    if !(args.obs_noise > 0.0 && args.obs_noise.is_finite()) {
        return Err(CliError::Config("--obs-noise must be > 0".into()));
    }
    let (net, theta, d_x) = load_theta(&args.checkpoint)?;
    let state = ImportanceState::load(&args.state)?;
    if state.param_count() != theta.len() {
        return Err(incompatible(format!(
            "importance state covers {} parameters, checkpoint has {}",
            state.param_count(),
            theta.len()
        )));
    }
    if d_x > net.d_z {
        return Err(incompatible(format!("d_x = {d_x} exceeds d_z = {}", net.d_z)));
    }
    let (recognition, phi) = match &args.phi {
        Some(p) => {
            let (rec, phi) = load_phi(p)?;
            if rec.d_x != d_x || rec.d_z != net.d_z {
                return Err(incompatible(format!(
                    "recognition layout (d_x = {}, d_z = {}) does not match the transition (d_x = {d_x}, d_z = {})",
                    rec.d_x, rec.d_z, net.d_z
                )));
            }
            (rec, phi)
        }
        None => {
            let rec = cldssm::nets::RecognitionNet::new(d_x, 1, net.d_z);
            let phi = rec.zero_params();
            (rec, phi)
        }
    };
    let emission = EmissionModel::selector(d_x, net.d_z, args.obs_noise)?;
    let d_u = net.d_u;
    let model = Model {
        net,
        recognition,
        emission,
    };

    let series = load_csv(&args.data, &SeriesSpec::standard(d_x, d_u))?;
    if series.len() <= args.horizon {
        return Err(CliError::Core(Error::InsufficientData {
            required: args.horizon + 1,
            available: series.len(),
        }));
    }
    let split = series.len() - args.horizon;
    let cond = series.slice(0, split);
    let test = series.slice(split, series.len());
    let task = TaskDataset {
        id: 1,
        windows: vec![Window { x: cond.x, u: cond.u }],
        test: Window {
            x: test.x.clone(),
            u: test.u,
        },
        standardization: Standardization::identity(d_x, d_u),
        train_range: 0..split,
        test_range: split..series.len(),
    };
    let e = evaluate_task(&model, &theta, &phi, &task, args.particles, args.seed)?;

    let mut csv = String::from("t");
    for i in 1..=d_x {
        write!(csv, ",truth_{i}").expect("string write");
    }
    for i in 1..=d_x {
        write!(csv, ",pred_{i}").expect("string write");
    }
    csv.push('\n');
    for t in 0..args.horizon {
        write!(csv, "{}", t + 1).expect("string write");
        for v in test.x.row(t) {
            write!(csv, ",{v}").expect("string write");
        }
        for v in e.pred.row(t) {
            write!(csv, ",{v}").expect("string write");
        }
        csv.push('\n');
    }
    std::fs::write(&args.out, csv).map_err(|err| CliError::Io(format!("{}: {err}", args.out.display())))?;
    println!("mse={}", e.mse);
    Ok(())
}
