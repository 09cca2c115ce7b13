use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cldssm::data::{load_csv, synth_lgssm, synth_regime_series, LgssmParams, RegimeConfig, SeriesSpec};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cldssm"));
    c.env_remove("CLDSSM_SEED");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "\
[partition]
tasks = 2
window_len = 15
windows = 2
test_len = 8

[model]
latent_dim = 2
hidden = 6
recognition_hidden = 6
particles = 12

[train]
epochs = 3

[regularizers]
kinds = none, ewc_online

[run]
seeds = 0, 1
out = results
";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.ini");
    std::fs::write(&p, text).unwrap();
    p
}

fn train(config: &Path, jobs: usize) -> Output {
    run(bin()
        .args(["train", "--config"])
        .arg(config)
        .args(["--jobs", &jobs.to_string()]))
}

#[test]
fn train_writes_summary_with_one_row_per_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = train(&cfg, 1);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("results/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "kind,seeds,stage1_mean,stage1_std,stage2_mean,stage2_std");
    assert!(lines[1].starts_with("none,2,"));
    assert!(lines[2].starts_with("ewc_online,2,"));
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), 6);
    }
    for run in ["none_seed0", "none_seed1", "ewc_online_seed0", "ewc_online_seed1"] {
        let d = dir.path().join("results/runs").join(run);
        for f in [
            "report.csv",
            "trace.csv",
            "theta.ckpt",
            "phi_task1.ckpt",
            "phi_task2.ckpt",
            "state.bin",
        ] {
            assert!(d.join(f).is_file(), "{run}/{f}");
        }
    }
    let tasks = dir.path().join("results/tasks");
    let t1 = load_csv(&tasks.join("task1.csv"), &SeriesSpec::standard(2, 0)).unwrap();
    assert_eq!(t1.len(), 15 + 8);
}

#[test]
fn reruns_and_parallel_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let summary = dir.path().join("results/summary.csv");
    assert!(train(&cfg, 1).status.success());
    let first = std::fs::read(&summary).unwrap();
    let report = std::fs::read(dir.path().join("results/runs/ewc_online_seed1/report.csv")).unwrap();
    assert!(train(&cfg, 1).status.success());
    assert_eq!(std::fs::read(&summary).unwrap(), first);
    assert!(train(&cfg, 3).status.success());
    assert_eq!(std::fs::read(&summary).unwrap(), first);
    assert_eq!(
        std::fs::read(dir.path().join("results/runs/ewc_online_seed1/report.csv")).unwrap(),
        report
    );
}

#[test]
fn seed_variable_overrides_the_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("kinds = none, ewc_online", "kinds = si"));
    let o = run(bin().env("CLDSSM_SEED", "7").args(["train", "--config"]).arg(&cfg));
    assert!(o.status.success(), "{}", stderr(&o));
    let runs: Vec<String> = std::fs::read_dir(dir.path().join("results/runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(runs, vec!["si_seed7".to_string()]);
    let o = run(bin().env("CLDSSM_SEED", "x").args(["train", "--config"]).arg(&cfg));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_errors_exit_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    for text in [
        "[train]\nlearning_rate = 1\n",
        "[train]\nepochs = zero\n",
        "[model]\nlatent_dim = 1\n[synthetic]\ndim = 2\n",
    ] {
        let cfg = write_config(dir.path(), text);
        let o = train(&cfg, 1);
        assert_eq!(o.status.code(), Some(1), "{text}");
        let err = stderr(&o);
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("error: config: "), "{err}");
    }
    let o = train(&dir.path().join("missing.ini"), 1);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: io: "));
}

#[test]
fn missing_csv_column_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), "t,a\n0,1\n1,2\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "[data]\nsource = csv\npath = d.csv\nobservations = a, b\ntimestamp = t\n",
    );
    let o = train(&cfg, 1);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: parse: "), "{}", stderr(&o));
}

fn parse_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn eval_forecasts_and_reports_recomputable_mse() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("test_len = 8", "test_len = 200")
        .replace("kinds = none, ewc_online", "kinds = lwf")
        .replace("seeds = 0, 1", "seeds = 0");
    let cfg = write_config(dir.path(), &text);
    assert!(train(&cfg, 1).status.success());
    let run_dir = dir.path().join("results/runs/lwf_seed0");
    let out = dir.path().join("forecast.csv");
    let o = run(bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(run_dir.join("theta.ckpt"))
        .arg("--state")
        .arg(run_dir.join("state.bin"))
        .arg("--phi")
        .arg(run_dir.join("phi_task2.ckpt"))
        .arg("--data")
        .arg(dir.path().join("results/tasks/task2.csv"))
        .args(["--horizon", "200", "--particles", "20"])
        .arg("--out")
        .arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert_eq!(text.lines().next().unwrap(), "t,truth_1,truth_2,pred_1,pred_2");
    let printed: f64 = String::from_utf8(o.stdout)
        .unwrap()
        .trim()
        .strip_prefix("mse=")
        .unwrap()
        .parse()
        .unwrap();
    let mut acc = 0.0;
    let rows = parse_rows(&out);
    for r in &rows {
        acc += (r[3] - r[1]).powi(2) + (r[4] - r[2]).powi(2);
    }
    let recomputed = acc / (rows.len() * 2) as f64;
    assert!((printed - recomputed).abs() <= 1e-12 * recomputed.max(1.0));

    // Without φ the initial ensemble comes from the prior.
    let o = run(bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(run_dir.join("theta.ckpt"))
        .arg("--state")
        .arg(run_dir.join("state.bin"))
        .arg("--data")
        .arg(dir.path().join("results/tasks/task1.csv"))
        .args(["--horizon", "50"])
        .arg("--out")
        .arg(dir.path().join("prior.csv")));
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn eval_rejects_truncated_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("kinds = none, ewc_online", "kinds = mas")
        .replace("seeds = 0, 1", "seeds = 0");
    let cfg = write_config(dir.path(), &text);
    assert!(train(&cfg, 1).status.success());
    let run_dir = dir.path().join("results/runs/mas_seed0");
    let bytes = std::fs::read(run_dir.join("theta.ckpt")).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
    let eval = |ckpt: &Path, state: &Path| {
        run(bin()
            .arg("eval")
            .arg("--checkpoint")
            .arg(ckpt)
            .arg("--state")
            .arg(state)
            .arg("--data")
            .arg(dir.path().join("results/tasks/task1.csv"))
            .args(["--horizon", "4"])
            .arg("--out")
            .arg(dir.path().join("f.csv")))
    };
    let o = eval(&cut, &run_dir.join("state.bin"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: checkpoint: "), "{}", stderr(&o));

    // A state from a different layout is incompatible too.
    let other = write_config(
        dir.path(),
        &text
            .replace("hidden = 6", "hidden = 5")
            .replace("out = results", "out = other"),
    );
    assert!(train(&other, 1).status.success());
    let o = eval(
        &run_dir.join("theta.ckpt"),
        &dir.path().join("other/runs/mas_seed0/state.bin"),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: checkpoint: "));
}

#[test]
fn synth_lgssm_writes_series_and_evidence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lg");
    let o = run(bin()
        .args(["synth", "--kind", "lgssm", "--steps", "100", "--seed", "4", "--out"])
        .arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("lgssm.csv")).unwrap();
    assert_eq!(text.lines().count(), 101);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("lgssm.json")).unwrap()).unwrap();
    let ev = side["log_evidence"].as_f64().unwrap();
    assert!(ev.is_finite());

    let expected = synth_lgssm(&LgssmParams::scalar(0.9, 0.1, 0.1, 0.0, 1.0), 100, 4).unwrap();
    let loaded = load_csv(&out.join("lgssm.csv"), &SeriesSpec::standard(1, 0)).unwrap();
    assert_eq!(loaded, expected.series);
    assert_eq!(ev, expected.oracle.loglik);
}

#[test]
fn synth_regimes_writes_one_file_per_task() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rg");
    let o = run(bin()
        .env("CLDSSM_SEED", "9")
        .args(["synth", "--kind", "regimes", "--tasks", "4", "--out"])
        .arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = RegimeConfig {
        n_tasks: 4,
        ..RegimeConfig::default()
    };
    let expected = synth_regime_series(&cfg, 9).unwrap();
    for (k, s) in expected.iter().enumerate() {
        let loaded = load_csv(&out.join(format!("regime_{}.csv", k + 1)), &SeriesSpec::standard(2, 0)).unwrap();
        assert_eq!(&loaded, s);
    }
    assert!(!out.join("regime_5.csv").exists());
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("regimes.json")).unwrap()).unwrap();
    assert_eq!(side["angles"].as_array().unwrap().len(), 4);
}

#[test]
fn usage_errors_exit_with_one() {
    let o = run(bin().args(["synth", "--kind", "lgssm", "--out", "x", "--tasks", "3"]));
    assert_eq!(o.status.code(), Some(1));
    let o = run(bin().args(["synth", "--kind", "nope", "--out", "x"]));
    assert_eq!(o.status.code(), Some(1));
    let o = run(&mut bin());
    assert_eq!(o.status.code(), Some(1));
    let o = run(bin().arg("--help"));
    assert_eq!(o.status.code(), Some(0));
}
