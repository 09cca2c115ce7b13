use super::*;
use crate::data::{synth_regimes, RegimeConfig, TaskDataset};
use crate::nets::RecognitionNet;
use crate::numcore::finite_diff_grad;
use crate::rng::{seeded, standard_normal};

struct Fixture {
    net: TransitionNet,
    theta: ParamRegistry,
    em: EmissionModel,
    rec: RecognitionNet,
    phi: ParamRegistry,
    tasks: Vec<TaskDataset>,
}

fn fixture() -> Fixture {
    let net = TransitionNet::new(2, 0, vec![3]);
    let theta = net.init_params(&mut seeded(1));
    let em = EmissionModel::selector(1, 2, 0.1).unwrap();
    let rec = RecognitionNet::new(1, 3, 2);
    let phi = rec.init_params(&mut seeded(2));
    let cfg = RegimeConfig {
        n_tasks: 6,
        d_x: 1,
        window_len: 5,
        n_windows: 2,
        test_len: 4,
        ..RegimeConfig::default()
    };
    let tasks = synth_regimes(&cfg, 3).unwrap();
    Fixture {
        net,
        theta,
        em,
        rec,
        phi,
        tasks,
    }
}

impl Fixture {
    fn ctx(&self, k: usize) -> TaskContext<'_> {
        TaskContext {
            net: &self.net,
            emission: &self.em,
            recognition: &self.rec,
            phi: &self.phi,
            task: &self.tasks[k],
            n_particles: 6,
            seed: 4,
        }
    }

    fn perturbed(&self, scale: f64, seed: u64) -> ParamRegistry {
        let mut t = self.theta.clone();
        let d = standard_normal(&mut seeded(seed), 1, t.len());
        let v: Vec<f64> = t
            .flatten()
            .iter()
            .zip(d.as_slice())
            .map(|(a, b)| a + scale * b)
            .collect();
        t.assign(&v).unwrap();
        t
    }

    fn consolidated(&self, kind: RegularizerKind, tasks: usize) -> ImportanceState {
        let mut s = ImportanceState::new(RegularizerConfig::new(kind), self.theta.len()).unwrap();
        s.begin_task(&self.theta.flatten());
        for k in 0..tasks {
            if kind == RegularizerKind::Si {
                let g: Vec<f64> = (0..self.theta.len()).map(|i| (i as f64 * 0.37).sin()).collect();
                let after: Vec<f64> = self.theta.flatten().iter().zip(&g).map(|(t, g)| t - 0.01 * g).collect();
                s.after_step(&g, &self.theta.flatten(), &after);
            }
            s.consolidate(&self.theta, &self.ctx(k)).unwrap();
        }
        s
    }
}

const LEARNING_KINDS: [RegularizerKind; 5] = [
    RegularizerKind::EwcVanilla,
    RegularizerKind::EwcOnline,
    RegularizerKind::Mas,
    RegularizerKind::Si,
    RegularizerKind::Lwf,
];

#[test]
fn kind_names_round_trip() {
    for k in RegularizerKind::ALL {
        assert_eq!(k.name().parse::<RegularizerKind>().unwrap(), k);
        assert_eq!(RegularizerKind::from_code(k.code()), Some(k));
    }
    assert_eq!("EWC".parse::<RegularizerKind>().unwrap(), RegularizerKind::EwcOnline);
    assert!("vcl".parse::<RegularizerKind>().is_err());
}

#[test]
fn default_weights() {
    assert_eq!(RegularizerKind::EwcOnline.default_lambda(), 1000.0);
    assert_eq!(RegularizerKind::Mas.default_lambda(), 800.0);
    assert_eq!(RegularizerKind::Si.default_lambda(), 1.0);
    assert_eq!(RegularizerKind::Lwf.default_lambda(), 1.0);
    assert_eq!(RegularizerConfig::new(RegularizerKind::Si).epsilon, 0.01);
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let base = RegularizerConfig::new(RegularizerKind::EwcOnline);
    assert!(ImportanceState::new(RegularizerConfig { lambda: -1.0, ..base }, 3).is_err());
    assert!(ImportanceState::new(RegularizerConfig { gamma: 1.5, ..base }, 3).is_err());
    assert!(ImportanceState::new(RegularizerConfig { epsilon: 0.0, ..base }, 3).is_err());
}

#[test]
fn online_ewc_hand_evaluation() {
    let cfg = RegularizerConfig::new(RegularizerKind::EwcOnline);
    let mut s = ImportanceState::new(cfg, 2).unwrap();
    s.ewc_consolidate(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
    let mut tape = Tape::new();
    let theta = tape.leaf(Matrix::row_vector(&[1.0, 1.0]));
    let p = s.quadratic(&mut tape, &[theta]);
    assert_eq!(tape.scalar(p), 1500.0);
}

#[test]
fn no_penalty_before_consolidation() {
    let f = fixture();
    for kind in RegularizerKind::ALL {
        let s = ImportanceState::new(RegularizerConfig::new(kind), f.theta.len()).unwrap();
        let mut tape = Tape::new();
        let model = BoundModel::bind(&mut tape, &f.net, &f.theta, &f.em, true).unwrap();
        assert!(s.penalty(&mut tape, &model).unwrap().is_none());
    }
}

#[test]
fn anchor_is_exactly_zero_and_perturbations_are_non_negative() {
    let f = fixture();
    for kind in LEARNING_KINDS {
        let s = f.consolidated(kind, 2);
        assert_eq!(s.penalty_value(&f.net, &f.em, &f.theta).unwrap(), 0.0, "{kind}");
        for trial in 0..20 {
            let t = f.perturbed(0.1, 100 + trial);
            assert!(s.penalty_value(&f.net, &f.em, &t).unwrap() >= 0.0, "{kind}");
        }
    }
}

#[test]
fn fisher_recursion() {
    let p = 4;
    let m1 = [0.5, 0.0, 2.0, 1e-3];
    let m2 = [1.0, 3.0, 0.25, 7.0];
    let anchor = [0.0; 4];
    for gamma in [0.0, 0.3, 1.0] {
        let cfg = RegularizerConfig {
            gamma,
            ..RegularizerConfig::new(RegularizerKind::EwcOnline)
        };
        let mut s = ImportanceState::new(cfg, p).unwrap();
        s.ewc_consolidate(&m1, &anchor).unwrap();
        assert_eq!(s.weights(), &m1);
        s.ewc_consolidate(&m2, &anchor).unwrap();
        for i in 0..p {
            assert!((s.weights()[i] - (gamma * m1[i] + m2[i])).abs() < 1e-12);
        }
        if gamma == 0.0 {
            assert_eq!(s.weights(), &m2);
        }
    }
    let cfg = RegularizerConfig::new(RegularizerKind::EwcOnline);
    let mut s = ImportanceState::new(cfg, p).unwrap();
    s.ewc_consolidate(&m2, &anchor).unwrap();
    s.ewc_consolidate(&m2, &anchor).unwrap();
    let doubled: Vec<f64> = m2.iter().map(|v| 2.0 * v).collect();
    assert_eq!(s.weights(), doubled.as_slice());
}

#[test]
fn vanilla_ewc_keeps_one_pair_per_task() {
    let cfg = RegularizerConfig::new(RegularizerKind::EwcVanilla);
    let mut s = ImportanceState::new(cfg, 2).unwrap();
    s.ewc_consolidate(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
    s.ewc_consolidate(&[0.0, 1.0], &[0.0, 0.0]).unwrap();
    assert_eq!(s.pairs().len(), 2);
    let mut tape = Tape::new();
    let theta = tape.leaf(Matrix::row_vector(&[0.0, 1.0]));
    let p = s.quadratic(&mut tape, &[theta]);
    assert_eq!(tape.scalar(p), 1000.0);
}

#[test]
fn mas_zero_network_has_zero_importance() {
    let net = TransitionNet::new(2, 1, vec![4]);
    let theta = net.zero_params();
    let states = vec![(vec![1.0, -2.0], Some(vec![0.5])), (vec![0.3, 0.1], Some(vec![-1.0]))];
    let omega = state_importance(&net, &theta, &states).unwrap();
    assert!(omega.iter().all(|&v| v == 0.0));
}

#[test]
fn mas_single_linear_neuron() {
    let net = TransitionNet::new(1, 0, vec![]);
    let mut theta = net.zero_params();
    let w = -0.7;
    *theta.get_mut("transition.0.weight").unwrap() = Matrix::scalar(w);
    let states = vec![(vec![1.0], None), (vec![-1.0], None)];
    let omega = state_importance(&net, &theta, &states).unwrap();
    // Registry order: weight, bias, β.
    assert!((omega[0] - (2.0 * w).abs()).abs() < 1e-15);
    assert!((omega[1] - (2.0 * w).abs()).abs() < 1e-15);
    assert_eq!(omega[2], 0.0);
}

#[test]
fn mas_accumulates_additively() {
    let mut s = ImportanceState::new(RegularizerConfig::new(RegularizerKind::Mas), 2).unwrap();
    s.mas_consolidate(&[1.0, 0.5], &[0.0, 0.0]).unwrap();
    s.mas_consolidate(&[0.25, 0.5], &[1.0, 1.0]).unwrap();
    assert_eq!(s.weights(), &[1.25, 1.0]);
    assert_eq!(s.anchor(), &[1.0, 1.0]);
}

#[test]
fn si_step_updates() {
    let mut s = ImportanceState::new(RegularizerConfig::new(RegularizerKind::Si), 2).unwrap();
    s.si_step_update(&[0.0, 0.0], &[1.0, 2.0], &[1.5, 1.0]).unwrap();
    assert_eq!(s.omega(), &[0.0, 0.0]);
    let eta = 0.1;
    let g = [0.3, -2.0];
    let before = [1.0, 1.0];
    let after: Vec<f64> = before.iter().zip(&g).map(|(t, g)| t - eta * g).collect();
    s.si_step_update(&g, &before, &after).unwrap();
    let once = s.omega().to_vec();
    for i in 0..2 {
        assert!((once[i] - eta * g[i] * g[i]).abs() < 1e-15);
    }
    s.si_step_update(&g, &before, &after).unwrap();
    for (w, o) in s.omega().iter().zip(&once) {
        assert_eq!(*w, o + o);
    }
}

#[test]
fn si_consolidation_hand_evaluation() {
    let mut s = ImportanceState::new(RegularizerConfig::new(RegularizerKind::Si), 1).unwrap();
    s.si_begin(&[0.0]).unwrap();
    s.si_step_update(&[-0.2], &[0.0], &[0.1]).unwrap();
    assert!((s.omega()[0] - 0.02).abs() < 1e-17);
    s.si_consolidate(&[0.1]).unwrap();
    assert!((s.weights()[0] - 1.0).abs() < 1e-12);
    assert_eq!(s.omega(), &[0.0]);
    assert_eq!(s.theta_start(), &[0.1]);
    assert_eq!(s.anchor(), &[0.1]);

    // Zero path integral leaves Λ unchanged.
    let before = s.weights().to_vec();
    s.si_consolidate(&[0.5]).unwrap();
    assert_eq!(s.weights(), before.as_slice());

    // No displacement: damping keeps the increment finite.
    s.si_step_update(&[-1.0], &[0.5], &[0.5 + 1e-3]).unwrap();
    let w = s.omega()[0];
    s.si_begin(&[0.5]).unwrap();
    s.si_consolidate(&[0.5]).unwrap();
    assert!((s.weights()[0] - (before[0] + w / 0.01)).abs() < 1e-12);
}

#[test]
fn si_negative_path_integral_is_clipped() {
    let mut s = ImportanceState::new(RegularizerConfig::new(RegularizerKind::Si), 1).unwrap();
    s.si_begin(&[0.0]).unwrap();
    s.si_step_update(&[1.0], &[0.0], &[0.5]).unwrap();
    assert!(s.omega()[0] < 0.0);
    s.si_consolidate(&[0.5]).unwrap();
    assert_eq!(s.weights(), &[0.0]);
}

#[test]
fn lwf_snapshot_stores_test_length_forecast_and_zero_penalty() {
    let f = fixture();
    let s = f.consolidated(RegularizerKind::Lwf, 2);
    assert_eq!(s.contexts().len(), 2);
    for c in s.contexts() {
        assert_eq!(c.forecast.shape(), (4, 1));
        assert_eq!(c.init.shape(), (6, 2));
        // Replaying the stored seed reproduces the stored forecast bit for bit.
        let mut tape = Tape::new();
        let model = BoundModel::bind(&mut tape, &f.net, &f.theta, &f.em, false).unwrap();
        let rows = c.regenerate(&mut tape, &model).unwrap();
        assert_eq!(crate::enkf::stack_rows(&tape, &rows), c.forecast);
    }
    assert_eq!(s.penalty_value(&f.net, &f.em, &f.theta).unwrap(), 0.0);
}

#[test]
fn state_sizes_follow_memory_model() {
    let f = fixture();
    let p = f.theta.len();
    let size = |kind, n| f.consolidated(kind, n).to_bytes().len();
    for kind in [RegularizerKind::EwcOnline, RegularizerKind::Mas, RegularizerKind::Si] {
        assert_eq!(size(kind, 1), size(kind, 6), "{kind}");
    }
    let v1 = size(RegularizerKind::EwcVanilla, 1);
    for j in 2..=3 {
        assert_eq!(size(RegularizerKind::EwcVanilla, j), v1 + (j - 1) * 2 * p * 8);
    }
    let l1 = size(RegularizerKind::Lwf, 1);
    let l2 = size(RegularizerKind::Lwf, 2);
    assert_eq!(size(RegularizerKind::Lwf, 3) - l2, l2 - l1);
}

#[test]
fn serialization_round_trips() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    for kind in RegularizerKind::ALL {
        let s = f.consolidated(kind, 2);
        let path = dir.path().join(format!("{kind}.bin"));
        s.save(&path).unwrap();
        assert_eq!(ImportanceState::load(&path).unwrap(), s);
        let bytes = s.to_bytes();
        assert!(matches!(
            ImportanceState::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::IncompatibleCheckpoint(_))
        ));
    }
}

fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-6)
}

#[test]
fn penalty_gradients_match_finite_differences() {
    let f = fixture();
    for kind in LEARNING_KINDS {
        let s = f.consolidated(kind, 2);
        let at = f.perturbed(0.05, 77);
        let mut tape = Tape::new();
        let model = BoundModel::bind(&mut tape, &f.net, &at, &f.em, true).unwrap();
        let p = s.penalty(&mut tape, &model).unwrap().unwrap();
        tape.backward(p);
        let grad = at.gradient(&tape, &model.theta.vars);
        let fd = finite_diff_grad(
            |v| {
                let mut t = at.clone();
                t.assign(v).unwrap();
                s.penalty_value(&f.net, &f.em, &t).unwrap()
            },
            &at.flatten(),
            1e-5,
        );
        for (a, b) in grad.iter().zip(&fd) {
            assert!(rel_err(*a, *b) < 1e-4, "{kind}: {a} vs {b}");
        }
    }
}
