use cldssm::numcore::linalg::{cholesky_logdet, cholesky_solve, gaussian_logpdf as logpdf_values};
use cldssm::numcore::{cholesky, finite_diff_grad, gaussian_logpdf, Matrix, Tape, Var};
use cldssm::rng::{seeded, standard_normal};
use proptest::prelude::*;

fn lower_factor(n: usize, seed: u64) -> Matrix {
    let z = standard_normal(&mut seeded(seed), n, n);
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            l[(i, j)] = 0.5 * z[(i, j)];
        }
        l[(i, i)] = 0.5 + z[(i, i)].abs();
    }
    l
}

/// `log N(tanh(x·W + b); m, A·Aᵀ + I)` evaluated on a tape, with every
/// argument except `x` differentiable.
fn objective(tape: &mut Tape, x: &Matrix, params: &[Matrix]) -> (Var, Vec<Var>) {
    let leaves: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let (w, b, m, a) = (leaves[0], leaves[1], leaves[2], leaves[3]);
    let xv = tape.constant(x.clone());
    let h = tape.matmul(xv, w);
    let h = tape.add_row(h, b);
    let h = tape.tanh(h);
    let at = tape.transpose(a);
    let aat = tape.matmul(a, at);
    let eye = tape.constant(Matrix::identity(params[3].rows()));
    let cov = tape.add(aat, eye);
    (gaussian_logpdf(tape, h, m, cov).unwrap(), leaves)
}

fn flat(params: &[Matrix]) -> Vec<f64> {
    params.iter().flat_map(|p| p.as_slice().to_vec()).collect()
}

fn unflat(shapes: &[Matrix], v: &[f64]) -> Vec<Matrix> {
    let mut at = 0;
    shapes
        .iter()
        .map(|s| {
            let m = Matrix::from_vec(s.rows(), s.cols(), v[at..at + s.len()].to_vec()).unwrap();
            at += s.len();
            m
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn autodiff_matches_finite_differences(d_in in 1usize..=16, d in 1usize..=16, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let x = standard_normal(&mut rng, 1, d_in);
        let params = vec![
            standard_normal(&mut rng, d_in, d).scale(0.3),
            standard_normal(&mut rng, 1, d).scale(0.3),
            standard_normal(&mut rng, 1, d).scale(0.3),
            standard_normal(&mut rng, d, d).scale(0.3),
        ];
        let mut tape = Tape::new();
        let (out, leaves) = objective(&mut tape, &x, &params);
        tape.backward(out);
        let grad: Vec<f64> = leaves.iter().flat_map(|v| tape.grad(*v).into_vec()).collect();
        let fd = finite_diff_grad(
            |v| {
                let mut t = Tape::new();
                let (o, _) = objective(&mut t, &x, &unflat(&params, v));
                t.scalar(o)
            },
            &flat(&params),
            1e-6,
        );
        for (a, f) in grad.iter().zip(&fd) {
            prop_assert!((a - f).abs() <= 1e-6 * a.abs().max(f.abs()).max(1.0), "autodiff {} vs fd {}", a, f);
        }
    }

    #[test]
    fn cholesky_recovers_its_factor(n in 1usize..=16, seed in any::<u64>()) {
        let l = lower_factor(n, seed);
        let a = l.matmul_nt(&l);
        let got = cholesky(&a).unwrap();
        prop_assert!(got.max_abs_diff(&l) < 1e-9);

        let na = nalgebra::DMatrix::from_row_slice(n, n, a.as_slice());
        let oracle = nalgebra::Cholesky::new(na).unwrap().l();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((got[(i, j)] - oracle[(i, j)]).abs() < 1e-10);
            }
        }
        let b = standard_normal(&mut seeded(seed ^ 1), n, 2);
        let x = cholesky_solve(&got, &b);
        prop_assert!(a.matmul(&x).max_abs_diff(&b) < 1e-8 * (1.0 + b.max_abs_diff(&Matrix::zeros(n, 2))));
        let logdet: f64 = oracle.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        prop_assert!((cholesky_logdet(&got) - logdet).abs() < 1e-10 * logdet.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    /// Importance-sampling estimate of `∫ N(x; μ, Σ) dx` with proposal
    /// `N(μ, 2Σ)`, whose weights are bounded by `2^{d/2}`.
    #[test]
    fn density_integrates_to_one(d in 1usize..=4, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let l = lower_factor(d, seed ^ 7);
        let cov = l.matmul_nt(&l);
        let wide = cov.scale(2.0);
        let mean = standard_normal(&mut rng, 1, d);
        let n = 4000;
        let z = standard_normal(&mut rng, n, d);
        let mut acc = 0.0;
        for s in 0..n {
            let x: Vec<f64> = (0..d)
                .map(|i| mean[(0, i)] + 2f64.sqrt() * (0..=i).map(|k| l[(i, k)] * z[(s, k)]).sum::<f64>())
                .collect();
            let lp = logpdf_values(&x, mean.row(0), &cov).unwrap();
            let lq = logpdf_values(&x, mean.row(0), &wide).unwrap();
            acc += (lp - lq).exp();
        }
        let estimate = acc / n as f64;
        prop_assert!((estimate - 1.0).abs() < 0.08, "estimate {}", estimate);

        let mut tape = Tape::new();
        let xv = tape.constant(mean.clone());
        let mv = tape.constant(mean.clone());
        let cv = tape.constant(cov.clone());
        let on_tape = gaussian_logpdf(&mut tape, xv, mv, cv).unwrap();
        let direct = logpdf_values(mean.row(0), mean.row(0), &cov).unwrap();
        prop_assert!((tape.scalar(on_tape) - direct).abs() < 1e-12 * direct.abs().max(1.0));
    }
}
