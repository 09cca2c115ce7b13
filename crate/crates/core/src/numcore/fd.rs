/// Central-difference gradient `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h`.
///
/// Test oracle for the autodiff tape; stochastic objectives must replay the
/// same noise on every call for the result to mean anything.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
