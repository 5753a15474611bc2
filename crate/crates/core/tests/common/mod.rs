//! Shared test helpers: the central finite-difference oracle used to check
//! analytic gradients. Lives in test code only and never touches the tape's
//! backward pass.

/// Central finite differences of `f` at `x0` with step `eps`.
pub fn fd_grad(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], eps: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x0.len());
    let mut x = x0.to_vec();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let hi = f(&x);
        x[i] = orig - eps;
        let lo = f(&x);
        x[i] = orig;
        grad.push((hi - lo) / (2.0 * eps));
    }
    grad
}

/// Relative error with an absolute floor: gradients below the floor compare
/// on an absolute scale (1e-9 agreement at the floor), since central
/// differences with step 1e-6 carry truncation noise around 1e-11 that would
/// otherwise dominate near-zero gradients.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| rel_err(a, b))
        .fold(0.0, f64::max)
}
