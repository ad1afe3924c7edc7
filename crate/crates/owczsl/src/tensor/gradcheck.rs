//! Central finite-difference gradients, for checking the reverse pass against
//! an independent numeric route. Only runs forward evaluations.

/// Central differences: g[i] = (f(x + h e_i) - f(x - h e_i)) / 2h.
pub fn numeric_gradient<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let hi = f(&probe);
        probe[i] = orig - step;
        let lo = f(&probe);
        probe[i] = orig;
        grad[i] = (hi - lo) / (2.0 * step);
    }
    grad
}

/// max_i |analytic[i] - numeric[i]| / max(1, |numeric[i]|).
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
