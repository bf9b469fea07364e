//! Shared helpers for the unit tests.

use crate::targets::TargetDensity;

/// Central finite differences of a scalar function, one column per coordinate.
pub(crate) fn central_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// Check a vector against a finite-difference reference with a relative
/// tolerance. Components far below the gradient scale are held to a floored
/// denominator so FD round-off does not dominate the comparison.
pub(crate) fn assert_close_to_fd(got: &[f64], fd: &[f64], rtol: f64) {
    let norm = fd.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    for (i, (g, f)) in got.iter().zip(fd).enumerate() {
        let denom = f.abs().max(1e-3 * norm).max(1e-6);
        let err = (g - f).abs();
        assert!(
            err <= 1e-9 + rtol * denom,
            "component {i}: got {g}, fd {f}, err {err}, denom {denom}"
        );
    }
}

pub(crate) fn assert_grad_matches_fd(target: &dyn TargetDensity, x: &[f64], h: f64, rtol: f64) {
    let grad = target.grad_log_density(x);
    let fd = central_diff(|p| target.log_density_unnorm(p), x, h);
    assert_close_to_fd(&grad, &fd, rtol);
}
