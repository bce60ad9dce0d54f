/// Relative error used by the gradient checker: `|Δ| / max(1e-8, |analytic|)`.
#[inline]
pub fn rel_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / analytic.abs().max(1e-8)
}

/// Entries smaller than this fraction of the largest gradient entry are
/// measured against that floor instead of their own magnitude. At `h = 1e-5`
/// the difference quotient carries roughly `1e-10` of rounding noise, which
/// would otherwise dominate entries near zero.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Compares `analytic` against central differences of `f` at `point` and
/// returns the largest relative error over all coordinates, each measured
/// against `max(|analytic_i|, RELATIVE_FLOOR * max_j |analytic_j|, 1e-8)`.
pub fn finite_diff_check<F>(mut f: F, point: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length mismatch");
    let mut x = point.to_vec();
    let scale = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs())) * RELATIVE_FLOOR;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        let num = (up - down) / (2.0 * h);
        let err = (num - analytic[i]).abs() / analytic[i].abs().max(scale).max(1e-8);
        if !(err <= worst) {
            worst = err;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = [0.3, -1.2, 2.5, 0.0, 7.0];
        let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let err = finite_diff_check(|v| v.iter().map(|a| a * a).sum(), &x, &g, 1e-5);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = [1.0, 2.0];
        let err = finite_diff_check(|v| v[0] * v[1], &x, &[2.0, 2.0], 1e-5);
        assert!(err > 0.4);
    }

    #[test]
    fn nan_is_reported_as_failure() {
        let err = finite_diff_check(|_| f64::NAN, &[1.0], &[1.0], 1e-5);
        assert!(!(err < 1.0));
    }
}
