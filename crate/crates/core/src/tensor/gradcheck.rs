//! Numerical differentiation used to validate the analytic backward passes.

/// Central-difference gradient of a scalar function at `x0`:
/// `g[i] = (f(x0 + h e_i) - f(x0 - h e_i)) / 2h`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], h: f64) -> Vec<f64> {
    let mut x = x0.to_vec();
    let mut g = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        g.push((fp - fm) / (2.0 * h));
    }
    g
}

/// Largest relative disagreement between an analytic and a numerical
/// gradient, with an absolute floor so near-zero entries are judged on
/// absolute error.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / n.abs().max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // f(x) = sum x_i^2, grad = 2x.
        let x0 = [1.0, -2.0, 0.5];
        let g = central_diff(&mut |x| x.iter().map(|v| v * v).sum(), &x0, 1e-5);
        for (gi, xi) in g.iter().zip(&x0) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn rel_err_uses_floor_near_zero() {
        assert!(max_rel_err(&[1e-12], &[0.0], 1e-6) < 1e-5);
        assert!(max_rel_err(&[2.0], &[1.0], 1e-6) == 1.0);
    }
}
