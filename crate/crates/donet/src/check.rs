//! Finite-difference oracles and small numeric test helpers.
//!
//! These are deliberately independent of the autodiff tape: they evaluate a
//! plain closure, so tests can cross-check tape gradients against them.

/// Central-difference gradient of a scalar function at `x`.
pub fn numerical_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let keep = probe[i];
        probe[i] = keep + h;
        let up = f(&probe);
        probe[i] = keep - h;
        let down = f(&probe);
        probe[i] = keep;
        out[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Relative error with an absolute floor, for comparing gradients near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1.0);
    (a - b).abs() / denom
}

/// Largest elementwise [`rel_err`] between two same-length slices.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

/// Largest absolute difference between two same-length slices.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Least-squares slope of ln(y) against ln(x); used for convergence orders.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    assert!(points.len() >= 2, "need at least two points for a slope");
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_grad_matches_analytic_quadratic() {
        // f(x) = sum x_i^2, grad = 2x.
        let x = [0.3, -1.2, 2.0];
        let g = numerical_grad(|v| v.iter().map(|a| a * a).sum(), &x, 1e-6);
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-8, "got {gi}, want {}", 2.0 * xi);
        }
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = (1..6).map(|k| {
            let x = 10f64.powi(-k);
            (x, 3.0 * x * x)
        }).collect();
        assert!((log_log_slope(&pts) - 2.0).abs() < 1e-12);
    }
}
