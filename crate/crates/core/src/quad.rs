//! Quadrature and elementary fitting utilities.

use crate::error::{Error, Result};

/// Trapezoidal rule over uniformly spaced samples.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let interior: f64 = values[1..n - 1].iter().sum();
    dx * (0.5 * (values[0] + values[n - 1]) + interior)
}

/// Composite Simpson rule over uniformly spaced samples (the final interval
/// falls back to trapezoid when the sample count is even).
pub fn simpson(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return trapezoid(values, dx);
    }
    let pairs = (n - 1) / 2;
    let mut sum = 0.0;
    for k in 0..pairs {
        let i = 2 * k;
        sum += dx / 3.0 * (values[i] + 4.0 * values[i + 1] + values[i + 2]);
    }
    if (n - 1) % 2 == 1 {
        sum += 0.5 * dx * (values[n - 2] + values[n - 1]);
    }
    sum
}

/// Adaptive Simpson quadrature with absolute/relative tolerance control.
pub fn adaptive_simpson(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    if !(b > a) {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut evals = 3usize;
    let result = adaptive_simpson_rec(
        f, a, b, fa, fm, fb, whole, rel_tol, abs_tol, 48, &mut evals,
    )?;
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson_rec(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    rel_tol: f64,
    abs_tol: f64,
    depth: usize,
    evals: &mut usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    *evals += 2;
    if *evals > 40_000_000 {
        return Err(Error::Numerics(
            "adaptive quadrature exceeded its evaluation budget".into(),
        ));
    }
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    let tol = abs_tol.max(rel_tol * (left + right).abs());
    if depth == 0 {
        if delta.abs() > 15.0 * tol.max(1e-300) * 1e3 {
            return Err(Error::Numerics(format!(
                "adaptive quadrature failed to converge on [{a:.3e}, {b:.3e}]"
            )));
        }
        return Ok(left + right + delta / 15.0);
    }
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    let l = adaptive_simpson_rec(f, a, m, fa, flm, fm, left, rel_tol, 0.5 * abs_tol, depth - 1, evals)?;
    let r = adaptive_simpson_rec(f, m, b, fm, frm, fb, right, rel_tol, 0.5 * abs_tol, depth - 1, evals)?;
    Ok(l + r)
}

/// Least-squares straight line `y ~ slope * x + intercept`.
/// Returns `(slope, intercept, rms_residual)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::Config(
            "linear fit needs at least two matched samples".into(),
        ));
    }
    let nf = n as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|v| v * v).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let det = nf * sxx - sx * sx;
    if det.abs() < 1e-14 * (nf * sxx).abs().max(1.0) {
        return Err(Error::Numerics("degenerate abscissas in linear fit".into()));
    }
    let slope = (nf * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / nf;
    let mut rss = 0.0;
    for i in 0..n {
        let r = ys[i] - slope * xs[i] - intercept;
        rss += r * r;
    }
    Ok((slope, intercept, (rss / nf).sqrt()))
}

/// Running maximum of `|values|` (handy for sup-norm histories).
pub fn sup_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trapezoid_and_simpson_on_smooth_integrand() {
        let n = 2001;
        let dx = 1.0 / (n as f64 - 1.0);
        let vals: Vec<f64> = (0..n).map(|i| (i as f64 * dx * std::f64::consts::PI).sin()).collect();
        let exact = 2.0 / std::f64::consts::PI;
        assert_relative_eq!(trapezoid(&vals, dx), exact, max_relative = 1e-6);
        assert_relative_eq!(simpson(&vals, dx), exact, max_relative = 1e-12);
    }

    #[test]
    fn simpson_handles_even_sample_count() {
        let n = 2000; // odd interval count -> trapezoid tail
        let dx = 1.0 / (n as f64 - 1.0);
        let vals: Vec<f64> = (0..n).map(|i| {
            let x = i as f64 * dx;
            x * x
        }).collect();
        assert_relative_eq!(simpson(&vals, dx), 1.0 / 3.0, max_relative = 1e-6);
    }

    #[test]
    fn adaptive_simpson_hits_tolerance_on_peaked_integrand() {
        // Narrow Gaussian: integral over [-1, 1] of exp(-400 x^2) is
        // sqrt(pi)/20 erf(20) ~ sqrt(pi)/20.
        let mut f = |x: f64| (-400.0 * x * x).exp();
        let got = adaptive_simpson(&mut f, -1.0, 1.0, 1e-10, 1e-14).unwrap();
        let exact = std::f64::consts::PI.sqrt() / 20.0 * libm::erf(20.0);
        assert_relative_eq!(got, exact, max_relative = 1e-9);
    }

    #[test]
    fn linear_fit_recovers_exact_line_and_noise_floor() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.5 * x - 1.25).collect();
        let (slope, intercept, rms) = linear_fit(&xs, &ys).unwrap();
        assert_relative_eq!(slope, 3.5, epsilon = 1e-12);
        assert_relative_eq!(intercept, -1.25, epsilon = 1e-12);
        assert!(rms < 1e-12);
    }
}
