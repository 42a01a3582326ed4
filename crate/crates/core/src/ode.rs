//! Ordinary differential equation integrators.
//!
//! Three workhorses: a fixed-step classical Runge-Kutta stepper operating on
//! plain slices (used wherever nodes must land exactly on a grid), an
//! adaptive Dormand-Prince 5(4) driver with stored derivative samples for
//! cubic Hermite dense output (used by the connecting-orbit shooter), and a
//! fixed-step Runge-Kutta step for complex matrix frames (used by the
//! spectral continuation).

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Scratch buffers for the in-place classical Runge-Kutta step.
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(dim: usize) -> Self {
        Rk4Workspace {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }
}

/// One classical fourth-order Runge-Kutta step, `y <- y + h*phi(x, y)`.
pub fn rk4_step(
    f: &mut impl FnMut(f64, &[f64], &mut [f64]),
    x: f64,
    y: &mut [f64],
    h: f64,
    ws: &mut Rk4Workspace,
) {
    let n = y.len();
    f(x, y, &mut ws.k1);
    for i in 0..n {
        ws.tmp[i] = y[i] + 0.5 * h * ws.k1[i];
    }
    f(x + 0.5 * h, &ws.tmp, &mut ws.k2);
    for i in 0..n {
        ws.tmp[i] = y[i] + 0.5 * h * ws.k2[i];
    }
    f(x + 0.5 * h, &ws.tmp, &mut ws.k3);
    for i in 0..n {
        ws.tmp[i] = y[i] + h * ws.k3[i];
    }
    f(x + h, &ws.tmp, &mut ws.k4);
    for i in 0..n {
        y[i] += h / 6.0 * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
}

/// Integrate from `x0` to `x_end` with `n_steps` equal Runge-Kutta steps.
pub fn integrate_fixed(
    f: &mut impl FnMut(f64, &[f64], &mut [f64]),
    x0: f64,
    y: &mut [f64],
    x_end: f64,
    n_steps: usize,
    ws: &mut Rk4Workspace,
) {
    let h = (x_end - x0) / n_steps as f64;
    let mut x = x0;
    for k in 0..n_steps {
        rk4_step(f, x, y, h, ws);
        x = x0 + (k + 1) as f64 * h;
    }
}

/// Flow control returned by the adaptive driver's monitor callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    /// Stop after the current accepted step (the step is still recorded).
    Stop,
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOpts {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for AdaptiveOpts {
    fn default() -> Self {
        AdaptiveOpts {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            h_init: 1e-3,
            h_max: 1.0,
            max_steps: 2_000_000,
        }
    }
}

/// Accepted integration path with derivative samples at every node, enough
/// for cubic Hermite dense output between nodes.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dim: usize,
    pub xs: Vec<f64>,
    ys: Vec<f64>,
    fs: Vec<f64>,
    pub stopped_early: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.xs[i]
    }

    pub fn y(&self, i: usize) -> &[f64] {
        &self.ys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn f(&self, i: usize) -> &[f64] {
        &self.fs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_x(&self) -> f64 {
        *self.xs.last().expect("nonempty trajectory")
    }

    pub fn last_y(&self) -> &[f64] {
        self.y(self.len() - 1)
    }

    /// Index of the recorded node nearest to `x`.
    pub fn nearest_node(&self, x: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, &xi) in self.xs.iter().enumerate() {
            let d = (xi - x).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }

    /// Cubic Hermite interpolation between accepted nodes (clamps outside the
    /// recorded range). Handles ascending or descending node order.
    pub fn eval(&self, x: f64, out: &mut [f64]) {
        let n = self.len();
        assert!(n >= 1);
        if n == 1 {
            out.copy_from_slice(self.y(0));
            return;
        }
        let ascending = self.xs[n - 1] >= self.xs[0];
        let (lo_x, hi_x) = if ascending {
            (self.xs[0], self.xs[n - 1])
        } else {
            (self.xs[n - 1], self.xs[0])
        };
        if x <= lo_x {
            out.copy_from_slice(if ascending { self.y(0) } else { self.y(n - 1) });
            return;
        }
        if x >= hi_x {
            out.copy_from_slice(if ascending { self.y(n - 1) } else { self.y(0) });
            return;
        }
        // Binary search for the bracketing segment in recorded order.
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let before = if ascending { self.xs[mid] <= x } else { self.xs[mid] >= x };
            if before {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let h = self.xs[hi] - self.xs[lo];
        let t = (x - self.xs[lo]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let (y0, y1) = (self.y(lo), self.y(hi));
        let (f0, f1) = (self.f(lo), self.f(hi));
        for c in 0..self.dim {
            out[c] = h00 * y0[c] + h10 * h * f0[c] + h01 * y1[c] + h11 * h * f1[c];
        }
    }
}

// Dormand-Prince 5(4) coefficients.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand-Prince 5(4) integration from `x0` toward `x_end`
/// (either direction). The monitor sees every accepted node and may stop the
/// run early; the trajectory then carries `stopped_early = true`.
pub fn integrate_adaptive(
    f: &mut impl FnMut(f64, &[f64], &mut [f64]),
    x0: f64,
    y0: &[f64],
    x_end: f64,
    opts: &AdaptiveOpts,
    mut monitor: impl FnMut(f64, &[f64]) -> Control,
) -> Result<Trajectory> {
    let dim = y0.len();
    let dir = if x_end >= x0 { 1.0 } else { -1.0 };
    let span = (x_end - x0).abs();
    if span == 0.0 {
        return Err(Error::Config("adaptive integration over empty interval".into()));
    }
    let mut k = vec![vec![0.0; dim]; 7];
    let mut y = y0.to_vec();
    let mut ynew = vec![0.0; dim];
    let mut ytmp = vec![0.0; dim];
    let mut x = x0;
    let mut h = opts.h_init.min(opts.h_max).min(span) * dir;

    let mut traj = Trajectory {
        dim,
        xs: Vec::new(),
        ys: Vec::new(),
        fs: Vec::new(),
        stopped_early: false,
    };
    f(x, &y, &mut k[0]);
    traj.xs.push(x);
    traj.ys.extend_from_slice(&y);
    traj.fs.extend_from_slice(&k[0]);
    if monitor(x, &y) == Control::Stop {
        traj.stopped_early = true;
        return Ok(traj);
    }

    let mut steps = 0usize;
    let mut have_k0 = true;
    while (x_end - x) * dir > 1e-14 * span.max(1.0) {
        if steps >= opts.max_steps {
            return Err(Error::Numerics(format!(
                "adaptive integrator exceeded {} steps at x = {x:.6e}",
                opts.max_steps
            )));
        }
        steps += 1;
        if (x + h - x_end) * dir > 0.0 {
            h = x_end - x;
        }
        if !have_k0 {
            f(x, &y, &mut k[0]);
            have_k0 = true;
        }
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = DP_A[s - 1][j];
                    if a != 0.0 {
                        acc += a * kj[i];
                    }
                }
                ytmp[i] = y[i] + h * acc;
            }
            let (khead, ktail) = k.split_at_mut(s);
            let _ = khead;
            f(x + DP_C[s] * h, &ytmp, &mut ktail[0]);
        }
        let mut err_norm = 0.0f64;
        for i in 0..dim {
            let mut acc5 = 0.0;
            let mut acc4 = 0.0;
            for s in 0..7 {
                acc5 += DP_B5[s] * k[s][i];
                acc4 += DP_B4[s] * k[s][i];
            }
            ynew[i] = y[i] + h * acc5;
            let e = h * (acc5 - acc4);
            let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(ynew[i].abs());
            err_norm += (e / sc) * (e / sc);
        }
        err_norm = (err_norm / dim as f64).sqrt();
        if !err_norm.is_finite() {
            return Err(Error::Numerics(format!(
                "integration blew up near x = {x:.6e}"
            )));
        }
        if err_norm <= 1.0 {
            x += h;
            y.copy_from_slice(&ynew);
            // First-same-as-last: stage 7 is the derivative at the new node.
            let (head, tail) = k.split_at_mut(6);
            head[0].copy_from_slice(&tail[0]);
            traj.xs.push(x);
            traj.ys.extend_from_slice(&y);
            traj.fs.extend_from_slice(&k[0]);
            if monitor(x, &y) == Control::Stop {
                traj.stopped_early = true;
                return Ok(traj);
            }
            let factor = if err_norm == 0.0 {
                5.0
            } else {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (h * factor).clamp(-opts.h_max, opts.h_max);
            if h == 0.0 {
                h = 1e-14 * dir;
            }
        } else {
            let factor = (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9);
            h *= factor;
            if h.abs() < 1e-15 * span.max(1.0) {
                return Err(Error::Numerics(format!(
                    "adaptive step collapsed near x = {x:.6e} (stiff or singular)"
                )));
            }
            // k[0] is still valid for the retry.
        }
    }
    Ok(traj)
}

/// One classical Runge-Kutta step for a complex matrix unknown (used to
/// transport frame matrices along a spatial or spectral path).
pub fn rk4_step_matrix(
    f: &mut impl FnMut(f64, &DMatrix<Complex64>) -> DMatrix<Complex64>,
    x: f64,
    y: &mut DMatrix<Complex64>,
    h: f64,
) {
    let hc = Complex64::new(h, 0.0);
    let two = Complex64::new(2.0, 0.0);
    let k1 = f(x, y);
    let k2 = f(x + 0.5 * h, &(&*y + &k1 * (hc * 0.5)));
    let k3 = f(x + 0.5 * h, &(&*y + &k2 * (hc * 0.5)));
    let k4 = f(x + h, &(&*y + &k3 * hc));
    *y += (k1 + k2 * two + k3 * two + k4) * (hc / 6.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use approx::assert_relative_eq;

    #[test]
    fn rk4_is_fourth_order() {
        let solve = |n: usize| {
            let mut y = [1.0];
            let mut ws = Rk4Workspace::new(1);
            integrate_fixed(&mut |_x, y, dy| dy[0] = -y[0], 0.0, &mut y, 2.0, n, &mut ws);
            (y[0] - (-2.0f64).exp()).abs()
        };
        let ratio = solve(100) / solve(200);
        assert!(ratio > 14.0 && ratio < 18.0, "convergence ratio {ratio}");
    }

    #[test]
    fn adaptive_matches_closed_form_forward_and_backward() {
        // y' = cos(x) * y  =>  y = exp(sin x).
        let opts = AdaptiveOpts::default();
        let mut f = |x: f64, y: &[f64], dy: &mut [f64]| dy[0] = x.cos() * y[0];
        let traj =
            integrate_adaptive(&mut f, 0.0, &[1.0], 3.0, &opts, |_, _| Control::Continue).unwrap();
        assert_relative_eq!(traj.last_y()[0], 3.0f64.sin().exp(), max_relative = 1e-10);
        let back =
            integrate_adaptive(&mut f, 3.0, traj.last_y(), 0.0, &opts, |_, _| Control::Continue)
                .unwrap();
        assert_relative_eq!(back.last_y()[0], 1.0, max_relative = 1e-9);
    }

    #[test]
    fn dense_output_is_accurate_between_nodes() {
        let opts = AdaptiveOpts {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            h_max: 0.25,
            ..Default::default()
        };
        let mut f = |x: f64, y: &[f64], dy: &mut [f64]| dy[0] = x.cos() * y[0];
        let traj =
            integrate_adaptive(&mut f, 0.0, &[1.0], 3.0, &opts, |_, _| Control::Continue).unwrap();
        let mut out = [0.0];
        for k in 0..60 {
            let x = 0.05 + 2.9 * k as f64 / 59.0;
            traj.eval(x, &mut out);
            assert_relative_eq!(out[0], x.sin().exp(), max_relative = 1e-6);
        }
    }

    #[test]
    fn monitor_can_stop_the_run() {
        let mut f = |_x: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0];
        let traj = integrate_adaptive(
            &mut f,
            0.0,
            &[1.0],
            50.0,
            &AdaptiveOpts::default(),
            |_x, y| if y[0] > 10.0 { Control::Stop } else { Control::Continue },
        )
        .unwrap();
        assert!(traj.stopped_early);
        assert!(traj.last_y()[0] >= 10.0 && traj.last_y()[0] < 20.0);
        assert!(traj.last_x() < 4.0);
    }

    #[test]
    fn matrix_step_reproduces_matrix_exponential() {
        use nalgebra::DVector;
        // Y' = M Y with constant diagonalizable M; compare against the
        // eigendecomposition-based exponential.
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.1, 1.0),
                Complex64::new(0.3, 0.0),
                Complex64::new(0.0, -0.2),
                Complex64::new(-0.4, 0.5),
            ],
        );
        let mut y = DMatrix::identity(2, 2).map(|v: f64| Complex64::new(v, 0.0));
        let mut rhs = |_x: f64, y: &DMatrix<Complex64>| &m * y;
        let n = 2000;
        let h = 1.0 / n as f64;
        for k in 0..n {
            rk4_step_matrix(&mut rhs, k as f64 * h, &mut y, h);
        }
        let e = linalg::eigen_complex(&m).unwrap();
        let expd = DMatrix::from_diagonal(&DVector::from_vec(
            e.values.iter().map(|z| z.exp()).collect::<Vec<_>>(),
        ));
        let expm = &e.vectors * expd * &e.left;
        assert!((y - expm).norm() < 1e-10);
    }
}
