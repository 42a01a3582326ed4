//! Standing-wave profile computation.
//!
//! Integrating the traveling-wave equation once turns the profile problem
//! into a first-order system with an algebraic constraint: the inviscid
//! rows force `f^I(u) = f^I(u_-)` (the flux blocks refer to the co-moving
//! frame), which pins the inviscid components `u^I = h(u^II)` by the
//! implicit function theorem, while the viscous rows leave a genuine ODE
//!
//! ```text
//!     (b1 dh + b2)(u^II)' = f^II(u) - f^II(u_-)
//! ```
//!
//! on the reduced state `u^II`. The connecting orbit leaves the left
//! endstate along its one-dimensional unstable manifold, so the solver
//! shoots from a small offset along that direction, detects arrival at the
//! right endstate, pins the translation phase (the component with the
//! largest jump attains its midpoint value at `x = 0`), and then
//! re-integrates with fixed steps that land exactly on the requested grid
//! nodes. Tails are clamped to the endstates once they are within rounding
//! distance, and the exponential approach rates are fitted from the outer
//! thirds of the grid.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Hermite};
use crate::linalg;
use crate::model::{
    flux_vec, jacobian_matrix, viscosity_matrix, ConservationLaw, ShockClass, ShockEndstates,
};
use crate::ode::{self, AdaptiveOpts, Control, Rk4Workspace};
use crate::quad;
use crate::tol;
use nalgebra::{DMatrix, DVector};

/// Grid request for a computed profile.
#[derive(Debug, Clone)]
pub struct ProfileOpts {
    /// Half-width of the symmetric grid `[-half_width, half_width]`.
    pub half_width: f64,
    /// Node spacing (adjusted so that `x = 0` is a node).
    pub dx: f64,
}

impl Default for ProfileOpts {
    fn default() -> Self {
        ProfileOpts { half_width: 20.0, dx: 0.02 }
    }
}

/// A computed standing profile on a symmetric grid, with ODE-exact slopes
/// and cubic interpolation between nodes. The one-parameter family of
/// nearby waves is the translates `x -> profile(x - delta)`, so the family
/// derivative at `delta = 0` is minus the slope field.
#[derive(Debug, Clone)]
pub struct Profile {
    pub grid: Grid,
    pub states: Field,
    pub slopes: Field,
    pub endstates: ShockEndstates,
    /// Exponential approach rate to the left endstate (positive).
    pub decay_left: f64,
    /// Exponential approach rate to the right endstate (positive).
    pub decay_right: f64,
    /// Dimension of the connection family handled by the solver.
    pub ell: usize,
    interp: Hermite,
}

impl Profile {
    /// Profile value at `x` (the exact endstates outside the grid).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        if x < self.grid.x0 {
            out.copy_from_slice(&self.endstates.u_minus);
        } else if x > self.grid.x_last() {
            out.copy_from_slice(&self.endstates.u_plus);
        } else {
            self.interp.eval(x, out);
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.states.ncomp];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_component(&self, x: f64, c: usize) -> f64 {
        let mut out = vec![0.0; self.states.ncomp];
        self.eval_into(x, &mut out);
        out[c]
    }

    /// Profile slope at `x` (zero outside the grid).
    pub fn eval_slope_into(&self, x: f64, out: &mut [f64]) {
        self.interp.eval_slope(x, out);
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncomp
    }

    /// Constant-coefficient diagnostic profile: every node carries the same
    /// state and the slopes vanish. Linearized coefficients along it are the
    /// frozen matrices at `state`, which makes transport formulas comparable
    /// against closed-form constant-coefficient solutions. It represents no
    /// shock (both endstates coincide), so classification-dependent fields
    /// are placeholders.
    pub fn frozen(
        model: &dyn ConservationLaw,
        state: &[f64],
        half_width: f64,
        dx: f64,
    ) -> Result<Profile> {
        let n = model.state_dim();
        if state.len() != n {
            return Err(Error::Config(format!(
                "frozen profile: state has {} components, model expects {n}",
                state.len()
            )));
        }
        let grid = Grid::symmetric(half_width, dx)?;
        let states = Field::from_fn(grid, n, |_x, out| out.copy_from_slice(state));
        let slopes = Field::zeros(grid, n);
        let endstates = ShockEndstates {
            u_minus: state.to_vec(),
            u_plus: state.to_vec(),
            incoming_minus: 0,
            incoming_plus: 0,
            total_incoming: 0,
            class: ShockClass::Undercompressive,
            ell_expected: 0,
            rh_residual: 0.0,
        };
        let interp = Hermite::new(states.clone(), slopes.clone())?;
        Ok(Profile {
            grid,
            states,
            slopes,
            endstates,
            decay_left: 1.0,
            decay_right: 1.0,
            ell: 0,
            interp,
        })
    }
}

/// Reduced traveling-wave field: resolves the inviscid algebraic block by a
/// warm-started damped Newton iteration and evaluates the viscous-block ODE.
struct ReducedField<'a> {
    model: &'a dyn ConservationLaw,
    n: usize,
    nh: usize,
    r: usize,
    f_minus: Vec<f64>,
    warm: Vec<f64>,
}

impl<'a> ReducedField<'a> {
    fn new(model: &'a dyn ConservationLaw, endstates: &ShockEndstates) -> Self {
        let n = model.state_dim();
        let nh = model.hyperbolic_dim();
        ReducedField {
            model,
            n,
            nh,
            r: model.viscous_rank(),
            f_minus: flux_vec(model, &endstates.u_minus),
            warm: endstates.u_minus[..nh].to_vec(),
        }
    }

    fn reduced(&self, u: &[f64]) -> Vec<f64> {
        u[self.nh..].to_vec()
    }

    /// Solve the inviscid constraint for `u^I` given `u^II = w`, warm-started
    /// from the previous solve.
    fn inviscid_block(&mut self, w: &[f64]) -> Result<Vec<f64>> {
        if self.nh == 0 {
            return Ok(Vec::new());
        }
        let scale = 1.0 + quad::sup_abs(&self.f_minus);
        let mut ui = self.warm.clone();
        let mut u = vec![0.0; self.n];
        let mut f = vec![0.0; self.n];
        let residual = |ui: &[f64], u: &mut [f64], f: &mut [f64], this: &Self| -> Vec<f64> {
            u[..this.nh].copy_from_slice(ui);
            u[this.nh..].copy_from_slice(w);
            this.model.flux(u, f);
            (0..this.nh).map(|i| f[i] - this.f_minus[i]).collect()
        };
        let mut res = residual(&ui, &mut u, &mut f, self);
        for _ in 0..tol::NEWTON_MAX_ITER {
            let rn = quad::sup_abs(&res);
            if rn <= tol::NEWTON_RESIDUAL * scale {
                self.warm = ui.clone();
                return Ok(ui);
            }
            let jac = jacobian_matrix(self.model, &u);
            let a11 = jac.view((0, 0), (self.nh, self.nh)).into_owned();
            let rhs = DVector::from_column_slice(&res);
            let step = a11
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numerics("inviscid flux block is singular during profile reduction".into()))?;
            let mut lambda = 1.0;
            loop {
                let trial: Vec<f64> = ui.iter().zip(step.iter()).map(|(v, d)| v - lambda * d).collect();
                let trial_res = residual(&trial, &mut u, &mut f, self);
                if quad::sup_abs(&trial_res) < rn || lambda < 1e-8 {
                    ui = trial;
                    res = trial_res;
                    break;
                }
                lambda *= 0.5;
            }
        }
        Err(Error::Numerics(
            "profile reduction Newton iteration did not converge".into(),
        ))
    }

    /// Full state `(h(w), w)` for a reduced state `w`.
    fn full_state(&mut self, w: &[f64]) -> Result<Vec<f64>> {
        let ui = self.inviscid_block(w)?;
        let mut u = vec![0.0; self.n];
        u[..self.nh].copy_from_slice(&ui);
        u[self.nh..].copy_from_slice(w);
        Ok(u)
    }

    /// Derivative `dh` of the inviscid block with respect to the reduced
    /// state, from the implicit function theorem.
    fn inviscid_sensitivity(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        if self.nh == 0 {
            return Ok(DMatrix::zeros(0, self.r));
        }
        let jac = jacobian_matrix(self.model, u);
        let a11 = jac.view((0, 0), (self.nh, self.nh)).into_owned();
        let a12 = jac.view((0, self.nh), (self.nh, self.r)).into_owned();
        let lu = a11.lu();
        let mut dh = DMatrix::zeros(self.nh, self.r);
        for c in 0..self.r {
            let col = lu
                .solve(&a12.column(c).into_owned())
                .ok_or_else(|| Error::Numerics("inviscid flux block is singular during profile reduction".into()))?;
            dh.set_column(c, &(-col));
        }
        Ok(dh)
    }

    /// Reduced-ODE matrix `b1 dh + b2` at a full state.
    fn reduced_matrix(&self, u: &[f64], dh: &DMatrix<f64>) -> DMatrix<f64> {
        let b = viscosity_matrix(self.model, u);
        let b1 = b.view((self.nh, 0), (self.r, self.nh)).into_owned();
        let b2 = b.view((self.nh, self.nh), (self.r, self.r)).into_owned();
        &b1 * dh + b2
    }

    /// Right-hand side of the reduced ODE, `w' = m(w)^{-1} (f^II - f^II_-)`.
    fn rhs(&mut self, w: &[f64], out: &mut [f64]) -> Result<()> {
        let u = self.full_state(w)?;
        let dh = self.inviscid_sensitivity(&u)?;
        let m = self.reduced_matrix(&u, &dh);
        let f = flux_vec(self.model, &u);
        let g = DVector::from_iterator(self.r, (0..self.r).map(|i| f[self.nh + i] - self.f_minus[self.nh + i]));
        let wp = m
            .lu()
            .solve(&g)
            .ok_or_else(|| Error::Numerics("reduced viscosity matrix is singular along the profile".into()))?;
        out.copy_from_slice(wp.as_slice());
        Ok(())
    }

    /// Full-state slope `(dh w', w')` given the reduced slope.
    fn full_slope(&mut self, u: &[f64], wp: &[f64]) -> Result<Vec<f64>> {
        let dh = self.inviscid_sensitivity(u)?;
        let mut slope = vec![0.0; self.n];
        let wp_vec = DVector::from_column_slice(wp);
        let top = &dh * &wp_vec;
        slope[..self.nh].copy_from_slice(top.as_slice());
        slope[self.nh..].copy_from_slice(wp);
        Ok(slope)
    }

    /// Jacobian of the reduced field at a rest state (where the forcing
    /// vanishes, so only the forcing derivative contributes).
    fn rest_jacobian(&mut self, w: &[f64]) -> Result<DMatrix<f64>> {
        let u = self.full_state(w)?;
        let dh = self.inviscid_sensitivity(&u)?;
        let m = self.reduced_matrix(&u, &dh);
        let jac = jacobian_matrix(self.model, &u);
        let a21 = jac.view((self.nh, 0), (self.r, self.nh)).into_owned();
        let a22 = jac.view((self.nh, self.nh), (self.r, self.r)).into_owned();
        let dg = &a21 * &dh + a22;
        let minv_dg = m
            .lu()
            .solve(&dg)
            .ok_or_else(|| Error::Numerics("reduced viscosity matrix is singular at an endstate".into()))?;
        Ok(minv_dg)
    }
}

/// Solve for the standing profile connecting the classified endstates.
///
/// Fails with a no-profile error when the jump conditions are violated or
/// the orbit does not connect; multidimensional connection families are
/// reported as unsupported.
pub fn solve_profile(
    model: &dyn ConservationLaw,
    endstates: &ShockEndstates,
    opts: &ProfileOpts,
) -> Result<Profile> {
    if endstates.rh_residual > tol::RANKINE_HUGONIOT {
        return Err(Error::Numerics(format!(
            "no connecting profile: jump-condition residual {:.3e} exceeds {:.1e}",
            endstates.rh_residual,
            tol::RANKINE_HUGONIOT
        )));
    }
    if endstates.ell_expected > 1 {
        return Err(Error::Inconclusive(
            "connection families of dimension greater than one are not supported by the shooting solver".into(),
        ));
    }
    let grid = Grid::symmetric(opts.half_width, opts.dx)?;
    let mut field = ReducedField::new(model, endstates);
    let w_minus = field.reduced(&endstates.u_minus);
    let w_plus = field.reduced(&endstates.u_plus);
    let r = field.r;
    let dw: Vec<f64> = w_plus.iter().zip(&w_minus).map(|(a, b)| a - b).collect();
    let dw_norm = quad::sup_abs(&dw);
    if dw_norm <= 1e-14 {
        return Err(Error::Numerics(
            "no connecting profile: the reduced endstates coincide, the jump is carried entirely by the inviscid block".into(),
        ));
    }

    // Unstable direction at the left endstate.
    let j_minus = field.rest_jacobian(&w_minus)?;
    let eig = linalg::eigen_real(&j_minus).map_err(|e| {
        Error::Numerics(format!("reduced linearization at the left endstate: {e}"))
    })?;
    let unstable: Vec<usize> = (0..r).filter(|&i| eig.values[i] > 0.0).collect();
    match unstable.len() {
        0 => {
            return Err(Error::Numerics(
                "no connecting profile: the left endstate has no unstable direction in this orientation".into(),
            ))
        }
        1 => {}
        _ => {
            return Err(Error::Inconclusive(
                "left endstate has a multidimensional unstable manifold; shooting solver unsupported".into(),
            ))
        }
    }
    let rate_left_hint = eig.values[unstable[0]];
    let mut dir: Vec<f64> = eig.vectors.column(unstable[0]).iter().cloned().collect();
    let toward: f64 = dir.iter().zip(&dw).map(|(a, b)| a * b).sum();
    if toward < 0.0 {
        dir.iter_mut().for_each(|v| *v = -*v);
    }

    // Shoot along the unstable manifold until arrival or escape.
    let scale_plus = 1.0 + quad::sup_abs(&w_plus);
    let offset = 1e-9 * dw_norm;
    let w_start: Vec<f64> = w_minus.iter().zip(&dir).map(|(v, d)| v + offset * d).collect();
    let mid: Vec<f64> = w_minus.iter().zip(&w_plus).map(|(a, b)| 0.5 * (a + b)).collect();
    let escape = 3.0 * dw_norm + 1.0;
    let mut rhs_err: Option<Error> = None;
    let mut shoot_rhs = |_x: f64, y: &[f64], out: &mut [f64]| {
        if let Err(e) = field.rhs(y, out) {
            out.iter_mut().for_each(|v| *v = f64::NAN);
            if rhs_err.is_none() {
                rhs_err = Some(e);
            }
        }
    };
    let adaptive = AdaptiveOpts {
        rel_tol: 1e-12,
        abs_tol: 1e-14,
        h_init: 1e-3,
        h_max: 1.0,
        max_steps: 2_000_000,
    };
    let arrival_tol = tol::ENDSTATE_TAIL * scale_plus;
    let traj = ode::integrate_adaptive(
        &mut shoot_rhs,
        0.0,
        &w_start,
        1.0e4,
        &adaptive,
        |_x, y| {
            let d_plus = y
                .iter()
                .zip(&w_plus)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let d_mid = y
                .iter()
                .zip(&mid)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if d_plus <= arrival_tol || d_mid > escape {
                Control::Stop
            } else {
                Control::Continue
            }
        },
    );
    let traj = match (traj, rhs_err) {
        (_, Some(e)) => return Err(e),
        (Err(e), None) => return Err(Error::Numerics(format!("profile shooting failed: {e}"))),
        (Ok(t), None) => t,
    };
    let final_dist = traj
        .last_y()
        .iter()
        .zip(&w_plus)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if !traj.stopped_early || final_dist > arrival_tol {
        return Err(Error::Numerics(format!(
            "no connecting profile: the orbit from the left endstate does not reach the right endstate (final distance {final_dist:.3e})"
        )));
    }

    // Phase condition: the component with the largest jump crosses its
    // midpoint value at x = 0.
    let n = field.n;
    let jump_comp = (0..n)
        .max_by(|&a, &b| {
            let ja = (endstates.u_plus[a] - endstates.u_minus[a]).abs();
            let jb = (endstates.u_plus[b] - endstates.u_minus[b]).abs();
            ja.partial_cmp(&jb).unwrap()
        })
        .unwrap();
    let target = 0.5 * (endstates.u_minus[jump_comp] + endstates.u_plus[jump_comp]);
    let phi_at = |x: f64, field: &mut ReducedField, tr: &ode::Trajectory| -> Result<f64> {
        let mut w = vec![0.0; r];
        tr.eval(x, &mut w);
        let u = field.full_state(&w)?;
        Ok(u[jump_comp] - target)
    };
    let mut bracket = None;
    for i in 0..traj.len() - 1 {
        let a = phi_at(traj.x(i), &mut field, &traj)?;
        let b = phi_at(traj.x(i + 1), &mut field, &traj)?;
        if a == 0.0 {
            bracket = Some((traj.x(i), traj.x(i)));
            break;
        }
        if a * b <= 0.0 {
            bracket = Some((traj.x(i), traj.x(i + 1)));
            break;
        }
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| {
        Error::Numerics("profile phase condition: the largest-jump component never crosses its midpoint".into())
    })?;
    for _ in 0..200 {
        if hi - lo <= 1e-13 * (1.0 + hi.abs()) {
            break;
        }
        let mid_x = 0.5 * (lo + hi);
        let fm = phi_at(mid_x, &mut field, &traj)?;
        let fl = phi_at(lo, &mut field, &traj)?;
        if fl * fm <= 0.0 {
            hi = mid_x;
        } else {
            lo = mid_x;
        }
    }
    let x_center = 0.5 * (lo + hi);
    let mut w_center = vec![0.0; r];
    traj.eval(x_center, &mut w_center);

    // Re-integrate from the centered state with fixed steps landing exactly
    // on grid nodes; clamp tails once within rounding distance.
    let mut states = Field::zeros(grid.clone(), n);
    let mut slopes = Field::zeros(grid.clone(), n);
    let center_idx = grid.nearest(0.0);
    let substeps = ((opts.dx / 0.005).ceil() as usize).max(2);
    let h = opts.dx / substeps as f64;
    let mut ws = Rk4Workspace::new(r);

    let record = |field: &mut ReducedField, idx: usize, w: &[f64], states: &mut Field, slopes: &mut Field| -> Result<()> {
        let u = field.full_state(w)?;
        let mut wp = vec![0.0; r];
        field.rhs(w, &mut wp)?;
        let du = field.full_slope(&u, &wp)?;
        for c in 0..n {
            states.set(idx, c, u[c]);
            slopes.set(idx, c, du[c]);
        }
        Ok(())
    };
    record(&mut field, center_idx, &w_center, &mut states, &mut slopes)?;

    for (dir_sign, end_state, last_idx) in [
        (1.0f64, &w_plus, grid.len - 1),
        (-1.0f64, &w_minus, 0usize),
    ] {
        let mut w = w_center.clone();
        let mut clamped = false;
        let mut idx = center_idx;
        let end_scale = 1.0 + quad::sup_abs(end_state);
        let full_end = field.full_state(end_state)?;
        loop {
            if idx == last_idx {
                break;
            }
            let next_idx = (idx as i64 + dir_sign as i64) as usize;
            if !clamped {
                let x_node = grid.x(idx);
                let mut step_err = None;
                let mut rhs = |_x: f64, y: &[f64], out: &mut [f64]| {
                    if let Err(e) = field.rhs(y, out) {
                        out.iter_mut().for_each(|v| *v = f64::NAN);
                        if step_err.is_none() {
                            step_err = Some(e);
                        }
                    }
                };
                for k in 0..substeps {
                    ode::rk4_step(&mut rhs, x_node + dir_sign * k as f64 * h, &mut w, dir_sign * h, &mut ws);
                }
                drop(rhs);
                if let Some(e) = step_err {
                    return Err(e);
                }
                let dist = w
                    .iter()
                    .zip(end_state)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                if !dist.is_finite() {
                    return Err(Error::Numerics(
                        "profile re-integration diverged in a tail".into(),
                    ));
                }
                if dist <= 1e-13 * end_scale {
                    clamped = true;
                    w.copy_from_slice(end_state);
                }
            }
            if clamped {
                for c in 0..n {
                    states.set(next_idx, c, full_end[c]);
                    slopes.set(next_idx, c, 0.0);
                }
            } else {
                record(&mut field, next_idx, &w, &mut states, &mut slopes)?;
            }
            idx = next_idx;
        }
    }

    // Exponential approach rates from the outer thirds (fall back to the
    // linearized rates when the tail underflows everywhere).
    let rate_right_hint = {
        let j_plus = field.rest_jacobian(&w_plus)?;
        let eig = linalg::eigen_real(&j_plus)
            .map_err(|e| Error::Numerics(format!("reduced linearization at the right endstate: {e}")))?;
        eig.values
            .iter()
            .filter(|&&v| v < 0.0)
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    };
    let third = grid.len / 3;
    let fit_rate = |range: std::ops::Range<usize>, reference: &[f64], sign: f64| -> Option<f64> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in range {
            let u = states.node(i);
            let d = u
                .iter()
                .zip(reference)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if d > 1e-280 {
                xs.push(grid.x(i));
                ys.push(d.ln());
            }
        }
        if xs.len() < 8 {
            return None;
        }
        quad::linear_fit(&xs, &ys).ok().map(|(m, _, _)| sign * m)
    };
    let decay_left = fit_rate(0..third, &endstates.u_minus, 1.0).unwrap_or(rate_left_hint);
    let decay_right = fit_rate(grid.len - third..grid.len, &endstates.u_plus, -1.0)
        .unwrap_or(rate_right_hint);
    if !(decay_left > 0.0) || !(decay_right > 0.0) {
        return Err(Error::Numerics(format!(
            "profile tails do not decay exponentially (fitted rates {decay_left:.3e}, {decay_right:.3e})"
        )));
    }

    let interp = Hermite::new(states.clone(), slopes.clone())?;
    Ok(Profile {
        grid,
        states,
        slopes,
        endstates: endstates.clone(),
        decay_left,
        decay_right,
        ell: 1,
        interp,
    })
}

/// Finite-difference residual of the once-integrated traveling-wave
/// equation, `max |b(u) D u - (f(u) - f(u_-))|` over interior nodes with the
/// centered difference `D`. Measures grid resolution (the stored slopes are
/// ODE-exact, so they would give zero); halving the spacing should shrink it
/// by roughly four.
pub fn integrated_residual(model: &dyn ConservationLaw, profile: &Profile) -> f64 {
    let n = model.state_dim();
    let fd = profile.states.derivative();
    let f_minus = flux_vec(model, &profile.endstates.u_minus);
    let mut worst = 0.0f64;
    for i in 1..profile.grid.len - 1 {
        let u = profile.states.node(i);
        let b = viscosity_matrix(model, u);
        let du = DVector::from_column_slice(fd.node(i));
        let bdu = &b * &du;
        let f = flux_vec(model, u);
        for c in 0..n {
            worst = worst.max((bdu[c] - (f[c] - f_minus[c])).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{classify_shock, Burgers, IsothermalGas, QuadraticGradient};
    use approx::assert_relative_eq;

    fn burgers_profile(half: f64, dx: f64) -> Profile {
        let model = Burgers;
        let e = classify_shock(&model, &[1.0], &[-1.0]).unwrap();
        solve_profile(&model, &e, &ProfileOpts { half_width: half, dx }).unwrap()
    }

    #[test]
    fn burgers_profile_matches_closed_form() {
        let p = burgers_profile(20.0, 40.0 / 2048.0);
        let mut worst = 0.0f64;
        for i in 0..p.grid.len {
            let x = p.grid.x(i);
            worst = worst.max((p.states.get(i, 0) + (0.5 * x).tanh()).abs());
        }
        assert!(worst <= 1e-6, "closed-form deviation {worst:.3e}");
        assert_relative_eq!(p.decay_left, 1.0, epsilon = 0.05);
        assert_relative_eq!(p.decay_right, 1.0, epsilon = 0.05);
        // Phase condition: the midpoint value sits at x = 0.
        assert!(p.eval_component(0.0, 0).abs() <= 1e-9);
    }

    #[test]
    fn quadratic_gradient_profile_matches_closed_form() {
        let model = QuadraticGradient;
        let e = classify_shock(&model, &[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        let p = solve_profile(&model, &e, &ProfileOpts { half_width: 20.0, dx: 0.02 }).unwrap();
        let mut worst = 0.0f64;
        for i in 0..p.grid.len {
            let x = p.grid.x(i);
            worst = worst.max((p.states.get(i, 0) + x.tanh()).abs());
            worst = worst.max(p.states.get(i, 1).abs());
        }
        assert!(worst <= 1e-6, "closed-form deviation {worst:.3e}");
        assert_relative_eq!(p.decay_left, 2.0, epsilon = 0.1);
        assert_relative_eq!(p.decay_right, 2.0, epsilon = 0.1);
    }

    #[test]
    fn gas_profile_satisfies_reduction_and_decays() {
        let (speed, um, up) = IsothermalGas::matched_endstates(1.0, 2.0, 1.0).unwrap();
        let model = IsothermalGas::new(1.0, speed).unwrap();
        let e = classify_shock(&model, &um, &up).unwrap();
        let p = solve_profile(&model, &e, &ProfileOpts { half_width: 25.0, dx: 0.025 }).unwrap();
        // Inviscid constraint holds pointwise: -u - s v is constant.
        let c0 = -um[1] - speed * um[0];
        let mut worst = 0.0f64;
        for i in 0..p.grid.len {
            let v = p.states.get(i, 0);
            let u = p.states.get(i, 1);
            worst = worst.max((-u - speed * v - c0).abs());
        }
        assert!(worst <= 1e-10, "inviscid constraint residual {worst:.3e}");
        // Tails reach the endstates.
        for c in 0..2 {
            assert_relative_eq!(p.states.get(0, c), um[c], epsilon = 1e-6);
            assert_relative_eq!(p.states.get(p.grid.len - 1, c), up[c], epsilon = 1e-6);
        }
        // Volume is monotone increasing across this wave.
        for i in 1..p.grid.len {
            assert!(p.states.get(i, 0) >= p.states.get(i - 1, 0) - 1e-12);
        }
        // Approach rates match the reduced linearization (both 1/sqrt(2)).
        let expected = (1.0 - speed * speed) / speed;
        assert_relative_eq!(p.decay_left, expected, epsilon = 0.02);
        assert_relative_eq!(p.decay_right, expected, epsilon = 0.02);
    }

    #[test]
    fn jump_violating_endstates_have_no_profile() {
        let model = Burgers;
        let e = classify_shock(&model, &[1.0], &[-0.5]).unwrap();
        let err = solve_profile(&model, &e, &ProfileOpts::default()).unwrap_err();
        assert!(matches!(err, Error::Numerics(_)), "{err}");
    }

    #[test]
    fn expansive_orientation_has_no_profile() {
        // The reversed-speed wave satisfies the jump conditions but the
        // orbit leaves the wrong endstate: no unstable direction on the left.
        let (speed, um, up) = IsothermalGas::matched_endstates(1.0, 2.0, -1.0).unwrap();
        let model = IsothermalGas::new(1.0, speed).unwrap();
        let e = classify_shock(&model, &um, &up).unwrap();
        let err = solve_profile(&model, &e, &ProfileOpts { half_width: 20.0, dx: 0.05 }).unwrap_err();
        assert!(matches!(err, Error::Numerics(_)), "{err}");
        assert!(err.to_string().contains("unstable direction"), "{err}");
    }

    #[test]
    fn integrated_residual_shrinks_with_resolution() {
        let (speed, um, up) = IsothermalGas::matched_endstates(1.0, 2.0, 1.0).unwrap();
        let model = IsothermalGas::new(1.0, speed).unwrap();
        let e = classify_shock(&model, &um, &up).unwrap();
        let coarse = solve_profile(&model, &e, &ProfileOpts { half_width: 16.0, dx: 0.08 }).unwrap();
        let fine = solve_profile(&model, &e, &ProfileOpts { half_width: 16.0, dx: 0.04 }).unwrap();
        let rc = integrated_residual(&model, &coarse);
        let rf = integrated_residual(&model, &fine);
        assert!(rc / rf >= 3.5, "residual ratio {:.2} (coarse {rc:.3e}, fine {rf:.3e})", rc / rf);
    }

    #[test]
    fn interpolation_tracks_closed_form_between_nodes() {
        let p = burgers_profile(15.0, 0.05);
        for &x in &[-7.013, -0.4137, 0.0029, 3.777, 11.99] {
            assert_relative_eq!(p.eval_component(x, 0), -(0.5 * x).tanh(), epsilon = 1e-7);
        }
        // Outside the grid the interpolant clamps to the endstates.
        assert_relative_eq!(p.eval_component(-40.0, 0), 1.0, epsilon = 1e-9);
        assert_relative_eq!(p.eval_component(40.0, 0), -1.0, epsilon = 1e-9);
        // Slopes vanish in the far field and match the closed form inside.
        let mut s = [0.0];
        p.eval_slope_into(0.5, &mut s);
        assert_relative_eq!(s[0], -0.5 / (0.25f64).cosh().powi(2), epsilon = 1e-6);
    }
}
