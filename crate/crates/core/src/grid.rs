//! Uniform spatial grids and node-major vector fields over them.
//!
//! All spatial data in the workbench lives on a uniform one-dimensional grid.
//! A [`Field`] stores `ncomp` components per node contiguously (node-major),
//! which is the layout the time stepper, quadratures, and interpolators want.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform one-dimensional grid `x_i = x0 + i*dx`, `i = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x0: f64,
    pub dx: f64,
    pub len: usize,
}

impl Grid {
    /// Symmetric grid on `[-half_width, half_width]` with `2*half_cells + 1`
    /// nodes, so that `x = 0` is exactly a node.
    pub fn symmetric(half_width: f64, dx: f64) -> Result<Self> {
        if !(half_width > 0.0) || !(dx > 0.0) {
            return Err(Error::Config(format!(
                "grid requires positive half_width and dx, got {half_width}, {dx}"
            )));
        }
        let half_cells = (half_width / dx).round() as usize;
        if half_cells == 0 {
            return Err(Error::Config("grid too coarse: dx exceeds half_width".into()));
        }
        Ok(Grid {
            x0: -(half_cells as f64) * dx,
            dx,
            len: 2 * half_cells + 1,
        })
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + self.dx * i as f64
    }

    pub fn x_last(&self) -> f64 {
        self.x(self.len - 1)
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.x(i))
    }

    /// Index of the node nearest to `x` (clamped to the grid).
    pub fn nearest(&self, x: f64) -> usize {
        let t = (x - self.x0) / self.dx;
        if t <= 0.0 {
            0
        } else {
            (t.round() as usize).min(self.len - 1)
        }
    }

    /// Largest index `i` with `x(i) <= x`, clamped to `0..len-2` so that
    /// `i, i+1` always brackets a valid cell.
    pub fn cell_left(&self, x: f64) -> usize {
        let t = ((x - self.x0) / self.dx).floor();
        if t <= 0.0 {
            0
        } else {
            (t as usize).min(self.len - 2)
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x0 - 1e-12 && x <= self.x_last() + 1e-12
    }
}

/// Vector-valued samples over a [`Grid`], node-major: component `c` at node
/// `i` sits at `data[i*ncomp + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub ncomp: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid, ncomp: usize) -> Self {
        Field {
            grid,
            ncomp,
            data: vec![0.0; grid.len * ncomp],
        }
    }

    /// Sample a function of `x` returning one value per component.
    pub fn from_fn(grid: Grid, ncomp: usize, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut field = Field::zeros(grid, ncomp);
        for i in 0..grid.len {
            let x = grid.x(i);
            let node = &mut field.data[i * ncomp..(i + 1) * ncomp];
            f(x, node);
        }
        field
    }

    #[inline]
    pub fn node(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncomp..(i + 1) * self.ncomp]
    }

    #[inline]
    pub fn node_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncomp..(i + 1) * self.ncomp]
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.ncomp + c]
    }

    #[inline]
    pub fn set(&mut self, i: usize, c: usize, v: f64) {
        self.data[i * self.ncomp + c] = v;
    }

    /// One component as a contiguous vector (copy).
    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..self.grid.len).map(|i| self.get(i, c)).collect()
    }

    /// Trapezoidal `L^1` norm, all components together.
    pub fn norm_l1(&self) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.grid.len {
            let w = if i == 0 || i == self.grid.len - 1 { 0.5 } else { 1.0 };
            let node = self.node(i);
            let mag: f64 = node.iter().map(|v| v.abs()).sum();
            sum += w * mag;
        }
        sum * self.grid.dx
    }

    /// Trapezoidal `L^2` norm, all components together.
    pub fn norm_l2(&self) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.grid.len {
            let w = if i == 0 || i == self.grid.len - 1 { 0.5 } else { 1.0 };
            let node = self.node(i);
            let sq: f64 = node.iter().map(|v| v * v).sum();
            sum += w * sq;
        }
        (sum * self.grid.dx).sqrt()
    }

    /// Sup norm over all nodes and components.
    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `L^p` norm for arbitrary `p >= 1` (trapezoidal weights).
    pub fn norm_lp(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.norm_inf();
        }
        let mut sum = 0.0;
        for i in 0..self.grid.len {
            let w = if i == 0 || i == self.grid.len - 1 { 0.5 } else { 1.0 };
            let node = self.node(i);
            let term: f64 = node.iter().map(|v| v.abs().powf(p)).sum();
            sum += w * term;
        }
        (sum * self.grid.dx).powf(1.0 / p)
    }

    /// Second-order centered spatial derivative (one-sided second-order at the
    /// boundary nodes).
    pub fn derivative(&self) -> Field {
        let n = self.grid.len;
        let m = self.ncomp;
        let h = self.grid.dx;
        let mut out = Field::zeros(self.grid, m);
        for c in 0..m {
            for i in 0..n {
                let d = if i == 0 {
                    (-3.0 * self.get(0, c) + 4.0 * self.get(1, c) - self.get(2, c)) / (2.0 * h)
                } else if i == n - 1 {
                    (3.0 * self.get(n - 1, c) - 4.0 * self.get(n - 2, c) + self.get(n - 3, c))
                        / (2.0 * h)
                } else {
                    (self.get(i + 1, c) - self.get(i - 1, c)) / (2.0 * h)
                };
                out.set(i, c, d);
            }
        }
        out
    }

    /// Linear interpolation of all components at `x` (clamped to the grid).
    pub fn eval_linear(&self, x: f64, out: &mut [f64]) {
        let i = self.grid.cell_left(x);
        let t = ((x - self.grid.x(i)) / self.grid.dx).clamp(0.0, 1.0);
        let a = self.node(i);
        let b = self.node(i + 1);
        for c in 0..self.ncomp {
            out[c] = a[c] + t * (b[c] - a[c]);
        }
    }

    /// Evaluate one component by linear interpolation, clamped to the grid.
    pub fn eval_linear_comp(&self, x: f64, c: usize) -> f64 {
        let i = self.grid.cell_left(x);
        let t = ((x - self.grid.x(i)) / self.grid.dx).clamp(0.0, 1.0);
        self.get(i, c) + t * (self.get(i + 1, c) - self.get(i, c))
    }
}

/// Cubic Hermite interpolant of a field given its values and derivative
/// samples on the same grid; fourth-order accurate between nodes and exactly
/// reproduces node values. Outside the grid it clamps to the end nodes.
#[derive(Debug, Clone)]
pub struct Hermite {
    pub value: Field,
    pub slope: Field,
}

impl Hermite {
    pub fn new(value: Field, slope: Field) -> Result<Self> {
        if value.grid != slope.grid || value.ncomp != slope.ncomp {
            return Err(Error::Config(
                "hermite interpolant requires matching value/slope fields".into(),
            ));
        }
        Ok(Hermite { value, slope })
    }

    pub fn grid(&self) -> Grid {
        self.value.grid
    }

    pub fn ncomp(&self) -> usize {
        self.value.ncomp
    }

    /// Interpolated values at `x`.
    pub fn eval(&self, x: f64, out: &mut [f64]) {
        let g = self.value.grid;
        if x <= g.x0 {
            out.copy_from_slice(self.value.node(0));
            return;
        }
        if x >= g.x_last() {
            out.copy_from_slice(self.value.node(g.len - 1));
            return;
        }
        let i = g.cell_left(x);
        let h = g.dx;
        let t = (x - g.x(i)) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let (v0, v1) = (self.value.node(i), self.value.node(i + 1));
        let (s0, s1) = (self.slope.node(i), self.slope.node(i + 1));
        for c in 0..self.value.ncomp {
            out[c] = h00 * v0[c] + h10 * h * s0[c] + h01 * v1[c] + h11 * h * s1[c];
        }
    }

    /// Interpolated first derivative at `x` (zero outside the grid, matching
    /// the clamped values).
    pub fn eval_slope(&self, x: f64, out: &mut [f64]) {
        let g = self.value.grid;
        if x <= g.x0 || x >= g.x_last() {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let i = g.cell_left(x);
        let h = g.dx;
        let t = (x - g.x(i)) / h;
        let t2 = t * t;
        let d00 = (6.0 * t2 - 6.0 * t) / h;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = (-6.0 * t2 + 6.0 * t) / h;
        let d11 = 3.0 * t2 - 2.0 * t;
        let (v0, v1) = (self.value.node(i), self.value.node(i + 1));
        let (s0, s1) = (self.slope.node(i), self.slope.node(i + 1));
        for c in 0..self.value.ncomp {
            out[c] = d00 * v0[c] + d10 * s0[c] + d01 * v1[c] + d11 * s1[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn symmetric_grid_hits_zero_and_ends() {
        let g = Grid::symmetric(10.0, 0.1).unwrap();
        assert_eq!(g.len, 201);
        assert_relative_eq!(g.x0, -10.0, max_relative = 1e-14);
        assert_relative_eq!(g.x_last(), 10.0, max_relative = 1e-14);
        assert_relative_eq!(g.x(100), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn norms_match_closed_forms() {
        // f(x) = exp(-x^2/2): L1 = sqrt(2 pi), L2 = pi^(1/4) (integral of
        // exp(-x^2) is sqrt(pi)), sup = 1.
        let g = Grid::symmetric(12.0, 0.01).unwrap();
        let f = Field::from_fn(g, 1, |x, out| out[0] = (-0.5 * x * x).exp());
        assert_relative_eq!(f.norm_l1(), (2.0 * std::f64::consts::PI).sqrt(), max_relative = 1e-8);
        assert_relative_eq!(f.norm_l2(), std::f64::consts::PI.powf(0.25), max_relative = 1e-8);
        assert_relative_eq!(f.norm_inf(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(f.norm_lp(2.0), f.norm_l2(), max_relative = 1e-12);
    }

    #[test]
    fn derivative_is_second_order() {
        let err = |dx: f64| {
            let g = Grid::symmetric(3.0, dx).unwrap();
            let f = Field::from_fn(g, 1, |x, out| out[0] = x.sin());
            let d = f.derivative();
            let mut worst = 0.0f64;
            for i in 0..g.len {
                worst = worst.max((d.get(i, 0) - g.x(i).cos()).abs());
            }
            worst
        };
        let (e1, e2) = (err(0.02), err(0.01));
        let ratio = e1 / e2;
        assert!(ratio > 3.0 && ratio < 5.0, "convergence ratio {ratio}");
    }

    #[test]
    fn hermite_reproduces_cubics_exactly() {
        let g = Grid::symmetric(2.0, 0.5).unwrap();
        let p = |x: f64| 1.0 + x - 2.0 * x * x + 0.3 * x * x * x;
        let dp = |x: f64| 1.0 - 4.0 * x + 0.9 * x * x;
        let value = Field::from_fn(g, 1, |x, out| out[0] = p(x));
        let slope = Field::from_fn(g, 1, |x, out| out[0] = dp(x));
        let h = Hermite::new(value, slope).unwrap();
        let mut out = [0.0];
        for &x in &[-1.93, -0.31, 0.0, 0.77, 1.99] {
            h.eval(x, &mut out);
            assert_relative_eq!(out[0], p(x), epsilon = 1e-12);
            h.eval_slope(x, &mut out);
            assert_relative_eq!(out[0], dp(x), epsilon = 1e-11);
        }
    }

    #[test]
    fn hermite_is_fourth_order() {
        let err = |dx: f64| {
            let g = Grid::symmetric(2.0, dx).unwrap();
            let value = Field::from_fn(g, 1, |x, out| out[0] = x.sin());
            let slope = Field::from_fn(g, 1, |x, out| out[0] = x.cos());
            let h = Hermite::new(value, slope).unwrap();
            let mut worst = 0.0f64;
            let mut out = [0.0];
            for k in 0..400 {
                let x = -1.9 + 3.8 * (k as f64) / 399.0;
                h.eval(x, &mut out);
                worst = worst.max((out[0] - x.sin()).abs());
            }
            worst
        };
        let ratio = err(0.2) / err(0.1);
        assert!(ratio > 12.0 && ratio < 20.0, "convergence ratio {ratio}");
    }
}
