//! Dense linear-algebra helpers shared by the spectral and evolution code.
//!
//! Builds on `nalgebra` for factorizations and adds the pieces the workbench
//! needs repeatedly: two-sided eigendecompositions with machine-precision
//! biorthogonality (left vectors are the rows of the inverse eigenvector
//! matrix), spectral projectors, continuity-based eigenvalue matching along a
//! parameter path, an SVD null-space extractor, and a block-tridiagonal
//! Thomas solver with per-block partial pivoting for the implicit diffusion
//! stage of the time stepper.

use crate::error::{Error, Result};
use crate::tol;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Two-sided eigendecomposition of a real matrix with real spectrum.
///
/// `vectors` holds right eigenvectors as columns (unit norm), `left` is the
/// exact inverse of `vectors`, so `left * vectors == I` to rounding and row
/// `j` of `left` is the left eigenvector normalized against column `j`.
/// Eigenvalues are sorted ascending.
#[derive(Debug, Clone)]
pub struct EigenReal {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub left: DMatrix<f64>,
}

/// Two-sided eigendecomposition of a complex matrix, sorted by
/// (real part, imaginary part) for determinism.
#[derive(Debug, Clone)]
pub struct EigenComplex {
    pub values: Vec<Complex64>,
    pub vectors: DMatrix<Complex64>,
    pub left: DMatrix<Complex64>,
}

/// Eigenvalues of a real matrix (possibly complex), unsorted.
pub fn eigenvalues_real_matrix(a: &DMatrix<f64>) -> Vec<Complex64> {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect()
}

/// Eigenvalues of a complex matrix via its Schur form.
pub fn eigenvalues_complex_matrix(a: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(a.clone(), 1e-14, 100_000)
        .ok_or_else(|| Error::Numerics("Schur iteration failed to converge".into()))?;
    let (_, t) = schur.unpack();
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

fn matrix_scale_real(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300)
}

fn matrix_scale_complex(a: &DMatrix<Complex64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.norm())).max(1e-300)
}

fn start_vector(n: usize, idx: usize) -> DVector<f64> {
    let mut v = DVector::from_fn(n, |i, _| (1.0 + i as f64 + 0.7 * idx as f64).sin() + 0.3);
    let norm = v.norm();
    v /= norm;
    v
}

/// Right eigenvector of a real matrix for a given (accurate) real eigenvalue,
/// by shifted inverse iteration.
fn inverse_iteration_real(a: &DMatrix<f64>, lambda: f64, idx: usize) -> Result<DVector<f64>> {
    let n = a.nrows();
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let scale = matrix_scale_real(a);
    let mut pert = 1e-12 * scale;
    for _attempt in 0..6 {
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] -= lambda + pert;
        }
        let lu = shifted.lu();
        let mut v = start_vector(n, idx);
        let mut best = v.clone();
        let mut best_res = f64::INFINITY;
        for _ in 0..10 {
            match lu.solve(&v) {
                Some(mut w) => {
                    let norm = w.norm();
                    if !norm.is_finite() || norm == 0.0 {
                        break;
                    }
                    w /= norm;
                    let residual = (a * &w - lambda * &w).norm();
                    if residual < best_res {
                        best_res = residual;
                        best = w.clone();
                    }
                    v = w;
                    if residual <= 1e-14 * scale {
                        break;
                    }
                }
                None => break,
            }
        }
        if best_res <= 1e-8 * scale {
            return Ok(best);
        }
        pert *= 32.0;
    }
    Err(Error::Numerics(format!(
        "inverse iteration failed for eigenvalue {lambda:.6e} (matrix may have a \
         clustered or defective spectrum)"
    )))
}

fn inverse_iteration_complex(
    a: &DMatrix<Complex64>,
    lambda: Complex64,
    idx: usize,
) -> Result<DVector<Complex64>> {
    let n = a.nrows();
    if n == 1 {
        return Ok(DVector::from_element(1, Complex64::new(1.0, 0.0)));
    }
    let scale = matrix_scale_complex(a);
    let mut pert = 1e-12 * scale;
    for _attempt in 0..6 {
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] -= lambda + Complex64::new(pert, 0.5 * pert);
        }
        let lu = shifted.lu();
        let start = start_vector(n, idx);
        let mut v =
            DVector::from_fn(n, |i, _| Complex64::new(start[i], (0.4 * (i + idx) as f64).cos()));
        let norm = v.norm();
        v.unscale_mut(norm);
        let mut best = v.clone();
        let mut best_res = f64::INFINITY;
        for _ in 0..10 {
            match lu.solve(&v) {
                Some(mut w) => {
                    let norm = w.norm();
                    if !norm.is_finite() || norm == 0.0 {
                        break;
                    }
                    w.unscale_mut(norm);
                    let residual = (a * &w - &w * lambda).norm();
                    if residual < best_res {
                        best_res = residual;
                        best = w.clone();
                    }
                    v = w;
                    if residual <= 1e-14 * scale {
                        break;
                    }
                }
                None => break,
            }
        }
        if best_res <= 1e-8 * scale {
            return Ok(best);
        }
        pert *= 32.0;
    }
    Err(Error::Numerics(format!(
        "inverse iteration failed for eigenvalue {lambda:.6e} (matrix may have a \
         clustered or defective spectrum)"
    )))
}

/// Full two-sided eigendecomposition of a real matrix whose spectrum must be
/// real (as for symmetrizable-hyperbolic characteristic matrices). Fails with
/// a diagnostic if eigenvalues have nontrivial imaginary parts or if the
/// eigenvector matrix is numerically singular (non-semisimple spectrum).
pub fn eigen_real(a: &DMatrix<f64>) -> Result<EigenReal> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::Config("eigen_real requires a square nonempty matrix".into()));
    }
    let scale = matrix_scale_real(a);
    let raw = eigenvalues_real_matrix(a);
    let mut values = Vec::with_capacity(n);
    for z in &raw {
        if z.im.abs() > 1e-8 * scale {
            return Err(Error::Numerics(format!(
                "expected a real spectrum but found eigenvalue {z:.6e}"
            )));
        }
        values.push(z.re);
    }
    values.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mut vectors = DMatrix::zeros(n, n);
    for (j, &lambda) in values.iter().enumerate() {
        let v = inverse_iteration_real(a, lambda, j)?;
        vectors.set_column(j, &v);
    }
    let left = vectors.clone().try_inverse().ok_or_else(|| {
        Error::Numerics(
            "eigenvector matrix is singular: spectrum is clustered or defective".into(),
        )
    })?;
    Ok(EigenReal { values, vectors, left })
}

/// Full two-sided eigendecomposition of a complex matrix with semisimple
/// spectrum.
pub fn eigen_complex(a: &DMatrix<Complex64>) -> Result<EigenComplex> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::Config("eigen_complex requires a square nonempty matrix".into()));
    }
    let mut values = eigenvalues_complex_matrix(a)?;
    values.sort_by(|p, q| {
        (p.re, p.im)
            .partial_cmp(&(q.re, q.im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut vectors = DMatrix::zeros(n, n);
    for (j, &lambda) in values.iter().enumerate() {
        let v = inverse_iteration_complex(a, lambda, j)?;
        vectors.set_column(j, &v);
    }
    let left = vectors.clone().try_inverse().ok_or_else(|| {
        Error::Numerics(
            "eigenvector matrix is singular: spectrum is clustered or defective".into(),
        )
    })?;
    Ok(EigenComplex { values, vectors, left })
}

impl EigenComplex {
    /// Spectral projector onto the invariant subspace spanned by the selected
    /// eigenvalue indices: `P = R[:, sel] * L[sel, :]`, so `P^2 = P` and
    /// `trace P = |sel|` to rounding.
    pub fn projector(&self, select: &[usize]) -> DMatrix<Complex64> {
        let n = self.vectors.nrows();
        let mut p = DMatrix::zeros(n, n);
        for &j in select {
            let r = self.vectors.column(j);
            let l = self.left.row(j);
            for a in 0..n {
                for b in 0..n {
                    p[(a, b)] += r[a] * l[b];
                }
            }
        }
        p
    }

    /// Basis of the invariant subspace for the selected eigenvalues
    /// (columns).
    pub fn basis(&self, select: &[usize]) -> DMatrix<Complex64> {
        let n = self.vectors.nrows();
        let mut b = DMatrix::zeros(n, select.len());
        for (k, &j) in select.iter().enumerate() {
            b.set_column(k, &self.vectors.column(j));
        }
        b
    }
}

/// Match each entry of `prev` to a distinct entry of `next`, minimizing the
/// summed distances: returns `perm` with `next[perm[i]]` continuing
/// `prev[i]`. Exhaustive over permutations up to 7 entries (our systems are
/// small); greedy nearest-first beyond that.
pub fn match_eigenvalues(prev: &[Complex64], next: &[Complex64]) -> Vec<usize> {
    let n = prev.len();
    assert_eq!(n, next.len(), "eigenvalue lists must have equal length");
    if n == 0 {
        return Vec::new();
    }
    if n <= 7 {
        let mut best_perm: Vec<usize> = (0..n).collect();
        let mut best_cost = f64::INFINITY;
        let mut perm: Vec<usize> = (0..n).collect();
        permute_assign(&mut perm, 0, prev, next, &mut best_cost, &mut best_perm);
        best_perm
    } else {
        // Greedy: repeatedly take the globally closest unmatched pair.
        let mut taken_prev = vec![false; n];
        let mut taken_next = vec![false; n];
        let mut perm = vec![0usize; n];
        for _ in 0..n {
            let mut best = (0usize, 0usize, f64::INFINITY);
            for i in 0..n {
                if taken_prev[i] {
                    continue;
                }
                for j in 0..n {
                    if taken_next[j] {
                        continue;
                    }
                    let d = (prev[i] - next[j]).norm();
                    if d < best.2 {
                        best = (i, j, d);
                    }
                }
            }
            perm[best.0] = best.1;
            taken_prev[best.0] = true;
            taken_next[best.1] = true;
        }
        perm
    }
}

fn permute_assign(
    perm: &mut Vec<usize>,
    k: usize,
    prev: &[Complex64],
    next: &[Complex64],
    best_cost: &mut f64,
    best_perm: &mut Vec<usize>,
) {
    let n = perm.len();
    if k == n {
        let cost: f64 = (0..n).map(|i| (prev[i] - next[perm[i]]).norm()).sum();
        if cost < *best_cost {
            *best_cost = cost;
            best_perm.copy_from_slice(perm);
        }
        return;
    }
    for i in k..n {
        perm.swap(k, i);
        permute_assign(perm, k + 1, prev, next, best_cost, best_perm);
        perm.swap(k, i);
    }
}

/// Orthonormal basis of the (right) null space of `a`, i.e. all `v` with
/// `a v = 0`, detected as singular values below `rel` times the largest.
/// Works for any shape; wide matrices are zero-padded to square so the full
/// set of right singular vectors is available.
pub fn null_space(a: &DMatrix<f64>, rel: f64) -> Vec<DVector<f64>> {
    let (r, c) = a.shape();
    let square = if r >= c {
        a.clone()
    } else {
        let mut padded = DMatrix::zeros(c, c);
        padded.view_mut((0, 0), (r, c)).copy_from(a);
        padded
    };
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cut = rel * smax.max(1e-300);
    let mut basis = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= cut {
            basis.push(v_t.row(i).transpose());
        }
    }
    basis
}

// ----- small dense blocks (row-major) and the block-tridiagonal solver -----

fn small_lu_factor(m: usize, a: &mut [f64], piv: &mut [usize]) -> Result<()> {
    for k in 0..m {
        let mut p = k;
        let mut best = a[k * m + k].abs();
        for r in (k + 1)..m {
            let v = a[r * m + k].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best == 0.0 {
            return Err(Error::Numerics("singular pivot block in tridiagonal solve".into()));
        }
        piv[k] = p;
        if p != k {
            for c in 0..m {
                a.swap(k * m + c, p * m + c);
            }
        }
        let pivval = a[k * m + k];
        for r in (k + 1)..m {
            let f = a[r * m + k] / pivval;
            a[r * m + k] = f;
            for c in (k + 1)..m {
                a[r * m + c] -= f * a[k * m + c];
            }
        }
    }
    Ok(())
}

fn small_lu_solve(m: usize, a: &[f64], piv: &[usize], b: &mut [f64]) {
    for k in 0..m {
        let p = piv[k];
        if p != k {
            b.swap(p, k);
        }
        for r in (k + 1)..m {
            b[r] -= a[r * m + k] * b[k];
        }
    }
    for k in (0..m).rev() {
        for c in (k + 1)..m {
            b[k] -= a[k * m + c] * b[c];
        }
        b[k] /= a[k * m + k];
    }
}

/// `y -= a * x` for an `m x m` row-major block.
fn small_mv_sub(m: usize, a: &[f64], x: &[f64], y: &mut [f64]) {
    for r in 0..m {
        let mut acc = 0.0;
        for c in 0..m {
            acc += a[r * m + c] * x[c];
        }
        y[r] -= acc;
    }
}

/// `out = a * b` for `m x m` row-major blocks.
fn small_mm(m: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for r in 0..m {
        for c in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += a[r * m + k] * b[k * m + c];
            }
            out[r * m + c] = acc;
        }
    }
}

/// Block-tridiagonal matrix with `n` block rows of size `m x m`:
/// `lower[i]` couples row `i+1` to row `i`, `upper[i]` couples row `i` to
/// row `i+1`. Blocks are stored row-major and zero-initialized.
#[derive(Debug, Clone)]
pub struct BlockTridiag {
    pub n: usize,
    pub m: usize,
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BlockTridiag {
    pub fn new(n: usize, m: usize) -> Self {
        assert!(n >= 2 && m >= 1);
        BlockTridiag {
            n,
            m,
            lower: vec![0.0; (n - 1) * m * m],
            diag: vec![0.0; n * m * m],
            upper: vec![0.0; (n - 1) * m * m],
        }
    }

    pub fn diag_block_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.m * self.m;
        &mut self.diag[i * s..(i + 1) * s]
    }

    /// Sub-diagonal block of block-row `i` (valid for `i >= 1`).
    pub fn lower_block_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.m * self.m;
        &mut self.lower[(i - 1) * s..i * s]
    }

    /// Super-diagonal block of block-row `i` (valid for `i <= n-2`).
    pub fn upper_block_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.m * self.m;
        &mut self.upper[i * s..(i + 1) * s]
    }

    /// Solve `T x = rhs` in place by block Thomas elimination with partial
    /// pivoting inside each pivot block.
    pub fn solve(&self, rhs: &mut [f64]) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let s = m * m;
        assert_eq!(rhs.len(), n * m);
        let mut cprime = vec![0.0; (n - 1) * s];
        let mut dwork = vec![0.0; s];
        let mut piv = vec![0usize; m];
        let mut col = vec![0.0; m];

        dwork.copy_from_slice(&self.diag[0..s]);
        small_lu_factor(m, &mut dwork, &mut piv)?;
        // C'_0 = D_0^{-1} U_0 ; r_0 <- D_0^{-1} r_0
        for j in 0..m {
            for r in 0..m {
                col[r] = self.upper[r * m + j];
            }
            small_lu_solve(m, &dwork, &piv, &mut col);
            for r in 0..m {
                cprime[r * m + j] = col[r];
            }
        }
        small_lu_solve(m, &dwork, &piv, &mut rhs[0..m]);

        let mut prod = vec![0.0; s];
        for i in 1..n {
            let low = &self.lower[(i - 1) * s..i * s];
            // D'_i = D_i - L_{i-1} C'_{i-1}
            dwork.copy_from_slice(&self.diag[i * s..(i + 1) * s]);
            small_mm(m, low, &cprime[(i - 1) * s..i * s], &mut prod);
            for k in 0..s {
                dwork[k] -= prod[k];
            }
            small_lu_factor(m, &mut dwork, &mut piv)?;
            // r_i <- D'_i^{-1} (r_i - L_{i-1} r_{i-1})
            let (head, tail) = rhs.split_at_mut(i * m);
            let prev = &head[(i - 1) * m..i * m];
            let cur = &mut tail[0..m];
            small_mv_sub(m, low, prev, cur);
            small_lu_solve(m, &dwork, &piv, cur);
            if i < n - 1 {
                for j in 0..m {
                    for r in 0..m {
                        col[r] = self.upper[i * s + r * m + j];
                    }
                    small_lu_solve(m, &dwork, &piv, &mut col);
                    for r in 0..m {
                        cprime[i * s + r * m + j] = col[r];
                    }
                }
            }
        }

        for i in (0..n - 1).rev() {
            let (head, tail) = rhs.split_at_mut((i + 1) * m);
            let cur = &mut head[i * m..(i + 1) * m];
            let next = &tail[0..m];
            small_mv_sub(m, &cprime[i * s..(i + 1) * s], next, cur);
        }
        Ok(())
    }

    /// Dense copy, for small verification problems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let s = m * m;
        let mut a = DMatrix::zeros(n * m, n * m);
        for i in 0..n {
            for r in 0..m {
                for c in 0..m {
                    a[(i * m + r, i * m + c)] = self.diag[i * s + r * m + c];
                    if i + 1 < n {
                        a[(i * m + r, (i + 1) * m + c)] = self.upper[i * s + r * m + c];
                        a[((i + 1) * m + r, i * m + c)] = self.lower[i * s + r * m + c];
                    }
                }
            }
        }
        a
    }
}

/// Convenience: relative cluster test for sorted eigenvalues (used by the
/// hypothesis checks to distinguish "distinct" from "multiple").
pub fn eigenvalue_gaps_ok(values: &[f64], scale: f64) -> bool {
    values
        .windows(2)
        .all(|w| (w[1] - w[0]).abs() > tol::EIGEN_CLUSTER_REL * scale.max(1.0))
}
