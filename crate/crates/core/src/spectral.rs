//! Linearization about a profile and its spectral data.
//!
//! Linearizing the system about a standing profile gives
//!
//! ```text
//!     v_t = (b(x) v')' - (a(x) v)',
//!     a(x) = df(profile(x)) - c(x),     c(x) v = (d_u b [v]) profile'(x),
//! ```
//!
//! with `b(x) = b(profile(x))`. This module packages
//!
//! * endstate mode data: characteristic speeds with biorthonormal left and
//!   right eigenvectors, and the projected diffusion coefficient
//!   `beta_j = l_j^T b r_j` of each mode (all must be positive for
//!   dissipativity);
//! * dispersion curves `lambda_j(xi)` of the frozen-coefficient symbol
//!   `-i xi a - xi^2 b`, tangent to `-i a_j xi - beta_j xi^2` at the origin;
//! * the first-order formulation of the eigenvalue problem
//!   `lambda v + (a v)' = (b v')'` on the phase space `(v^I, v^II, z)` with
//!   the once-integrated viscous flux `z`, its asymptotic matrices at the
//!   endstates, and the consistent-splitting count used by the stability
//!   determinant;
//! * a direct finite-difference eigenvalue cross-check of the rightmost
//!   spectrum for strictly parabolic models;
//! * the interior transport geometry of models with an inviscid block:
//!   eigenvalue groups of the reduced convection matrix
//!   `a_11 - a_12 b_22^{-1} b_21` under dynamical normalization, the
//!   second-order damping bracket with an endstate dispersion audit of its
//!   sign, and the backward-characteristic Green-function action those
//!   data generate.

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::linalg;
use crate::model::{jacobian_matrix, viscosity_matrix, ConservationLaw};
use crate::profile::Profile;
use crate::tol;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Characteristic mode data at one endstate: speeds sorted ascending,
/// right eigenvectors as columns, biorthonormal left eigenvectors as rows
/// (`left * right = I`), and the projected diffusion coefficient per mode.
#[derive(Debug, Clone)]
pub struct ModeData {
    pub speeds: Vec<f64>,
    pub right: DMatrix<f64>,
    pub left: DMatrix<f64>,
    pub diffusion: Vec<f64>,
}

impl ModeData {
    pub fn positive_diffusion(&self) -> bool {
        self.diffusion.iter().all(|&b| b > 0.0)
    }
}

/// Mode data for one endstate of a model.
pub fn endstate_modes(model: &dyn ConservationLaw, u: &[f64]) -> Result<ModeData> {
    let jac = jacobian_matrix(model, u);
    let eig = linalg::eigen_real(&jac)
        .map_err(|e| Error::Hypothesis(format!("endstate characteristic modes: {e}")))?;
    let b = viscosity_matrix(model, u);
    let n = model.state_dim();
    let mut diffusion = Vec::with_capacity(n);
    for j in 0..n {
        let l = eig.left.row(j);
        let r = eig.vectors.column(j);
        diffusion.push((l * &b * r)[(0, 0)]);
    }
    Ok(ModeData {
        speeds: eig.values,
        right: eig.vectors,
        left: eig.left,
        diffusion,
    })
}

/// Eigenvalues of the frozen-coefficient symbol `-i xi a - xi^2 b` at a
/// state, describing the essential-spectrum curves of the far-field
/// operator.
pub fn dispersion_eigenvalues(
    model: &dyn ConservationLaw,
    u: &[f64],
    xi: f64,
) -> Result<Vec<Complex64>> {
    let n = model.state_dim();
    let a = jacobian_matrix(model, u);
    let b = viscosity_matrix(model, u);
    let mut m = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = Complex64::new(-xi * xi * b[(i, j)], -xi * a[(i, j)]);
        }
    }
    linalg::eigenvalues_complex_matrix(&m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Minus,
    Plus,
}

/// Linearized coefficient access along a computed profile.
pub struct Linearization<'a> {
    pub model: &'a dyn ConservationLaw,
    pub profile: &'a Profile,
}

impl<'a> Linearization<'a> {
    pub fn new(model: &'a dyn ConservationLaw, profile: &'a Profile) -> Self {
        Linearization { model, profile }
    }

    /// Dimension of the first-order phase space, `n + r`.
    pub fn phase_dim(&self) -> usize {
        self.model.state_dim() + self.model.viscous_rank()
    }

    /// Diffusion matrix `b(profile(x))`.
    pub fn diffusion(&self, x: f64) -> DMatrix<f64> {
        let u = self.profile.eval(x);
        viscosity_matrix(self.model, &u)
    }

    /// Effective convection matrix `a(x) = df(profile(x)) - c(x)` including
    /// the gradient coupling from state-dependent viscosity.
    pub fn convection(&self, x: f64) -> DMatrix<f64> {
        let n = self.model.state_dim();
        let u = self.profile.eval(x);
        let mut du = vec![0.0; n];
        self.profile.eval_slope_into(x, &mut du);
        let mut a = jacobian_matrix(self.model, &u);
        let mut dir = vec![0.0; n];
        let mut db = vec![0.0; n * n];
        for j in 0..n {
            dir.iter_mut().for_each(|v| *v = 0.0);
            dir[j] = 1.0;
            self.model.viscosity_directional(&u, &dir, &mut db);
            // column j of the gradient coupling: (d_u b [e_j]) profile'.
            for i in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += db[i * n + k] * du[k];
                }
                a[(i, j)] -= acc;
            }
        }
        a
    }

    /// Spatial derivative of the inviscid rows of the convection matrix
    /// (those rows carry no gradient coupling, so this is the chain rule on
    /// the flux Jacobian along the profile).
    fn convection_top_derivative(&self, x: f64) -> DMatrix<f64> {
        let n = self.model.state_dim();
        let nh = self.model.hyperbolic_dim();
        if nh == 0 {
            return DMatrix::zeros(0, n);
        }
        let u = self.profile.eval(x);
        let mut du = vec![0.0; n];
        self.profile.eval_slope_into(x, &mut du);
        let scale = 1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h = 1e-6 * scale;
        let up: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + h * b).collect();
        let um: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a - h * b).collect();
        let jp = jacobian_matrix(self.model, &up);
        let jm = jacobian_matrix(self.model, &um);
        ((jp - jm) / (2.0 * h)).rows(0, nh).into_owned()
    }

    /// First-order eigenvalue-system matrix `g(x; lambda)` on the phase
    /// space `(v^I, v^II, z)`.
    pub fn eigen_system_matrix(&self, x: f64, lambda: Complex64) -> Result<DMatrix<Complex64>> {
        let a = self.convection(x);
        let da_top = self.convection_top_derivative(x);
        let b = self.diffusion(x);
        system_matrix(self.model, &a, &da_top, &b, lambda)
    }

    /// The system matrix is affine in the spectral parameter,
    /// `g(x; lambda) = g0(x) + lambda g1(x)` with real coefficient matrices;
    /// returns `(g0, g1)` for transport code that freezes the `x` stations.
    pub fn eigen_system_pencil(&self, x: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let g0 = self.eigen_system_matrix(x, Complex64::new(0.0, 0.0))?;
        let g01 = self.eigen_system_matrix(x, Complex64::new(1.0, 0.0))?;
        let g0r = g0.map(|z| z.re);
        let g1r = (g01 - &g0).map(|z| z.re);
        Ok((g0r, g1r))
    }

    /// Asymptotic (frozen-endstate) system matrix.
    pub fn asymptotic_matrix(&self, side: Side, lambda: Complex64) -> Result<DMatrix<Complex64>> {
        let u = match side {
            Side::Minus => &self.profile.endstates.u_minus,
            Side::Plus => &self.profile.endstates.u_plus,
        };
        let a = jacobian_matrix(self.model, u);
        let nh = self.model.hyperbolic_dim();
        let da_top = DMatrix::zeros(nh, self.model.state_dim());
        let b = viscosity_matrix(self.model, u);
        system_matrix(self.model, &a, &da_top, &b, lambda)
    }
}

/// Assemble the first-order system matrix from coefficient blocks.
///
/// With `v = (v^I, v^II)` and the once-integrated viscous flux
/// `z = b1 (v^I)' + b2 (v^II)' - (a v)^II`, the eigenvalue problem becomes
///
/// ```text
///     (v^I)'  = astar^{-1} [ -lambda v^I - (a^I)' v - a^I_II b2^{-1} (z + (a v)^II) ],
///     (v^II)' = b2^{-1} [ z + (a v)^II - b1 (v^I)' ],
///     z'      = lambda v^II,
/// ```
///
/// where `astar = a^I_I - a^I_II b2^{-1} b1` is the reduced inviscid block,
/// invertible by interior hyperbolicity.
fn system_matrix(
    model: &dyn ConservationLaw,
    a: &DMatrix<f64>,
    da_top: &DMatrix<f64>,
    b: &DMatrix<f64>,
    lambda: Complex64,
) -> Result<DMatrix<Complex64>> {
    let n = model.state_dim();
    let r = model.viscous_rank();
    let nh = n - r;
    let dim = n + r;
    let to_c = |m: &DMatrix<f64>| m.map(|v| Complex64::new(v, 0.0));

    let a_ii = a.view((0, 0), (nh, nh)).into_owned();
    let a_iv = a.view((0, nh), (nh, r)).into_owned();
    let a_vi = a.view((nh, 0), (r, nh)).into_owned();
    let a_vv = a.view((nh, nh), (r, r)).into_owned();
    let b1 = b.view((nh, 0), (r, nh)).into_owned();
    let b2 = b.view((nh, nh), (r, r)).into_owned();
    let b2_lu = b2.clone().lu();
    let solve = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        b2_lu
            .solve(m)
            .ok_or_else(|| Error::Numerics("viscous block is singular in the eigenvalue system".into()))
    };
    let p_b1 = solve(&b1)?; // b2^{-1} b1
    let p_avi = solve(&a_vi)?; // b2^{-1} a^II_I
    let p_avv = solve(&a_vv)?; // b2^{-1} a^II_II
    let p_id = solve(&DMatrix::identity(r, r))?; // b2^{-1}

    let mut g = DMatrix::<Complex64>::zeros(dim, dim);

    // Row block 1: (v^I)'.
    let (r1_ui, r1_uv, r1_z);
    if nh > 0 {
        let astar = &a_ii - &a_iv * &p_b1;
        let astar_lu = astar.lu();
        let s = |m: DMatrix<Complex64>| -> Result<DMatrix<Complex64>> {
            // Solve astar X = m column-by-column in complex arithmetic by
            // splitting into real and imaginary parts (astar is real).
            let re = m.map(|z| z.re);
            let im = m.map(|z| z.im);
            let xre = astar_lu
                .solve(&re)
                .ok_or_else(|| Error::Numerics("reduced inviscid block is singular in the eigenvalue system".into()))?;
            let xim = astar_lu
                .solve(&im)
                .ok_or_else(|| Error::Numerics("reduced inviscid block is singular in the eigenvalue system".into()))?;
            Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
                Complex64::new(xre[(i, j)], xim[(i, j)])
            }))
        };
        let da_i = da_top.view((0, 0), (nh, nh)).into_owned();
        let da_v = da_top.view((0, nh), (nh, r)).into_owned();
        let k = &a_iv * &p_id; // a^I_II b2^{-1}
        let mut m_ui = to_c(&(-&da_i - &a_iv * &p_avi));
        for i in 0..nh {
            m_ui[(i, i)] -= lambda;
        }
        r1_ui = s(m_ui)?;
        r1_uv = s(to_c(&(-&da_v - &a_iv * &p_avv)))?;
        r1_z = s(to_c(&(-&k)))?;
    } else {
        r1_ui = DMatrix::zeros(0, 0);
        r1_uv = DMatrix::zeros(0, r);
        r1_z = DMatrix::zeros(0, r);
    }

    // Row block 2: (v^II)' = b2^{-1}[z + (a v)^II] - b2^{-1} b1 (v^I)'.
    let r2_ui = to_c(&p_avi) - to_c(&p_b1) * &r1_ui;
    let r2_uv = to_c(&p_avv) - to_c(&p_b1) * &r1_uv;
    let r2_z = to_c(&p_id) - to_c(&p_b1) * &r1_z;

    for i in 0..nh {
        for j in 0..nh {
            g[(i, j)] = r1_ui[(i, j)];
        }
        for j in 0..r {
            g[(i, nh + j)] = r1_uv[(i, j)];
            g[(i, n + j)] = r1_z[(i, j)];
        }
    }
    for i in 0..r {
        for j in 0..nh {
            g[(nh + i, j)] = r2_ui[(i, j)];
        }
        for j in 0..r {
            g[(nh + i, nh + j)] = r2_uv[(i, j)];
            g[(nh + i, n + j)] = r2_z[(i, j)];
        }
        // Row block 3: z' = lambda v^II.
        g[(n + i, nh + i)] = lambda;
    }
    Ok(g)
}

/// Hyperbolic splitting of an asymptotic system matrix: counts of
/// eigenvalues with positive/negative real part and the margin
/// `min |Re mu|`.
#[derive(Debug, Clone, Copy)]
pub struct Splitting {
    pub unstable: usize,
    pub stable: usize,
    pub margin: f64,
}

pub fn splitting(g: &DMatrix<Complex64>) -> Result<Splitting> {
    let eigs = linalg::eigenvalues_complex_matrix(g)?;
    let mut unstable = 0;
    let mut stable = 0;
    let mut margin = f64::INFINITY;
    for z in eigs {
        if z.re > 0.0 {
            unstable += 1;
        } else if z.re < 0.0 {
            stable += 1;
        }
        margin = margin.min(z.re.abs());
    }
    Ok(Splitting { unstable, stable, margin })
}

/// Consistent-splitting check at a spectral parameter: both asymptotic
/// matrices must split with margin above the guard, the unstable dimension
/// at the left must complement the stable dimension at the right, and the
/// counts must agree across sides. Returns the left unstable dimension.
pub fn consistent_splitting(lin: &Linearization, lambda: Complex64) -> Result<usize> {
    let dim = lin.phase_dim();
    let gm = lin.asymptotic_matrix(Side::Minus, lambda)?;
    let gp = lin.asymptotic_matrix(Side::Plus, lambda)?;
    let sm = splitting(&gm)?;
    let sp = splitting(&gp)?;
    if sm.margin <= tol::SPLITTING_MARGIN || sp.margin <= tol::SPLITTING_MARGIN {
        return Err(Error::Inconclusive(format!(
            "spectral parameter {lambda} is too close to the essential spectrum (margins {:.3e}, {:.3e})",
            sm.margin, sp.margin
        )));
    }
    if sm.unstable + sm.stable != dim || sp.unstable + sp.stable != dim {
        return Err(Error::Inconclusive(format!(
            "asymptotic matrices at {lambda} have center directions"
        )));
    }
    if sm.unstable + sp.stable != dim || sm.unstable != sp.unstable {
        return Err(Error::Inconclusive(format!(
            "inconsistent splitting at {lambda}: unstable {} / {} with phase dimension {dim}",
            sm.unstable, sp.unstable
        )));
    }
    Ok(sm.unstable)
}

/// Direct finite-difference eigenvalue cross-check of the linearized
/// operator on `[-half_width, half_width]` with homogeneous Dirichlet
/// boundaries, for strictly parabolic models. Returns all eigenvalues
/// together with the one nearest zero, the size of the near-zero cluster,
/// and the largest real part outside that cluster.
#[derive(Debug, Clone)]
pub struct FdSpectrum {
    pub values: Vec<Complex64>,
    pub nearest_zero: Complex64,
    pub zero_cluster: usize,
    pub max_re_other: f64,
}

pub fn fd_spectrum(
    model: &dyn ConservationLaw,
    profile: &Profile,
    half_width: f64,
    dx: f64,
    zero_radius: f64,
) -> Result<FdSpectrum> {
    let n = model.state_dim();
    if model.viscous_rank() != n {
        return Err(Error::Inconclusive(
            "finite-difference eigenvalue cross-check requires full-rank viscosity".into(),
        ));
    }
    let cells = (2.0 * half_width / dx).round() as usize;
    let m = cells + 1;
    let interior = m - 2;
    let lin = Linearization::new(model, profile);
    let x_at = |i: usize| -half_width + i as f64 * dx;

    // Conservative second-order stencil:
    //   (l v)_i = [b_{i+1/2}(v_{i+1}-v_i) - b_{i-1/2}(v_i-v_{i-1})]/dx^2
    //             - [(a v)_{i+1} - (a v)_{i-1}]/(2 dx).
    let mut big = DMatrix::<f64>::zeros(interior * n, interior * n);
    let mut b_half = Vec::with_capacity(m);
    for i in 0..m - 1 {
        b_half.push(lin.diffusion(x_at(i) + 0.5 * dx));
    }
    let mut a_node = Vec::with_capacity(m);
    for i in 0..m {
        a_node.push(lin.convection(x_at(i)));
    }
    for row in 0..interior {
        let i = row + 1;
        let diag = -(&b_half[i] + &b_half[i - 1]) / (dx * dx);
        let upper = &b_half[i] / (dx * dx) - &a_node[i + 1] / (2.0 * dx);
        let lower = &b_half[i - 1] / (dx * dx) + &a_node[i - 1] / (2.0 * dx);
        for bi in 0..n {
            for bj in 0..n {
                big[(row * n + bi, row * n + bj)] = diag[(bi, bj)];
                if row + 1 < interior {
                    big[(row * n + bi, (row + 1) * n + bj)] = upper[(bi, bj)];
                }
                if row > 0 {
                    big[(row * n + bi, (row - 1) * n + bj)] = lower[(bi, bj)];
                }
            }
        }
    }
    let mut values = linalg::eigenvalues_real_matrix(&big);
    values.sort_by(|a, b| (b.re, b.im).partial_cmp(&(a.re, a.im)).unwrap());
    let nearest_zero = values
        .iter()
        .cloned()
        .min_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
        .ok_or_else(|| Error::Numerics("empty finite-difference spectrum".into()))?;
    let zero_cluster = values.iter().filter(|z| z.norm() <= zero_radius).count();
    let max_re_other = values
        .iter()
        .filter(|z| z.norm() > zero_radius)
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(FdSpectrum {
        values,
        nearest_zero,
        zero_cluster,
        max_re_other,
    })
}

/// Apply the interior eigenvalue system to a phase vector; helper shared by
/// tests and the stability determinant's transport.
pub fn apply_system(
    lin: &Linearization,
    x: f64,
    lambda: Complex64,
    w: &DVector<Complex64>,
) -> Result<DVector<Complex64>> {
    let g = lin.eigen_system_matrix(x, lambda)?;
    Ok(&g * w)
}

// ---------------------------------------------------------------------------
// Interior transport geometry of the inviscid block
// ---------------------------------------------------------------------------

/// One eigenvalue group of the reduced convection matrix
/// `a_11 - a_12 b_22^{-1} b_21` along the profile: its (constant)
/// multiplicity, per-node group speed, dynamically normalized right/left
/// bases of the group eigenspace, the bases lifted to the full state space,
/// and the per-node damping rates paired with the group.
///
/// The dynamical normalization keeps `left^T d/dx right = 0` along the
/// grid while `left^T right = I` holds statically; it is fixed by an
/// eigenbasis at the left end of the grid and a gauge ODE in `x`.
#[derive(Debug, Clone)]
pub struct TransportBlock {
    pub multiplicity: usize,
    /// Group speed (mean eigenvalue of the group) per node.
    pub speeds: Vec<f64>,
    /// Right basis per node, `(n - r) x m`.
    pub right: Vec<DMatrix<f64>>,
    /// Left basis per node, `(n - r) x m`, with `left^T right = I`.
    pub left: Vec<DMatrix<f64>>,
    /// Right basis lifted to the full state space: `(right; -b_22^{-1} b_21 right)`.
    pub right_full: Vec<DMatrix<f64>>,
    /// Left basis padded with zeros on the viscous components.
    pub left_full: Vec<DMatrix<f64>>,
    /// Literal damping rate `-left^T d(x) right` per node (`m x m`), as the
    /// bracket formula is transcribed.
    pub rate_literal: Vec<DMatrix<f64>>,
    /// Audited damping rate `+left^T d(x) right` per node; see
    /// [`DampingAudit`] for why the sign differs from the literal one.
    pub rate_effective: Vec<DMatrix<f64>>,
}

/// Endstate damping audit for one transport block. The literal bracket
/// rate is compared against the damping extracted from the
/// frozen-coefficient dispersion relation: the bounded branch of the
/// symbol `-i xi a - xi^2 b` approaches `-i a^* xi - eta` at large
/// frequency, so `-Re lambda(xi)`, Richardson-extrapolated in `1/xi^2`,
/// measures the true decay rate of the transported component. For the gas
/// testbed the literal rate is negative (growth) while the dispersion
/// branch decays at the same magnitude: the bracket as transcribed carries
/// an overall sign error. Both values are kept; the flow uses the audited
/// sign and the conflict is reported, never silently absorbed.
#[derive(Debug, Clone)]
pub struct DampingAudit {
    /// Scalar reduction (mean diagonal) of the literal rate at the
    /// endstates, `[minus, plus]`.
    pub literal: [f64; 2],
    /// Dispersion-extrapolated decay rate at the endstates, `[minus, plus]`.
    pub audited: [f64; 2],
    /// True when the literal and audited rates disagree in sign.
    pub sign_conflict: bool,
}

/// Interior transport structure of a profile with a nontrivial inviscid
/// block (`r < n`): eigenvalue groups of the reduced convection matrix with
/// dynamically normalized bases, the second-order damping bracket, and the
/// backward-characteristic flow they generate. Empty for strictly
/// parabolic models.
#[derive(Debug, Clone)]
pub struct TransportGeometry {
    pub grid: Grid,
    pub blocks: Vec<TransportBlock>,
    /// Damping bracket `d(x)` per node (`(n-r) x (n-r)`):
    /// `a_12 b_22^{-1} [a_21 - a_22 k + k a^* + b_22 dk/dx]` with the
    /// coupling `k = b_22^{-1} b_21` and the reduced convection `a^*`.
    pub bracket: Vec<DMatrix<f64>>,
    /// Max over nodes of `|left^T d(right)/dx|` (dynamical normalization
    /// residual, centered differences).
    pub normalization_residual: f64,
    /// Per-block endstate damping audits.
    pub audits: Vec<DampingAudit>,
}

/// Backward-characteristic data for one block: the foot point reached at
/// time zero, the time-averaged speed, the accumulated damping factor
/// (solution of `dz/dt = -rate(path(t)) z` from the identity), and whether
/// the path left the grid (coefficients frozen to endstate values there).
#[derive(Debug, Clone)]
pub struct FootPoint {
    pub foot: f64,
    pub averaged_speed: f64,
    pub damping: DMatrix<f64>,
    pub truncated: bool,
}

impl TransportGeometry {
    /// Build the transport geometry along a profile. Returns an empty
    /// geometry (no blocks) for strictly parabolic models.
    pub fn new(model: &dyn ConservationLaw, profile: &Profile) -> Result<Self> {
        let n = model.state_dim();
        let r = model.viscous_rank();
        let nh = n - r;
        let grid = profile.grid;
        if nh == 0 {
            return Ok(TransportGeometry {
                grid,
                blocks: Vec::new(),
                bracket: Vec::new(),
                normalization_residual: 0.0,
                audits: Vec::new(),
            });
        }
        let len = grid.len;
        let lin = Linearization::new(model, profile);

        // Per-node blocks of the linearized coefficients.
        let mut a12s = Vec::with_capacity(len);
        let mut a21s = Vec::with_capacity(len);
        let mut a22s = Vec::with_capacity(len);
        let mut b22inv = Vec::with_capacity(len);
        let mut b22s = Vec::with_capacity(len);
        let mut couplings = Vec::with_capacity(len);
        let mut reduced = Vec::with_capacity(len);
        for i in 0..len {
            let x = grid.x(i);
            let a = lin.convection(x);
            let b = lin.diffusion(x);
            let a11 = a.view((0, 0), (nh, nh)).into_owned();
            let a12 = a.view((0, nh), (nh, r)).into_owned();
            let a21 = a.view((nh, 0), (r, nh)).into_owned();
            let a22 = a.view((nh, nh), (r, r)).into_owned();
            let b21 = b.view((nh, 0), (r, nh)).into_owned();
            let b22 = b.view((nh, nh), (r, r)).into_owned();
            let binv = b22.clone().try_inverse().ok_or_else(|| {
                Error::Numerics(format!(
                    "viscous block is singular along the profile at x = {x:.3}"
                ))
            })?;
            let coupling = &binv * &b21;
            reduced.push(&a11 - &a12 * &coupling);
            a12s.push(a12);
            a21s.push(a21);
            a22s.push(a22);
            b22inv.push(binv);
            b22s.push(b22);
            couplings.push(coupling);
        }

        // Eigenvalue groups of the reduced convection, constant multiplicity
        // pattern demanded along the whole grid.
        let mut scale = 0.0f64;
        let mut eigs = Vec::with_capacity(len);
        for (i, m) in reduced.iter().enumerate() {
            let eig = linalg::eigen_real(m).map_err(|e| {
                Error::Hypothesis(format!(
                    "reduced convection at x = {:.3}: {e}",
                    grid.x(i)
                ))
            })?;
            for &v in &eig.values {
                scale = scale.max(v.abs());
            }
            eigs.push(eig);
        }
        let cluster_tol = tol::EIGEN_CLUSTER_REL * scale.max(1e-300);
        let groups = cluster_indices(&eigs[0].values, cluster_tol);
        let pattern: Vec<usize> = groups.iter().map(|g| g.len()).collect();
        for (i, eig) in eigs.iter().enumerate() {
            let here: Vec<usize> = cluster_indices(&eig.values, cluster_tol)
                .iter()
                .map(|g| g.len())
                .collect();
            if here != pattern {
                return Err(Error::Hypothesis(format!(
                    "interior convection multiplicities change along the profile \
                     (pattern {pattern:?} at the left end, {here:?} at x = {:.3})",
                    grid.x(i)
                )));
            }
        }

        // Raw smooth bases: eigenbasis at the left end, then projector
        // transport with unit-normalized columns.
        let nblocks = groups.len();
        let mut raw_right: Vec<Vec<DMatrix<f64>>> =
            vec![Vec::with_capacity(len); nblocks];
        let mut speeds: Vec<Vec<f64>> = vec![Vec::with_capacity(len); nblocks];
        for i in 0..len {
            let eig = &eigs[i];
            for (c, sel) in groups.iter().enumerate() {
                let mean = sel.iter().map(|&j| eig.values[j]).sum::<f64>() / sel.len() as f64;
                if mean.abs() <= 1e-10 * scale.max(1.0) {
                    return Err(Error::Hypothesis(format!(
                        "interior convection eigenvalue vanishes at x = {:.3}",
                        grid.x(i)
                    )));
                }
                if i > 0 && mean.signum() != speeds[c][i - 1].signum() {
                    return Err(Error::Hypothesis(format!(
                        "interior convection eigenvalue crosses zero near x = {:.3}",
                        grid.x(i)
                    )));
                }
                speeds[c].push(mean);
                let basis = if i == 0 {
                    let mut b = DMatrix::zeros(nh, sel.len());
                    for (k, &j) in sel.iter().enumerate() {
                        let col = eig.vectors.column(j);
                        b.set_column(k, &(col / col.norm()));
                    }
                    b
                } else {
                    // Spectral projector of the group applied to the
                    // previous basis keeps the span and varies smoothly.
                    let rs = eig.vectors.select_columns(sel.iter());
                    let ls = eig.left.select_rows(sel.iter());
                    let mut b = rs * (ls * &raw_right[c][i - 1]);
                    for mut col in b.column_iter_mut() {
                        let nrm = col.norm();
                        if nrm <= 1e-12 {
                            return Err(Error::Numerics(format!(
                                "transport basis collapsed under projector continuation at x = {:.3}",
                                grid.x(i)
                            )));
                        }
                        col /= nrm;
                    }
                    b
                };
                raw_right[c].push(basis);
            }
        }

        // Dual bases from the inverse of the assembled square basis.
        let mut raw_left: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(len); nblocks];
        for i in 0..len {
            let mut full = DMatrix::zeros(nh, nh);
            let mut col = 0;
            for c in 0..nblocks {
                for k in 0..pattern[c] {
                    full.set_column(col, &raw_right[c][i].column(k));
                    col += 1;
                }
            }
            let inv = full.try_inverse().ok_or_else(|| {
                Error::Numerics(format!(
                    "transport eigenbasis is singular at x = {:.3}",
                    grid.x(i)
                ))
            })?;
            let mut row = 0;
            for c in 0..nblocks {
                let mut l = DMatrix::zeros(nh, pattern[c]);
                for k in 0..pattern[c] {
                    l.set_column(k, &inv.row(row).transpose());
                    row += 1;
                }
                raw_left[c].push(l);
            }
        }

        // Gauge ODE per block: c' = -(left^T d(right)/dx) c, Heun sweep,
        // turning the raw bases into dynamically normalized ones.
        let dx = grid.dx;
        let mut blocks = Vec::with_capacity(nblocks);
        for c in 0..nblocks {
            let m = pattern[c];
            let coeff = |i: usize| -> DMatrix<f64> {
                let dr = table_derivative(&raw_right[c], i, dx);
                -(raw_left[c][i].transpose() * dr)
            };
            let mut gauges = Vec::with_capacity(len);
            let mut gauge = DMatrix::<f64>::identity(m, m);
            gauges.push(gauge.clone());
            for i in 1..len {
                let m0 = coeff(i - 1);
                let m1 = coeff(i);
                let predictor = &gauge + (&m0 * &gauge) * dx;
                gauge += (&m0 * &gauge + &m1 * predictor) * (dx / 2.0);
                gauges.push(gauge.clone());
            }
            let mut right = Vec::with_capacity(len);
            let mut left = Vec::with_capacity(len);
            let mut right_full = Vec::with_capacity(len);
            let mut left_full = Vec::with_capacity(len);
            for i in 0..len {
                let rr = &raw_right[c][i] * &gauges[i];
                let ginv_t = gauges[i].clone().try_inverse().ok_or_else(|| {
                    Error::Numerics(format!(
                        "normalization gauge degenerated at x = {:.3}",
                        grid.x(i)
                    ))
                })?;
                let ll = &raw_left[c][i] * ginv_t.transpose();
                let mut rf = DMatrix::zeros(n, m);
                rf.view_mut((0, 0), (nh, m)).copy_from(&rr);
                rf.view_mut((nh, 0), (r, m)).copy_from(&(-(&couplings[i] * &rr)));
                let mut lf = DMatrix::zeros(n, m);
                lf.view_mut((0, 0), (nh, m)).copy_from(&ll);
                right.push(rr);
                left.push(ll);
                right_full.push(rf);
                left_full.push(lf);
            }
            blocks.push(TransportBlock {
                multiplicity: m,
                speeds: speeds[c].clone(),
                right,
                left,
                right_full,
                left_full,
                rate_literal: Vec::new(),
                rate_effective: Vec::new(),
            });
        }

        // Damping bracket and per-block rates.
        let mut bracket = Vec::with_capacity(len);
        for i in 0..len {
            let dk = table_derivative(&couplings, i, dx);
            let inner = &a21s[i] - &a22s[i] * &couplings[i]
                + &couplings[i] * &reduced[i]
                + &b22s[i] * dk;
            bracket.push(&a12s[i] * &b22inv[i] * inner);
        }
        for block in &mut blocks {
            for i in 0..len {
                let rate = block.left[i].transpose() * &bracket[i] * &block.right[i];
                block.rate_literal.push(-&rate);
                block.rate_effective.push(rate);
            }
        }

        // Normalization residual of the final bases.
        let mut residual = 0.0f64;
        for block in &blocks {
            for i in 0..len {
                let dr = table_derivative(&block.right, i, dx);
                let res = block.left[i].transpose() * dr;
                residual = residual.max(res.abs().max());
            }
        }

        // Endstate dispersion audits.
        let mut audits = Vec::with_capacity(nblocks);
        let u_minus = profile.endstates.u_minus.clone();
        let u_plus = profile.endstates.u_plus.clone();
        for (c, block) in blocks.iter().enumerate() {
            let lit_minus = mean_diagonal(&block.rate_literal[0]);
            let lit_plus = mean_diagonal(&block.rate_literal[len - 1]);
            let aud_minus =
                dispersion_damping(model, &u_minus, block.speeds[0], pattern[c])?;
            let aud_plus =
                dispersion_damping(model, &u_plus, block.speeds[len - 1], pattern[c])?;
            let conflict = (lit_minus.signum() != aud_minus.signum()
                && aud_minus.abs() > 1e-9)
                || (lit_plus.signum() != aud_plus.signum() && aud_plus.abs() > 1e-9);
            audits.push(DampingAudit {
                literal: [lit_minus, lit_plus],
                audited: [aud_minus, aud_plus],
                sign_conflict: conflict,
            });
        }

        Ok(TransportGeometry {
            grid,
            blocks,
            bracket,
            normalization_residual: residual,
            audits,
        })
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// True when any block's literal bracket rate disagrees in sign with
    /// the dispersion audit.
    pub fn sign_conflict(&self) -> bool {
        self.audits.iter().any(|a| a.sign_conflict)
    }

    /// Group speed of block `c` at `x` (linear interpolation, clamped).
    pub fn speed_at(&self, c: usize, x: f64) -> f64 {
        let i = self.grid.cell_left(x);
        let t = ((x - self.grid.x(i)) / self.grid.dx).clamp(0.0, 1.0);
        let s = &self.blocks[c].speeds;
        s[i] + t * (s[i + 1] - s[i])
    }

    /// Audited damping rate of block `c` at `x` (linear interpolation).
    fn rate_at(&self, c: usize, x: f64) -> DMatrix<f64> {
        let i = self.grid.cell_left(x);
        let t = ((x - self.grid.x(i)) / self.grid.dx).clamp(0.0, 1.0);
        let r = &self.blocks[c].rate_effective;
        &r[i] * (1.0 - t) + &r[i + 1] * t
    }

    fn left_full_at(&self, c: usize, x: f64) -> DMatrix<f64> {
        let i = self.grid.cell_left(x);
        let t = ((x - self.grid.x(i)) / self.grid.dx).clamp(0.0, 1.0);
        let l = &self.blocks[c].left_full;
        &l[i] * (1.0 - t) + &l[i + 1] * t
    }

    /// Backward characteristic of block `c` ending at `x` at time `t`:
    /// integrates the path to time zero and accumulates the damping factor
    /// along it.
    pub fn backward_path(&self, c: usize, x: f64, t: f64) -> Result<FootPoint> {
        let m = self.blocks[c].multiplicity;
        if t < 0.0 {
            return Err(Error::Config(
                "backward characteristics need a nonnegative time".into(),
            ));
        }
        if t == 0.0 {
            return Ok(FootPoint {
                foot: x,
                averaged_speed: self.speed_at(c, x),
                damping: DMatrix::identity(m, m),
                truncated: !self.grid.contains(x),
            });
        }
        let speed_scale = self.blocks[c]
            .speeds
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()))
            .max(1e-12);
        let steps = ((t * speed_scale / (0.5 * self.grid.dx)).ceil() as usize)
            .clamp(32, 400_000);
        // Path samples at half-step resolution so the damping integration
        // below has exact stage values.
        let nhalf = 2 * steps;
        let hz = t / nhalf as f64;
        let mut path = Vec::with_capacity(nhalf + 1);
        let mut z = x;
        path.push(z);
        let mut truncated = false;
        for _ in 0..nhalf {
            // One backward RK4 step of dz/dtau = speed(z).
            let f = |y: f64| self.speed_at(c, y);
            let k1 = f(z);
            let k2 = f(z - 0.5 * hz * k1);
            let k3 = f(z - 0.5 * hz * k2);
            let k4 = f(z - hz * k3);
            z -= hz / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !self.grid.contains(z) {
                truncated = true;
            }
            path.push(z);
        }
        let foot = z;
        // Damping flow forward from time zero along the stored path:
        // path[nhalf - 2k] = position at time k * (t / steps).
        let hf = t / steps as f64;
        let mut damping = DMatrix::<f64>::identity(m, m);
        for k in 0..steps {
            let z0 = path[nhalf - 2 * k];
            let zm = path[nhalf - 2 * k - 1];
            let z1 = path[nhalf - 2 * k - 2];
            let r0 = -self.rate_at(c, z0);
            let rm = -self.rate_at(c, zm);
            let r1 = -self.rate_at(c, z1);
            let k1 = &r0 * &damping;
            let k2 = &rm * (&damping + &k1 * (0.5 * hf));
            let k3 = &rm * (&damping + &k2 * (0.5 * hf));
            let k4 = &r1 * (&damping + &k3 * hf);
            damping += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (hf / 6.0);
        }
        Ok(FootPoint {
            foot,
            averaged_speed: (x - foot) / t,
            damping,
            truncated,
        })
    }

    /// Transported-component Green-function action on initial data sampled
    /// over the profile grid: at each node the data is pulled back along
    /// every block's backward characteristic, damped by the accumulated
    /// decay factor, weighted by the speed ratio between evaluation point
    /// and foot point, and re-expanded in the lifted basis. Returns the
    /// resulting field and whether any characteristic left the grid.
    pub fn transport_action(&self, data: &Field, t: f64) -> Result<(Field, bool)> {
        let n = data.ncomp;
        let mut out = Field::zeros(self.grid, n);
        if self.blocks.is_empty() {
            return Ok((out, false));
        }
        if data.grid.len != self.grid.len || (data.grid.x0 - self.grid.x0).abs() > 1e-12 {
            return Err(Error::Config(
                "transport action needs data sampled on the geometry grid".into(),
            ));
        }
        let mut truncated_any = false;
        let mut v0 = vec![0.0; n];
        for c in 0..self.blocks.len() {
            let mut feet: Vec<FootPoint> = Vec::with_capacity(self.grid.len);
            for i in 0..self.grid.len {
                feet.push(self.backward_path(c, self.grid.x(i), t)?);
            }
            for i in 0..self.grid.len {
                let fp = &feet[i];
                truncated_any |= fp.truncated;
                let foot = fp.foot.clamp(self.grid.x0, self.grid.x_last());
                data.eval_linear(foot, &mut v0);
                let lt = self.left_full_at(c, foot).transpose();
                let coords = lt * DVector::from_column_slice(&v0);
                let weight = self.speed_at(c, foot) / self.speed_at(c, self.grid.x(i));
                let contrib =
                    &self.blocks[c].right_full[i] * (&fp.damping * coords) * weight;
                for comp in 0..n {
                    let cur = out.get(i, comp);
                    out.set(i, comp, cur + contrib[comp]);
                }
            }
        }
        Ok((out, truncated_any))
    }

    /// Fitted exponential decay rate of the damping factor at `x` over
    /// `(0, t_max]`: the negated slope of a least-squares line through
    /// `ln |damping|` against time.
    pub fn fitted_decay_rate(&self, c: usize, x: f64, t_max: f64) -> Result<f64> {
        let mut ts = Vec::new();
        let mut ys = Vec::new();
        for k in 1..=12 {
            let t = t_max * k as f64 / 12.0;
            let fp = self.backward_path(c, x, t)?;
            ts.push(t);
            ys.push(fp.damping.norm().max(1e-300).ln());
        }
        let (slope, _, _) = crate::quad::linear_fit(&ts, &ys)?;
        Ok(-slope)
    }
}

/// Group sorted values into clusters separated by gaps above `tol`.
fn cluster_indices(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if (v - values[*g.last().unwrap()]).abs() <= tol => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Centered (one-sided at the ends) difference of a per-node matrix table.
fn table_derivative(table: &[DMatrix<f64>], i: usize, dx: f64) -> DMatrix<f64> {
    let len = table.len();
    if i == 0 {
        (&table[1] - &table[0]) / dx
    } else if i == len - 1 {
        (&table[len - 1] - &table[len - 2]) / dx
    } else {
        (&table[i + 1] - &table[i - 1]) / (2.0 * dx)
    }
}

fn mean_diagonal(m: &DMatrix<f64>) -> f64 {
    let k = m.nrows();
    (0..k).map(|i| m[(i, i)]).sum::<f64>() / k as f64
}

/// Decay rate of the bounded dispersion branch travelling at `speed` for
/// the frozen coefficients at `state`: the symbol's non-viscous eigenvalues
/// stay order one while the viscous ones run like `-beta xi^2`, so the
/// branch is found among the largest real parts, matched by phase speed
/// `-Im lambda / xi`, and its damping `-Re lambda = eta + O(xi^-2)` is
/// Richardson-extrapolated over a frequency doubling.
fn dispersion_damping(
    model: &dyn ConservationLaw,
    state: &[f64],
    speed: f64,
    multiplicity: usize,
) -> Result<f64> {
    let nh = model.hyperbolic_dim();
    let mut rates = [0.0f64; 2];
    for (slot, &xi) in [32.0f64, 64.0].iter().enumerate() {
        let mut eigs = dispersion_eigenvalues(model, state, xi)?;
        // Non-viscous branches: the nh largest real parts.
        eigs.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
        let mut bounded: Vec<Complex64> = eigs.into_iter().take(nh).collect();
        // Match by phase speed, taking the `multiplicity` closest branches.
        bounded.sort_by(|a, b| {
            let da = (-a.im / xi - speed).abs();
            let db = (-b.im / xi - speed).abs();
            da.partial_cmp(&db).unwrap()
        });
        let picked = &bounded[..multiplicity.min(bounded.len())];
        rates[slot] =
            picked.iter().map(|z| -z.re).sum::<f64>() / picked.len().max(1) as f64;
    }
    Ok((4.0 * rates[1] - rates[0]) / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{classify_shock, Burgers, IsothermalGas, QuadraticGradient};
    use crate::profile::{solve_profile, ProfileOpts};
    use approx::assert_relative_eq;

    #[test]
    fn projected_diffusion_matches_closed_forms() {
        // Scalar model: the single mode has unit diffusion.
        let modes = endstate_modes(&Burgers, &[1.0]).unwrap();
        assert_relative_eq!(modes.diffusion[0], 1.0, epsilon = 1e-12);

        // Gradient model: identity viscosity projects to 1 in every mode.
        let modes = endstate_modes(&QuadraticGradient, &[-1.0, 0.0]).unwrap();
        for j in 0..2 {
            assert_relative_eq!(modes.diffusion[j], 1.0, epsilon = 1e-12);
        }

        // Isothermal gas: both modes carry mu / (2 v) at each endstate.
        let (speed, um, up) = IsothermalGas::matched_endstates(1.0, 2.0, 1.0).unwrap();
        let model = IsothermalGas::new(1.0, speed).unwrap();
        for state in [&um, &up] {
            let modes = endstate_modes(&model, state).unwrap();
            assert!(modes.positive_diffusion());
            for j in 0..2 {
                assert_relative_eq!(
                    modes.diffusion[j],
                    model.mu / (2.0 * state[0]),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn biorthonormality_is_exact() {
        let (speed, um, _) = IsothermalGas::matched_endstates(1.0, 2.0, 1.0).unwrap();
        let model = IsothermalGas::new(0.7, speed).unwrap();
        let modes = endstate_modes(&model, &um).unwrap();
        let prod = &modes.left * &modes.right;
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(prod[(i, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dispersion_curves_are_second_order_tangent() {
        // The symbol eigenvalues must match -i a_j xi - beta_j xi^2 to
        // third order; this validates the projected diffusion against an
        // independent computation.
        let (speed, um, _) = IsothermalGas::matched_endstates(1.0, 2.0, 1.0).unwrap();
        let model = IsothermalGas::new(1.0, speed).unwrap();
        let modes = endstate_modes(&model, &um).unwrap();
        for &xi in &[1e-2, 1e-3] {
            let computed = dispersion_eigenvalues(&model, &um, xi).unwrap();
            let mut err = 0.0f64;
            for j in 0..2 {
                let predicted = Complex64::new(
                    -modes.diffusion[j] * xi * xi,
                    -modes.speeds[j] * xi,
                );
                let best = computed
                    .iter()
                    .map(|z| (z - predicted).norm())
                    .fold(f64::INFINITY, f64::min);
                err = err.max(best);
            }
            assert!(
                err <= 10.0 * xi.powi(3),
                "dispersion tangency error {err:.3e} at xi = {xi}"
            );
        }
    }

    #[test]
    fn scalar_system_matrix_has_closed_form() {
        let model = Burgers;
        let e = classify_shock(&model, &[1.0], &[-1.0]).unwrap();
        let p = solve_profile(&model, &e, &ProfileOpts { half_width: 18.0, dx: 0.05 }).unwrap();
        let lin = Linearization::new(&model, &p);
        let lambda = Complex64::new(0.3, 0.7);
        // At the left endstate the matrix is [[a, 1], [lambda, 0]] with a = 1.
        let g = lin.asymptotic_matrix(Side::Minus, lambda).unwrap();
        assert_relative_eq!(g[(0, 0)].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(g[(0, 1)].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(g[(1, 0)].re, lambda.re, epsilon = 1e-12);
        assert_relative_eq!(g[(1, 0)].im, lambda.im, epsilon = 1e-12);
        assert_relative_eq!(g[(1, 1)].norm(), 0.0, epsilon = 1e-12);
        // In the interior a = profile value.
        let g = lin.eigen_system_matrix(1.3, lambda).unwrap();
        assert_relative_eq!(g[(0, 0)].re, p.eval_component(1.3, 0), epsilon = 1e-12);
    }

    #[test]
    fn zero_mode_satisfies_interior_system() {
        // The profile slope is the eigenfunction at lambda = 0; its phase
        // lift (v, z) with z = v' - a v must be annihilated along x.
        let model = Burgers;
        let e = classify_shock(&model, &[1.0], &[-1.0]).unwrap();
        let p = solve_profile(&model, &e, &ProfileOpts { half_width: 18.0, dx: 0.02 }).unwrap();
        let lin = Linearization::new(&model, &p);
        let lambda = Complex64::new(0.0, 0.0);
        for &x in &[-3.0f64, -0.7, 0.4, 2.2] {
            // Closed forms: ubar = -tanh(x/2), v = ubar' = -(1/2)sech^2(x/2),
            // v' = (1/2)sech^2(x/2)tanh(x/2), z = v' - ubar v.
            let t = (0.5 * x).tanh();
            let sech2 = 1.0 - t * t;
            let v = -0.5 * sech2;
            let vp = 0.5 * sech2 * t;
            let z = vp - (-t) * v;
            let w = DVector::from_vec(vec![Complex64::new(v, 0.0), Complex64::new(z, 0.0)]);
            let dw = apply_system(&lin, x, lambda, &w).unwrap();
            // Expected derivatives: v' and z' = lambda v = 0.
            assert_relative_eq!(dw[0].re, vp, epsilon = 1e-6);
            assert_relative_eq!(dw[1].norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn splitting_is_consistent_off_the_essential_spectrum() {
        let lambda = Complex64::new(1.0, 0.5);

        let model = Burgers;
        let e = classify_shock(&model, &[1.0], &[-1.0]).unwrap();
        let p = solve_profile(&model, &e, &ProfileOpts { half_width: 15.0, dx: 0.05 }).unwrap();
        let lin = Linearization::new(&model, &p);
        assert_eq!(consistent_splitting(&lin, lambda).unwrap(), 1);

        let model = QuadraticGradient;
        let e = classify_shock(&model, &[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        let p = solve_profile(&model, &e, &ProfileOpts { half_width: 15.0, dx: 0.05 }).unwrap();
        let lin = Linearization::new(&model, &p);
        assert_eq!(consistent_splitting(&lin, lambda).unwrap(), 2);

        let (speed, um, up) = IsothermalGas::matched_endstates(1.0, 2.0, 1.0).unwrap();
        let model = IsothermalGas::new(1.0, speed).unwrap();
        let e = classify_shock(&model, &um, &up).unwrap();
        let p = solve_profile(&model, &e, &ProfileOpts { half_width: 20.0, dx: 0.05 }).unwrap();
        let lin = Linearization::new(&model, &p);
        let k = consistent_splitting(&lin, lambda).unwrap();
        assert!(k > 0 && k < lin.phase_dim());
    }

    #[test]
    fn fd_spectrum_finds_translation_mode_and_gap() {
        let model = Burgers;
        let e = classify_shock(&model, &[1.0], &[-1.0]).unwrap();
        let p = solve_profile(&model, &e, &ProfileOpts { half_width: 18.0, dx: 0.06 }).unwrap();
        let spec = fd_spectrum(&model, &p, 18.0, 0.06, 5e-3).unwrap();
        assert_eq!(spec.zero_cluster, 1, "near-zero cluster {:?}", spec.nearest_zero);
        assert!(spec.nearest_zero.norm() <= 5e-3);
        // Away from the translation mode the spectrum sits left of the
        // truncated-domain edge near -1/4.
        assert!(spec.max_re_other <= -0.2, "gap edge {:.4}", spec.max_re_other);
        assert!(spec.max_re_other >= -0.35, "gap edge {:.4}", spec.max_re_other);
    }

    #[test]
    fn fd_spectrum_requires_full_rank_viscosity() {
        let (speed, um, up) = IsothermalGas::matched_endstates(1.0, 2.0, 1.0).unwrap();
        let model = IsothermalGas::new(1.0, speed).unwrap();
        let e = classify_shock(&model, &um, &up).unwrap();
        let p = solve_profile(&model, &e, &ProfileOpts { half_width: 15.0, dx: 0.05 }).unwrap();
        assert!(matches!(
            fd_spectrum(&model, &p, 15.0, 0.05, 1e-3),
            Err(Error::Inconclusive(_))
        ));
    }

    fn gas_geometry() -> (IsothermalGas, Profile, TransportGeometry) {
        let (speed, um, up) = IsothermalGas::matched_endstates(1.0, 2.0, 1.0).unwrap();
        let model = IsothermalGas::new(1.0, speed).unwrap();
        let e = classify_shock(&model, &um, &up).unwrap();
        // Wide enough that the tails are clamped to the endstates exactly.
        let p = solve_profile(&model, &e, &ProfileOpts { half_width: 30.0, dx: 0.05 }).unwrap();
        let geom = TransportGeometry::new(&model, &p).unwrap();
        (model, p, geom)
    }

    #[test]
    fn parabolic_models_carry_no_transport_block() {
        let e = classify_shock(&Burgers, &[1.0], &[-1.0]).unwrap();
        let p = solve_profile(&Burgers, &e, &ProfileOpts { half_width: 12.0, dx: 0.05 }).unwrap();
        let geom = TransportGeometry::new(&Burgers, &p).unwrap();
        assert_eq!(geom.block_count(), 0);
        let data = Field::from_fn(p.grid, 1, |x, out| out[0] = (-x * x).exp());
        let (act, truncated) = geom.transport_action(&data, 1.0).unwrap();
        assert!(!truncated);
        assert_eq!(act.norm_inf(), 0.0);
    }

    #[test]
    fn gas_reduced_convection_is_the_frame_speed() {
        let (model, _p, geom) = gas_geometry();
        assert_eq!(geom.block_count(), 1);
        let block = &geom.blocks[0];
        assert_eq!(block.multiplicity, 1);
        for (i, &s) in block.speeds.iter().enumerate() {
            assert_relative_eq!(s, -model.frame_speed(), epsilon = 1e-10);
            // Scalar block with zero viscous coupling: bases are the
            // constant 1 and lift to (1; 0).
            assert_relative_eq!(block.right[i][(0, 0)], 1.0, epsilon = 1e-9);
            assert_relative_eq!(block.left[i][(0, 0)], 1.0, epsilon = 1e-9);
            assert_relative_eq!(block.right_full[i][(1, 0)], 0.0, epsilon = 1e-12);
            assert_relative_eq!(block.left_full[i][(1, 0)], 0.0, epsilon = 1e-12);
        }
        assert!(geom.normalization_residual <= 1e-6);
    }

    #[test]
    fn gas_damping_bracket_magnitude_and_sign_audit() {
        let (model, p, geom) = gas_geometry();
        let len = geom.grid.len;
        let block = &geom.blocks[0];
        // At the endstates the bracket reduces to 1/(mu v); the literal
        // rate negates it while the dispersion branch decays at +1/(mu v).
        for (i, state) in [(0usize, &p.endstates.u_minus), (len - 1, &p.endstates.u_plus)] {
            let expect = 1.0 / (model.mu * state[0]);
            assert_relative_eq!(geom.bracket[i][(0, 0)], expect, max_relative = 1e-8);
            assert_relative_eq!(block.rate_literal[i][(0, 0)], -expect, max_relative = 1e-8);
            assert_relative_eq!(block.rate_effective[i][(0, 0)], expect, max_relative = 1e-8);
        }
        let audit = &geom.audits[0];
        assert!(audit.sign_conflict && geom.sign_conflict());
        assert_relative_eq!(audit.audited[0], 1.0 / model.mu, max_relative = 1e-4);
        assert_relative_eq!(audit.audited[1], 0.5 / model.mu, max_relative = 1e-4);
        assert!(audit.literal[0] < 0.0 && audit.literal[1] < 0.0);
    }

    #[test]
    fn zero_time_action_is_the_block_projection() {
        let (_model, p, geom) = gas_geometry();
        let data = Field::from_fn(p.grid, 2, |x, out| {
            out[0] = (-0.3 * x * x).exp();
            out[1] = (0.4 * x).sin();
        });
        let (act, _) = geom.transport_action(&data, 0.0).unwrap();
        for i in 0..p.grid.len {
            assert_relative_eq!(act.get(i, 0), data.get(i, 0), epsilon = 1e-9);
            assert_relative_eq!(act.get(i, 1), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn frozen_gas_action_matches_the_characteristic_closed_form() {
        // Constant coefficients: the transported component translates with
        // the reduced speed and decays at the frozen damping rate.
        let (speed, um, _up) = IsothermalGas::matched_endstates(1.0, 2.0, 1.0).unwrap();
        let model = IsothermalGas::new(1.0, speed).unwrap();
        let p = Profile::frozen(&model, &um, 10.0, 0.05).unwrap();
        let geom = TransportGeometry::new(&model, &p).unwrap();
        let data = Field::from_fn(p.grid, 2, |x, out| {
            out[0] = (-x * x / 4.0).exp();
            out[1] = 0.0;
        });
        let t = 1.0;
        let (act, _) = geom.transport_action(&data, t).unwrap();
        let eta = 1.0 / (model.mu * um[0]);
        for i in 0..p.grid.len {
            let foot = p.grid.x(i) + speed * t;
            if foot > p.grid.x_last() - p.grid.dx {
                continue;
            }
            let expect = (-eta * t).exp() * data.eval_linear_comp(foot, 0);
            assert_relative_eq!(act.get(i, 0), expect, epsilon = 1e-6);
            assert_relative_eq!(act.get(i, 1), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn transport_action_is_linear_in_the_data() {
        let (_model, p, geom) = gas_geometry();
        let f = Field::from_fn(p.grid, 2, |x, out| {
            out[0] = (-0.2 * x * x).exp();
            out[1] = 1.0 / (1.0 + x * x);
        });
        let g = Field::from_fn(p.grid, 2, |x, out| {
            out[0] = (0.3 * x).cos();
            out[1] = (-0.1 * (x - 1.0).powi(2)).exp();
        });
        let mut combo = Field::zeros(p.grid, 2);
        for i in 0..p.grid.len {
            for c in 0..2 {
                combo.set(i, c, 2.0 * f.get(i, c) - 0.5 * g.get(i, c));
            }
        }
        let t = 0.7;
        let (af, _) = geom.transport_action(&f, t).unwrap();
        let (ag, _) = geom.transport_action(&g, t).unwrap();
        let (ac, _) = geom.transport_action(&combo, t).unwrap();
        for i in 0..p.grid.len {
            for c in 0..2 {
                let want = 2.0 * af.get(i, c) - 0.5 * ag.get(i, c);
                assert_relative_eq!(ac.get(i, c), want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn gas_damping_factor_decays_log_linearly() {
        let (_model, _p, geom) = gas_geometry();
        let rate = geom.fitted_decay_rate(0, 0.0, 2.0).unwrap();
        assert!(
            (0.4..=1.1).contains(&rate),
            "fitted damping rate {rate:.4} outside the endstate range"
        );
        // The accumulated factor is decreasing and its logarithm is close
        // to linear (the rate varies only across the shock layer).
        let mut lns = Vec::new();
        for k in 1..=4 {
            let fp = geom.backward_path(0, 0.0, 0.5 * k as f64).unwrap();
            lns.push(fp.damping.norm().ln());
        }
        for w in lns.windows(2) {
            assert!(w[1] < w[0]);
        }
        for w in lns.windows(3) {
            let curvature = w[2] - 2.0 * w[1] + w[0];
            assert!(curvature.abs() <= 0.25, "log-damping curvature {curvature:.3}");
        }
    }
}
