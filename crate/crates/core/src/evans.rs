//! Stability determinant of the linearized shock: construction, contour
//! winding, and eigenvalue counting.
//!
//! For the first-order eigenvalue system `W' = G(x; lambda) W` built in
//! [`crate::spectral`], a spectral parameter `lambda` off the essential
//! spectrum admits a `k`-dimensional family of solutions decaying to the
//! left (the unstable subspace of the frozen matrix at `x -> -inf`) and an
//! `(N - k)`-dimensional family decaying to the right. The *stability
//! determinant*
//!
//! ```text
//! D(lambda) = det [ W_1^-(0), ..., W_k^-(0), W_{k+1}^+(0), ..., W_N^+(0) ]
//! ```
//!
//! is analytic in `lambda`, vanishes exactly at eigenvalues of the
//! linearized operator, and continues analytically through the essential
//! spectrum near the origin as long as the tracked eigenvalue groups of the
//! frozen matrices stay separated. The winding number of `D` around a closed
//! contour therefore counts enclosed eigenvalues with multiplicity.
//!
//! Two independent evaluation strategies are implemented:
//!
//! * **Orthonormalized frames.** The solution frame is re-orthonormalized at
//!   fixed stations by a QR factorization whose triangular factor is
//!   normalized to a positive real diagonal. Each correction multiplies the
//!   raw determinant by a positive real number, so the *phase* of the reduced
//!   determinant equals the phase of the analytic determinant pointwise and
//!   winding numbers are unaffected, while magnitudes accumulate in a
//!   separate logarithmic ledger.
//! * **Exterior powers.** The same frame is transported as a single Plucker
//!   vector in the k-th exterior power of phase space (dimension `C(N, k)`),
//!   rescaled by its positive real norm at the same stations, and `D` is
//!   read off the pairing of the two lifted solutions into the top exterior
//!   power. Agreement of the two routes within
//!   [`tol::STRATEGY_AGREEMENT`] is a strong end-to-end consistency check
//!   because they share no intermediate representation.
//!
//! Along a contour, the boundary subspaces are continued by eigenvalue-group
//! tracking: at each new parameter the frozen-matrix spectrum is matched to
//! the previous one, the spectral projector of the tracked group is rebuilt
//! and applied to the previous basis, and steps are subdivided until both
//! the projector movement and the determinant phase increment are small
//! (see [`tol::MAX_PROJECTOR_STEP`], [`tol::MAX_PHASE_STEP`]). Tracking by
//! continuity rather than by sign of the real part is what lets the origin
//! circle cross the essential spectrum without losing analyticity.
//!
//! [`verify_stability`] packages the spectral stability criterion: zero
//! winding on an indented half-disk contour in the closed right half plane
//! (no unstable point spectrum), and winding on a small circle around the
//! origin equal to the dimension of the connection manifold (the
//! translational eigenvalue at zero has exactly the expected multiplicity).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ConservationLaw;
use crate::profile::Profile;
use crate::spectral::{self, Linearization, Side};
use crate::tol;

/// Reduced determinant magnitude below which a contour sample is treated as
/// sitting on (or numerically indistinguishable from) an eigenvalue.
const UNIT_FLOOR: f64 = 1e-10;

/// Smallest contour sub-interval (in piece parameter) the sampler will
/// bisect before giving up.
const MIN_PIECE_STEP: f64 = 1e-7;

/// Evaluation strategy for the stability determinant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Orthonormalized solution frames with a positive-diagonal QR ledger.
    Frames,
    /// Single Plucker vector transported in the exterior power.
    Compound,
}

/// Options controlling contour geometry and transport resolution.
#[derive(Debug, Clone)]
pub struct EvansOpts {
    /// Radius of the half-disk contour enclosing the unstable half plane.
    pub radius: f64,
    /// Radius of the indentation around the origin; also the radius of the
    /// origin-multiplicity circle.
    pub indent: f64,
    /// Spacing between orthonormalization stations along `x`.
    pub station: f64,
    /// Fixed RK4 step for frame transport.
    pub rk_step: f64,
    /// Relative endstate tail defining the finite integration window.
    pub tail_cutoff: f64,
    /// Hard cap on committed contour samples per winding computation.
    pub max_points: usize,
    /// Whether [`verify_stability`] runs the exterior-power cross-check.
    pub cross_check: bool,
}

impl Default for EvansOpts {
    fn default() -> Self {
        EvansOpts {
            radius: 5.0,
            indent: 1e-3,
            station: 0.5,
            rk_step: tol::EVANS_RK_STEP,
            tail_cutoff: tol::ENDSTATE_TAIL,
            max_points: 20_000,
            cross_check: true,
        }
    }
}

/// One evaluation of the stability determinant, split into a phase-carrying
/// reduced value (`|unit|` at most about one) and a logarithmic scale ledger:
/// `D = unit * exp(ln_scale)`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub lambda: Complex64,
    pub unit: Complex64,
    pub ln_scale: f64,
}

impl Sample {
    /// Natural log of `|D|`.
    pub fn ln_modulus(&self) -> f64 {
        self.unit.norm().ln() + self.ln_scale
    }

    /// Phase of `D` (the ledger is positive real, so this is exact).
    pub fn arg(&self) -> f64 {
        self.unit.arg()
    }
}

/// One contour piece: a smooth map from `[0, 1]` into the parameter plane
/// plus a base sampling density. Pieces are walked in order; subdivision
/// happens in the piece parameter, so refined samples stay on the curve.
pub struct ContourPiece {
    map: Box<dyn Fn(f64) -> Complex64 + Send + Sync>,
    base_points: usize,
}

impl ContourPiece {
    pub fn new(base_points: usize, map: impl Fn(f64) -> Complex64 + Send + Sync + 'static) -> Self {
        ContourPiece { map: Box::new(map), base_points }
    }

    /// Point on the piece at parameter `s` in `[0, 1]`.
    pub fn at(&self, s: f64) -> Complex64 {
        (self.map)(s)
    }
}

/// Counterclockwise boundary of the half-disk `{ |z| <= radius, Re z >= 0 }`
/// with a semicircular indentation of radius `indent` excluding the origin.
/// The axis segments are sampled geometrically so the decades between
/// `indent` and `radius` are covered evenly.
pub fn indented_contour(radius: f64, indent: f64) -> Vec<ContourPiece> {
    assert!(radius > indent && indent > 0.0);
    let r = radius;
    let rho = indent;
    vec![
        ContourPiece::new(16, move |s| Complex64::from_polar(r, s * std::f64::consts::FRAC_PI_2)),
        ContourPiece::new(16, move |s| Complex64::new(0.0, r.powf(1.0 - s) * rho.powf(s))),
        ContourPiece::new(8, move |s| {
            Complex64::from_polar(rho, std::f64::consts::FRAC_PI_2 - s * std::f64::consts::PI)
        }),
        ContourPiece::new(16, move |s| Complex64::new(0.0, -(rho.powf(1.0 - s) * r.powf(s)))),
        ContourPiece::new(16, move |s| {
            Complex64::from_polar(r, -std::f64::consts::FRAC_PI_2 + s * std::f64::consts::FRAC_PI_2)
        }),
    ]
}

/// Counterclockwise circle around `center`, split into quarters.
pub fn circle_contour(center: Complex64, radius: f64) -> Vec<ContourPiece> {
    assert!(radius > 0.0);
    (0..4)
        .map(|q| {
            ContourPiece::new(8, move |s| {
                let theta = (q as f64 + s) * std::f64::consts::FRAC_PI_2;
                center + Complex64::from_polar(radius, theta)
            })
        })
        .collect()
}

/// Winding computation along one closed contour.
#[derive(Debug, Clone)]
pub struct WindingReport {
    /// Raw accumulated phase divided by `2 pi`.
    pub winding: f64,
    /// Rounded winding number: enclosed eigenvalues counted with
    /// multiplicity.
    pub enclosed: i64,
    /// Committed contour samples.
    pub points: usize,
    /// Smallest reduced determinant modulus seen on the contour.
    pub min_unit_modulus: f64,
    /// Accumulated phase per contour piece (radians); sums to
    /// `2 pi * winding`. Useful when diagnosing a non-integer winding.
    pub piece_args: Vec<f64>,
    /// Committed samples in contour order (first sample repeated values are
    /// not deduplicated at piece junctions because junctions are not
    /// re-evaluated).
    pub samples: Vec<Sample>,
}

/// Agreement between the two evaluation strategies at fresh sample points.
#[derive(Debug, Clone)]
pub struct CrossCheck {
    pub samples: usize,
    pub max_relative: f64,
    pub within: bool,
}

/// Outcome of the full spectral stability verification.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub phase_dim: usize,
    pub unstable_dim: usize,
    /// Integration window actually used (innermost endstate-close nodes).
    pub x_minus: f64,
    pub x_plus: f64,
    pub indented: WindingReport,
    pub origin: WindingReport,
    /// Expected origin multiplicity: the connection-manifold dimension.
    pub ell_expected: usize,
    pub cross_check: Option<CrossCheck>,
    /// True when the indented contour encloses nothing, the origin winding
    /// equals the expected multiplicity, and any cross-check passed.
    pub satisfied: bool,
}

/// Invariant-subspace continuation state at one endstate.
#[derive(Clone)]
struct GroupState {
    values: Vec<Complex64>,
    selected: Vec<usize>,
    frame: DMatrix<Complex64>,
    projector: DMatrix<Complex64>,
}

/// Precomputed transport tables along one side of the profile: the system
/// matrix is affine in the spectral parameter, so its two real coefficient
/// matrices are tabulated at every RK4 half-step station once and reused for
/// every contour point.
struct SideTable {
    g0: Vec<DMatrix<f64>>,
    g1: Vec<DMatrix<f64>>,
    h: f64,
    nsteps: usize,
    per_station: usize,
}

impl SideTable {
    fn build(lin: &Linearization, x_start: f64, station: f64, rk_step: f64) -> Result<SideTable> {
        let length = x_start.abs();
        let nsteps = ((length / rk_step).ceil() as usize).max(1);
        let h = -x_start / nsteps as f64;
        let mut g0 = Vec::with_capacity(2 * nsteps + 1);
        let mut g1 = Vec::with_capacity(2 * nsteps + 1);
        for j in 0..=(2 * nsteps) {
            let x = x_start + 0.5 * h * j as f64;
            let (a, b) = lin.eigen_system_pencil(x)?;
            g0.push(a);
            g1.push(b);
        }
        let per_station = ((station / h.abs()).round() as usize).max(1);
        Ok(SideTable { g0, g1, h, nsteps, per_station })
    }

    /// Map every tabulated coefficient matrix through a linear lift.
    fn lifted(&self, lift: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> SideTable {
        SideTable {
            g0: self.g0.iter().map(&lift).collect(),
            g1: self.g1.iter().map(&lift).collect(),
            h: self.h,
            nsteps: self.nsteps,
            per_station: self.per_station,
        }
    }
}

/// `dst = g0 + lambda * g1`, entrywise.
fn fill_stage(
    dst: &mut DMatrix<Complex64>,
    g0: &DMatrix<f64>,
    g1: &DMatrix<f64>,
    lambda: Complex64,
) {
    for ((d, &a), &b) in dst.iter_mut().zip(g0.iter()).zip(g1.iter()) {
        *d = Complex64::new(a + lambda.re * b, lambda.im * b);
    }
}

/// `dst += scale * src`, entrywise with a real scale.
fn add_scaled(dst: &mut DMatrix<Complex64>, src: &DMatrix<Complex64>, scale: f64) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += s * scale;
    }
}

/// Thin QR with the triangular factor normalized to a positive real
/// diagonal. Returns the orthonormal factor and `ln det R > 0`'s logarithm,
/// so the correction applied to the frame is phase-neutral by construction.
fn positive_qr(m: &DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, f64)> {
    let k = m.ncols();
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let scale = m.iter().map(|z| z.norm()).fold(0.0_f64, f64::max).max(1e-300);
    let mut ln_det = 0.0;
    for j in 0..k {
        let d = r[(j, j)];
        let a = d.norm();
        if a <= 1e-14 * scale {
            return Err(Error::Numerics(
                "solution frame lost rank during transport".into(),
            ));
        }
        ln_det += a.ln();
        let phase = d / a;
        let mut col = q.column_mut(j);
        col *= phase;
    }
    Ok((q, ln_det))
}

/// Lexicographically ordered `k`-element subsets of `{0, ..., n-1}`.
fn multi_indices(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k == 0 {
        return vec![Vec::new()];
    }
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        // Advance to the next combination.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] + 1 <= n - (k - i) {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Lift of a matrix generator to the `k`-th exterior power: if `w` carries
/// the coordinates of a decomposable `k`-vector whose factors each evolve by
/// `v' = G v`, then `w' = lift(G) w`.
fn lift_matrix(g: &DMatrix<f64>, combos: &[Vec<usize>], n: usize) -> DMatrix<f64> {
    let cn = combos.len();
    let k = combos.first().map(|c| c.len()).unwrap_or(0);
    let mut m = DMatrix::zeros(cn, cn);
    for (a, iset) in combos.iter().enumerate() {
        for s in 0..k {
            for j in 0..n {
                if j == iset[s] {
                    m[(a, a)] += g[(j, j)];
                    continue;
                }
                if iset.contains(&j) {
                    continue;
                }
                let mut v = iset.clone();
                v[s] = j;
                let mut sign = 1.0;
                let mut pos = s;
                while pos > 0 && v[pos - 1] > v[pos] {
                    v.swap(pos - 1, pos);
                    pos -= 1;
                    sign = -sign;
                }
                while pos + 1 < k && v[pos] > v[pos + 1] {
                    v.swap(pos, pos + 1);
                    pos += 1;
                    sign = -sign;
                }
                let b = combos.binary_search(&v).expect("combination enumeration is exhaustive");
                m[(b, a)] += sign * g[(j, iset[s])];
            }
        }
    }
    m
}

/// Plucker coordinates of the column span of `frame`: the `k x k` minors
/// indexed by `combos`. For an orthonormal frame the result has unit norm.
fn plucker(frame: &DMatrix<Complex64>, combos: &[Vec<usize>]) -> DVector<Complex64> {
    let k = frame.ncols();
    DVector::from_iterator(
        combos.len(),
        combos.iter().map(|rows| {
            DMatrix::from_fn(k, k, |r, c| frame[(rows[r], c)])
                .lu()
                .determinant()
        }),
    )
}

/// Pairing of complementary exterior powers into the top power: computes the
/// determinant of the joined frames from their Plucker coordinates.
fn plucker_pairing(
    wm: &DVector<Complex64>,
    wp: &DVector<Complex64>,
    combos_k: &[Vec<usize>],
    combos_rest: &[Vec<usize>],
    n: usize,
) -> Complex64 {
    let mut total = Complex64::new(0.0, 0.0);
    for (a, iset) in combos_k.iter().enumerate() {
        let comp: Vec<usize> = (0..n).filter(|j| !iset.contains(j)).collect();
        let mut inversions = 0usize;
        for &i in iset {
            for &c in &comp {
                if i > c {
                    inversions += 1;
                }
            }
        }
        let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
        let b = combos_rest
            .binary_search(&comp)
            .expect("complement of a combination is a combination");
        total += wm[a] * wp[b] * sign;
    }
    total
}

/// Stability-determinant evaluator bound to one model and profile. Holds the
/// precomputed transport tables for both sides and (for the cross-check) the
/// exterior-power lifts.
pub struct Evaluator<'a> {
    lin: Linearization<'a>,
    opts: EvansOpts,
    unstable_dim: usize,
    x_minus: f64,
    x_plus: f64,
    minus: SideTable,
    plus: SideTable,
    minus_lift: SideTable,
    plus_lift: SideTable,
    combos_k: Vec<Vec<usize>>,
    combos_rest: Vec<Vec<usize>>,
}

enum StepOutcome {
    Accepted,
    Refine,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        model: &'a dyn ConservationLaw,
        profile: &'a Profile,
        opts: EvansOpts,
    ) -> Result<Self> {
        if !(opts.radius > opts.indent && opts.indent > 0.0) {
            return Err(Error::Config(
                "contour radius must exceed the indentation radius (both positive)".into(),
            ));
        }
        let lin = Linearization::new(model, profile);
        let dim = lin.phase_dim();
        let k = spectral::consistent_splitting(&lin, Complex64::new(opts.radius, 0.0))?;
        if k == 0 || k == dim {
            return Err(Error::Inconclusive(format!(
                "boundary subspaces are trivial (unstable dimension {k} of {dim}); \
                 there is no transversality problem to evaluate"
            )));
        }
        let (x_minus, x_plus) = integration_window(profile, opts.tail_cutoff)?;
        let minus = SideTable::build(&lin, x_minus, opts.station, opts.rk_step)?;
        let plus = SideTable::build(&lin, x_plus, opts.station, opts.rk_step)?;
        let combos_k = multi_indices(dim, k);
        let combos_rest = multi_indices(dim, dim - k);
        let minus_lift = minus.lifted(|g| lift_matrix(g, &combos_k, dim));
        let plus_lift = plus.lifted(|g| lift_matrix(g, &combos_rest, dim));
        Ok(Evaluator {
            lin,
            opts,
            unstable_dim: k,
            x_minus,
            x_plus,
            minus,
            plus,
            minus_lift,
            plus_lift,
            combos_k,
            combos_rest,
        })
    }

    /// Dimension of the tracked unstable family at the left endstate.
    pub fn unstable_dim(&self) -> usize {
        self.unstable_dim
    }

    /// Integration window `[x_minus, x_plus]` actually used.
    pub fn window(&self) -> (f64, f64) {
        (self.x_minus, self.x_plus)
    }

    /// Seed the tracked group at a parameter where the stable/unstable
    /// splitting of the frozen matrices is clean (to the right of the
    /// essential spectrum). `unstable` selects which family is tracked.
    fn seed_group(&self, side: Side, lambda: Complex64, unstable: bool) -> Result<GroupState> {
        let g = self.lin.asymptotic_matrix(side, lambda)?;
        let eig = linalg::eigen_complex(&g).map_err(|e| {
            Error::Inconclusive(format!("frozen-matrix eigendecomposition failed: {e}"))
        })?;
        let scale = eig.values.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
        let margin = eig
            .values
            .iter()
            .map(|z| z.re.abs())
            .fold(f64::INFINITY, f64::min);
        if margin <= tol::SPLITTING_MARGIN * scale {
            return Err(Error::Inconclusive(format!(
                "spatial rates are too close to neutral at lambda = {lambda} \
                 (margin {margin:.3e}); the parameter sits on or near the essential spectrum"
            )));
        }
        let selected: Vec<usize> = eig
            .values
            .iter()
            .enumerate()
            .filter(|(_, z)| if unstable { z.re > 0.0 } else { z.re < 0.0 })
            .map(|(i, _)| i)
            .collect();
        let want = if unstable {
            self.unstable_dim
        } else {
            self.lin.phase_dim() - self.unstable_dim
        };
        if selected.len() != want {
            return Err(Error::Inconclusive(format!(
                "splitting at lambda = {lambda} has {} modes where {want} are expected; \
                 the parameter is on the wrong side of the essential spectrum",
                selected.len()
            )));
        }
        let (frame, _) = positive_qr(&eig.basis(&selected))?;
        let projector = eig.projector(&selected);
        Ok(GroupState { values: eig.values, selected, frame, projector })
    }

    /// Continue a tracked group to a nearby parameter by spectral matching.
    /// Returns the new state and the projector movement (Frobenius norm).
    fn advance_group(
        &self,
        side: Side,
        lambda: Complex64,
        prev: &GroupState,
    ) -> Result<(GroupState, f64)> {
        let g = self.lin.asymptotic_matrix(side, lambda)?;
        let eig = linalg::eigen_complex(&g).map_err(|e| {
            Error::Inconclusive(format!("frozen-matrix eigendecomposition failed: {e}"))
        })?;
        let perm = linalg::match_eigenvalues(&prev.values, &eig.values);
        let selected: Vec<usize> = prev.selected.iter().map(|&i| perm[i]).collect();
        let scale = eig.values.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
        let mut gap = f64::INFINITY;
        for (i, zi) in eig.values.iter().enumerate() {
            if selected.contains(&i) {
                continue;
            }
            for &j in &selected {
                gap = gap.min((zi - eig.values[j]).norm());
            }
        }
        if gap <= 1e-9 * scale {
            return Err(Error::Inconclusive(
                "tracked eigenvalue group collided with its complement on the contour".into(),
            ));
        }
        let projector = eig.projector(&selected);
        let dist = (&projector - &prev.projector).norm();
        let raw = &projector * &prev.frame;
        let (frame, _) = positive_qr(&raw).map_err(|_| {
            Error::Inconclusive(
                "invariant-subspace continuation lost rank; contour step too large".into(),
            )
        })?;
        Ok((GroupState { values: eig.values, selected, frame, projector }, dist))
    }

    /// Transport a frame (or lifted vector) along one side table.
    fn transport(
        &self,
        table: &SideTable,
        lambda: Complex64,
        init: &DMatrix<Complex64>,
    ) -> Result<(DMatrix<Complex64>, f64)> {
        let dim = table.g0[0].nrows();
        let k = init.ncols();
        let h = table.h;
        let mut y = init.clone();
        let mut ln = 0.0_f64;
        let mut gc = [
            DMatrix::<Complex64>::zeros(dim, dim),
            DMatrix::<Complex64>::zeros(dim, dim),
            DMatrix::<Complex64>::zeros(dim, dim),
        ];
        let mut k1 = DMatrix::<Complex64>::zeros(dim, k);
        let mut k2 = k1.clone();
        let mut k3 = k1.clone();
        let mut k4 = k1.clone();
        let mut tmp = k1.clone();
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        for step in 0..table.nsteps {
            let base = 2 * step;
            fill_stage(&mut gc[0], &table.g0[base], &table.g1[base], lambda);
            fill_stage(&mut gc[1], &table.g0[base + 1], &table.g1[base + 1], lambda);
            fill_stage(&mut gc[2], &table.g0[base + 2], &table.g1[base + 2], lambda);
            k1.gemm(one, &gc[0], &y, zero);
            tmp.copy_from(&y);
            add_scaled(&mut tmp, &k1, 0.5 * h);
            k2.gemm(one, &gc[1], &tmp, zero);
            tmp.copy_from(&y);
            add_scaled(&mut tmp, &k2, 0.5 * h);
            k3.gemm(one, &gc[1], &tmp, zero);
            tmp.copy_from(&y);
            add_scaled(&mut tmp, &k3, h);
            k4.gemm(one, &gc[2], &tmp, zero);
            add_scaled(&mut y, &k1, h / 6.0);
            add_scaled(&mut y, &k2, h / 3.0);
            add_scaled(&mut y, &k3, h / 3.0);
            add_scaled(&mut y, &k4, h / 6.0);
            if (step + 1) % table.per_station == 0 || step + 1 == table.nsteps {
                let (q, d) = positive_qr(&y)?;
                y = q;
                ln += d;
            }
        }
        Ok((y, ln))
    }

    fn determinant_frames(
        &self,
        lambda: Complex64,
        gm: &GroupState,
        gp: &GroupState,
    ) -> Result<Sample> {
        let (qm, lnm) = self.transport(&self.minus, lambda, &gm.frame)?;
        let (qp, lnp) = self.transport(&self.plus, lambda, &gp.frame)?;
        let n = qm.nrows();
        let k = qm.ncols();
        let full = DMatrix::from_fn(n, n, |i, j| {
            if j < k {
                qm[(i, j)]
            } else {
                qp[(i, j - k)]
            }
        });
        let unit = full.lu().determinant();
        Ok(Sample { lambda, unit, ln_scale: lnm + lnp })
    }

    fn determinant_compound(
        &self,
        lambda: Complex64,
        gm: &GroupState,
        gp: &GroupState,
    ) -> Result<Sample> {
        let n = self.lin.phase_dim();
        let wm0 = plucker(&gm.frame, &self.combos_k);
        let wp0 = plucker(&gp.frame, &self.combos_rest);
        let as_matrix = |v: &DVector<Complex64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        let (vm, lnm) = self.transport(&self.minus_lift, lambda, &as_matrix(&wm0))?;
        let (vp, lnp) = self.transport(&self.plus_lift, lambda, &as_matrix(&wp0))?;
        let unit = plucker_pairing(
            &vm.column(0).into_owned(),
            &vp.column(0).into_owned(),
            &self.combos_k,
            &self.combos_rest,
            n,
        );
        Ok(Sample { lambda, unit, ln_scale: lnm + lnp })
    }

    /// Fast-phase proxy: the imaginary part of the sum of transported
    /// exponents, from the frozen endstate matrices only. The determinant's
    /// phase moves at essentially this rate (plus an order-one subspace
    /// rotation), so sampling a contour piece uniformly in this proxy keeps
    /// every true phase step far below `pi` and makes the winding
    /// accumulation alias-free. Any pointwise-computable gauge works here;
    /// accuracy only affects sampling density, not correctness.
    fn wkb_phase(&self, lambda: Complex64) -> Result<f64> {
        let gm = self.lin.asymptotic_matrix(Side::Minus, lambda)?;
        let gp = self.lin.asymptotic_matrix(Side::Plus, lambda)?;
        let em = linalg::eigenvalues_complex_matrix(&gm)?;
        let ep = linalg::eigenvalues_complex_matrix(&gp)?;
        let sm: f64 = em.iter().filter(|z| z.re > 0.0).map(|z| z.im).sum();
        let sp: f64 = ep.iter().filter(|z| z.re < 0.0).map(|z| z.im).sum();
        Ok(self.x_minus.abs() * sm - self.x_plus * sp)
    }

    /// Sampling targets for one piece: probe the fast-phase proxy, then
    /// equidistribute so each base step carries at most about one radian of
    /// estimated phase. The piece's own base density is a lower bound.
    fn piece_targets(&self, piece: &ContourPiece) -> Result<Vec<f64>> {
        const PROBE: usize = 24;
        let mut ss = Vec::with_capacity(PROBE + 1);
        let mut cum = Vec::with_capacity(PROBE + 1);
        let mut total = 0.0_f64;
        let mut prev = self.wkb_phase(piece.at(0.0))?;
        ss.push(0.0);
        cum.push(0.0);
        for j in 1..=PROBE {
            let s = j as f64 / PROBE as f64;
            let phi = self.wkb_phase(piece.at(s))?;
            total += (phi - prev).abs();
            prev = phi;
            ss.push(s);
            cum.push(total);
        }
        let m = ((total / 0.9).ceil() as usize + 2).max(2);
        let mut targets = Vec::with_capacity(m + piece.base_points);
        let mut seg = 0usize;
        for i in 1..m {
            let want = total * i as f64 / m as f64;
            while seg + 1 < cum.len() && cum[seg + 1] < want {
                seg += 1;
            }
            let s = if cum[seg + 1] > cum[seg] {
                let f = (want - cum[seg]) / (cum[seg + 1] - cum[seg]);
                ss[seg] + f * (ss[seg + 1] - ss[seg])
            } else {
                ss[seg + 1]
            };
            targets.push(s.clamp(0.0, 1.0));
        }
        // Union with the uniform base ladder so flat-phase stretches are
        // still covered geometrically, then dedupe and end exactly at 1.
        let base = piece.base_points.max(1);
        for i in 1..=base {
            targets.push(i as f64 / base as f64);
        }
        targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
        targets.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        while targets.last().is_some_and(|&t| t >= 1.0) {
            targets.pop();
        }
        targets.push(1.0);
        Ok(targets)
    }

    /// Evaluate the determinant at an isolated parameter with fresh seeds.
    /// Requires a clean sign splitting at `lambda` (off and to the right of
    /// the essential spectrum); use contour walks elsewhere.
    pub fn sample_fresh(&self, lambda: Complex64, strategy: Strategy) -> Result<Sample> {
        let gm = self.seed_group(Side::Minus, lambda, true)?;
        let gp = self.seed_group(Side::Plus, lambda, false)?;
        match strategy {
            Strategy::Frames => self.determinant_frames(lambda, &gm, &gp),
            Strategy::Compound => self.determinant_compound(lambda, &gm, &gp),
        }
    }

    /// Walk a closed contour and count enclosed eigenvalues by winding.
    pub fn winding(&self, pieces: &[ContourPiece]) -> Result<WindingReport> {
        if pieces.is_empty() {
            return Err(Error::Config("empty contour".into()));
        }
        let start = pieces[0].at(0.0);
        let mut gm = self.seed_group(Side::Minus, start, true)?;
        let mut gp = self.seed_group(Side::Plus, start, false)?;
        let mut current = self.determinant_frames(start, &gm, &gp)?;
        if current.unit.norm() < UNIT_FLOOR {
            return Err(Error::Inconclusive(
                "determinant vanishes at the contour start point".into(),
            ));
        }
        let mut total_arg = 0.0_f64;
        let mut committed = 1usize;
        let mut min_unit = current.unit.norm();
        let mut samples = vec![current.clone()];
        let mut piece_args = Vec::with_capacity(pieces.len());
        for piece in pieces {
            let piece_start_arg = total_arg;
            let mut pending: Vec<f64> = self.piece_targets(piece)?;
            pending.reverse();
            let mut s_prev = 0.0_f64;
            while let Some(s_t) = pending.pop() {
                if committed > self.opts.max_points {
                    return Err(Error::Inconclusive(
                        "contour refinement exhausted its sample budget".into(),
                    ));
                }
                let lambda = piece.at(s_t);
                let (gm2, dm) = self.advance_group(Side::Minus, lambda, &gm)?;
                let (gp2, dp) = self.advance_group(Side::Plus, lambda, &gp)?;
                let outcome = if dm.max(dp) > tol::MAX_PROJECTOR_STEP {
                    StepOutcome::Refine
                } else {
                    let s = self.determinant_frames(lambda, &gm2, &gp2)?;
                    if s.unit.norm() < UNIT_FLOOR {
                        return Err(Error::Inconclusive(format!(
                            "determinant modulus collapsed at lambda = {lambda}; \
                             an eigenvalue may sit on the sampling contour"
                        )));
                    }
                    let dphi = (s.unit / current.unit).arg();
                    if dphi.abs() > tol::MAX_PHASE_STEP {
                        StepOutcome::Refine
                    } else {
                        total_arg += dphi;
                        gm = gm2;
                        gp = gp2;
                        current = s.clone();
                        min_unit = min_unit.min(s.unit.norm());
                        samples.push(s);
                        committed += 1;
                        StepOutcome::Accepted
                    }
                };
                match outcome {
                    StepOutcome::Accepted => {
                        s_prev = s_t;
                    }
                    StepOutcome::Refine => {
                        if s_t - s_prev < MIN_PIECE_STEP {
                            return Err(Error::Inconclusive(
                                "contour step cannot be refined further; the determinant \
                                 phase or the boundary subspaces jump discontinuously"
                                    .into(),
                            ));
                        }
                        pending.push(s_t);
                        pending.push(0.5 * (s_prev + s_t));
                    }
                }
            }
            piece_args.push(total_arg - piece_start_arg);
        }
        let winding = total_arg / (2.0 * std::f64::consts::PI);
        let rounded = winding.round();
        if (winding - rounded).abs() > tol::WINDING_INTEGER {
            return Err(Error::Inconclusive(format!(
                "accumulated winding {winding:.6} is not within {} of an integer",
                tol::WINDING_INTEGER
            )));
        }
        Ok(WindingReport {
            winding,
            enclosed: rounded as i64,
            points: committed,
            min_unit_modulus: min_unit,
            piece_args,
            samples,
        })
    }

    /// Compare the two strategies at fresh sample points spread over the
    /// verification region, as relative deviation of the full determinant.
    pub fn strategy_agreement(&self) -> Result<CrossCheck> {
        let r = self.opts.radius;
        let points = [
            Complex64::new(0.2 * r, 0.0),
            Complex64::new(0.1 * r, 0.5 * r),
            Complex64::new(0.0, 0.62 * r),
        ];
        let mut max_rel = 0.0_f64;
        for &lambda in &points {
            let gm = self.seed_group(Side::Minus, lambda, true)?;
            let gp = self.seed_group(Side::Plus, lambda, false)?;
            let sf = self.determinant_frames(lambda, &gm, &gp)?;
            let sc = self.determinant_compound(lambda, &gm, &gp)?;
            if sf.unit.norm() < UNIT_FLOOR || sc.unit.norm() < UNIT_FLOOR {
                return Err(Error::Inconclusive(
                    "strategy comparison point sits too close to an eigenvalue".into(),
                ));
            }
            let ratio = (sf.ln_scale - sc.ln_scale).exp() * (sf.unit / sc.unit);
            max_rel = max_rel.max((ratio - Complex64::new(1.0, 0.0)).norm());
        }
        Ok(CrossCheck {
            samples: points.len(),
            max_relative: max_rel,
            within: max_rel <= tol::STRATEGY_AGREEMENT,
        })
    }
}

/// Innermost grid nodes beyond which the profile is endstate-close (relative
/// tail below `cutoff`); transport starts there so the frozen-coefficient
/// seeds carry an error of the same relative size.
fn integration_window(profile: &Profile, cutoff: f64) -> Result<(f64, f64)> {
    let grid = &profile.grid;
    let n = grid.len;
    let um = &profile.endstates.u_minus;
    let up = &profile.endstates.u_plus;
    let scale = um
        .iter()
        .zip(up.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max)
        .max(1e-300);
    let node_diff = |i: usize, target: &[f64]| -> f64 {
        (0..target.len())
            .map(|c| (profile.states.get(i, c) - target[c]).abs())
            .fold(0.0_f64, f64::max)
    };
    let mut i = 0usize;
    while i + 1 < n && node_diff(i + 1, um) <= cutoff * scale {
        i += 1;
    }
    let x_minus = grid.x(i);
    let mut j = n - 1;
    while j >= 1 && node_diff(j - 1, up) <= cutoff * scale {
        j -= 1;
    }
    let x_plus = grid.x(j);
    if !(x_minus < 0.0 && x_plus > 0.0) {
        return Err(Error::Numerics(
            "profile tails reach the matching point; the grid does not resolve the transition"
                .into(),
        ));
    }
    Ok((x_minus, x_plus))
}

/// Run the full spectral stability verification: zero winding on the
/// indented half-disk, origin multiplicity equal to the connection-manifold
/// dimension, and (optionally) agreement of the two evaluation strategies.
///
/// A nonzero count of unstable eigenvalues is reported through
/// `satisfied = false`, not as an error; errors mean the verification could
/// not be carried out.
pub fn verify_stability(
    model: &dyn ConservationLaw,
    profile: &Profile,
    opts: &EvansOpts,
) -> Result<StabilityReport> {
    let ev = Evaluator::new(model, profile, opts.clone())?;
    let indented = ev.winding(&indented_contour(opts.radius, opts.indent))?;
    let origin = ev.winding(&circle_contour(Complex64::new(0.0, 0.0), opts.indent))?;
    let cross_check = if opts.cross_check {
        Some(ev.strategy_agreement()?)
    } else {
        None
    };
    let ell = profile.ell;
    let satisfied = indented.enclosed == 0
        && origin.enclosed == ell as i64
        && cross_check.as_ref().map(|c| c.within).unwrap_or(true);
    Ok(StabilityReport {
        phase_dim: ev.lin.phase_dim(),
        unstable_dim: ev.unstable_dim,
        x_minus: ev.x_minus,
        x_plus: ev.x_plus,
        indented,
        origin,
        ell_expected: ell,
        cross_check,
        satisfied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{classify_shock, Burgers, IsothermalGas, QuadraticGradient};
    use crate::profile::{solve_profile, ProfileOpts};
    use approx::assert_relative_eq;

    fn quick_opts() -> EvansOpts {
        EvansOpts {
            radius: 2.0,
            indent: 1e-3,
            station: 0.5,
            rk_step: 0.01,
            tail_cutoff: tol::ENDSTATE_TAIL,
            max_points: 20_000,
            cross_check: false,
        }
    }

    fn burgers_profile() -> (Burgers, Profile) {
        let model = Burgers;
        let ends = classify_shock(&model, &[1.0], &[-1.0]).unwrap();
        let profile = solve_profile(
            &model,
            &ends,
            &ProfileOpts { half_width: 18.0, dx: 0.05 },
        )
        .unwrap();
        (model, profile)
    }

    fn quadratic_gradient_profile() -> (QuadraticGradient, Profile) {
        let model = QuadraticGradient;
        let ends = classify_shock(&model, &[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        let profile = solve_profile(
            &model,
            &ends,
            &ProfileOpts { half_width: 16.0, dx: 0.05 },
        )
        .unwrap();
        (model, profile)
    }

    fn gas_profile() -> (IsothermalGas, Profile) {
        let (speed, um, up) = IsothermalGas::matched_endstates(1.0, 2.0, 1.0).unwrap();
        let model = IsothermalGas::new(1.0, speed).unwrap();
        let ends = classify_shock(&model, &um, &up).unwrap();
        let profile = solve_profile(
            &model,
            &ends,
            &ProfileOpts { half_width: 20.0, dx: 0.05 },
        )
        .unwrap();
        (model, profile)
    }

    #[test]
    fn lifted_matrix_spectrum_is_pairwise_sums() {
        let g = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.7, -0.3, 0.2, 0.1, //
                0.4, 1.1, -0.5, 0.0, //
                -0.2, 0.3, -0.9, 0.6, //
                0.1, -0.4, 0.2, 0.5,
            ],
        );
        let combos = multi_indices(4, 2);
        let lifted = lift_matrix(&g, &combos, 4);
        let mus = linalg::eigenvalues_real_matrix(&g);
        let mut expected: Vec<(f64, f64)> = Vec::new();
        for i in 0..4 {
            for j in i + 1..4 {
                let s = mus[i] + mus[j];
                expected.push((s.re, s.im));
            }
        }
        let mut got: Vec<(f64, f64)> = linalg::eigenvalues_real_matrix(&lifted)
            .iter()
            .map(|z| (z.re, z.im))
            .collect();
        let key = |p: &(f64, f64)| (p.0, p.1);
        expected.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        got.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        for (e, g) in expected.iter().zip(got.iter()) {
            assert_relative_eq!(e.0, g.0, epsilon = 1e-9, max_relative = 1e-9);
            assert!((e.1 - g.1).abs() <= 1e-9);
        }
    }

    #[test]
    fn plucker_pairing_matches_full_determinant() {
        for (n, k) in [(4usize, 2usize), (3, 2), (3, 1), (2, 1)] {
            let combos_k = multi_indices(n, k);
            let combos_rest = multi_indices(n, n - k);
            // Deterministic pseudo-random complex frames.
            let entry = |i: usize, j: usize, salt: f64| {
                let t = (i * 7 + j * 13) as f64 + salt;
                Complex64::new((1.3 * t).sin(), (0.7 * t).cos())
            };
            let fm = DMatrix::from_fn(n, k, |i, j| entry(i, j, 0.25));
            let fp = DMatrix::from_fn(n, n - k, |i, j| entry(i, j, 4.75));
            let wm = plucker(&fm, &combos_k);
            let wp = plucker(&fp, &combos_rest);
            let paired = plucker_pairing(&wm, &wp, &combos_k, &combos_rest, n);
            let full = DMatrix::from_fn(n, n, |i, j| {
                if j < k {
                    fm[(i, j)]
                } else {
                    fp[(i, j - k)]
                }
            });
            let direct = full.lu().determinant();
            assert!(
                (paired - direct).norm() <= 1e-12 * direct.norm().max(1.0),
                "pairing mismatch at n={n}, k={k}: {paired} vs {direct}"
            );
        }
    }

    #[test]
    fn strategies_agree_after_shared_seeding() {
        let (bm, bp) = burgers_profile();
        let (qm, qp) = quadratic_gradient_profile();
        let (gm, gp) = gas_profile();
        let cases: [(&dyn ConservationLaw, &Profile); 3] = [(&bm, &bp), (&qm, &qp), (&gm, &gp)];
        for (model, profile) in cases {
            let ev = Evaluator::new(model, profile, quick_opts()).unwrap();
            let check = ev.strategy_agreement().unwrap();
            assert!(
                check.within,
                "{}: strategies disagree by {:.3e}",
                model.name(),
                check.max_relative
            );
        }
    }

    #[test]
    fn burgers_halfplane_winding_zero_origin_simple() {
        let (model, profile) = burgers_profile();
        let report = verify_stability(&model, &profile, &quick_opts()).unwrap();
        assert_eq!(report.indented.enclosed, 0);
        assert_eq!(report.origin.enclosed, 1);
        assert_eq!(report.ell_expected, 1);
        assert!(report.satisfied);
        assert!(report.indented.min_unit_modulus > 1e-6);
    }

    #[test]
    fn quadratic_gradient_halfplane_winding_zero_origin_simple() {
        let (model, profile) = quadratic_gradient_profile();
        let report = verify_stability(&model, &profile, &quick_opts()).unwrap();
        assert_eq!(report.indented.enclosed, 0);
        assert_eq!(report.origin.enclosed, 1);
        assert!(report.satisfied);
    }

    #[test]
    fn gas_origin_multiplicity_matches_connection_count() {
        let (model, profile) = gas_profile();
        let mut opts = quick_opts();
        opts.radius = 1.0;
        let report = verify_stability(&model, &profile, &opts).unwrap();
        assert_eq!(report.indented.enclosed, 0);
        assert_eq!(report.origin.enclosed, 1);
        assert!(report.satisfied);
    }

    #[test]
    fn essential_spectrum_blocks_fresh_sampling() {
        let (model, profile) = burgers_profile();
        let ev = Evaluator::new(&model, &profile, quick_opts()).unwrap();
        let err = ev
            .sample_fresh(Complex64::new(-0.3, 0.0), Strategy::Frames)
            .unwrap_err();
        assert!(matches!(err, Error::Inconclusive(_)), "got {err}");
    }

    #[test]
    fn conjugate_parameter_preserves_modulus() {
        let (model, profile) = burgers_profile();
        let ev = Evaluator::new(&model, &profile, quick_opts()).unwrap();
        let a = ev
            .sample_fresh(Complex64::new(0.5, 0.5), Strategy::Frames)
            .unwrap();
        let b = ev
            .sample_fresh(Complex64::new(0.5, -0.5), Strategy::Frames)
            .unwrap();
        assert_relative_eq!(a.ln_modulus(), b.ln_modulus(), epsilon = 1e-7, max_relative = 1e-7);
    }
}
