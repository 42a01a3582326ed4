//! Centralized tolerances and default numerical parameters.
//!
//! Every magic number that decides "equal enough", "converged", or "resolved"
//! lives here with a rationale, so tests and production paths agree on what
//! precision is claimed where. Values are chosen for f64 arithmetic.

/// Near machine precision; used where the only error source is rounding
/// (biorthogonality of eigenvector pairs, two algebraic routes to the same
/// quantity, conservation telescoping).
pub const EXACT: f64 = 1e-10;

/// Rankine-Hugoniot residual allowed when validating endstate pairs.
pub const RANKINE_HUGONIOT: f64 = 1e-10;

/// Relative spectral gap below which eigenvalues count as a multiplicity
/// cluster, and above which they count as distinct.
pub const EIGEN_CLUSTER_REL: f64 = 1e-6;

/// Relative threshold for "nonzero / distinct" in the structural hypothesis
/// checks on characteristic speeds.
pub const HYPOTHESIS_REL_GAP: f64 = 1e-8;

/// Acceptable sup-norm distance between a computed traveling-wave profile and
/// a known closed form on the standard grids.
pub const PROFILE_CLOSED_FORM: f64 = 1e-6;

/// Damped-Newton convergence for the flux-slaving map (hyperbolic block of the
/// profile reduction) and for phase extraction.
pub const NEWTON_RESIDUAL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 60;

/// Largest coefficient tail allowed when freezing endstate matrices at the
/// domain ends of an integration (how far "numerical infinity" must be).
pub const ENDSTATE_TAIL: f64 = 1e-9;

/// Consistent-splitting guard: smallest |Re mu| of a spatial rate before the
/// stable/unstable splitting of a frozen coefficient matrix is considered
/// degenerate at that spectral parameter.
pub const SPLITTING_MARGIN: f64 = 1e-7;

/// Evans-function phase increment per contour step before the sampler
/// subdivides (radians). A quarter turn keeps winding sums unambiguous.
pub const MAX_PHASE_STEP: f64 = std::f64::consts::FRAC_PI_2 * 0.8;

/// Projector movement per contour step before the continuation inserts an
/// intermediate sample (Frobenius norm of the difference).
pub const MAX_PROJECTOR_STEP: f64 = 0.2;

/// How close the accumulated winding must be to an integer.
pub const WINDING_INTEGER: f64 = 0.05;

/// Default spatial step for Evans-system integration. Fixed-step RK4 at this
/// resolution keeps the frame error near 1e-7 over +-25 at spatial rates <= 3.
pub const EVANS_RK_STEP: f64 = 0.004;

/// Relative agreement demanded between the two independent stability-
/// determinant evaluation strategies (orthonormalized frames vs exterior
/// powers) at sample points, after removing each route's scale ledger.
pub const STRATEGY_AGREEMENT: f64 = 1e-6;

/// Smallest time used when evaluating diffusive kernels and templates; keeps
/// 1/sqrt(t) factors finite at t = 0 without visibly perturbing t >= 1e-6.
pub const T_FLOOR: f64 = 1e-8;

/// Advective CFL number for the explicit flux stage of the time stepper.
pub const CFL: f64 = 0.35;

/// Relative drift of conserved mass (against the boundary-flux ledger)
/// allowed per time step.
pub const MASS_LEDGER: f64 = 1e-10;

/// Default weight M balancing the phase-path norm against the asymptotic
/// shift when measuring iteration contraction.
pub const STAR_NORM_WEIGHT: f64 = 10.0;

/// Default adaptive-quadrature relative tolerance for template/kernel
/// convolution checks.
pub const QUAD_REL: f64 = 1e-7;
