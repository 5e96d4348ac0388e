//! Numerical library for frustrated anisotropic elastic ribbons.
//!
//! The crate computes the one-dimensional relaxed bending energy of a thin
//! ribbon whose flat reference state follows a curved midline, together with
//! the objects that certify the reduction from the two-dimensional plate
//! description:
//!
//! * reference geometry: arc-length midlines, tubular charts and shrinking
//!   strip neighbourhoods ([`geometry`]);
//! * the bending quadratic form, its rank-one-relaxation constants and the
//!   zero eigenspaces they generate, transported along the midline
//!   ([`quadform`]);
//! * the pointwise relaxed density `qbar(mu, tau)` obtained by exact
//!   minimisation over the free transversal curvature, and the limit bending
//!   functional it induces on framed curves ([`limit_energy`]);
//! * rotation frames solving `R' = A R` on SO(3) with a fourth-order
//!   Lie-group integrator, admissibility and nondegeneracy checks
//!   ([`frames`]);
//! * laminate recovery fields: zero-determinant splits, piecewise-constant
//!   sign-preserving approximation, moving-plane avoidance, oscillation at a
//!   prescribed frequency and endpoint-correcting shooting ([`relaxation`]);
//! * ruled developable isometries spanned over the midline and their first
//!   and second fundamental forms, plus the rescaled forms of the bent strip
//!   ([`ruled_surface`]);
//! * strip bending energies and the convergence harness comparing them with
//!   the limit functional along width/frequency-coupled sequences
//!   ([`energy`]);
//! * boundary-constrained minimisation of the limit functional, including the
//!   closed-ribbon (Moebius) preset ([`solver`]).
//!
//! All computations are deterministic: fixed grids, fixed quadrature, no
//! internal randomness.

pub mod energy;
pub mod frames;
pub mod geometry;
pub mod grid;
pub mod limit_energy;
pub mod quadform;
pub mod relaxation;
pub mod ruled_surface;
// pub mod solver;
mod spline;

use thiserror::Error;

/// Errors reported by the library.
///
/// `Invalid*` variants indicate rejected input (the caller can fix the data);
/// the remaining variants indicate a numerical procedure that failed to meet
/// its contract and carry enough context to diagnose the failure.
#[derive(Debug, Error)]
pub enum RibbonError {
    /// Input data violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A strip half-width exceeds what the reference chart supports.
    #[error(
        "strip half-width {half_width:.6} overlaps the chart near t = {location:.6} \
         (|curvature| = {curvature:.6}, admissible width limit {eps_max:.6})"
    )]
    ChartOverlap {
        half_width: f64,
        location: f64,
        curvature: f64,
        eps_max: f64,
    },

    /// The bending tensor is not positive definite.
    #[error("bending tensor is not positive definite (smallest eigenvalue {min_eigenvalue:.6e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    /// An iterative procedure stopped without reaching its tolerance.
    #[error("{what} did not converge: best residual {best_residual:.6e} after {iterations} iterations (tolerance {tolerance:.6e})")]
    ConvergenceFailure {
        what: String,
        best_residual: f64,
        iterations: usize,
        tolerance: f64,
    },

    /// A configuration requests a regime the construction does not cover.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, RibbonError>;


pub use energy::{
    f_hat, f_relaxed, gamma_sweep, strip_energy, EnergyReport, EnergyValue, SweepOptions,
};
pub use frames::{
    framed_curve_from, induced_boundary, is_admissible, is_nondegenerate, solve_frame,
    AdmissibilityReport, BoundaryData, Field1, FramedCurve, MembershipReport, RotationPath,
    SkewField,
};
pub use geometry::{
    build_reference, dual_directors, CurveSpec, ReferenceCurve, StripChart,
};
pub use grid::Grid;
pub use limit_energy::{limit_functional, qbar, FrustrationField, LimitTrace, QbarBranch, QbarResult};
pub use quadform::{
    build_density, moving_basis, plane_coefficients, q_star, MaterialSpec, MovingBasis,
    RelaxedDensity, SymMat2,
};
pub use relaxation::{
    avoid_planes, build_recovery, correct_endpoints, laminate_split, pc_approx_sign,
    CorrectionResult, LaminateSplit, PcField, RecoveryFields, RecoveryOptions, SymField2,
};
pub use ruled_surface::{
    build_isometry, chart_width, check_boundary_conditions, export_obj, export_vtk,
    fundamental_forms, rescaled_forms, validate_developable, BoundaryReport, FormsGrid,
    RescaledForms, RuledSurface, RulingData,
};



