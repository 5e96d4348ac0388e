//! Rotation frames along the midline: the ODE `R' = A R` on SO(3), its
//! fourth-order Lie-group integrator, and the admissibility conditions that
//! tie a frame to affine boundary data.
//!
//! The generator of a framed ribbon is the skew field
//!
//! ```text
//!         [  0    k    A13 ]
//! A(t) =  [ -k    0    A23 ]
//!         [ -A13 -A23   0  ]
//! ```
//!
//! whose `(1,2)` entry is pinned to the reference curvature `k(t)`; `A13`
//! and `A23` are the bending and twist-shear moments.  The directors are the
//! rows of `R`: `d_i = R^T e_i`, the surface tangent along the midline is
//! `d1`, and the midline deformation is `y(t) = ∫_0^t d1`.

use crate::geometry::ReferenceCurve;
use crate::grid::{cumulative_quadrature_vec3, Grid};
use crate::{Result, RibbonError};
use nalgebra::{Matrix3, Vector3};
use std::sync::Arc;

/// Scalar field on the midline: closed forms where possible, closures
/// otherwise.
#[derive(Clone)]
pub enum Field1 {
    Zero,
    Const(f64),
    Func(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Field1 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Field1::Zero => write!(f, "Field1::Zero"),
            Field1::Const(c) => write!(f, "Field1::Const({c})"),
            Field1::Func(_) => write!(f, "Field1::Func(..)"),
        }
    }
}

impl Field1 {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Field1::Zero => 0.0,
            Field1::Const(c) => *c,
            Field1::Func(f) => f(t),
        }
    }

    /// Piecewise-linear interpolant of nodal samples on a grid.
    pub fn from_samples_linear(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nodes() {
            return Err(RibbonError::InvalidInput(format!(
                "sample count {} does not match the grid ({} nodes)",
                values.len(),
                grid.nodes()
            )));
        }
        Ok(Field1::Func(Arc::new(move |t: f64| {
            let h = grid.h();
            let cell = grid.cell_of(t);
            let w = ((t - grid.t(cell)) / h).clamp(0.0, 1.0);
            values[cell] * (1.0 - w) + values[cell + 1] * w
        })))
    }
}

/// Skew generator field of the frame ODE.
#[derive(Debug, Clone)]
pub struct SkewField {
    /// The `(1,2)` entry: the reference curvature.
    pub curvature: Field1,
    /// Bending moment `A13`.
    pub a13: Field1,
    /// Twist-shear moment `A23`.
    pub a23: Field1,
    /// Parameters where the field is not smooth; integration steps never
    /// straddle them.
    pub breaks: Vec<f64>,
}

impl SkewField {
    pub fn new(curvature: Field1, a13: Field1, a23: Field1) -> Self {
        Self {
            curvature,
            a13,
            a23,
            breaks: Vec::new(),
        }
    }

    pub fn with_breaks(mut self, mut breaks: Vec<f64>) -> Self {
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        self.breaks = breaks;
        self
    }

    /// The generator matrix at `t`.
    pub fn matrix_at(&self, t: f64) -> Matrix3<f64> {
        let k = self.curvature.eval(t);
        let a13 = self.a13.eval(t);
        let a23 = self.a23.eval(t);
        Matrix3::new(
            0.0, k, a13, //
            -k, 0.0, a23, //
            -a13, -a23, 0.0,
        )
    }

    /// Rotation vector (axial part) of the generator at `t`.
    fn omega_at(&self, t: f64) -> Vector3<f64> {
        let k = self.curvature.eval(t);
        let a13 = self.a13.eval(t);
        let a23 = self.a23.eval(t);
        Vector3::new(-a23, a13, -k)
    }
}

/// Skew matrix of a rotation vector: `hat(w) x = w × x`.
pub(crate) fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -w.z, w.y, //
        w.z, 0.0, -w.x, //
        -w.y, w.x, 0.0,
    )
}

/// Rotation vector of a skew matrix (inverse of [`hat`]).
pub(crate) fn unhat(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `exp(hat(w))` by the Rodrigues formula with series fallback near zero.
pub fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-4 {
        // sin(t)/t and (1-cos t)/t^2 by series; error below 1e-24.
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let wh = hat(w);
    Matrix3::identity() + wh * a + wh * wh * b
}

/// Rotation vector of a rotation matrix (inverse of [`rodrigues`]).
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let tr = r.trace();
    let cos_theta = ((tr - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let axial = unhat(&((r - r.transpose()) * 0.5));
    if theta < 1e-6 {
        // log R ≈ axial part for small angles.
        axial
    } else if theta > std::f64::consts::PI - 1e-4 {
        // Near a half turn the axial part degenerates.  R + I = 2 cos θ I +
        // 2(1 - cos θ) a a^T up to O(π - θ), so every column of R + I is
        // nearly parallel to the axis; take the largest one.
        let m = r + Matrix3::identity();
        let mut best = 0usize;
        for j in 1..3 {
            if m.column(j).norm() > m.column(best).norm() {
                best = j;
            }
        }
        let mut axis: Vector3<f64> = m.column(best).into();
        axis /= axis.norm();
        // Orient along the (possibly tiny) axial part; at exactly θ = π the
        // two signs give the same rotation.
        if axis.dot(&axial) < 0.0 {
            axis = -axis;
        }
        axis * theta
    } else {
        axial * (theta / theta.sin())
    }
}

/// `dexp_w(v) = v + (1-cos θ)/θ² w×v + (θ-sin θ)/θ³ w×(w×v)`:
/// the right-trivialised differential of the exponential, satisfying
/// `d/ds exp(hat(w + s v)) = hat(dexp_w(v)) · exp(hat(w))` at `s = 0`.
pub(crate) fn dexp(w: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (c1, c2) = if theta < 1e-4 {
        (
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
            1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
        )
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let wxv = w.cross(v);
    v + wxv * c1 + w.cross(&wxv) * c2
}

const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_88; // sqrt(3)/6

/// Generator of one fourth-order Magnus step over `[a, b]`.
///
/// Two-point Gauss collocation: `Ω = h/2 (A1 + A2) + √3 h²/12 [A2, A1]`,
/// and the step is `R(b) = exp(Ω) R(a)`.
fn magnus_generator(field: &SkewField, a: f64, b: f64) -> Vector3<f64> {
    let h = b - a;
    let c1 = a + (0.5 - GAUSS_OFFSET) * h;
    let c2 = a + (0.5 + GAUSS_OFFSET) * h;
    let w1 = field.omega_at(c1);
    let w2 = field.omega_at(c2);
    // [hat(w2), hat(w1)] = hat(w2 × w1).
    (w1 + w2) * (h / 2.0) + w2.cross(&w1) * (3.0f64.sqrt() * h * h / 12.0)
}

/// Advances `r` from `a` to `b`, splitting at the field's breakpoints.
fn advance(field: &SkewField, a: f64, b: f64, r: &Matrix3<f64>) -> Matrix3<f64> {
    let mut cuts = vec![a, b];
    for &x in &field.breaks {
        if x > a + 1e-14 && x < b - 1e-14 {
            cuts.push(x);
        }
    }
    cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mut cur = *r;
    for w in cuts.windows(2) {
        if w[1] - w[0] < 1e-15 {
            continue;
        }
        let omega = magnus_generator(field, w[0], w[1]);
        cur = rodrigues(&omega) * cur;
    }
    cur
}

/// Solution path of `R' = A R`, `R(0) = I`, on a grid.
#[derive(Clone)]
pub struct RotationPath {
    pub grid: Grid,
    /// Rotation at each node.
    pub rot: Vec<Matrix3<f64>>,
    field: SkewField,
}

impl std::fmt::Debug for RotationPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RotationPath")
            .field("grid", &self.grid)
            .finish()
    }
}

impl RotationPath {
    /// Rotation at the final parameter.
    pub fn endpoint(&self) -> &Matrix3<f64> {
        self.rot.last().unwrap()
    }

    /// Director `d_i(node) = R^T e_i` (rows of `R`).
    pub fn director(&self, node: usize, i: usize) -> Vector3<f64> {
        self.rot[node].row(i).transpose()
    }

    /// Continuous evaluation between nodes: one Magnus sub-step from the
    /// nearest node on the left.
    pub fn eval(&self, t: f64) -> Matrix3<f64> {
        let t = t.clamp(0.0, self.grid.len());
        let node = self.grid.cell_of(t);
        let t0 = self.grid.t(node);
        if (t - t0).abs() < 1e-14 {
            return self.rot[node];
        }
        let t1 = self.grid.t(node + 1);
        if (t - t1).abs() < 1e-14 {
            return self.rot[node + 1];
        }
        advance(&self.field, t0, t, &self.rot[node])
    }

    /// Director field at an arbitrary parameter.
    pub fn director_at(&self, t: f64, i: usize) -> Vector3<f64> {
        self.eval(t).row(i).transpose()
    }

    /// Midline deformation `y(t) = ∫_0^t d1`, sampled at the nodes.
    pub fn translation(&self) -> Vec<Vector3<f64>> {
        let d1: Vec<Vector3<f64>> = (0..self.grid.nodes())
            .map(|i| self.director(i, 0))
            .collect();
        cumulative_quadrature_vec3(&d1, self.grid.h())
    }

    /// Endpoint of the midline deformation.
    pub fn gamma(&self) -> Vector3<f64> {
        *self.translation().last().unwrap()
    }

    /// Largest orthogonality defect `‖R^T R − I‖_F` over the nodes.
    pub fn orthogonality_defect(&self) -> f64 {
        self.rot
            .iter()
            .map(|r| (r.transpose() * r - Matrix3::identity()).norm())
            .fold(0.0, f64::max)
    }

    pub fn field(&self) -> &SkewField {
        &self.field
    }
}

/// Solves `R' = A R`, `R(0) = I` with the fourth-order Magnus scheme.
pub fn solve_frame(field: &SkewField, grid: &Grid) -> RotationPath {
    let mut rot = Vec::with_capacity(grid.nodes());
    let mut r = Matrix3::identity();
    rot.push(r);
    for i in 0..grid.cells() {
        r = advance(field, grid.t(i), grid.t(i + 1), &r);
        if (i + 1) % 128 == 0 {
            // One Newton orthogonalisation step R <- R (3I - R^T R)/2 keeps
            // the accumulated round-off drift at machine precision.
            let gram = r.transpose() * r;
            r *= Matrix3::identity() * 1.5 - gram * 0.5;
        }
        rot.push(r);
    }
    RotationPath {
        grid: *grid,
        rot,
        field: field.clone(),
    }
}

/// Affine boundary data: prescribed endpoint displacement and rotation.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    /// Target midline endpoint `y(l)`.
    pub y_bar: Vector3<f64>,
    /// Target rotation `R̄` whose rows are the prescribed end directors.
    pub r_bar: Matrix3<f64>,
}

impl BoundaryData {
    pub fn new(y_bar: Vector3<f64>, r_bar: Matrix3<f64>) -> Result<Self> {
        let defect = (r_bar.transpose() * r_bar - Matrix3::identity()).norm();
        if defect > 1e-8 || r_bar.determinant() < 0.0 {
            return Err(RibbonError::InvalidInput(format!(
                "boundary rotation is not special orthogonal \
                 (orthogonality defect {defect:.3e}, det {:.6})",
                r_bar.determinant()
            )));
        }
        Ok(Self { y_bar, r_bar })
    }

    /// Prescribed end directors (rows of `R̄`).
    pub fn director(&self, i: usize) -> Vector3<f64> {
        self.r_bar.row(i).transpose()
    }
}

/// The reference's embedded end rotation `E(t) = (B'(t) | N(t) | e3)`.
pub fn embedded_end(reference: &ReferenceCurve, t: f64) -> Matrix3<f64> {
    let tg = reference.tangent_at(t);
    let nm = reference.normal_at(t);
    Matrix3::new(
        tg.x, nm.x, 0.0, //
        tg.y, nm.y, 0.0, //
        0.0, 0.0, 1.0,
    )
}

/// Endpoint rotation an admissible frame must reach:
/// `R(l) = E(l)^T R̄`.
pub fn target_rotation(reference: &ReferenceCurve, bd: &BoundaryData) -> Matrix3<f64> {
    embedded_end(reference, reference.length()).transpose() * bd.r_bar
}

/// Boundary data a generator field itself attains: `ȳ = Γ` and
/// `R̄ = E(l) R(l)`, so the field is admissible for the result by
/// construction.
pub fn induced_boundary(
    field: &SkewField,
    reference: &ReferenceCurve,
    grid: &Grid,
) -> Result<BoundaryData> {
    let path = solve_frame(field, grid);
    let r_bar = embedded_end(reference, reference.length()) * *path.endpoint();
    BoundaryData::new(path.gamma(), r_bar)
}

/// Residuals of the affine boundary conditions for a generator field.
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    /// `‖R(l) − E(l)^T R̄‖_F`.
    pub rot_residual: f64,
    /// `|Γ − ȳ|` with `Γ = ∫_0^l d1`.
    pub trans_residual: f64,
    /// Whether both residuals are below `tol`.
    pub admissible: bool,
    pub tol: f64,
}

/// Checks the affine endpoint conditions for a generator field.
pub fn is_admissible(
    field: &SkewField,
    reference: &ReferenceCurve,
    bd: &BoundaryData,
    grid: &Grid,
    tol: f64,
) -> AdmissibilityReport {
    let path = solve_frame(field, grid);
    let rot_residual = (path.endpoint() - target_rotation(reference, bd)).norm();
    let trans_residual = (path.gamma() - bd.y_bar).norm();
    AdmissibilityReport {
        rot_residual,
        trans_residual,
        admissible: rot_residual <= tol && trans_residual <= tol,
        tol,
    }
}

/// Fraction of `[lo, hi]` where the moment pair `(A13, A23)` is away from
/// zero (sampled densely).  The correction construction needs this to be
/// positive.
pub fn is_nondegenerate(field: &SkewField, lo: f64, hi: f64) -> f64 {
    let n = 512usize;
    let mut hit = 0usize;
    for i in 0..=n {
        let t = lo + (hi - lo) * i as f64 / n as f64;
        let a13 = field.a13.eval(t);
        let a23 = field.a23.eval(t);
        if a13.abs() + a23.abs() > 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / (n + 1) as f64
}

/// Full membership report of a generator field in the admissible class of a
/// reference and boundary data.
#[derive(Debug, Clone)]
pub struct MembershipReport {
    pub admissibility: AdmissibilityReport,
    /// Sup deviation of the generator's `(1,2)` entry from the reference
    /// curvature.
    pub curvature_deviation: f64,
    /// Fraction of the middle half where the moments are nonzero.
    pub nondegenerate_measure: f64,
    pub member: bool,
}

/// Checks generator membership: curvature pinning, affine endpoint
/// conditions and nondegeneracy of the moments on the middle half.
pub fn check_membership(
    field: &SkewField,
    reference: &ReferenceCurve,
    bd: &BoundaryData,
    grid: &Grid,
    tol: f64,
) -> MembershipReport {
    let admissibility = is_admissible(field, reference, bd, grid, tol);
    let mut curvature_deviation = 0.0f64;
    let n = 512usize;
    for i in 0..=n {
        let t = reference.length() * i as f64 / n as f64;
        curvature_deviation =
            curvature_deviation.max((field.curvature.eval(t) - reference.k_at(t)).abs());
    }
    let l = reference.length();
    let nondegenerate_measure = is_nondegenerate(field, l / 4.0, 3.0 * l / 4.0);
    let member =
        admissibility.admissible && curvature_deviation <= tol && nondegenerate_measure > 0.0;
    MembershipReport {
        admissibility,
        curvature_deviation,
        nondegenerate_measure,
        member,
    }
}

/// Framed deformation of the midline induced by bending and twist moments.
#[derive(Debug, Clone)]
pub struct FramedCurve {
    pub grid: Grid,
    /// Midline deformation at the nodes.
    pub y: Vec<Vector3<f64>>,
    /// Director triad at the nodes.
    pub d1: Vec<Vector3<f64>>,
    pub d2: Vec<Vector3<f64>>,
    pub d3: Vec<Vector3<f64>>,
    /// Moment samples.
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    /// The solved rotation path.
    pub path: RotationPath,
    /// Orientation flag of the transversal director: `-1` builds the
    /// reflected frame `d2 -> -d2`, `d3 -> -d3`.
    pub orientation: f64,
}

/// Builds the framed curve of moment fields on a reference midline.
///
/// With orthonormal reference directors the generator moments coincide with
/// `(mu, tau)`.  `negative_orientation` selects the mirror frame across the
/// reference plane (`y -> S y`, `(d1, d2, d3) -> (S d1, S d2, -S d3)` with
/// `S = diag(1, 1, -1)`): the transversal director pair is completed with
/// the opposite sign, producing the opposite-chirality deformation of the
/// same moment data.
pub fn framed_curve_from(
    mu: &Field1,
    tau: &Field1,
    reference: &ReferenceCurve,
    negative_orientation: bool,
) -> FramedCurve {
    let orientation = if negative_orientation { -1.0 } else { 1.0 };
    let grid = reference.grid;
    let kf = {
        let rc = reference.clone();
        Field1::Func(Arc::new(move |t| rc.k_at(t)))
    };
    let field = SkewField::new(kf, mu.clone(), tau.clone());
    let path = solve_frame(&field, &grid);
    let s = Vector3::new(1.0, 1.0, orientation);
    let y = path
        .translation()
        .into_iter()
        .map(|v| v.component_mul(&s))
        .collect();
    let mut d1 = Vec::with_capacity(grid.nodes());
    let mut d2 = Vec::with_capacity(grid.nodes());
    let mut d3 = Vec::with_capacity(grid.nodes());
    for i in 0..grid.nodes() {
        let r = &path.rot[i];
        d1.push(r.row(0).transpose().component_mul(&s));
        d2.push(r.row(1).transpose().component_mul(&s));
        d3.push(r.row(2).transpose().component_mul(&s) * orientation);
    }
    let mu_s = grid.sample(|t| mu.eval(t));
    let tau_s = grid.sample(|t| tau.eval(t));
    FramedCurve {
        grid,
        y,
        d1,
        d2,
        d3,
        mu: mu_s,
        tau: tau_s,
        path,
        orientation,
    }
}
