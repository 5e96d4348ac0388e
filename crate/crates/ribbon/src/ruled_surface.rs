//! Developable isometric immersions of the strip built from ruling data.
//!
//! A recovery field factors as `M_n = λ_n p_n ⊗ p_n`; the associated surface
//! is ruled: through each midline point `B(t)` runs the straight segment of
//! direction `p_n⊥(t)` and the deformation is affine along it,
//!
//! ```text
//!     u(B(t) + s p⊥(t)) = β(t) + s [ (p⊥·B′)(t) d₁(t) + (p⊥·N)(t) d₂(t) ],
//! ```
//!
//! with `β = ∫ d₁` the deformed midline and `(d₁, d₂, d₃)` the frame solved
//! from the generator moments.  On the chart `Φ(t, s) = B(t) + s p⊥(t)` the
//! gradient of `u` is `d₁ ⊗ B′ + d₂ ⊗ N`, independent of `s`, which makes
//! the map an exact isometry with zero Gaussian curvature wherever the chart
//! is injective.  This module computes a certified chart half-width,
//! constructs the surface, differentiates it into first and second
//! fundamental forms, restricts those forms to a narrow strip in the
//! rescaled variables, and checks the clamped/assigned boundary traces.

use crate::frames::{BoundaryData, RotationPath};
use crate::geometry::{rot90, ReferenceCurve, StripChart};
use crate::grid::{fd_weights, Grid};
use crate::quadform::SymMat2;
use crate::relaxation::RecoveryFields;
use crate::{Result, RibbonError};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

/// Transversal sample count of constructed surfaces (odd, so the centerline
/// `s = 0` is a grid row).
const S_COUNT: usize = 9;

type Scalar1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Plane1 = Arc<dyn Fn(f64) -> Vector2<f64> + Send + Sync>;

/// Amplitude and direction profile `(λ, p)` of a ruled construction.
///
/// `p` is a unit field in fixed chart coordinates, never orthogonal to the
/// midline tangent; `breaks` lists the parameters where the profile switches
/// smooth pieces, so that differentiation never straddles them.
#[derive(Clone)]
pub struct RulingData {
    lambda: Scalar1,
    p: Plane1,
    breaks: Vec<f64>,
}

impl std::fmt::Debug for RulingData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RulingData")
            .field("breaks", &self.breaks.len())
            .finish()
    }
}

impl RulingData {
    /// The trivial profile: `λ ≡ 0`, rulings orthogonal to the midline.
    pub fn tangent_aligned(reference: &ReferenceCurve) -> Self {
        let rc = reference.clone();
        Self {
            lambda: Arc::new(|_| 0.0),
            p: Arc::new(move |t| rc.tangent_at(t)),
            breaks: Vec::new(),
        }
    }

    /// Profile of a recovery field (`λ_n`, `p_n`, its segment edges).
    pub fn from_recovery(rec: &RecoveryFields) -> Self {
        let r1 = rec.clone();
        let r2 = rec.clone();
        Self {
            lambda: Arc::new(move |t| r1.lambda_at(t)),
            p: Arc::new(move |t| r2.p_at(t)),
            breaks: rec.breaks.clone(),
        }
    }

    /// Constant-angle profile `p = cos θ B′ + sin θ N` with amplitude `λ`.
    pub fn constant_angle(reference: &ReferenceCurve, lambda: f64, theta: f64) -> Self {
        let rc = reference.clone();
        Self {
            lambda: Arc::new(move |_| lambda),
            p: Arc::new(move |t| {
                rc.tangent_at(t) * theta.cos() + rc.normal_at(t) * theta.sin()
            }),
            breaks: Vec::new(),
        }
    }

    pub fn lambda_at(&self, t: f64) -> f64 {
        (self.lambda)(t)
    }

    pub fn p_at(&self, t: f64) -> Vector2<f64> {
        (self.p)(t)
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    /// Piece bounds `[lo, hi]` of the smooth piece containing `t`.
    fn piece(&self, t: f64, len: f64) -> (f64, f64) {
        let mut lo = 0.0;
        let mut hi = len;
        for &b in &self.breaks {
            if b <= t && b > lo {
                lo = b;
            }
            if b >= t && b < hi {
                hi = b;
                break;
            }
        }
        (lo, hi)
    }

    /// Max slope `‖p′‖` over the profile, sampled piece by piece.
    fn max_slope(&self, len: f64) -> f64 {
        let mut cuts = vec![0.0, len];
        cuts.extend(self.breaks.iter().copied().filter(|&b| b > 0.0 && b < len));
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        let mut worst = 0.0f64;
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi - lo < 1e-13 {
                continue;
            }
            let samples = 64;
            let delta = ((hi - lo) / 256.0).min(1e-6);
            for i in 0..=samples {
                let t = lo + (hi - lo) * i as f64 / samples as f64;
                let a = (t - delta).max(lo);
                let b = (t + delta).min(hi);
                if b - a < 1e-15 {
                    continue;
                }
                let slope = (self.p_at(b) - self.p_at(a)).norm() / (b - a);
                worst = worst.max(slope);
            }
        }
        worst
    }
}

/// Certified half-width of the ruled chart `Φ(t, s) = B(t) + s p⊥(t)`.
///
/// Starting from `η = 0.5 c₀ / max(1, ‖p′‖_∞ + ‖k‖_∞)` with
/// `c₀ = min p·B′`, the Jacobian determinant of `Φ` is verified to stay
/// above `c₀/4` on a scan of `[0, ℓ] × {−η, 0, η}`; on failure the width is
/// halved, up to ten times.
pub fn chart_width(reference: &ReferenceCurve, ruling: &RulingData) -> Result<f64> {
    let len = reference.length();
    let scan = 2048usize;
    let mut c0 = f64::INFINITY;
    for i in 0..=scan {
        let t = len * i as f64 / scan as f64;
        c0 = c0.min(ruling.p_at(t).dot(&reference.tangent_at(t)));
    }
    if !(c0 > 1e-9) {
        return Err(RibbonError::InvalidInput(format!(
            "ruling direction tilts (near) orthogonal to the midline: min p·B' = {c0:.3e}"
        )));
    }
    let slope = ruling.max_slope(len);
    let mut eta = 0.5 * c0 / (slope + reference.k_sup).max(1.0);
    let floor = 0.25 * c0;
    let mut bad_t = 0.0;
    for _ in 0..=10 {
        let mut ok = true;
        'scan: for i in 0..=scan {
            let t = len * i as f64 / scan as f64;
            let (lo, hi) = ruling.piece(t, len);
            let delta = ((hi - lo) / 256.0).min(1e-6).max(1e-12);
            let a = (t - delta).max(lo);
            let b = (t + delta).min(hi);
            let dp_perp = (rot90(ruling.p_at(b)) - rot90(ruling.p_at(a))) / (b - a).max(1e-15);
            let tangent = reference.tangent_at(t);
            let p_perp = rot90(ruling.p_at(t));
            for s in [-eta, 0.0, eta] {
                let phi_t = tangent + dp_perp * s;
                let det = phi_t.x * p_perp.y - phi_t.y * p_perp.x;
                if det < floor {
                    ok = false;
                    bad_t = t;
                    break 'scan;
                }
            }
        }
        if ok {
            return Ok(eta);
        }
        eta *= 0.5;
    }
    // Ten halvings without a certified width: the rulings cross too close to
    // the midline for any useful strip.
    Err(RibbonError::ChartOverlap {
        half_width: eta,
        location: bad_t,
        curvature: reference.k_at(bad_t),
        eps_max: 2.0 * c0 * eta,
    })
}

/// One-dimensional differentiation stencil attached to a grid node.
struct Stencil {
    idx: Vec<usize>,
    w1: Vec<f64>,
    w2: Vec<f64>,
}

/// Builds per-node stencils on a uniform grid that avoid straddling breaks.
///
/// Each node differentiates over up to seven neighbours restricted to the
/// smooth piece containing it; pieces too thin to hold five nodes widen the
/// window across their edges (locally reduced order instead of a hard
/// failure).
fn piecewise_stencils(ts: &[f64], len: f64, breaks: &[f64]) -> Vec<Stencil> {
    let n = ts.len();
    let mut cuts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&b| b > 1e-13 && b < len - 1e-13)
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    let tol = 1e-12 * len.max(1.0);
    let mut out = Vec::with_capacity(n);
    for (i, &t) in ts.iter().enumerate() {
        // Piece bounds around t; nodes exactly on a break belong to both
        // sides, pick the wider one.
        let mut lo = 0.0;
        let mut hi = len;
        for &b in &cuts {
            if b < t - tol {
                lo = b;
            } else if (b - t).abs() <= tol {
                let next = cuts
                    .iter()
                    .copied()
                    .find(|&c| c > b + tol)
                    .unwrap_or(len);
                let prev = cuts
                    .iter()
                    .rev()
                    .copied()
                    .find(|&c| c < b - tol)
                    .unwrap_or(0.0);
                if b - prev >= next - b {
                    hi = b;
                } else {
                    lo = b;
                }
                break;
            } else {
                hi = b;
                break;
            }
        }
        // Node index range inside the piece (inclusive of edge nodes).
        let h = if n > 1 { ts[1] - ts[0] } else { 1.0 };
        let jlo = ((lo - tol) / h).ceil().max(0.0) as usize;
        let jhi = (((hi + tol) / h).floor() as usize).min(n - 1);
        let (mut jlo, mut jhi) = if jlo <= jhi { (jlo, jhi) } else { (i, i) };
        // Widen thin pieces to at least five nodes.
        while jhi - jlo + 1 < 5 {
            if jlo > 0 {
                jlo -= 1;
            }
            if jhi < n - 1 {
                jhi += 1;
            }
            if jlo == 0 && jhi == n - 1 {
                break;
            }
        }
        // Seven-node window around i inside [jlo, jhi].
        let width = 7usize.min(jhi - jlo + 1);
        let start = i
            .saturating_sub(width / 2)
            .clamp(jlo, jhi + 1 - width);
        let idx: Vec<usize> = (start..start + width).collect();
        let xs: Vec<f64> = idx.iter().map(|&j| ts[j]).collect();
        let w1 = fd_weights(t, &xs, 1);
        let w2 = fd_weights(t, &xs, 2);
        out.push(Stencil { idx, w1, w2 });
    }
    out
}

/// Differentiates a sampled `Vector3` profile with prebuilt stencils.
fn apply_stencils(
    stencils: &[Stencil],
    values: &dyn Fn(usize) -> Vector3<f64>,
    second: bool,
) -> Vec<Vector3<f64>> {
    stencils
        .iter()
        .map(|s| {
            let w = if second { &s.w2 } else { &s.w1 };
            s.idx
                .iter()
                .zip(w)
                .fold(Vector3::zeros(), |acc, (&j, &c)| acc + values(j) * c)
        })
        .collect()
}

/// Geometry backing a sampled surface.
enum SurfaceGeometry {
    /// Ruled construction over a reference chart.
    Ruled {
        reference: ReferenceCurve,
        ruling: RulingData,
        path: RotationPath,
        /// Deformed midline at the nodes.
        beta: Vec<Vector3<f64>>,
    },
    /// Directly sampled map over the plane rectangle (identity chart).
    Plane,
}

/// A sampled surface over the chart rectangle `[0, ℓ] × [−η, η]`.
///
/// Constructed surfaces store their vertices on the tensor grid of the
/// midline grid and `S_COUNT` transversal samples; the centerline `s = 0` is
/// always a grid row and equals the deformed midline exactly for ruled
/// constructions.
pub struct RuledSurface {
    /// Chart half-width.
    pub eta: f64,
    /// Midline parameter grid.
    pub grid: Grid,
    /// Transversal sample count (odd).
    pub s_count: usize,
    /// Profile break parameters (differentiation never straddles them).
    pub breaks: Vec<f64>,
    verts: Vec<Vector3<f64>>,
    geometry: SurfaceGeometry,
}

impl std::fmt::Debug for RuledSurface {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RuledSurface")
            .field("eta", &self.eta)
            .field("grid", &self.grid)
            .field("s_count", &self.s_count)
            .finish()
    }
}

impl RuledSurface {
    /// Transversal coordinate of sample row `j`.
    pub fn s_at(&self, j: usize) -> f64 {
        debug_assert!(j < self.s_count);
        -self.eta + 2.0 * self.eta * j as f64 / (self.s_count - 1) as f64
    }

    /// Vertex at midline node `i`, transversal row `j`.
    pub fn vertex(&self, i: usize, j: usize) -> Vector3<f64> {
        self.verts[i * self.s_count + j]
    }

    /// The chart point `Φ(t, s)` in the plane.
    pub fn phi(&self, t: f64, s: f64) -> Vector2<f64> {
        match &self.geometry {
            SurfaceGeometry::Ruled { reference, ruling, .. } => {
                reference.b_at(t) + rot90(ruling.p_at(t)) * s
            }
            SurfaceGeometry::Plane => Vector2::new(t, s),
        }
    }

    /// Exact evaluation in chart coordinates (ruled surfaces only).
    pub fn u_chart(&self, t: f64, s: f64) -> Vector3<f64> {
        match &self.geometry {
            SurfaceGeometry::Ruled { path, ruling, reference, beta, .. } => {
                let i0 = self.grid.cell_of(t);
                let t0 = self.grid.t(i0);
                // β(t) = β(t0) + ∫_{t0}^t d₁, three-point Gauss on the gap.
                let mut b = beta[i0];
                let gap = t - t0;
                if gap.abs() > 1e-15 {
                    let half = 0.5 * gap;
                    let mid = t0 + half;
                    let r = half * (3.0f64 / 5.0).sqrt();
                    let d1 = |x: f64| path.eval(x).row(0).transpose();
                    b += (d1(mid - r) * (5.0 / 9.0)
                        + d1(mid) * (8.0 / 9.0)
                        + d1(mid + r) * (5.0 / 9.0))
                        * half;
                }
                b + ruling_vector(reference, ruling, path, t) * s
            }
            SurfaceGeometry::Plane => {
                panic!("u_chart needs the ruled construction; directly sampled surfaces only expose vertices")
            }
        }
    }

    /// Builds a surface by sampling `f` over `[0, ℓ] × [−η, η]`.
    ///
    /// The chart is the identity: `(t, s)` are planar coordinates.  Intended
    /// for fixtures (known surfaces) exercising the form computations.
    pub fn from_map(
        grid: Grid,
        eta: f64,
        f: impl Fn(f64, f64) -> Vector3<f64>,
    ) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(RibbonError::InvalidInput(format!(
                "chart half-width must be positive, got {eta}"
            )));
        }
        let s_count = S_COUNT;
        let mut verts = Vec::with_capacity(grid.nodes() * s_count);
        for i in 0..grid.nodes() {
            for j in 0..s_count {
                let s = -eta + 2.0 * eta * j as f64 / (s_count - 1) as f64;
                verts.push(f(grid.t(i), s));
            }
        }
        Ok(Self {
            eta,
            grid,
            s_count,
            breaks: Vec::new(),
            verts,
            geometry: SurfaceGeometry::Plane,
        })
    }

    /// The deformed midline at the grid nodes.
    pub fn centerline(&self) -> Vec<Vector3<f64>> {
        let mid = (self.s_count - 1) / 2;
        (0..self.grid.nodes()).map(|i| self.vertex(i, mid)).collect()
    }
}

/// Spatial ruling direction `(p⊥·B′) d₁ + (p⊥·N) (d₃ ∧ d₁)` at `t`.
fn ruling_vector(
    reference: &ReferenceCurve,
    ruling: &RulingData,
    path: &RotationPath,
    t: f64,
) -> Vector3<f64> {
    let p_perp = rot90(ruling.p_at(t));
    let r = path.eval(t);
    let d1 = r.row(0).transpose();
    let d3 = r.row(2).transpose();
    let d2 = d3.cross(&d1);
    d1 * p_perp.dot(&reference.tangent_at(t)) + d2 * p_perp.dot(&reference.normal_at(t))
}

/// Builds the ruled developable surface of a frame and ruling profile.
///
/// `path` must solve the frame system for the generator moments consistent
/// with `(λ, p)`: `a13 = λ (p·B′)²` and `a23 = λ (p·B′)(p·N)`; this is
/// checked on a scan and mismatches are rejected.  The chart half-width is
/// certified by [`chart_width`] first.
pub fn build_isometry(
    reference: &ReferenceCurve,
    path: &RotationPath,
    ruling: &RulingData,
) -> Result<RuledSurface> {
    let len = reference.length();
    if (path.grid.len() - len).abs() > 1e-9 * len.max(1.0) {
        return Err(RibbonError::InvalidInput(format!(
            "frame solved on length {} but the reference midline has length {len}",
            path.grid.len()
        )));
    }
    let defect = path.orthogonality_defect();
    if defect > 1e-8 {
        return Err(RibbonError::ConvergenceFailure {
            what: "frame integration lost orthogonality".into(),
            best_residual: defect,
            iterations: 0,
            tolerance: 1e-8,
        });
    }
    // Moment consistency of the frame generator with the ruling profile.
    let field = path.field();
    let mut worst = 0.0f64;
    let mut worst_t = 0.0;
    let scan = 257;
    for i in 0..scan {
        let t = len * (i as f64 + 0.5) / scan as f64;
        let lam = ruling.lambda_at(t);
        let p = ruling.p_at(t);
        let c = p.dot(&reference.tangent_at(t));
        let s = p.dot(&reference.normal_at(t));
        let r13 = (field.a13.eval(t) - lam * c * c).abs();
        let r23 = (field.a23.eval(t) - lam * c * s).abs();
        let r = r13.max(r23);
        if r > worst {
            worst = r;
            worst_t = t;
        }
    }
    if worst > 1e-7 {
        return Err(RibbonError::InvalidInput(format!(
            "frame moments do not match the ruling profile: defect {worst:.3e} at t = {worst_t:.6}"
        )));
    }
    let eta = chart_width(reference, ruling)?;
    let grid = path.grid;
    let beta = path.translation();
    let w: Vec<Vector3<f64>> = (0..grid.nodes())
        .map(|i| ruling_vector(reference, ruling, path, grid.t(i)))
        .collect();
    let s_count = S_COUNT;
    let mut verts = Vec::with_capacity(grid.nodes() * s_count);
    for i in 0..grid.nodes() {
        for j in 0..s_count {
            let s = -eta + 2.0 * eta * j as f64 / (s_count - 1) as f64;
            verts.push(beta[i] + w[i] * s);
        }
    }
    Ok(RuledSurface {
        eta,
        grid,
        s_count,
        breaks: ruling.breaks.clone(),
        verts,
        geometry: SurfaceGeometry::Ruled {
            reference: reference.clone(),
            ruling: ruling.clone(),
            path: path.clone(),
            beta,
        },
    })
}

/// First and second fundamental forms sampled on the surface grid.
pub struct FormsGrid {
    /// Midline grid and transversal count of the source surface.
    pub grid: Grid,
    pub s_count: usize,
    pub eta: f64,
    /// First fundamental form `(∇u)ᵀ(∇u)` per node.
    pub first: Vec<SymMat2>,
    /// Second fundamental form `ν·∂²u` per node.
    pub second: Vec<SymMat2>,
    /// Unit normal per node.
    pub normal: Vec<Vector3<f64>>,
    /// Max entrywise deviation of the first form from the identity.
    pub isometry_residual: f64,
    /// Max `|det Π|` over the nodes.
    pub gauss_residual: f64,
}

impl FormsGrid {
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * self.s_count + j
    }

    /// Bilinear sample of the second form at chart coordinates `(t, s)`.
    pub fn second_at(&self, t: f64, s: f64) -> SymMat2 {
        let (i, j, a, b) = self.locate(t, s);
        let lerp = |f: &dyn Fn(usize) -> f64| {
            (1.0 - a) * (1.0 - b) * f(self.node(i, j))
                + a * (1.0 - b) * f(self.node(i + 1, j))
                + (1.0 - a) * b * f(self.node(i, j + 1))
                + a * b * f(self.node(i + 1, j + 1))
        };
        SymMat2::new(
            lerp(&|n| self.second[n].m11),
            lerp(&|n| self.second[n].m12),
            lerp(&|n| self.second[n].m22),
        )
    }

    fn locate(&self, t: f64, s: f64) -> (usize, usize, f64, f64) {
        let i = self.grid.cell_of(t);
        let a = ((t - self.grid.t(i)) / self.grid.h()).clamp(0.0, 1.0);
        let ds = 2.0 * self.eta / (self.s_count - 1) as f64;
        let raw = ((s + self.eta) / ds).floor() as isize;
        let j = raw.clamp(0, self.s_count as isize - 2) as usize;
        let s_j = -self.eta + ds * j as f64;
        let b = ((s - s_j) / ds).clamp(0.0, 1.0);
        (i, j, a, b)
    }
}

/// Computes both fundamental forms of a sampled surface.
///
/// Derivatives are high-order finite differences: along the midline the
/// stencils avoid straddling profile breaks; transversally the surface is
/// affine (for ruled constructions) so any stencil is exact.  For ruled
/// surfaces the planar chart `Φ` enters through the chain rule; directly
/// sampled surfaces use the identity chart.
pub fn fundamental_forms(surface: &RuledSurface) -> Result<FormsGrid> {
    let nt = surface.grid.nodes();
    let ns = surface.s_count;
    let ts = surface.grid.ts();
    let len = surface.grid.len();
    let t_stencils = piecewise_stencils(&ts, len, &surface.breaks);
    let ss: Vec<f64> = (0..ns).map(|j| surface.s_at(j)).collect();
    let s_stencils: Vec<Stencil> = (0..ns)
        .map(|j| {
            let width = 7usize.min(ns);
            let start = j.saturating_sub(width / 2).min(ns - width);
            let idx: Vec<usize> = (start..start + width).collect();
            let xs: Vec<f64> = idx.iter().map(|&m| ss[m]).collect();
            let w1 = fd_weights(ss[j], &xs, 1);
            let w2 = fd_weights(ss[j], &xs, 2);
            Stencil { idx, w1, w2 }
        })
        .collect();

    // Chart ingredient samples along the midline.
    let (tangent, p_perp): (Vec<Vector3<f64>>, Vec<Vector3<f64>>) = match &surface.geometry {
        SurfaceGeometry::Ruled { reference, ruling, .. } => (
            ts.iter()
                .map(|&t| {
                    let v = reference.tangent_at(t);
                    Vector3::new(v.x, v.y, 0.0)
                })
                .collect(),
            ts.iter()
                .map(|&t| {
                    let v = rot90(ruling.p_at(t));
                    Vector3::new(v.x, v.y, 0.0)
                })
                .collect(),
        ),
        SurfaceGeometry::Plane => (
            vec![Vector3::new(1.0, 0.0, 0.0); nt],
            vec![Vector3::new(0.0, 1.0, 0.0); nt],
        ),
    };
    let (d_tangent, d_p_perp, dd_p_perp) = match &surface.geometry {
        SurfaceGeometry::Ruled { .. } => (
            apply_stencils(&t_stencils, &|i| tangent[i], false),
            apply_stencils(&t_stencils, &|i| p_perp[i], false),
            apply_stencils(&t_stencils, &|i| p_perp[i], true),
        ),
        // Identity chart: the coordinate frame is constant, keep its
        // derivatives exactly zero rather than differentiating constants.
        SurfaceGeometry::Plane => (
            vec![Vector3::zeros(); nt],
            vec![Vector3::zeros(); nt],
            vec![Vector3::zeros(); nt],
        ),
    };

    // Vertex derivatives: first in t (per row), then in s.
    let at = |i: usize, j: usize| surface.verts[i * ns + j];
    let mut u_t = vec![Vector3::zeros(); nt * ns];
    let mut u_tt = vec![Vector3::zeros(); nt * ns];
    for j in 0..ns {
        let col_t = apply_stencils(&t_stencils, &|i| at(i, j), false);
        let col_tt = apply_stencils(&t_stencils, &|i| at(i, j), true);
        for i in 0..nt {
            u_t[i * ns + j] = col_t[i];
            u_tt[i * ns + j] = col_tt[i];
        }
    }
    let mut first = vec![SymMat2::ZERO; nt * ns];
    let mut second = vec![SymMat2::ZERO; nt * ns];
    let mut normal = vec![Vector3::zeros(); nt * ns];
    let mut iso = 0.0f64;
    let mut gauss = 0.0f64;
    for i in 0..nt {
        for j in 0..ns {
            let st = &s_stencils[j];
            let fold = |vals: &dyn Fn(usize) -> Vector3<f64>, w: &[f64]| {
                st.idx
                    .iter()
                    .zip(w)
                    .fold(Vector3::zeros(), |acc, (&m, &c)| acc + vals(m) * c)
            };
            let u_s = fold(&|m| at(i, m), &st.w1);
            let u_ss = fold(&|m| at(i, m), &st.w2);
            let u_ts = fold(&|m| u_t[i * ns + m], &st.w1);
            let s = surface.s_at(j);
            // Chart derivatives (plane components only).
            let phi_t = tangent[i] + d_p_perp[i] * s;
            let phi_s = p_perp[i];
            let d_phi = Matrix2::new(phi_t.x, phi_s.x, phi_t.y, phi_s.y);
            let det = d_phi.determinant();
            if det.abs() < 1e-12 {
                return Err(RibbonError::InvalidInput(format!(
                    "chart degenerates at (t, s) = ({:.6}, {s:.6}): det DΦ = {det:.3e}",
                    ts[i]
                )));
            }
            let inv = Matrix2::new(d_phi.m22, -d_phi.m12, -d_phi.m21, d_phi.m11) / det;
            // Hessians of the chart components.
            let phi_tt = d_tangent[i] + dd_p_perp[i] * s;
            let phi_ts = d_p_perp[i];
            let hess_phi = [
                Matrix2::new(phi_tt.x, phi_ts.x, phi_ts.x, 0.0),
                Matrix2::new(phi_tt.y, phi_ts.y, phi_ts.y, 0.0),
            ];
            // Gradient in planar coordinates: 3x2, columns ∂₁u, ∂₂u.
            let ut = u_t[i * ns + j];
            let e1 = ut * inv.m11 + u_s * inv.m21;
            let e2 = ut * inv.m12 + u_s * inv.m22;
            let g = Matrix2::new(
                e1.dot(&e1),
                e1.dot(&e2),
                e2.dot(&e1),
                e2.dot(&e2),
            );
            first[i * ns + j] = SymMat2::new(g.m11, 0.5 * (g.m12 + g.m21), g.m22);
            let r_iso = (g.m11 - 1.0)
                .abs()
                .max((g.m22 - 1.0).abs())
                .max(g.m12.abs())
                .max(g.m21.abs());
            iso = iso.max(r_iso);
            let nu_raw = e1.cross(&e2);
            let nu_norm = nu_raw.norm();
            if nu_norm < 1e-10 {
                return Err(RibbonError::InvalidInput(format!(
                    "degenerate tangent plane at (t, s) = ({:.6}, {s:.6})",
                    ts[i]
                )));
            }
            let nu = nu_raw / nu_norm;
            normal[i * ns + j] = nu;
            // Hessian of each component via the chain rule, contracted with ν.
            let utt = u_tt[i * ns + j];
            let mut pi = Matrix2::zeros();
            for k in 0..3 {
                let h_ts = Matrix2::new(utt[k], u_ts[k], u_ts[k], u_ss[k]);
                let grad_k = Vector2::new(e1[k], e2[k]);
                let corrected = h_ts - hess_phi[0] * grad_k.x - hess_phi[1] * grad_k.y;
                let h_x = inv.transpose() * corrected * inv;
                pi += h_x * nu[k];
            }
            let pi_sym = SymMat2::new(pi.m11, 0.5 * (pi.m12 + pi.m21), pi.m22);
            second[i * ns + j] = pi_sym;
            gauss = gauss.max(pi_sym.det().abs());
        }
    }
    Ok(FormsGrid {
        grid: surface.grid,
        s_count: ns,
        eta: surface.eta,
        first,
        second,
        normal,
        isometry_residual: iso,
        gauss_residual: gauss,
    })
}

/// Checks the developability invariants of computed forms.
///
/// The first form must match the identity and `det Π` must vanish, both
/// within `tol`.
pub fn validate_developable(forms: &FormsGrid, tol: f64) -> Result<()> {
    if forms.isometry_residual > tol {
        return Err(RibbonError::ConvergenceFailure {
            what: "surface is not an isometry".into(),
            best_residual: forms.isometry_residual,
            iterations: 0,
            tolerance: tol,
        });
    }
    if forms.gauss_residual > tol {
        return Err(RibbonError::ConvergenceFailure {
            what: "surface has nonzero Gaussian curvature".into(),
            best_residual: forms.gauss_residual,
            iterations: 0,
            tolerance: tol,
        });
    }
    Ok(())
}

/// Rescaled second fundamental form of `y = u ∘ χ_ε` on the fixed domain.
///
/// Samples live on the tensor grid of the midline grid and the transversal
/// count, with `x₂ ∈ [−1/2, 1/2]`.
pub struct RescaledForms {
    pub grid: Grid,
    pub s_count: usize,
    pub eps: f64,
    /// `Π_{y,ε}` per node.
    pub pi: Vec<SymMat2>,
    /// Chart parameters `(t, s)` of each node.
    pub chart_ts: Vec<(f64, f64)>,
    /// Surface points per node.
    pub points: Vec<Vector3<f64>>,
}

impl RescaledForms {
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * self.s_count + j
    }

    /// Max deviation of `(D^ε)^{-T} Π_{y,ε} (D^ε)^{-1}` from the surface
    /// second form at the composed chart points.
    pub fn consistency_residual(&self, strip: &StripChart, forms: &FormsGrid) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.grid.nodes() {
            let x1 = self.grid.t(i);
            for j in 0..self.s_count {
                let x2 = -0.5 + j as f64 / (self.s_count - 1) as f64;
                let d = strip.d_eps(x1, x2);
                let det = d.determinant();
                let inv = Matrix2::new(d.m22, -d.m12, -d.m21, d.m11) / det;
                let p = self.pi[self.node(i, j)];
                let pm = Matrix2::new(p.m11, p.m12, p.m12, p.m22);
                let pulled = inv.transpose() * pm * inv;
                let (t, s) = self.chart_ts[self.node(i, j)];
                let su = forms.second_at(t, s);
                let diff = (pulled.m11 - su.m11)
                    .abs()
                    .max((0.5 * (pulled.m12 + pulled.m21) - su.m12).abs())
                    .max((pulled.m22 - su.m22).abs());
                worst = worst.max(diff);
            }
        }
        worst
    }
}

/// Inverts the ruled chart at a plane point; seed `(t₀, s₀)`.
fn invert_chart(
    reference: &ReferenceCurve,
    ruling: &RulingData,
    target: Vector2<f64>,
    seed: (f64, f64),
    eta: f64,
) -> Result<(f64, f64)> {
    let len = reference.length();
    let (mut t, mut s) = seed;
    let slack_t = 1e-9 * len.max(1.0);
    let slack_s = 1e-9 + 0.05 * eta;
    for _ in 0..50 {
        let p_perp = rot90(ruling.p_at(t));
        let f = reference.b_at(t) + p_perp * s - target;
        if f.norm() < 1e-13 {
            break;
        }
        let (lo, hi) = ruling.piece(t, len);
        let delta = ((hi - lo) / 256.0).min(1e-6).max(1e-12);
        let a = (t - delta).max(lo.max(0.0));
        let b = (t + delta).min(hi.min(len));
        let dp_perp = if b > a {
            (rot90(ruling.p_at(b)) - rot90(ruling.p_at(a))) / (b - a)
        } else {
            Vector2::zeros()
        };
        let phi_t = reference.tangent_at(t) + dp_perp * s;
        let jac = Matrix2::new(phi_t.x, p_perp.x, phi_t.y, p_perp.y);
        let det = jac.determinant();
        if det.abs() < 1e-12 {
            return Err(RibbonError::InvalidInput(format!(
                "chart inversion hit a degenerate Jacobian at t = {t:.6}"
            )));
        }
        let step = Matrix2::new(jac.m22, -jac.m12, -jac.m21, jac.m11) * f / det;
        t -= step.x;
        s -= step.y;
        t = t.clamp(-0.05 * len, 1.05 * len);
        if t < -slack_t
            || t > len + slack_t
            || s.abs() > eta + slack_s
        {
            return Err(RibbonError::InvalidInput(format!(
                "the strip leaves the ruled chart near (t, s) = ({t:.5}, {s:.5}), half-width {eta:.5}; \
                 rebuild with a smaller strip half-width"
            )));
        }
    }
    let p_perp = rot90(ruling.p_at(t));
    let res = (reference.b_at(t) + p_perp * s - target).norm();
    if res > 1e-10 {
        return Err(RibbonError::ConvergenceFailure {
            what: format!("chart inversion stalled at plane point ({:.5}, {:.5})", target.x, target.y),
            best_residual: res,
            iterations: 50,
            tolerance: 1e-10,
        });
    }
    Ok((t, s))
}

/// Computes `Π_{y,ε}` of the composed strip deformation `y = u ∘ χ_ε`.
///
/// The strip `S_ε` must sit inside the ruled chart; otherwise the
/// composition is rejected with an error naming the exit point.
pub fn rescaled_forms(surface: &RuledSurface, strip: &StripChart) -> Result<RescaledForms> {
    let (reference, ruling) = match &surface.geometry {
        SurfaceGeometry::Ruled { reference, ruling, .. } => (reference, ruling),
        SurfaceGeometry::Plane => {
            return Err(RibbonError::InvalidInput(
                "rescaled forms need the ruled construction, not a directly sampled surface"
                    .into(),
            ))
        }
    };
    let eps = strip.eps;
    let grid = surface.grid;
    let nt = grid.nodes();
    let ns = surface.s_count;
    let len = grid.len();
    // Compose: chart parameters and exact surface points per node.
    let mut chart_ts = vec![(0.0, 0.0); nt * ns];
    let mut points = vec![Vector3::zeros(); nt * ns];
    for i in 0..nt {
        let x1 = grid.t(i);
        for j in 0..ns {
            let x2 = -0.5 + j as f64 / (ns - 1) as f64;
            let q = strip.map(x1, x2);
            let (t, s) = invert_chart(reference, ruling, q, (x1, eps * x2), surface.eta)?;
            chart_ts[i * ns + j] = (t, s);
            points[i * ns + j] = surface.u_chart(t, s);
        }
    }
    // Differentiate y over the fixed domain. x₁ stencils avoid straddling
    // profile breaks row by row (the break location in x₁ shifts with x₂ as
    // the rulings tilt, so each row classifies by its own chart parameter).
    let ts_x1: Vec<f64> = grid.ts();
    let mut y_1 = vec![Vector3::zeros(); nt * ns];
    let mut y_11 = vec![Vector3::zeros(); nt * ns];
    for j in 0..ns {
        // Map the break parameters into x₁ positions for this row: since
        // t(x₁) is monotone and near-identity, classify nodes by their own
        // t parameter against the break list.
        let row_t: Vec<f64> = (0..nt).map(|i| chart_ts[i * ns + j].0).collect();
        let stencils = row_stencils(&ts_x1, &row_t, len, &surface.breaks);
        let col1 = apply_stencils(&stencils, &|i| points[i * ns + j], false);
        let col11 = apply_stencils(&stencils, &|i| points[i * ns + j], true);
        for i in 0..nt {
            y_1[i * ns + j] = col1[i];
            y_11[i * ns + j] = col11[i];
        }
    }
    let xs2: Vec<f64> = (0..ns).map(|j| -0.5 + j as f64 / (ns - 1) as f64).collect();
    let s_stencils: Vec<Stencil> = (0..ns)
        .map(|j| {
            let width = 7usize.min(ns);
            let start = j.saturating_sub(width / 2).min(ns - width);
            let idx: Vec<usize> = (start..start + width).collect();
            let xs: Vec<f64> = idx.iter().map(|&m| xs2[m]).collect();
            let w1 = fd_weights(xs2[j], &xs, 1);
            let w2 = fd_weights(xs2[j], &xs, 2);
            Stencil { idx, w1, w2 }
        })
        .collect();
    let mut pi = vec![SymMat2::ZERO; nt * ns];
    for i in 0..nt {
        for j in 0..ns {
            let st = &s_stencils[j];
            let fold = |vals: &dyn Fn(usize) -> Vector3<f64>, w: &[f64]| {
                st.idx
                    .iter()
                    .zip(w)
                    .fold(Vector3::zeros(), |acc, (&m, &c)| acc + vals(m) * c)
            };
            let y_2 = fold(&|m| points[i * ns + m], &st.w1);
            let y_22 = fold(&|m| points[i * ns + m], &st.w2);
            let y_12 = fold(&|m| y_1[i * ns + m], &st.w1);
            let nu_raw = y_1[i * ns + j].cross(&y_2);
            let n = nu_raw.norm();
            if n < 1e-12 {
                return Err(RibbonError::InvalidInput(format!(
                    "degenerate strip tangents at node ({i}, {j})"
                )));
            }
            let nu = nu_raw / n;
            pi[i * ns + j] = SymMat2::new(
                nu.dot(&y_11[i * ns + j]),
                nu.dot(&y_12) / eps,
                nu.dot(&y_22) / (eps * eps),
            );
        }
    }
    Ok(RescaledForms {
        grid,
        s_count: ns,
        eps,
        pi,
        chart_ts,
        points,
    })
}

/// Stencils for a row of composed samples: nodes are classified into smooth
/// pieces by their chart parameter, weights taken at the `x₁` coordinates.
fn row_stencils(xs1: &[f64], row_t: &[f64], len: f64, breaks: &[f64]) -> Vec<Stencil> {
    let n = xs1.len();
    let mut cuts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&b| b > 1e-13 && b < len - 1e-13)
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Piece id of each node by its chart parameter.
    let piece_of = |t: f64| cuts.iter().filter(|&&b| b < t).count();
    let ids: Vec<usize> = row_t.iter().map(|&t| piece_of(t)).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let id = ids[i];
        let mut jlo = i;
        while jlo > 0 && ids[jlo - 1] == id {
            jlo -= 1;
        }
        let mut jhi = i;
        while jhi + 1 < n && ids[jhi + 1] == id {
            jhi += 1;
        }
        while jhi - jlo + 1 < 5 {
            if jlo > 0 {
                jlo -= 1;
            }
            if jhi < n - 1 {
                jhi += 1;
            }
            if jlo == 0 && jhi == n - 1 {
                break;
            }
        }
        let width = 7usize.min(jhi - jlo + 1);
        let start = i.saturating_sub(width / 2).clamp(jlo, jhi + 1 - width);
        let idx: Vec<usize> = (start..start + width).collect();
        let xs: Vec<f64> = idx.iter().map(|&m| xs1[m]).collect();
        let w1 = fd_weights(xs1[i], &xs, 1);
        let w2 = fd_weights(xs1[i], &xs, 2);
        out.push(Stencil { idx, w1, w2 });
    }
    out
}

/// Result of sampling the boundary traces of a composed strip deformation.
#[derive(Debug, Clone)]
pub struct BoundaryReport {
    /// Max deviation of `∇u` from `(e₁|e₂)` on the left short side.
    pub left_gradient: f64,
    /// Max deviation of `∇u` from `(d̄₁|d̄₂)` on the right short side.
    pub right_gradient: f64,
    /// `|u(0,0)|`.
    pub left_position: f64,
    /// `|u(χ(ℓ,0)) − ȳ|`.
    pub right_position: f64,
}

impl BoundaryReport {
    pub fn max_residual(&self) -> f64 {
        self.left_gradient
            .max(self.right_gradient)
            .max(self.left_position)
            .max(self.right_position)
    }
}

/// Samples the clamped/assigned traces of `∇u` on both short sides.
///
/// The gradient of the ruled construction at chart parameter `t` is
/// `d₁(t) ⊗ B′(t) + d₂(t) ⊗ N(t)`; each short side is sampled at nine
/// transversal stations of the ε-strip through chart inversion.
pub fn check_boundary_conditions(
    surface: &RuledSurface,
    strip: &StripChart,
    bd: &BoundaryData,
) -> Result<BoundaryReport> {
    let (reference, ruling, path) = match &surface.geometry {
        SurfaceGeometry::Ruled { reference, ruling, path, .. } => (reference, ruling, path),
        SurfaceGeometry::Plane => {
            return Err(RibbonError::InvalidInput(
                "boundary traces need the ruled construction".into(),
            ))
        }
    };
    let len = reference.length();
    let eps = strip.eps;
    let grad_at = |t: f64| -> (Vector3<f64>, Vector3<f64>) {
        let r = path.eval(t);
        let d1 = r.row(0).transpose();
        let d3 = r.row(2).transpose();
        let d2 = d3.cross(&d1);
        let tv = reference.tangent_at(t);
        let nv = reference.normal_at(t);
        // Columns of ∇u in the plane's standard basis.
        let col1 = d1 * tv.x + d2 * nv.x;
        let col2 = d1 * tv.y + d2 * nv.y;
        (col1, col2)
    };
    let mut left = 0.0f64;
    let mut right = 0.0f64;
    let e1 = Vector3::new(1.0, 0.0, 0.0);
    let e2 = Vector3::new(0.0, 1.0, 0.0);
    let samples = 9;
    for m in 0..samples {
        let x2 = -0.5 + m as f64 / (samples - 1) as f64;
        for (x1, target1, target2, acc) in [
            (0.0, e1, e2, &mut left),
            (len, bd.director(0), bd.director(1), &mut right),
        ] {
            let q = strip.map(x1, x2);
            let (t, _s) = invert_chart(reference, ruling, q, (x1, eps * x2), surface.eta)?;
            let (c1, c2) = grad_at(t);
            let r = (c1 - target1).norm().max((c2 - target2).norm());
            *acc = acc.max(r);
        }
    }
    let u00 = surface.u_chart(0.0, 0.0).norm();
    let (t_end, s_end) = invert_chart(
        reference,
        ruling,
        strip.map(len, 0.0),
        (len, 0.0),
        surface.eta,
    )?;
    let u_end = (surface.u_chart(t_end, s_end) - bd.y_bar).norm();
    Ok(BoundaryReport {
        left_gradient: left,
        right_gradient: right,
        left_position: u00,
        right_position: u_end,
    })
}

/// Writes the surface as a Wavefront OBJ quad mesh.
pub fn export_obj(surface: &RuledSurface, path: &Path) -> Result<()> {
    let mut out = String::new();
    let nt = surface.grid.nodes();
    let ns = surface.s_count;
    for i in 0..nt {
        for j in 0..ns {
            let v = surface.vertex(i, j);
            out.push_str(&format!("v {:.17} {:.17} {:.17}\n", v.x, v.y, v.z));
        }
    }
    for i in 0..nt - 1 {
        for j in 0..ns - 1 {
            let a = i * ns + j + 1;
            let b = (i + 1) * ns + j + 1;
            out.push_str(&format!("f {a} {b} {} {}\n", b + 1, a + 1));
        }
    }
    write_file(path, &out)
}

/// Writes the surface as legacy-ASCII VTK structured grid with per-cell
/// residual data.
pub fn export_vtk(surface: &RuledSurface, forms: &FormsGrid, path: &Path) -> Result<()> {
    let nt = surface.grid.nodes();
    let ns = surface.s_count;
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("ruled developable surface\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET STRUCTURED_GRID\n");
    out.push_str(&format!("DIMENSIONS {ns} {nt} 1\n"));
    out.push_str(&format!("POINTS {} double\n", nt * ns));
    for i in 0..nt {
        for j in 0..ns {
            let v = surface.vertex(i, j);
            out.push_str(&format!("{:.17} {:.17} {:.17}\n", v.x, v.y, v.z));
        }
    }
    let cells = (nt - 1) * (ns - 1);
    out.push_str(&format!("CELL_DATA {cells}\n"));
    out.push_str("SCALARS isometry_residual double 1\nLOOKUP_TABLE default\n");
    let cell_avg = |f: &dyn Fn(usize) -> f64, i: usize, j: usize| {
        0.25 * (f(i * ns + j) + f((i + 1) * ns + j) + f(i * ns + j + 1) + f((i + 1) * ns + j + 1))
    };
    let iso = |n: usize| {
        let m = forms.first[n];
        (m.m11 - 1.0).abs().max((m.m22 - 1.0).abs()).max(m.m12.abs())
    };
    for i in 0..nt - 1 {
        for j in 0..ns - 1 {
            out.push_str(&format!("{:.10e}\n", cell_avg(&iso, i, j)));
        }
    }
    out.push_str("SCALARS detPi double 1\nLOOKUP_TABLE default\n");
    let detpi = |n: usize| forms.second[n].det();
    for i in 0..nt - 1 {
        for j in 0..ns - 1 {
            out.push_str(&format!("{:.10e}\n", cell_avg(&detpi, i, j)));
        }
    }
    write_file(path, &out)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| RibbonError::InvalidInput(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(content.as_bytes())
        .map_err(|e| RibbonError::InvalidInput(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}
