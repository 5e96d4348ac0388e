//! The pointwise relaxed bending density `qbar` and the limit functional it
//! induces on framed curves.
//!
//! At a midline point with director matrix `D = (D1 | D2)` and dual pair
//! `(D^1 | D^2)`, a framed curve with bending `mu` and twist-shear `tau`
//! constrains the curvature tensor of any attached developable surface to
//!
//! `M(gamma) = mu D^1 (x) D^1 + tau (D^1 (x) D^2 + D^2 (x) D^1) + gamma D^2 (x) D^2`
//!
//! with the transversal curvature `gamma` free.  The density is the exact
//! minimum over `gamma` of
//!
//! `f(gamma) = det D * [ Q(M(gamma) - P) + alpha_plus (det M)^+ + alpha_minus (det M)^- ]`
//!
//! where `P = D^{-T} Pi0 D^{-1}` carries the frustration `Pi0` into curvature
//! coordinates.  `f` is a convex piecewise quadratic in `gamma` (the
//! relaxation constants are exactly the largest values keeping both branches
//! convex), so the minimum is attained at one of at most three closed-form
//! candidates: the two branch vertices and the determinant's root.

use crate::geometry::{dual_directors, ReferenceCurve};
use crate::grid::simpson;
use crate::quadform::{det_vec, RelaxedDensity, SymMat2};
use crate::{Result, RibbonError};
use nalgebra::{Matrix2, Vector3};
use serde::Serialize;
use std::sync::Arc;

/// Bilinear polarisation of `det`: `det(a + b) = det a + det b + det_bilinear(a, b)`.
pub(crate) fn det_bilinear(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.x * b.y + a.y * b.x - a.z * b.z / 2.0
}

/// Frustration field `Pi0(t)` along the midline, optionally refined by a
/// width-dependent family on the strip.
#[derive(Clone)]
pub struct FrustrationField {
    base: FrustrationBase,
    /// Optional strip-level family `(x1, x2, eps) -> Pi0_eps`; when absent
    /// the midline value is used across the width.
    family: Option<Arc<dyn Fn(f64, f64, f64) -> SymMat2 + Send + Sync>>,
}

#[derive(Clone, Debug)]
enum FrustrationBase {
    Zero,
    Const(SymMat2),
    Sampled { ts: Vec<f64>, values: Vec<SymMat2> },
}

impl std::fmt::Debug for FrustrationField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrustrationField")
            .field("base", &self.base)
            .field("has_family", &self.family.is_some())
            .finish()
    }
}

impl FrustrationField {
    /// No frustration: `Pi0 = 0`.
    pub fn zero() -> Self {
        Self {
            base: FrustrationBase::Zero,
            family: None,
        }
    }

    /// Constant frustration.
    pub fn constant(value: SymMat2) -> Self {
        Self {
            base: FrustrationBase::Const(value),
            family: None,
        }
    }

    /// Piecewise-linear frustration through `(ts, values)`; `ts` must be
    /// strictly increasing.
    pub fn sampled(ts: Vec<f64>, values: Vec<SymMat2>) -> Result<Self> {
        if ts.len() != values.len() || ts.len() < 2 {
            return Err(RibbonError::InvalidInput(format!(
                "frustration samples need matching lengths >= 2, got {} and {}",
                ts.len(),
                values.len()
            )));
        }
        for w in ts.windows(2) {
            if w[1] <= w[0] {
                return Err(RibbonError::InvalidInput(
                    "frustration sample parameters must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self {
            base: FrustrationBase::Sampled { ts, values },
            family: None,
        })
    }

    /// Attaches a strip-level family `(x1, x2, eps) -> Pi0_eps`.  The family
    /// should converge to the midline value as `eps -> 0`.
    pub fn with_family(
        mut self,
        family: Arc<dyn Fn(f64, f64, f64) -> SymMat2 + Send + Sync>,
    ) -> Self {
        self.family = Some(family);
        self
    }

    /// Midline value at `t` (linear interpolation, clamped).
    pub fn at(&self, t: f64) -> SymMat2 {
        match &self.base {
            FrustrationBase::Zero => SymMat2::ZERO,
            FrustrationBase::Const(v) => *v,
            FrustrationBase::Sampled { ts, values } => {
                if t <= ts[0] {
                    return values[0];
                }
                if t >= *ts.last().unwrap() {
                    return *values.last().unwrap();
                }
                let mut lo = 0usize;
                let mut hi = ts.len() - 1;
                while hi - lo > 1 {
                    let mid = (lo + hi) / 2;
                    if ts[mid] <= t {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let w = (t - ts[lo]) / (ts[hi] - ts[lo]);
                values[lo] * (1.0 - w) + values[hi] * w
            }
        }
    }

    /// Strip value at `(x1, x2)` for width `eps`.
    pub fn at_strip(&self, x1: f64, x2: f64, eps: f64) -> SymMat2 {
        match &self.family {
            Some(f) => f(x1, x2, eps),
            None => self.at(x1),
        }
    }

    /// True when the field is identically zero (and has no strip family).
    pub fn is_zero(&self) -> bool {
        self.family.is_none()
            && match &self.base {
                FrustrationBase::Zero => true,
                FrustrationBase::Const(v) => v.norm() == 0.0,
                FrustrationBase::Sampled { values, .. } => values.iter().all(|v| v.norm() == 0.0),
            }
    }
}

/// Which piece of the convex piecewise quadratic attains the minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QbarBranch {
    /// The determinant does not vary with `gamma` (pure-twist data): a
    /// single quadratic.
    Interior,
    /// Interior vertex of the `det M > 0` branch.
    DetPositive,
    /// Interior vertex of the `det M < 0` branch.
    DetNegative,
    /// The kink at `det M = 0`.
    Boundary,
}

/// Result of the exact transversal minimisation.
#[derive(Debug, Clone, Copy)]
pub struct QbarResult {
    /// The relaxed density value.
    pub value: f64,
    /// Minimising transversal curvature.
    pub gamma_star: f64,
    /// Active piece at the minimum.
    pub branch: QbarBranch,
    /// Minimising curvature tensor `M(gamma_star)` in ambient coordinates.
    pub m_star: SymMat2,
    /// `det M(gamma_star)`.
    pub det_m: f64,
}

/// Data of the quadratic-in-`gamma` pieces at one midline point.
struct GammaProblem {
    /// Quadratic coefficients of `det D * Q(M(gamma) - P)`.
    aq: f64,
    bq: f64,
    cq: f64,
    /// `det M(gamma) = d0 + d1 gamma`.
    d0: f64,
    d1: f64,
    det_d: f64,
    m0: Vector3<f64>,
    e: Vector3<f64>,
    p: Vector3<f64>,
}

impl GammaProblem {
    fn new(
        density: &RelaxedDensity,
        d: &Matrix2<f64>,
        pi0: &SymMat2,
        mu: f64,
        tau: f64,
    ) -> Result<Self> {
        let det_d = d.determinant();
        let (d1v, d2v) = dual_directors(d)?;
        let m_mu = SymMat2::outer(d1v).vec();
        let m_tau = SymMat2::sym_outer2(d1v, d2v).vec();
        let e = SymMat2::outer(d2v).vec();
        let m0 = m_mu * mu + m_tau * tau;
        let p = pi0.dual_congruence(d)?.vec();
        let diff0 = m0 - p;
        let ke = density.kk * e;
        let aq = det_d * ke.dot(&e);
        let bq = 2.0 * det_d * ke.dot(&diff0);
        let cq = det_d * (density.kk * diff0).dot(&diff0);
        let d0 = det_vec(&m0);
        let d1 = det_bilinear(&m0, &e);
        Ok(Self {
            aq,
            bq,
            cq,
            d0,
            d1,
            det_d,
            m0,
            e,
            p,
        })
    }

    fn m_at(&self, gamma: f64) -> Vector3<f64> {
        self.m0 + self.e * gamma
    }

    /// Full objective at `gamma`.
    fn f(&self, density: &RelaxedDensity, gamma: f64) -> f64 {
        let q = (self.aq * gamma + self.bq) * gamma + self.cq;
        let det_m = self.d0 + self.d1 * gamma;
        q + self.det_d * (density.alpha_plus * det_m.max(0.0)
            + density.alpha_minus * (-det_m).max(0.0))
    }
}

/// Exact minimisation of the transversal curvature at a single point.
///
/// `d` is the director matrix (must have positive determinant), `pi0` the
/// frustration tensor, `(mu, tau)` the bending and twist-shear moments of
/// the framed curve.
pub fn qbar_at(
    density: &RelaxedDensity,
    d: &Matrix2<f64>,
    pi0: &SymMat2,
    mu: f64,
    tau: f64,
) -> Result<QbarResult> {
    let pr = GammaProblem::new(density, d, pi0, mu, tau)?;
    if pr.aq <= 0.0 {
        // K is positive definite and e != 0, so this cannot happen for a
        // nondegenerate director matrix; guard anyway.
        return Err(RibbonError::InvalidInput(
            "transversal minimisation lost coercivity (degenerate director matrix)".into(),
        ));
    }

    let scale = 1.0 + pr.d0.abs() + pr.d1.abs();
    let finish = |gamma: f64, branch: QbarBranch| -> QbarResult {
        let m = pr.m_at(gamma);
        QbarResult {
            value: pr.f(density, gamma),
            gamma_star: gamma,
            branch,
            m_star: SymMat2::from_vec(m),
            det_m: det_vec(&m),
        }
    };

    if pr.d1.abs() <= 1e-14 * scale {
        // det M does not depend on gamma: single quadratic.
        return Ok(finish(-pr.bq / (2.0 * pr.aq), QbarBranch::Interior));
    }

    let gamma0 = -pr.d0 / pr.d1;
    let mut best: Option<(f64, f64, QbarBranch)> = None;
    let mut consider = |gamma: f64, branch: QbarBranch, value: f64| {
        let better = match &best {
            None => true,
            Some((bv, _, _)) => value < *bv - 1e-15 * (1.0 + bv.abs()),
        };
        if better {
            best = Some((value, gamma, branch));
        }
    };

    // Kink candidate first: ties resolve to the boundary label.
    consider(gamma0, QbarBranch::Boundary, pr.f(density, gamma0));

    let det_tol = 1e-12 * scale;
    // Plus branch vertex, valid where det M >= 0.
    let gp = -(pr.bq + pr.det_d * density.alpha_plus * pr.d1) / (2.0 * pr.aq);
    if pr.d0 + pr.d1 * gp >= -det_tol {
        consider(gp, QbarBranch::DetPositive, pr.f(density, gp));
    }
    // Minus branch vertex, valid where det M <= 0.
    let gm = -(pr.bq - pr.det_d * density.alpha_minus * pr.d1) / (2.0 * pr.aq);
    if pr.d0 + pr.d1 * gm <= det_tol {
        consider(gm, QbarBranch::DetNegative, pr.f(density, gm));
    }

    let (_, gamma, branch) = best.unwrap();
    // A vertex essentially on the kink reports the boundary label.
    let branch = if branch != QbarBranch::Boundary
        && (pr.d0 + pr.d1 * gamma).abs() <= det_tol
    {
        QbarBranch::Boundary
    } else {
        branch
    };
    Ok(finish(gamma, branch))
}

/// Analytic gradient `(d qbar / d mu, d qbar / d tau)`.
///
/// On the smooth branches the envelope theorem applies (the inner minimiser
/// is stationary); on the boundary branch the minimiser rides the kink
/// `det M = 0`, so the derivative follows the constrained path.
pub fn qbar_gradient(
    density: &RelaxedDensity,
    d: &Matrix2<f64>,
    pi0: &SymMat2,
    mu: f64,
    tau: f64,
) -> Result<(f64, f64)> {
    let pr = GammaProblem::new(density, d, pi0, mu, tau)?;
    let res = qbar_at(density, d, pi0, mu, tau)?;
    let gamma = res.gamma_star;
    let mg = pr.m_at(gamma);
    let diff = mg - pr.p;
    let (d1v, d2v) = dual_directors(d)?;
    let m_mu = SymMat2::outer(d1v).vec();
    let m_tau = SymMat2::sym_outer2(d1v, d2v).vec();

    let q_partial = |mx: &Vector3<f64>| 2.0 * pr.det_d * (density.kk * diff).dot(mx);

    match res.branch {
        QbarBranch::Interior | QbarBranch::DetPositive | QbarBranch::DetNegative => {
            let det_m = res.det_m;
            let alpha_term = if det_m > 0.0 {
                density.alpha_plus
            } else if det_m < 0.0 {
                -density.alpha_minus
            } else {
                0.0
            };
            let grad = |mx: &Vector3<f64>| {
                q_partial(mx) + pr.det_d * alpha_term * det_bilinear(&mg, mx)
            };
            Ok((grad(&m_mu), grad(&m_tau)))
        }
        QbarBranch::Boundary => {
            // Implicit differentiation of det(M(gamma0(mu, tau))) = 0.
            let dgamma_dd = det_bilinear(&mg, &pr.e);
            let q_gamma = 2.0 * pr.det_d * (density.kk * diff).dot(&pr.e);
            let grad = |mx: &Vector3<f64>| {
                if dgamma_dd.abs() < 1e-14 {
                    q_partial(mx)
                } else {
                    let dgamma_dx = -det_bilinear(&mg, mx) / dgamma_dd;
                    q_partial(mx) + q_gamma * dgamma_dx
                }
            };
            Ok((grad(&m_mu), grad(&m_tau)))
        }
    }
}

/// `qbar` at a midline parameter of a reference curve.
pub fn qbar(
    density: &RelaxedDensity,
    reference: &ReferenceCurve,
    frustration: &FrustrationField,
    x1: f64,
    mu: f64,
    tau: f64,
) -> Result<QbarResult> {
    let d = reference.d_at(x1);
    let pi0 = frustration.at(x1);
    qbar_at(density, &d, &pi0, mu, tau)
}

/// Per-node evaluation record of the limit functional.
#[derive(Debug, Clone)]
pub struct LimitTrace {
    pub t: Vec<f64>,
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub gamma_star: Vec<f64>,
    pub qbar: Vec<f64>,
}

/// Integrates the relaxed density along a framed curve's moments.
///
/// `mu` and `tau` are sampled on the reference grid; returns the energy and
/// the per-node trace.
pub fn limit_functional(
    density: &RelaxedDensity,
    reference: &ReferenceCurve,
    frustration: &FrustrationField,
    mu: &[f64],
    tau: &[f64],
) -> Result<(f64, LimitTrace)> {
    let grid = reference.grid;
    if mu.len() != grid.nodes() || tau.len() != grid.nodes() {
        return Err(RibbonError::InvalidInput(format!(
            "moment samples must match the reference grid ({} nodes), got {} and {}",
            grid.nodes(),
            mu.len(),
            tau.len()
        )));
    }
    let mut qs = Vec::with_capacity(grid.nodes());
    let mut gs = Vec::with_capacity(grid.nodes());
    for i in 0..grid.nodes() {
        let t = grid.t(i);
        let r = qbar(density, reference, frustration, t, mu[i], tau[i])?;
        qs.push(r.value);
        gs.push(r.gamma_star);
    }
    let energy = simpson(&qs, grid.h());
    Ok((
        energy,
        LimitTrace {
            t: grid.ts(),
            mu: mu.to_vec(),
            tau: tau.to_vec(),
            gamma_star: gs,
            qbar: qs,
        },
    ))
}

/// Isotropic zero-frustration closed form (classical corrected bending
/// density): `(mu^2 + tau^2)^2 / mu^2` when `|mu| >= |tau|`, else `4 tau^2`.
pub fn sadowsky_corrected(mu: f64, tau: f64) -> f64 {
    if mu.abs() >= tau.abs() {
        if mu == 0.0 {
            0.0
        } else {
            let s = mu * mu + tau * tau;
            s * s / (mu * mu)
        }
    } else {
        4.0 * tau * tau
    }
}
