//! The bending quadratic form, its rank-one relaxation constants and the
//! associated zero eigenspaces, fixed and transported along the midline.
//!
//! Symmetric 2x2 curvature tensors `M` are stored in the vector convention
//! `m = (M11, M22, 2 M12)`, in which
//!
//! * `det M = m1 m2 - m3^2 / 4 = <Dm, m>` with the fixed symmetric matrix
//!   `D = [[0, 1/2, 0], [1/2, 0, 0], [0, 0, -1/4]]`;
//! * the bending energy is `Q(M) = <K m, m>` for a symmetric positive
//!   definite `K` (isotropic: `K = diag(1, 1, 1/2)`, i.e.
//!   `Q(M) = M11^2 + M22^2 + 2 M12^2 = |M|_F^2`).
//!
//! The relaxation constants are the largest `a` with `K + a D >= 0`
//! (written `alpha_plus`) and `K - a D >= 0` (`alpha_minus`); they enter the
//! relaxed density `Q**(M) = Q(M) + alpha_plus (det M)^+ + alpha_minus
//! (det M)^-`.  The kernels of `K + alpha_plus D` and `K - alpha_minus D`
//! (called `V_plus` / `V_minus`) consist of tensors with negative resp.
//! positive determinant; they are the directions along which laminates can
//! split a curvature tensor into zero-determinant phases without changing
//! the relaxed energy.

use crate::geometry::ReferenceCurve;
use crate::{Result, RibbonError};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Symmetric 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymMat2 {
    pub m11: f64,
    pub m12: f64,
    pub m22: f64,
}

impl SymMat2 {
    pub const ZERO: SymMat2 = SymMat2 {
        m11: 0.0,
        m12: 0.0,
        m22: 0.0,
    };

    pub fn new(m11: f64, m12: f64, m22: f64) -> Self {
        Self { m11, m12, m22 }
    }

    /// Vector coordinates `(M11, M22, 2 M12)`.
    pub fn vec(&self) -> Vector3<f64> {
        Vector3::new(self.m11, self.m22, 2.0 * self.m12)
    }

    /// Inverse of [`SymMat2::vec`].
    pub fn from_vec(v: Vector3<f64>) -> Self {
        Self {
            m11: v.x,
            m12: v.z / 2.0,
            m22: v.y,
        }
    }

    /// Full 2x2 matrix.
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.m11, self.m12, self.m12, self.m22)
    }

    /// Symmetric part of a 2x2 matrix.
    pub fn from_matrix(m: &Matrix2<f64>) -> Self {
        Self {
            m11: m[(0, 0)],
            m12: 0.5 * (m[(0, 1)] + m[(1, 0)]),
            m22: m[(1, 1)],
        }
    }

    /// Rank-one tensor `v (x) v`.
    pub fn outer(v: Vector2<f64>) -> Self {
        Self {
            m11: v.x * v.x,
            m12: v.x * v.y,
            m22: v.y * v.y,
        }
    }

    /// Symmetrised outer product `(a (x) b + b (x) a) / 2 * 2 = a (x) b + b (x) a`... kept
    /// explicit: returns `a (x) b + b (x) a`.
    pub fn sym_outer2(a: Vector2<f64>, b: Vector2<f64>) -> Self {
        Self {
            m11: 2.0 * a.x * b.x,
            m12: a.x * b.y + a.y * b.x,
            m22: 2.0 * a.y * b.y,
        }
    }

    pub fn det(&self) -> f64 {
        det_vec(&self.vec())
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        (self.m11 * self.m11 + 2.0 * self.m12 * self.m12 + self.m22 * self.m22).sqrt()
    }

    /// Congruence `P^T M P` (push-forward under a change of coordinates).
    pub fn congruence(&self, p: &Matrix2<f64>) -> Self {
        Self::from_matrix(&(p.transpose() * self.matrix() * p))
    }

    /// `D^{-T} M D^{-1}`: the curvature tensor in dual-director coordinates.
    pub fn dual_congruence(&self, d: &Matrix2<f64>) -> Result<Self> {
        let det = d.determinant();
        if det.abs() < 1e-14 {
            return Err(RibbonError::InvalidInput(
                "dual congruence by a singular matrix".into(),
            ));
        }
        let inv = Matrix2::new(d[(1, 1)], -d[(0, 1)], -d[(1, 0)], d[(0, 0)]) / det;
        Ok(Self::from_matrix(&(inv.transpose() * self.matrix() * inv)))
    }
}

impl std::ops::Add for SymMat2 {
    type Output = SymMat2;
    fn add(self, o: SymMat2) -> SymMat2 {
        SymMat2::new(self.m11 + o.m11, self.m12 + o.m12, self.m22 + o.m22)
    }
}

impl std::ops::Sub for SymMat2 {
    type Output = SymMat2;
    fn sub(self, o: SymMat2) -> SymMat2 {
        SymMat2::new(self.m11 - o.m11, self.m12 - o.m12, self.m22 - o.m22)
    }
}

impl std::ops::Mul<f64> for SymMat2 {
    type Output = SymMat2;
    fn mul(self, s: f64) -> SymMat2 {
        SymMat2::new(self.m11 * s, self.m12 * s, self.m22 * s)
    }
}

/// `det` in vector coordinates: `m1 m2 - m3^2 / 4`.
pub fn det_vec(m: &Vector3<f64>) -> f64 {
    m.x * m.y - m.z * m.z / 4.0
}

/// The fixed symmetric matrix representing `det` as `<D m, m>`.
pub fn det_form() -> Matrix3<f64> {
    Matrix3::new(
        0.0, 0.5, 0.0, //
        0.5, 0.0, 0.0, //
        0.0, 0.0, -0.25,
    )
}

/// User-facing description of the bending tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaterialSpec {
    /// `{"isotropic": true}`: `K = diag(1, 1, 1/2)`, i.e. the Frobenius
    /// norm squared of the curvature tensor.
    Isotropic { isotropic: bool },
    /// Engineering constants of an orthotropic plate:
    /// `K = [[D11, D12, 0], [D12, D22, 0], [0, 0, G]]` with
    /// `D11 = E1/(1 - nu12 nu21)`, `D22 = E2/(1 - nu12 nu21)`,
    /// `D12 = nu21 E1 / (1 - nu12 nu21)`, `nu21 = nu12 E2 / E1`.
    Engineering { e1: f64, e2: f64, g: f64, nu12: f64 },
    /// Upper triangle `[K11, K22, K33, K12, K13, K23]` of the tensor in
    /// vector coordinates.
    TensorFlat { k: [f64; 6] },
    /// Full symmetric 3x3 tensor in vector coordinates.
    TensorFull { k: [[f64; 3]; 3] },
}

impl MaterialSpec {
    /// The symmetric tensor `K` in vector coordinates.
    pub fn tensor(&self) -> Result<Matrix3<f64>> {
        match self {
            MaterialSpec::Isotropic { isotropic } => {
                if !isotropic {
                    return Err(RibbonError::InvalidInput(
                        "material {\"isotropic\": false} is meaningless; \
                         supply K or engineering constants instead"
                            .into(),
                    ));
                }
                Ok(Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.5)))
            }
            MaterialSpec::Engineering { e1, e2, g, nu12 } => {
                if *e1 <= 0.0 || *e2 <= 0.0 || *g <= 0.0 {
                    return Err(RibbonError::InvalidInput(format!(
                        "engineering moduli must be positive, got E1={e1}, E2={e2}, G={g}"
                    )));
                }
                let nu21 = nu12 * e2 / e1;
                let denom = 1.0 - nu12 * nu21;
                if denom <= 0.0 {
                    return Err(RibbonError::InvalidInput(format!(
                        "Poisson ratios violate 1 - nu12*nu21 > 0 (nu12={nu12}, nu21={nu21:.6})"
                    )));
                }
                let d11 = e1 / denom;
                let d22 = e2 / denom;
                let d12 = nu21 * e1 / denom;
                Ok(Matrix3::new(
                    d11, d12, 0.0, //
                    d12, d22, 0.0, //
                    0.0, 0.0, *g,
                ))
            }
            MaterialSpec::TensorFlat { k } => Ok(Matrix3::new(
                k[0], k[3], k[4], //
                k[3], k[1], k[5], //
                k[4], k[5], k[2],
            )),
            MaterialSpec::TensorFull { k } => {
                for i in 0..3 {
                    for j in 0..i {
                        if (k[i][j] - k[j][i]).abs() > 1e-12 * (1.0 + k[i][j].abs()) {
                            return Err(RibbonError::InvalidInput(format!(
                                "material tensor is not symmetric: K[{i}][{j}] = {} vs K[{j}][{i}] = {}",
                                k[i][j], k[j][i]
                            )));
                        }
                    }
                }
                Ok(Matrix3::new(
                    k[0][0], k[0][1], k[0][2], //
                    k[1][0], k[1][1], k[1][2], //
                    k[2][0], k[2][1], k[2][2],
                ))
            }
        }
    }
}

/// Bending form together with its rank-one relaxation data.
#[derive(Debug, Clone)]
pub struct RelaxedDensity {
    /// The bending tensor `K` (vector coordinates).
    pub kk: Matrix3<f64>,
    /// Largest `a` with `K + a D >= 0`.
    pub alpha_plus: f64,
    /// Largest `a` with `K - a D >= 0`.
    pub alpha_minus: f64,
    /// Orthonormal basis of `ker(K + alpha_plus D)`; every member has
    /// negative determinant.  Ordered by decreasing `|det|`, sign-canonical.
    pub v_plus: Vec<Vector3<f64>>,
    /// Orthonormal basis of `ker(K - alpha_minus D)`; positive determinants.
    pub v_minus: Vec<Vector3<f64>>,
    /// Cholesky factor `L` with `K = L L^T`.
    chol_l: Matrix3<f64>,
}

impl RelaxedDensity {
    /// Bending energy `Q(M) = <K m, m>`.
    pub fn q(&self, m: &Vector3<f64>) -> f64 {
        (self.kk * m).dot(m)
    }

    /// Relaxed density `Q**(M) = Q(M) + alpha_plus (det)^+ + alpha_minus (det)^-`.
    pub fn q_star_vec(&self, m: &Vector3<f64>) -> f64 {
        let d = det_vec(m);
        self.q(m) + self.alpha_plus * d.max(0.0) + self.alpha_minus * (-d).max(0.0)
    }

    pub(crate) fn chol_l(&self) -> &Matrix3<f64> {
        &self.chol_l
    }
}

/// Relaxed density `Q**` on a symmetric matrix.
pub fn q_star(density: &RelaxedDensity, m: &SymMat2) -> f64 {
    density.q_star_vec(&m.vec())
}

/// Builds the relaxation data for a material.
pub fn build_density(spec: &MaterialSpec) -> Result<RelaxedDensity> {
    let kk = spec.tensor()?;
    build_density_from_tensor(kk)
}

pub(crate) fn build_density_from_tensor(kk: Matrix3<f64>) -> Result<RelaxedDensity> {
    // Positive definiteness via Cholesky; report the smallest eigenvalue on
    // failure.
    let chol = nalgebra::Cholesky::new(kk).ok_or_else(|| {
        let eig = nalgebra::SymmetricEigen::new(kk);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        RibbonError::NotPositiveDefinite {
            min_eigenvalue: min,
        }
    })?;
    let l = chol.l();
    let l_inv = l.clone_owned().try_inverse().ok_or_else(|| {
        RibbonError::NotPositiveDefinite {
            min_eigenvalue: 0.0,
        }
    })?;

    // Pencil reduction: K + a D >= 0 iff I + a G >= 0 with G = L^-1 D L^-T.
    let g = l_inv * det_form() * l_inv.transpose();
    let g_sym = (g + g.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(g_sym);
    let lams = &eig.eigenvalues;
    let lam_min = lams.iter().cloned().fold(f64::INFINITY, f64::min);
    let lam_max = lams.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // D is indefinite (det takes both signs), so the pencil degenerates in
    // both directions.
    debug_assert!(lam_min < 0.0 && lam_max > 0.0);
    let alpha_plus = 1.0 / (-lam_min);
    let alpha_minus = 1.0 / lam_max;

    // Kernel bases: eigenvectors of G at the extreme eigenvalue, mapped back
    // by L^-T, orthonormalised.
    let rel_tol = 1e-9;
    let collect = |target: f64| -> Vec<Vector3<f64>> {
        let mut vs: Vec<Vector3<f64>> = Vec::new();
        for (i, &lam) in lams.iter().enumerate() {
            if (lam - target).abs() <= rel_tol * target.abs() {
                let u: Vector3<f64> = eig.eigenvectors.column(i).into();
                vs.push(l_inv.transpose() * u);
            }
        }
        // Gram–Schmidt in the vector inner product.
        let mut basis: Vec<Vector3<f64>> = Vec::new();
        for mut v in vs {
            for b in &basis {
                v -= b * v.dot(b);
            }
            let n = v.norm();
            if n > 1e-12 {
                basis.push(v / n);
            }
        }
        // Deterministic order (decreasing |det|) and sign (largest-magnitude
        // component positive).
        basis.sort_by(|a, b| {
            det_vec(b)
                .abs()
                .partial_cmp(&det_vec(a).abs())
                .unwrap()
        });
        for v in &mut basis {
            let mut idx = 0;
            for i in 1..3 {
                if v[i].abs() > v[idx].abs() {
                    idx = i;
                }
            }
            if v[idx] < 0.0 {
                *v = -*v;
            }
        }
        basis
    };
    let v_plus = collect(lam_min);
    let v_minus = collect(lam_max);

    // Structural facts: the kernel directions have nonzero determinant of
    // the sign opposite to the branch they relax.
    for v in &v_plus {
        debug_assert!(det_vec(v) < 0.0);
    }
    for v in &v_minus {
        debug_assert!(det_vec(v) > 0.0);
    }

    Ok(RelaxedDensity {
        kk,
        alpha_plus,
        alpha_minus,
        v_plus,
        v_minus,
        chol_l: l,
    })
}

/// Coefficients `(a, b)` of the plane `{m : a m1 + b m3 = 0}` of curvature
/// tensors whose rank-one oscillation along `v` stays away from pure-normal
/// bending: `a = v3`, `b = -v1`, sign-normalised so the leading nonzero
/// coefficient is positive.
pub fn plane_coefficients(v: &Vector3<f64>) -> (f64, f64) {
    let (mut a, mut b) = (v.z, -v.x);
    let lead = if a.abs() > 1e-14 { a } else { b };
    if lead < 0.0 {
        a = -a;
        b = -b;
    }
    (a, b)
}

/// Vector-coordinate matrix of the congruence `W -> B^T V B` for a rotation
/// `B` with first column `(c, s)`.
///
/// Acting on `(V11, V22, 2 V12)` it returns `(W11, W22, 2 W12)`.
pub fn rotation_transport(c: f64, s: f64) -> Matrix3<f64> {
    Matrix3::new(
        c * c,
        s * s,
        c * s, //
        s * s,
        c * c,
        -c * s, //
        -2.0 * c * s,
        2.0 * c * s,
        c * c - s * s,
    )
}

/// The bending data transported along a reference midline.
///
/// At each `t` the moving basis `B(t) = (B'(t) | N(t))` conjugates curvature
/// tensors between midline coordinates and the fixed frame.  The transported
/// tensor `K_t` represents the bending energy in midline coordinates, and
/// the kernels of the relaxation pencil become smooth unit fields `w(t)`.
#[derive(Clone)]
pub struct MovingBasis {
    density: Arc<RelaxedDensity>,
    reference: Arc<ReferenceCurve>,
    /// `dim V_plus`, `dim V_minus` (1 or 2).
    pub dim_plus: usize,
    pub dim_minus: usize,
    /// Smallest norm of the oscillation-plane coefficient pair over a dense
    /// sample of `t` and both pencil branches.
    pub r_min: f64,
}

impl std::fmt::Debug for MovingBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MovingBasis")
            .field("dim_plus", &self.dim_plus)
            .field("dim_minus", &self.dim_minus)
            .field("r_min", &self.r_min)
            .finish()
    }
}

impl MovingBasis {
    /// Rotation angle data of the moving basis at `t`: the pair
    /// `(cos, sin)` of the tangent direction.
    fn cs(&self, t: f64) -> (f64, f64) {
        let tg = self.reference.tangent_at(t);
        (tg.x, tg.y)
    }

    /// Transported bending tensor: `Q_t(w) = Q(B w B^T)` for `w` in midline
    /// coordinates.
    pub fn kk_at(&self, t: f64) -> Matrix3<f64> {
        let (c, s) = self.cs(t);
        // vec(B W B^T) = T(-angle) w = rotation_transport(c, -s) w.
        let push = rotation_transport(c, -s);
        push.transpose() * self.density.kk * push
    }

    /// Transported energy `Q_t(w)`.
    pub fn q_at(&self, t: f64, w: &Vector3<f64>) -> f64 {
        (self.kk_at(t) * w).dot(w)
    }

    /// Transported relaxed density `Q_t**(w)`; `det` is invariant under the
    /// rotation transport, so the same branch constants apply.
    pub fn q_star_at(&self, t: f64, w: &Vector3<f64>) -> f64 {
        let d = det_vec(w);
        self.q_at(t, w) + self.density.alpha_plus * d.max(0.0)
            + self.density.alpha_minus * (-d).max(0.0)
    }

    /// Transported kernel field of the `det < 0` branch: `w(t) = vec(B^T V B)`,
    /// unit norm.  Index 0 is the preferred oscillation direction.
    pub fn w_plus_at(&self, t: f64) -> Vec<Vector3<f64>> {
        self.transport_basis(t, &self.density.v_plus)
    }

    /// Transported kernel field of the `det > 0` branch.
    pub fn w_minus_at(&self, t: f64) -> Vec<Vector3<f64>> {
        self.transport_basis(t, &self.density.v_minus)
    }

    fn transport_basis(&self, t: f64, basis: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let (c, s) = self.cs(t);
        let pull = rotation_transport(c, s);
        basis
            .iter()
            .map(|v| {
                let w = pull * v;
                w / w.norm()
            })
            .collect()
    }

    /// Preferred oscillation direction for splitting a tensor whose
    /// determinant has the given sign: positive determinants split along the
    /// `det < 0` kernel and vice versa.
    pub fn split_direction(&self, t: f64, det_sign: f64) -> Vector3<f64> {
        if det_sign >= 0.0 {
            self.w_plus_at(t)[0]
        } else {
            self.w_minus_at(t)[0]
        }
    }

    /// Plane coefficients `(a, b)(t)` of the transported direction for the
    /// given branch (`+1`: the `det < 0` kernel, `-1`: the `det > 0` one).
    /// Continuous in `t`; not sign-normalised.
    pub fn plane_at(&self, t: f64, branch: i32) -> (f64, f64) {
        let w = if branch >= 0 {
            self.w_plus_at(t)[0]
        } else {
            self.w_minus_at(t)[0]
        };
        (w.z, -w.x)
    }

    pub fn density(&self) -> &RelaxedDensity {
        &self.density
    }

    pub fn reference(&self) -> &ReferenceCurve {
        &self.reference
    }
}

/// Builds the transported bending data along a reference midline.
pub fn moving_basis(density: &RelaxedDensity, reference: &ReferenceCurve) -> Result<MovingBasis> {
    let mb = MovingBasis {
        density: Arc::new(density.clone()),
        reference: Arc::new(reference.clone()),
        dim_plus: density.v_plus.len(),
        dim_minus: density.v_minus.len(),
        r_min: 0.0,
    };
    // Plane-coefficient floor over a dense sample and both branches.
    let dense = 2048usize;
    let mut r_min = f64::INFINITY;
    for i in 0..=dense {
        let t = reference.length() * i as f64 / dense as f64;
        for branch in [1, -1] {
            let (a, b) = mb.plane_at(t, branch);
            r_min = r_min.min(a.hypot(b));
        }
    }
    if r_min < 1e-9 {
        return Err(RibbonError::InvalidInput(format!(
            "transported oscillation direction degenerates (plane coefficients reach norm {r_min:.3e}); \
             the material's relaxation kernel aligns with pure normal bending"
        )));
    }
    Ok(MovingBasis { r_min, ..mb })
}
