//! Planar natural cubic splines with arc-length reparametrisation.
//!
//! Used by [`crate::geometry`] to turn a polyline of control points into an
//! arc-length parametrised midline with analytic tangent and curvature.

use crate::grid::adaptive_simpson;
use crate::{Result, RibbonError};
use nalgebra::Vector2;

/// Natural cubic spline through given planar points, reparametrised by arc
/// length.
#[derive(Debug, Clone)]
pub struct ArcSpline {
    /// Interpolation parameter values (chord-length knots).
    knots: Vec<f64>,
    /// Interpolated points.
    points: Vec<Vector2<f64>>,
    /// Second derivatives at the knots (natural boundary conditions).
    second: Vec<Vector2<f64>>,
    /// Dense parameter samples for the arc-length table.
    table_q: Vec<f64>,
    /// Cumulative arc length at `table_q`.
    table_s: Vec<f64>,
    /// Monotone cubic slopes of q as a function of s at the table nodes.
    inv_slopes: Vec<f64>,
    /// Total arc length.
    total_len: f64,
}

impl ArcSpline {
    /// Builds the spline through `points` (at least 3, no repeated
    /// consecutive points).
    pub fn new(points: &[[f64; 2]]) -> Result<Self> {
        if points.len() < 3 {
            return Err(RibbonError::InvalidInput(format!(
                "spline needs at least 3 control points, got {}",
                points.len()
            )));
        }
        let pts: Vec<Vector2<f64>> = points.iter().map(|p| Vector2::new(p[0], p[1])).collect();
        // Chord-length knots.
        let mut knots = vec![0.0];
        for w in pts.windows(2) {
            let d = (w[1] - w[0]).norm();
            if d < 1e-12 {
                return Err(RibbonError::InvalidInput(
                    "spline control points contain a repeated consecutive point".into(),
                ));
            }
            knots.push(knots.last().unwrap() + d);
        }

        let second = natural_spline_second_derivatives(&knots, &pts);

        let mut sp = Self {
            knots,
            points: pts,
            second,
            table_q: Vec::new(),
            table_s: Vec::new(),
            inv_slopes: Vec::new(),
            total_len: 0.0,
        };
        sp.build_arclength_table();
        Ok(sp)
    }

    fn build_arclength_table(&mut self) {
        // Dense parameter samples: 64 per segment.
        let per_seg = 64usize;
        let mut qs = Vec::new();
        for w in self.knots.windows(2) {
            for i in 0..per_seg {
                qs.push(w[0] + (w[1] - w[0]) * i as f64 / per_seg as f64);
            }
        }
        qs.push(*self.knots.last().unwrap());

        let mut ss = vec![0.0];
        for w in qs.windows(2) {
            let seg = adaptive_simpson(&|q| self.dpoint_dq(q).norm(), w[0], w[1], 1e-13);
            ss.push(ss.last().unwrap() + seg);
        }
        self.total_len = *ss.last().unwrap();

        // Monotone cubic (Fritsch–Carlson) slopes for q(s).
        let n = qs.len();
        let mut d = vec![0.0; n]; // secant slopes dq/ds per interval
        for i in 0..n - 1 {
            d[i] = (qs[i + 1] - qs[i]) / (ss[i + 1] - ss[i]);
        }
        let mut m = vec![0.0; n];
        m[0] = d[0];
        m[n - 1] = d[n - 2];
        for i in 1..n - 1 {
            m[i] = if d[i - 1] * d[i] <= 0.0 {
                0.0
            } else {
                // Harmonic mean limiter keeps the interpolant monotone.
                2.0 / (1.0 / d[i - 1] + 1.0 / d[i])
            };
        }
        self.table_q = qs;
        self.table_s = ss;
        self.inv_slopes = m;
    }

    /// Total arc length of the spline.
    pub fn total_len(&self) -> f64 {
        self.total_len
    }

    /// Spline parameter for arc length `s` (clamped to the valid range).
    pub fn q_of_s(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.total_len);
        let n = self.table_s.len();
        // Binary search for the table interval.
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.table_s[mid] <= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let h = self.table_s[hi] - self.table_s[lo];
        let x = (s - self.table_s[lo]) / h;
        let (q0, q1) = (self.table_q[lo], self.table_q[hi]);
        let (m0, m1) = (self.inv_slopes[lo] * h, self.inv_slopes[hi] * h);
        // Cubic Hermite basis.
        let x2 = x * x;
        let x3 = x2 * x;
        let mut q = q0 * (2.0 * x3 - 3.0 * x2 + 1.0)
            + m0 * (x3 - 2.0 * x2 + x)
            + q1 * (-2.0 * x3 + 3.0 * x2)
            + m1 * (x3 - x2);
        // Newton polish: the Hermite guess is ~1e-6 accurate; drive the
        // residual s(q) - s to machine precision using two-point Gauss
        // quadrature for the short arc from the bracketing table node.
        let q_max = *self.knots.last().unwrap();
        for _ in 0..2 {
            q = q.clamp(self.knots[0], q_max);
            let half = (q - q0) / 2.0;
            let mid = (q + q0) / 2.0;
            let off = half / 3.0f64.sqrt();
            let arc = half
                * (self.dpoint_dq(mid - off).norm() + self.dpoint_dq(mid + off).norm());
            let residual = self.table_s[lo] + arc - s;
            let speed = self.dpoint_dq(q).norm();
            if speed < 1e-14 {
                break;
            }
            q -= residual / speed;
        }
        q.clamp(self.knots[0], q_max)
    }

    fn segment(&self, q: f64) -> usize {
        let n = self.knots.len();
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.knots[mid] <= q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Position at spline parameter `q`.
    pub fn point_q(&self, q: f64) -> Vector2<f64> {
        let i = self.segment(q.clamp(self.knots[0], *self.knots.last().unwrap()));
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - q) / h;
        let b = (q - self.knots[i]) / h;
        self.points[i] * a
            + self.points[i + 1] * b
            + (self.second[i] * (a * a * a - a) + self.second[i + 1] * (b * b * b - b))
                * (h * h / 6.0)
    }

    /// d(point)/dq.
    pub fn dpoint_dq(&self, q: f64) -> Vector2<f64> {
        let i = self.segment(q.clamp(self.knots[0], *self.knots.last().unwrap()));
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - q) / h;
        let b = (q - self.knots[i]) / h;
        (self.points[i + 1] - self.points[i]) / h
            + (self.second[i] * (-(3.0 * a * a - 1.0)) + self.second[i + 1] * (3.0 * b * b - 1.0))
                * (h / 6.0)
    }

    /// d²(point)/dq².
    pub fn d2point_dq2(&self, q: f64) -> Vector2<f64> {
        let i = self.segment(q.clamp(self.knots[0], *self.knots.last().unwrap()));
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - q) / h;
        let b = (q - self.knots[i]) / h;
        self.second[i] * a + self.second[i + 1] * b
    }

    /// Position at arc length `s`.
    pub fn point(&self, s: f64) -> Vector2<f64> {
        self.point_q(self.q_of_s(s))
    }

    /// Unit tangent at arc length `s`.
    pub fn tangent(&self, s: f64) -> Vector2<f64> {
        let d = self.dpoint_dq(self.q_of_s(s));
        d / d.norm()
    }

    /// Signed curvature at arc length `s`.
    pub fn curvature(&self, s: f64) -> f64 {
        let q = self.q_of_s(s);
        let d1 = self.dpoint_dq(q);
        let d2 = self.d2point_dq2(q);
        (d1.x * d2.y - d1.y * d2.x) / d1.norm().powi(3)
    }
}

/// Second derivatives of the natural cubic spline through `(knots, points)`.
fn natural_spline_second_derivatives(
    knots: &[f64],
    points: &[Vector2<f64>],
) -> Vec<Vector2<f64>> {
    let n = knots.len();
    let mut second = vec![Vector2::zeros(); n];
    if n < 3 {
        return second;
    }
    // Thomas algorithm on the tridiagonal system; natural BCs pin the ends.
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![Vector2::zeros(); n];
    diag[0] = 1.0;
    diag[n - 1] = 1.0;
    for i in 1..n - 1 {
        let h0 = knots[i] - knots[i - 1];
        let h1 = knots[i + 1] - knots[i];
        sub[i] = h0 / 6.0;
        diag[i] = (h0 + h1) / 3.0;
        sup[i] = h1 / 6.0;
        rhs[i] = (points[i + 1] - points[i]) / h1 - (points[i] - points[i - 1]) / h0;
    }
    for i in 1..n {
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] = rhs[i] - rhs[i - 1] * w;
    }
    second[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        second[i] = (rhs[i] - second[i + 1] * sup[i]) / diag[i];
    }
    second
}
