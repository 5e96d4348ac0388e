//! Reference midlines, tubular charts and shrinking strip neighbourhoods.
//!
//! A ribbon's flat reference state is a planar strip of length `l` and width
//! `eps` around an arc-length midline `B`.  The tubular chart
//! `chi(x1, x2) = B(x1) + x2 N(x1)` identifies the strip with the rectangle
//! `[0, l] x [-eps/2, eps/2]`; its director matrix `D = (B' | N)` is a
//! rotation, and the width-`eps` chart has `D_eps = ((1 - eps x2 k) B' | N)`
//! with `det D_eps = 1 - eps x2 k`, where `k` is the signed curvature of `B`
//! and `x2` ranges over `[-1/2, 1/2]` in rescaled coordinates.

use crate::grid::adaptive_simpson;
use crate::spline::ArcSpline;
use crate::{Grid, Result, RibbonError};
use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Serializable description of a reference midline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum CurveSpec {
    /// Straight midline of the given length: the flat rectangular strip.
    FlatRectangle { length: f64 },
    /// Circular arc of the given length and radius (positive curvature,
    /// i.e. the midline bends towards the normal).
    CircularArc { length: f64, radius: f64 },
    /// Arc-length reparametrised natural cubic spline through the control
    /// points; the length is derived from the control points.
    Spline { control_points: Vec<[f64; 2]> },
}

/// Planar arc-length curve with analytic derivatives.
pub(crate) trait CurveGeom: Send + Sync {
    fn point(&self, t: f64) -> Vector2<f64>;
    /// Unit tangent `B'`.
    fn tangent(&self, t: f64) -> Vector2<f64>;
    /// Signed curvature `k = B'' . N`.
    fn curvature(&self, t: f64) -> f64;
    fn length(&self) -> f64;
    /// Largest half-width before the offset curves `B + w N` self-intersect
    /// for global (non-curvature) reasons; `f64::INFINITY` when unlimited.
    fn clearance(&self) -> f64;
}

struct LineGeom {
    length: f64,
}

impl CurveGeom for LineGeom {
    fn point(&self, t: f64) -> Vector2<f64> {
        Vector2::new(t, 0.0)
    }
    fn tangent(&self, _t: f64) -> Vector2<f64> {
        Vector2::new(1.0, 0.0)
    }
    fn curvature(&self, _t: f64) -> f64 {
        0.0
    }
    fn length(&self) -> f64 {
        self.length
    }
    fn clearance(&self) -> f64 {
        f64::INFINITY
    }
}

struct ArcGeom {
    length: f64,
    radius: f64,
}

impl CurveGeom for ArcGeom {
    fn point(&self, t: f64) -> Vector2<f64> {
        let phi = t / self.radius;
        // Starts at the origin heading along e1, center at (0, R): the
        // normal N = rot90(B') points towards the center, so k = +1/R.
        Vector2::new(self.radius * phi.sin(), self.radius * (1.0 - phi.cos()))
    }
    fn tangent(&self, t: f64) -> Vector2<f64> {
        let phi = t / self.radius;
        Vector2::new(phi.cos(), phi.sin())
    }
    fn curvature(&self, _t: f64) -> f64 {
        1.0 / self.radius
    }
    fn length(&self) -> f64 {
        self.length
    }
    fn clearance(&self) -> f64 {
        // The inner offset collapses at distance R; beyond 2R even the outer
        // offsets of opposite ends can meet.  The curvature bound is the
        // binding one for admissible widths, but keep a finite cap.
        2.0 * self.radius
    }
}

struct SplineGeom {
    spline: ArcSpline,
}

impl CurveGeom for SplineGeom {
    fn point(&self, t: f64) -> Vector2<f64> {
        self.spline.point(t)
    }
    fn tangent(&self, t: f64) -> Vector2<f64> {
        self.spline.tangent(t)
    }
    fn curvature(&self, t: f64) -> f64 {
        self.spline.curvature(t)
    }
    fn length(&self) -> f64 {
        self.spline.total_len()
    }
    fn clearance(&self) -> f64 {
        f64::INFINITY
    }
}

/// Rotates a planar vector by +90 degrees.
pub(crate) fn rot90(v: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v.y, v.x)
}

/// Arc-length reference midline with its tubular-chart data sampled on a
/// grid and evaluable at arbitrary parameters.
#[derive(Clone)]
pub struct ReferenceCurve {
    geom: Arc<dyn CurveGeom>,
    /// Sampling grid on `[0, length]`.
    pub grid: Grid,
    /// Midline points at the nodes.
    pub b: Vec<Vector2<f64>>,
    /// Unit normals at the nodes.
    pub n: Vec<Vector2<f64>>,
    /// Signed curvature at the nodes.
    pub k: Vec<f64>,
    /// Sup of |k| over a dense sample.
    pub k_sup: f64,
    /// Largest admissible strip width.
    pub eps_max: f64,
}

impl std::fmt::Debug for ReferenceCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReferenceCurve")
            .field("length", &self.length())
            .field("grid", &self.grid)
            .field("k_sup", &self.k_sup)
            .field("eps_max", &self.eps_max)
            .finish()
    }
}

impl ReferenceCurve {
    /// Midline length.
    pub fn length(&self) -> f64 {
        self.grid.len()
    }

    /// Midline point at parameter `t`.
    pub fn b_at(&self, t: f64) -> Vector2<f64> {
        self.geom.point(t)
    }

    /// Unit tangent `B'` at `t`.
    pub fn tangent_at(&self, t: f64) -> Vector2<f64> {
        self.geom.tangent(t)
    }

    /// Unit normal `N = rot90(B')` at `t`.
    pub fn normal_at(&self, t: f64) -> Vector2<f64> {
        rot90(self.geom.tangent(t))
    }

    /// Signed curvature at `t`.
    pub fn k_at(&self, t: f64) -> f64 {
        self.geom.curvature(t)
    }

    /// Director matrix `D(t) = (B' | N)`: a rotation, so `det D = 1`.
    pub fn d_at(&self, t: f64) -> Matrix2<f64> {
        let tg = self.tangent_at(t);
        let nm = rot90(tg);
        Matrix2::new(tg.x, nm.x, tg.y, nm.y)
    }

    /// Tubular chart `chi(x1, x2) = B(x1) + x2 N(x1)` (unrescaled transverse
    /// coordinate).
    pub fn chart(&self, x1: f64, x2: f64) -> Vector2<f64> {
        self.b_at(x1) + self.normal_at(x1) * x2
    }
}

/// Builds the reference data for a curve spec on a grid with `cells` cells.
pub fn build_reference(spec: &CurveSpec, cells: usize) -> Result<ReferenceCurve> {
    let geom: Arc<dyn CurveGeom> = match spec {
        CurveSpec::FlatRectangle { length } => {
            if !(length.is_finite() && *length > 0.0) {
                return Err(RibbonError::InvalidInput(format!(
                    "flat-rectangle length must be positive, got {length}"
                )));
            }
            Arc::new(LineGeom { length: *length })
        }
        CurveSpec::CircularArc { length, radius } => {
            if !(length.is_finite() && *length > 0.0) {
                return Err(RibbonError::InvalidInput(format!(
                    "circular-arc length must be positive, got {length}"
                )));
            }
            if !(radius.is_finite() && *radius > 0.0) {
                return Err(RibbonError::InvalidInput(format!(
                    "circular-arc radius must be positive, got {radius}"
                )));
            }
            if *length >= 2.0 * std::f64::consts::PI * *radius {
                return Err(RibbonError::InvalidInput(format!(
                    "circular-arc length {length} is at least a full turn of radius {radius}; \
                     the strip would self-overlap"
                )));
            }
            Arc::new(ArcGeom {
                length: *length,
                radius: *radius,
            })
        }
        CurveSpec::Spline { control_points } => {
            let spline = ArcSpline::new(control_points)?;
            Arc::new(SplineGeom { spline })
        }
    };

    let grid = Grid::new(geom.length(), cells)?;

    let mut b = Vec::with_capacity(grid.nodes());
    let mut n = Vec::with_capacity(grid.nodes());
    let mut k = Vec::with_capacity(grid.nodes());
    for i in 0..grid.nodes() {
        let t = grid.t(i);
        b.push(geom.point(t));
        let tg = geom.tangent(t);
        n.push(rot90(tg));
        k.push(geom.curvature(t));
    }

    // Sup-norm of the curvature over a dense sample (finer than the grid).
    let dense = 8 * grid.cells().max(256);
    let mut k_sup = 0.0f64;
    for i in 0..=dense {
        let t = geom.length() * i as f64 / dense as f64;
        k_sup = k_sup.max(geom.curvature(t).abs());
    }

    let curvature_limit = if k_sup > 0.0 { 0.5 / k_sup } else { f64::INFINITY };
    let eps_max = curvature_limit.min(geom.clearance());

    Ok(ReferenceCurve {
        geom,
        grid,
        b,
        n,
        k,
        k_sup,
        eps_max,
    })
}

/// Width-`eps` strip chart around a reference midline, in rescaled
/// coordinates `x2 in [-1/2, 1/2]`.
#[derive(Clone)]
pub struct StripChart {
    /// Underlying reference data.
    pub reference: ReferenceCurve,
    /// Strip width.
    pub eps: f64,
}

impl std::fmt::Debug for StripChart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StripChart")
            .field("eps", &self.eps)
            .field("reference", &self.reference)
            .finish()
    }
}

impl StripChart {
    /// Builds the chart, validating `0 < eps <= eps_max`.
    pub fn new(reference: &ReferenceCurve, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(RibbonError::InvalidInput(format!(
                "strip width must be positive, got {eps}"
            )));
        }
        if eps > reference.eps_max {
            // Locate the curvature maximum for the error message.
            let dense = 4096usize;
            let mut worst = (0.0f64, 0.0f64);
            for i in 0..=dense {
                let t = reference.length() * i as f64 / dense as f64;
                let kv = reference.k_at(t).abs();
                if kv > worst.1 {
                    worst = (t, kv);
                }
            }
            return Err(RibbonError::ChartOverlap {
                half_width: eps / 2.0,
                location: worst.0,
                curvature: worst.1,
                eps_max: reference.eps_max,
            });
        }
        Ok(Self {
            reference: reference.clone(),
            eps,
        })
    }

    /// Chart map: `chi_eps(x1, x2) = B(x1) + eps x2 N(x1)`, `x2 in [-1/2, 1/2]`.
    pub fn map(&self, x1: f64, x2: f64) -> Vector2<f64> {
        self.reference.chart(x1, self.eps * x2)
    }

    /// Director matrix `D_eps = ((1 - eps x2 k) B' | N)` of the chart.
    pub fn d_eps(&self, x1: f64, x2: f64) -> Matrix2<f64> {
        let tg = self.reference.tangent_at(x1);
        let nm = rot90(tg);
        let f = 1.0 - self.eps * x2 * self.reference.k_at(x1);
        Matrix2::new(f * tg.x, nm.x, f * tg.y, nm.y)
    }

    /// `det D_eps = 1 - eps x2 k(x1)`.
    pub fn det_d_eps(&self, x1: f64, x2: f64) -> f64 {
        1.0 - self.eps * x2 * self.reference.k_at(x1)
    }
}

/// Columns of `D^{-T}`: the dual director pair `(D^1 | D^2)` with
/// `D^alpha . D_beta = delta_{alpha beta}`.
///
/// Fails when `det D <= 0` (the director matrix must be orientation
/// preserving).
pub fn dual_directors(d: &Matrix2<f64>) -> Result<(Vector2<f64>, Vector2<f64>)> {
    let det = d.determinant();
    if det <= 1e-14 {
        return Err(RibbonError::InvalidInput(format!(
            "director matrix must have positive determinant, got {det:.6e}"
        )));
    }
    let inv_t = Matrix2::new(d[(1, 1)], -d[(1, 0)], -d[(0, 1)], d[(0, 0)]) / det;
    Ok((inv_t.column(0).into(), inv_t.column(1).into()))
}

/// Arc length of a curve spec computed independently of `build_reference`
/// (adaptive quadrature of the speed for splines, exact for the others).
pub fn spec_length(spec: &CurveSpec) -> Result<f64> {
    match spec {
        CurveSpec::FlatRectangle { length } | CurveSpec::CircularArc { length, .. } => Ok(*length),
        CurveSpec::Spline { control_points } => {
            let sp = ArcSpline::new(control_points)?;
            Ok(sp.total_len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(cells: usize) -> ReferenceCurve {
        build_reference(&CurveSpec::FlatRectangle { length: 1.0 }, cells).unwrap()
    }

    #[test]
    fn flat_strip_chart_is_the_identity_embedding() {
        let rc = flat(32);
        assert_eq!(rc.k_sup, 0.0);
        assert!(rc.eps_max.is_infinite());
        let chart = StripChart::new(&rc, 0.1).unwrap();
        let p = chart.map(0.3, 0.25);
        assert!((p - Vector2::new(0.3, 0.025)).norm() < 1e-15);
        assert!((chart.det_d_eps(0.3, 0.25) - 1.0).abs() < 1e-15);
        let d = rc.d_at(0.5);
        assert!((d - Matrix2::identity()).norm() < 1e-15);
    }

    #[test]
    fn arc_chart_matches_closed_forms() {
        // Radius 2, length pi: quarter of the full circle of circumference 4pi.
        let rc = build_reference(
            &CurveSpec::CircularArc {
                length: std::f64::consts::PI,
                radius: 2.0,
            },
            64,
        )
        .unwrap();
        assert!((rc.k_sup - 0.5).abs() < 1e-12);
        assert!((rc.eps_max - 1.0).abs() < 1e-12);
        // D(t) is a rotation for every t.
        for &t in &[0.0, 0.7, std::f64::consts::PI] {
            let d = rc.d_at(t);
            assert!((d.determinant() - 1.0).abs() < 1e-14);
            assert!(((d.transpose() * d) - Matrix2::identity()).norm() < 1e-14);
            // B'' = k N.
            let h = 1e-6;
            let b2 = (rc.b_at((t + h).min(rc.length())) - rc.b_at(t.max(h) - h + h) * 2.0
                + rc.b_at(t.max(h) - h))
                / (h * h);
            if t > 0.1 && t < rc.length() - 0.1 {
                let n = rc.normal_at(t);
                assert!((b2 - n * rc.k_at(t)).norm() < 1e-3);
            }
        }
        // det D_eps = 1 -/+ eps/2 * k at the strip edges: 1 -/+ 0.025.
        let chart = StripChart::new(&rc, 0.1).unwrap();
        assert!((chart.det_d_eps(1.0, 0.5) - 0.975).abs() < 1e-12);
        assert!((chart.det_d_eps(1.0, -0.5) - 1.025).abs() < 1e-12);
    }

    #[test]
    fn arc_speed_is_unit_and_normal_points_to_center() {
        let rc = build_reference(
            &CurveSpec::CircularArc {
                length: 2.0,
                radius: 1.5,
            },
            32,
        )
        .unwrap();
        let h = 1e-6;
        for &t in &[0.5, 1.0, 1.7] {
            let v = (rc.b_at(t + h) - rc.b_at(t - h)) / (2.0 * h);
            assert!((v.norm() - 1.0).abs() < 1e-9);
            assert!((v - rc.tangent_at(t)).norm() < 1e-9);
            // Center is at (0, R): B + R N = center.
            let c = rc.b_at(t) + rc.normal_at(t) * 1.5;
            assert!((c - Vector2::new(0.0, 1.5)).norm() < 1e-12);
        }
    }

    #[test]
    fn chart_width_validation() {
        let rc = build_reference(
            &CurveSpec::CircularArc {
                length: 1.0,
                radius: 2.0,
            },
            32,
        )
        .unwrap();
        assert!(StripChart::new(&rc, 0.9).is_ok());
        let err = StripChart::new(&rc, 1.5).unwrap_err();
        match err {
            RibbonError::ChartOverlap {
                eps_max, curvature, ..
            } => {
                assert!((eps_max - 1.0).abs() < 1e-12);
                assert!((curvature - 0.5).abs() < 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(StripChart::new(&rc, 0.0).is_err());
    }

    #[test]
    fn full_turn_arc_is_rejected() {
        assert!(build_reference(
            &CurveSpec::CircularArc {
                length: 13.0,
                radius: 2.0,
            },
            32,
        )
        .is_err());
    }

    #[test]
    fn spline_reference_matches_its_control_points() {
        let spec = CurveSpec::Spline {
            control_points: vec![[0.0, 0.0], [0.5, 0.1], [1.0, 0.0]],
        };
        let rc = build_reference(&spec, 64).unwrap();
        // Interpolation: endpoints are hit exactly.
        assert!((rc.b_at(0.0) - Vector2::new(0.0, 0.0)).norm() < 1e-12);
        assert!((rc.b_at(rc.length()) - Vector2::new(1.0, 0.0)).norm() < 1e-9);
        // Arc length exceeds the chord.
        assert!(rc.length() > 1.0);
        assert!(rc.length() < 1.1);
        // eps_max reflects the curvature bound.
        assert!(rc.eps_max <= 0.5 / rc.k_sup + 1e-12);
        // Unit-speed property on a few samples.
        let h = 1e-5;
        for frac in [0.2, 0.5, 0.8] {
            let t = frac * rc.length();
            let v = (rc.b_at(t + h) - rc.b_at(t - h)) / (2.0 * h);
            assert!((v.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dual_directors_invert_the_director_matrix() {
        // Columns (1,1) and (0,1).
        let d = Matrix2::new(1.0, 0.0, 1.0, 1.0);
        let (d1, d2) = dual_directors(&d).unwrap();
        assert!((d1 - Vector2::new(1.0, 0.0)).norm() < 1e-15);
        assert!((d2 - Vector2::new(-1.0, 1.0)).norm() < 1e-15);
        // Biorthogonality for a generic positively oriented matrix.
        let g = Matrix2::new(0.8, 0.3, -0.2, 1.1);
        let (g1, g2) = dual_directors(&g).unwrap();
        let c1: Vector2<f64> = g.column(0).into();
        let c2: Vector2<f64> = g.column(1).into();
        assert!((g1.dot(&c1) - 1.0).abs() < 1e-14);
        assert!((g1.dot(&c2)).abs() < 1e-14);
        assert!((g2.dot(&c1)).abs() < 1e-14);
        assert!((g2.dot(&c2) - 1.0).abs() < 1e-14);
        // Degenerate input is rejected.
        assert!(dual_directors(&Matrix2::new(1.0, 2.0, 0.5, 1.0)).is_err());
    }

    #[test]
    fn spec_lengths() {
        assert_eq!(
            spec_length(&CurveSpec::FlatRectangle { length: 2.0 }).unwrap(),
            2.0
        );
        let sp = CurveSpec::Spline {
            control_points: vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
        };
        assert!((spec_length(&sp).unwrap() - 2.0).abs() < 1e-10);
    }
}
