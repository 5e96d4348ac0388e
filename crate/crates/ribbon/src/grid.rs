//! Uniform dyadic grids, composite quadrature and finite-difference stencils.
//!
//! Every sampled field in the crate lives on a [`Grid`]: a uniform partition
//! of `[0, len]` into a power-of-two number of cells.  Dyadic cell counts make
//! refinement studies exact (every coarse node is a fine node) and keep
//! Simpson's rule applicable without remainder intervals.

use crate::{Result, RibbonError};
use nalgebra::Vector3;

/// Uniform grid on `[0, len]` with a power-of-two number of cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    len: f64,
    cells: usize,
}

impl Grid {
    /// Creates a grid with `cells` uniform cells on `[0, len]`.
    ///
    /// `cells` must be a power of two and at least 4; `len` must be positive
    /// and finite.
    pub fn new(len: f64, cells: usize) -> Result<Self> {
        if !(len.is_finite() && len > 0.0) {
            return Err(RibbonError::InvalidInput(format!(
                "grid length must be positive and finite, got {len}"
            )));
        }
        if cells < 4 || !cells.is_power_of_two() {
            return Err(RibbonError::InvalidInput(format!(
                "grid must have a power-of-two cell count of at least 4, got {cells} \
                 (node counts are then a power of two plus one)"
            )));
        }
        Ok(Self { len, cells })
    }

    /// Total length of the interval.
    pub fn len(&self) -> f64 {
        self.len
    }

    /// Number of cells (power of two).
    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Number of nodes, `cells + 1`.
    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        self.len / self.cells as f64
    }

    /// Coordinate of node `i`.
    pub fn t(&self, i: usize) -> f64 {
        debug_assert!(i <= self.cells);
        if i == self.cells {
            self.len
        } else {
            self.len * i as f64 / self.cells as f64
        }
    }

    /// All node coordinates.
    pub fn ts(&self) -> Vec<f64> {
        (0..self.nodes()).map(|i| self.t(i)).collect()
    }

    /// Samples a scalar function at every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.nodes()).map(|i| f(self.t(i))).collect()
    }

    /// Grid with the same length and twice the cells.
    pub fn refined(&self) -> Grid {
        Grid {
            len: self.len,
            cells: self.cells * 2,
        }
    }

    /// Index of the cell containing `t` (clamped to the valid range).
    pub fn cell_of(&self, t: f64) -> usize {
        let raw = (t / self.h()).floor() as isize;
        raw.clamp(0, self.cells as isize - 1) as usize
    }
}

/// Composite Simpson rule over uniformly spaced samples.
///
/// `values.len()` must be odd (even number of cells); `h` is the spacing.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    assert!(
        values.len() >= 3 && values.len() % 2 == 1,
        "Simpson's rule needs an odd sample count, got {}",
        values.len()
    );
    let mut sum = values[0] + values[values.len() - 1];
    for (i, v) in values.iter().enumerate().skip(1).take(values.len() - 2) {
        sum += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    sum * h / 3.0
}

/// Weights `w_i` such that `sum_i w_i f(t_i)` is the composite Simpson rule.
pub fn simpson_weights(nodes: usize, h: f64) -> Vec<f64> {
    assert!(nodes >= 3 && nodes % 2 == 1);
    let mut w = vec![0.0; nodes];
    w[0] = h / 3.0;
    w[nodes - 1] = h / 3.0;
    for (i, wi) in w.iter_mut().enumerate().skip(1).take(nodes - 2) {
        *wi = if i % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 };
    }
    w
}

/// Fourth-order cumulative quadrature of uniformly spaced samples.
///
/// Returns `F` with `F[0] = 0` and `F[i] ≈ ∫_0^{t_i} f`.  Each cell integral
/// uses the cubic through the four nearest samples, so the endpoint value
/// matches composite Newton–Cotes accuracy while every intermediate node gets
/// a consistent running integral.
pub fn cumulative_quadrature(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 4, "cumulative quadrature needs at least 4 samples");
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n - 1 {
        // Integral of f over [t_i, t_{i+1}] from the cubic through four
        // samples bracketing the cell.
        let inc = if i == 0 {
            h / 24.0 * (9.0 * values[0] + 19.0 * values[1] - 5.0 * values[2] + values[3])
        } else if i == n - 2 {
            h / 24.0
                * (9.0 * values[n - 1] + 19.0 * values[n - 2] - 5.0 * values[n - 3]
                    + values[n - 4])
        } else {
            h / 24.0
                * (-values[i - 1] + 13.0 * values[i] + 13.0 * values[i + 1] - values[i + 2])
        };
        acc += inc;
        out[i + 1] = acc;
    }
    out
}

/// Node weights of [`cumulative_quadrature`]'s endpoint value.
///
/// `sum_i w_i f(t_i)` equals the last entry of `cumulative_quadrature`.
pub fn cumulative_endpoint_weights(nodes: usize, h: f64) -> Vec<f64> {
    assert!(nodes >= 4);
    let mut w = vec![0.0; nodes];
    let n = nodes;
    // First cell.
    w[0] += 9.0;
    w[1] += 19.0;
    w[2] += -5.0;
    w[3] += 1.0;
    // Last cell.
    w[n - 1] += 9.0;
    w[n - 2] += 19.0;
    w[n - 3] += -5.0;
    w[n - 4] += 1.0;
    // Interior cells.
    for i in 1..n - 2 {
        w[i - 1] += -1.0;
        w[i] += 13.0;
        w[i + 1] += 13.0;
        w[i + 2] += -1.0;
    }
    for wi in &mut w {
        *wi *= h / 24.0;
    }
    w
}

/// Vector-valued version of [`cumulative_quadrature`].
pub fn cumulative_quadrature_vec3(values: &[Vector3<f64>], h: f64) -> Vec<Vector3<f64>> {
    let n = values.len();
    assert!(n >= 4);
    let mut out = vec![Vector3::zeros(); n];
    let mut acc = Vector3::zeros();
    for i in 0..n - 1 {
        let inc = if i == 0 {
            (values[0] * 9.0 + values[1] * 19.0 - values[2] * 5.0 + values[3]) * (h / 24.0)
        } else if i == n - 2 {
            (values[n - 1] * 9.0 + values[n - 2] * 19.0 - values[n - 3] * 5.0 + values[n - 4])
                * (h / 24.0)
        } else {
            (-values[i - 1] + values[i] * 13.0 + values[i + 1] * 13.0 - values[i + 2])
                * (h / 24.0)
        };
        acc += inc;
        out[i + 1] = acc;
    }
    out
}

/// Adaptive Simpson integration of a smooth scalar function.
///
/// Classic recursive scheme with Richardson acceptance test; `tol` is an
/// absolute tolerance on the whole interval.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson3(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson3(a, fa, m, fm, flm);
        let right = simpson3(m, fm, b, fb, frm);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson3(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, 40)
}

/// Integrates `f` over `[a, b]` splitting at the given breakpoints and using
/// a fixed-order Simpson rule on each smooth piece.
///
/// `min_h` bounds the sub-panel width from above; breakpoints outside the
/// interval are ignored.  Intended for piecewise-smooth integrands whose kink
/// locations are known exactly, where naive uniform quadrature loses its
/// order.
pub fn integrate_piecewise(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    min_h: f64,
) -> f64 {
    assert!(b >= a);
    let mut cuts: Vec<f64> = vec![a, b];
    for &x in breaks {
        if x > a + 1e-15 && x < b - 1e-15 {
            cuts.push(x);
        }
    }
    cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    cuts.dedup_by(|p, q| (*p - *q).abs() < 1e-14);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo < 1e-15 {
            continue;
        }
        // Even panel count, at least 8, resolving min_h.
        let mut panels = ((hi - lo) / min_h).ceil() as usize;
        panels = panels.max(8);
        if panels % 2 == 1 {
            panels += 1;
        }
        let h = (hi - lo) / panels as f64;
        let values: Vec<f64> = (0..=panels).map(|i| f(lo + h * i as f64)).collect();
        total += simpson(&values, h);
    }
    total
}

/// Fourth-order first derivative of uniformly spaced samples.
///
/// Central five-point stencil in the interior, one-sided five-point stencils
/// at the two nodes next to each boundary.
pub fn derivative1(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 5, "fourth-order differentiation needs at least 5 samples");
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = derivative1_at(values, h, i);
    }
    out
}

/// Fourth-order first derivative at a single node.
pub fn derivative1_at(values: &[f64], h: f64, i: usize) -> f64 {
    let n = values.len();
    assert!(n >= 5);
    let v = |j: usize| values[j];
    if i >= 2 && i + 2 < n {
        (v(i - 2) - 8.0 * v(i - 1) + 8.0 * v(i + 1) - v(i + 2)) / (12.0 * h)
    } else if i == 0 {
        (-25.0 * v(0) + 48.0 * v(1) - 36.0 * v(2) + 16.0 * v(3) - 3.0 * v(4)) / (12.0 * h)
    } else if i == 1 {
        (-3.0 * v(0) - 10.0 * v(1) + 18.0 * v(2) - 6.0 * v(3) + v(4)) / (12.0 * h)
    } else if i == n - 2 {
        -(-3.0 * v(n - 1) - 10.0 * v(n - 2) + 18.0 * v(n - 3) - 6.0 * v(n - 4) + v(n - 5))
            / (12.0 * h)
    } else {
        -(-25.0 * v(n - 1) + 48.0 * v(n - 2) - 36.0 * v(n - 3) + 16.0 * v(n - 4) - 3.0 * v(n - 5))
            / (12.0 * h)
    }
}

/// Fourth-order second derivative at a single node.
pub fn derivative2_at(values: &[f64], h: f64, i: usize) -> f64 {
    let n = values.len();
    assert!(n >= 6, "fourth-order second derivatives need at least 6 samples");
    let v = |j: usize| values[j];
    let h2 = h * h;
    if i >= 2 && i + 2 < n {
        (-v(i - 2) + 16.0 * v(i - 1) - 30.0 * v(i) + 16.0 * v(i + 1) - v(i + 2)) / (12.0 * h2)
    } else {
        // One-sided six-point stencils (fourth order).
        let c0: [f64; 6] = [
            15.0 / 4.0,
            -77.0 / 6.0,
            107.0 / 6.0,
            -13.0,
            61.0 / 12.0,
            -5.0 / 6.0,
        ];
        let c1: [f64; 6] = [
            5.0 / 6.0,
            -5.0 / 4.0,
            -1.0 / 3.0,
            7.0 / 6.0,
            -1.0 / 2.0,
            1.0 / 12.0,
        ];
        let acc = |coeffs: &[f64; 6], idx: &mut dyn Iterator<Item = usize>| {
            coeffs
                .iter()
                .zip(idx)
                .map(|(c, j)| c * v(j))
                .sum::<f64>()
                / h2
        };
        if i == 0 {
            acc(&c0, &mut (0..6))
        } else if i == 1 {
            acc(&c1, &mut (0..6))
        } else if i == n - 2 {
            acc(&c1, &mut (0..6).map(|j| n - 1 - j))
        } else {
            acc(&c0, &mut (0..6).map(|j| n - 1 - j))
        }
    }
}

/// Fourth-order second derivative of uniformly spaced samples.
pub fn derivative2(values: &[f64], h: f64) -> Vec<f64> {
    (0..values.len())
        .map(|i| derivative2_at(values, h, i))
        .collect()
}

/// Finite-difference weights on arbitrary nodes (Fornberg's recurrence).
///
/// Returns `w` with `sum_j w[j] f(xs[j]) ≈ f^(order)(x0)`.  The nodes need
/// not be uniform or sorted, only distinct; with `n` nodes the weights are
/// exact on polynomials of degree `n - 1`, so the truncation order is
/// `n - order` (one better at symmetric configurations).
pub fn fd_weights(x0: f64, xs: &[f64], order: usize) -> Vec<f64> {
    let n = xs.len();
    assert!(
        n > order,
        "need more than {order} nodes for derivative order {order}, got {n}"
    );
    let m = order;
    // c[k][j]: weight of node j for derivative order k over the nodes seen
    // so far; columns grow one node per outer iteration.
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            assert!(c3 != 0.0, "repeated node in stencil");
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c.swap_remove(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(Grid::new(0.0, 8).is_err());
        assert!(Grid::new(-1.0, 8).is_err());
        assert!(Grid::new(1.0, 7).is_err());
        assert!(Grid::new(1.0, 2).is_err());
        assert!(Grid::new(1.0, 8).is_ok());
    }

    #[test]
    fn grid_nodes_hit_endpoints() {
        let g = Grid::new(2.5, 16).unwrap();
        assert_eq!(g.nodes(), 17);
        assert_eq!(g.t(0), 0.0);
        assert_eq!(g.t(16), 2.5);
        assert!((g.t(8) - 1.25).abs() < 1e-15);
        assert_eq!(g.cell_of(0.0), 0);
        assert_eq!(g.cell_of(2.5), 15);
    }

    #[test]
    fn simpson_exact_on_cubics() {
        // Simpson's rule integrates cubics exactly: int_0^2 t^3 dt = 4.
        let g = Grid::new(2.0, 8).unwrap();
        let vals = g.sample(|t| t * t * t);
        let integral = simpson(&vals, g.h());
        assert!((integral - 4.0).abs() < 1e-13);
        let w = simpson_weights(vals.len(), g.h());
        let by_weights: f64 = w.iter().zip(&vals).map(|(a, b)| a * b).sum();
        assert!((by_weights - integral).abs() < 1e-14);
    }

    #[test]
    fn simpson_fourth_order_on_smooth() {
        // Halving h must shrink the error by about 16.
        let f = |t: f64| (3.0 * t).sin() + t * t;
        let exact = (1.0 - (3.0f64).cos()) / 3.0 + 1.0 / 3.0;
        let mut errs = Vec::new();
        for cells in [16usize, 32, 64] {
            let g = Grid::new(1.0, cells).unwrap();
            let e = (simpson(&g.sample(f), g.h()) - exact).abs();
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 12.0);
        assert!(errs[1] / errs[2] > 12.0);
    }

    #[test]
    fn cumulative_quadrature_matches_antiderivative() {
        let g = Grid::new(1.0, 64).unwrap();
        let vals = g.sample(|t| (2.0 * t).cos());
        let cum = cumulative_quadrature(&vals, g.h());
        for (i, c) in cum.iter().enumerate() {
            let exact = (2.0 * g.t(i)).sin() / 2.0;
            assert!((c - exact).abs() < 1e-8, "node {i}: {c} vs {exact}");
        }
        // Endpoint weights reproduce the endpoint value exactly.
        let w = cumulative_endpoint_weights(vals.len(), g.h());
        let end: f64 = w.iter().zip(&vals).map(|(a, b)| a * b).sum();
        assert!((end - cum[cum.len() - 1]).abs() < 1e-15);
    }

    #[test]
    fn cumulative_quadrature_is_fourth_order() {
        let f = |t: f64| (5.0 * t).sin().exp();
        let mut errs = Vec::new();
        for cells in [32usize, 64, 128] {
            let g = Grid::new(1.0, cells).unwrap();
            let cum = cumulative_quadrature(&g.sample(f), g.h());
            let fine = adaptive_simpson(&f, 0.0, 1.0, 1e-14);
            errs.push((cum[cum.len() - 1] - fine).abs());
        }
        assert!(errs[0] / errs[1] > 12.0, "{errs:?}");
        assert!(errs[1] / errs[2] > 12.0, "{errs:?}");
    }

    #[test]
    fn cumulative_vec3_matches_scalar() {
        let g = Grid::new(1.0, 32).unwrap();
        let vals: Vec<Vector3<f64>> = g
            .ts()
            .iter()
            .map(|&t| Vector3::new(t, t * t, (t).sin()))
            .collect();
        let cum = cumulative_quadrature_vec3(&vals, g.h());
        for c in 0..3 {
            let scalar: Vec<f64> = vals.iter().map(|v| v[c]).collect();
            let sc = cumulative_quadrature(&scalar, g.h());
            for i in 0..vals.len() {
                assert!((cum[i][c] - sc[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adaptive_simpson_high_accuracy() {
        let val = adaptive_simpson(&|t: f64| 1.0 / (1.0 + t * t), 0.0, 1.0, 1e-13);
        assert!((val - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn piecewise_integration_handles_kinks() {
        // |t - 0.3| on [0,1]: exact integral 0.29.
        let f = |t: f64| (t - 0.3f64).abs();
        let exact = 0.3f64.powi(2) / 2.0 + 0.7f64.powi(2) / 2.0;
        let val = integrate_piecewise(&f, 0.0, 1.0, &[0.3], 0.05);
        assert!((val - exact).abs() < 1e-12, "{val} vs {exact}");
    }

    #[test]
    fn fd_weights_reproduce_classical_stencils() {
        // Central 5-point first derivative on uniform nodes.
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let w = fd_weights(0.0, &xs, 1);
        let expect = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{w:?}");
        }
        // Central 5-point second derivative.
        let w2 = fd_weights(0.0, &xs, 2);
        let expect2 = [
            -1.0 / 12.0,
            16.0 / 12.0,
            -30.0 / 12.0,
            16.0 / 12.0,
            -1.0 / 12.0,
        ];
        for (a, b) in w2.iter().zip(expect2) {
            assert!((a - b).abs() < 1e-13, "{w2:?}");
        }
        // One-sided first derivative matches the 5-point forward stencil.
        let xf = [0.0, 1.0, 2.0, 3.0, 4.0];
        let wf = fd_weights(0.0, &xf, 1);
        let expectf = [-25.0 / 12.0, 48.0 / 12.0, -36.0 / 12.0, 16.0 / 12.0, -3.0 / 12.0];
        for (a, b) in wf.iter().zip(expectf) {
            assert!((a - b).abs() < 1e-13, "{wf:?}");
        }
    }

    #[test]
    fn fd_weights_exact_on_polynomials_nonuniform() {
        // Weights on scattered nodes must differentiate degree <= n-1
        // polynomials exactly.
        let xs = [-1.3, -0.4, 0.15, 0.9, 2.1, 2.7];
        let x0 = 0.35;
        for order in [1usize, 2, 3] {
            let w = fd_weights(x0, &xs, order);
            for deg in 0..xs.len() {
                let f = |t: f64| t.powi(deg as i32);
                let approx: f64 = w.iter().zip(&xs).map(|(wi, &x)| wi * f(x)).sum();
                let mut exact = 0.0;
                if deg >= order {
                    let mut c = 1.0;
                    for k in 0..order {
                        c *= (deg - k) as f64;
                    }
                    exact = c * x0.powi((deg - order) as i32);
                }
                assert!(
                    (approx - exact).abs() < 1e-9 * (1.0 + exact.abs()),
                    "order {order} deg {deg}: {approx} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn derivatives_are_fourth_order() {
        let f = |t: f64| (2.0 * t).sin() + t.powi(3);
        let d1 = |t: f64| 2.0 * (2.0 * t).cos() + 3.0 * t * t;
        let d2 = |t: f64| -4.0 * (2.0 * t).sin() + 6.0 * t;
        let mut errs1 = Vec::new();
        let mut errs2 = Vec::new();
        for cells in [32usize, 64, 128] {
            let g = Grid::new(1.0, cells).unwrap();
            let vals = g.sample(f);
            let e1 = derivative1(&vals, g.h())
                .iter()
                .enumerate()
                .map(|(i, v)| (v - d1(g.t(i))).abs())
                .fold(0.0f64, f64::max);
            let e2 = derivative2(&vals, g.h())
                .iter()
                .enumerate()
                .map(|(i, v)| (v - d2(g.t(i))).abs())
                .fold(0.0f64, f64::max);
            errs1.push(e1);
            errs2.push(e2);
        }
        assert!(errs1[0] / errs1[1] > 12.0, "{errs1:?}");
        assert!(errs1[1] / errs1[2] > 12.0, "{errs1:?}");
        assert!(errs2[0] / errs2[1] > 12.0, "{errs2:?}");
        assert!(errs2[1] / errs2[2] > 10.0, "{errs2:?}");
    }
}
