//! Strip bending energies and the width sweep against the midline limit.
//!
//! [`strip_energy`] integrates the bending density of a deformed strip in
//! rescaled chart coordinates.  [`f_hat`] and [`f_relaxed`] are the
//! unrelaxed and relaxed midline functionals of a transversal curvature
//! field.  [`gamma_sweep`] couples the strip width to the lamination count,
//! builds a recovery surface per width, and reports the energy gap between
//! the strip values and the limit functional.

use std::sync::Arc;

use crate::frames::{solve_frame, BoundaryData, Field1, FramedCurve};
use crate::geometry::{ReferenceCurve, StripChart};
use crate::grid::{integrate_piecewise, simpson_weights, Grid};
use crate::limit_energy::{limit_functional, qbar, FrustrationField};
use crate::quadform::{moving_basis, q_star, MovingBasis, RelaxedDensity};
use crate::relaxation::{build_recovery, RecoveryOptions, SymField2};
use crate::ruled_surface::{build_isometry, rescaled_forms, RescaledForms, RulingData};
use crate::{Result, RibbonError};

/// Value of the unrelaxed midline functional.
///
/// The unrelaxed density is finite only on rank-one curvature fields, so the
/// functional either integrates to a number or has no finite value at all.
/// The infinite case is a dedicated variant rather than a float sentinel so
/// that callers cannot silently keep computing with it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyValue {
    /// Integral of the bending density over the midline.
    Finite(f64),
    /// The field leaves the rank-one class; `max_abs_det` records how far.
    Unbounded { max_abs_det: f64 },
}

impl EnergyValue {
    /// The finite value, if there is one.
    pub fn finite(self) -> Option<f64> {
        match self {
            EnergyValue::Finite(v) => Some(v),
            EnergyValue::Unbounded { .. } => None,
        }
    }
}

/// Bending energy of a deformed strip of width `eps`.
///
/// Tensor-product Simpson quadrature of
/// `Q((D^eps)^{-T} (Pi_{y,eps} - Pi0_eps) (D^eps)^{-1}) det D^eps` over the
/// rescaled chart `[0, l] x [-1/2, 1/2]`.  The dual congruence by the chart
/// directors `D^eps` lands both curvature forms in fixed plane coordinates,
/// where the density applies; the natural curvature `Pi0` is stored in
/// midline coordinates and is pushed forward by the midline directors.
pub fn strip_energy(
    density: &RelaxedDensity,
    forms: &RescaledForms,
    strip: &StripChart,
    frustration: &FrustrationField,
) -> Result<f64> {
    let eps = strip.eps;
    if (forms.eps - eps).abs() > 1e-12 * eps.max(1.0) {
        return Err(RibbonError::InvalidInput(format!(
            "strip width mismatch: the curvature forms were rescaled at eps = {}, \
             the chart has eps = {}",
            forms.eps, eps
        )));
    }
    let len = strip.reference.length();
    if (forms.grid.len() - len).abs() > 1e-9 * len {
        return Err(RibbonError::InvalidInput(format!(
            "midline length mismatch: forms cover {}, the chart covers {}",
            forms.grid.len(),
            len
        )));
    }
    let nt = forms.grid.nodes();
    let ns = forms.s_count;
    if nt < 3 || nt % 2 == 0 || ns < 3 || ns % 2 == 0 {
        return Err(RibbonError::InvalidInput(format!(
            "tensor-product Simpson quadrature needs odd node counts on both axes, \
             got {nt} x {ns}"
        )));
    }
    let wt = simpson_weights(nt, forms.grid.h());
    let h2 = 1.0 / (ns - 1) as f64;
    let ws = simpson_weights(ns, h2);
    let mut total = 0.0;
    for i in 0..nt {
        let x1 = forms.grid.t(i);
        let d = strip.reference.d_at(x1);
        for j in 0..ns {
            let x2 = -0.5 + h2 * j as f64;
            let de = strip.d_eps(x1, x2);
            let lab_y = forms.pi[forms.node(i, j)].dual_congruence(&de)?;
            let lab_0 = frustration.at_strip(x1, x2, eps).dual_congruence(&d)?;
            let diff = lab_y - lab_0;
            total += wt[i] * ws[j] * density.q(&diff.vec()) * strip.det_d_eps(x1, x2);
        }
    }
    Ok(total)
}

/// Panel floor used by the midline quadratures: fine enough to resolve the
/// phase blends of laminated curvature fields at every supported count.
const MIDLINE_PANELS: f64 = 4096.0;

/// Unrelaxed midline bending functional of a transversal curvature field.
///
/// The unrelaxed density agrees with `Q` on rank-one tensors and is infinite
/// elsewhere, so the field is first scanned for its largest determinant
/// magnitude; past `1e-8` the functional has no finite value.
pub fn f_hat(density: &RelaxedDensity, reference: &ReferenceCurve, m_field: &SymField2) -> EnergyValue {
    let len = reference.length();
    let dense = 4096usize;
    let mut max_abs_det = 0.0f64;
    for i in 0..=dense {
        let t = len * i as f64 / dense as f64;
        max_abs_det = max_abs_det.max(m_field(t).det().abs());
    }
    if max_abs_det > 1e-8 {
        return EnergyValue::Unbounded { max_abs_det };
    }
    let value = integrate_piecewise(
        &|t| density.q(&m_field(t).vec()) * reference.d_at(t).determinant(),
        0.0,
        len,
        &[],
        len / MIDLINE_PANELS,
    );
    EnergyValue::Finite(value)
}

/// Relaxed midline bending functional of a transversal curvature field:
/// the integral of `Q(M) + alpha_plus (det M)^+ + alpha_minus (det M)^-`
/// weighted by the director determinant.
pub fn f_relaxed(density: &RelaxedDensity, reference: &ReferenceCurve, m_field: &SymField2) -> f64 {
    let len = reference.length();
    integrate_piecewise(
        &|t| q_star(density, &m_field(t)) * reference.d_at(t).determinant(),
        0.0,
        len,
        &[],
        len / MIDLINE_PANELS,
    )
}

/// Controls of the width sweep.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Dyadic anchor of the width-to-count coupling
    /// `n(eps) = max(3, round(log2(eps0 / eps)))`.
    pub eps0: f64,
    /// When `false` the count of the widest entry is used for every width,
    /// decoupling the oscillation scale from the strip width.
    pub couple: bool,
    /// Grid resolution (cells) of the recovery fields and surfaces.
    pub cells: usize,
    /// Laminate construction controls.  The default keeps phase blends
    /// `O(1)`-Lipschitz relative to the oscillation scale so that the ruled
    /// charts stay invertible across the coupled strip widths.
    pub recovery: RecoveryOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            eps0: 1.6,
            couple: true,
            cells: 256,
            recovery: RecoveryOptions {
                blend_fraction: 0.8,
                blend_decay: false,
                ..RecoveryOptions::default()
            },
        }
    }
}

/// Result of a width sweep: per-width strip energies against the limit.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    /// Strip widths, strictly decreasing.
    pub eps: Vec<f64>,
    /// Lamination count used per width.
    pub n: Vec<usize>,
    /// Strip energy of the recovery surface per width.
    pub j_eps: Vec<f64>,
    /// Value of the limit functional.
    pub j_limit: f64,
    /// Signed gaps `j_eps - j_limit`.
    pub gaps: Vec<f64>,
    /// Successive log-log slopes of `|gap|` against `eps` (one fewer entry
    /// than widths; zero where a gap is below roundoff).
    pub slopes: Vec<f64>,
}

fn lamination_count(eps0: f64, eps: f64) -> usize {
    let n = (eps0 / eps).log2().round();
    if n < 3.0 {
        3
    } else {
        n as usize
    }
}

/// One sweep entry: build the laminated recovery at count `n`, frame it,
/// rule it, and integrate the strip energy at width `eps`.
fn sweep_entry(
    density: &RelaxedDensity,
    basis: &MovingBasis,
    reference: &ReferenceCurve,
    frustration: &FrustrationField,
    m_field: &SymField2,
    bd: &BoundaryData,
    eps: f64,
    n: usize,
    options: &SweepOptions,
) -> Result<f64> {
    let grid = Grid::new(reference.length(), options.cells)?;
    let rec = build_recovery(basis, m_field, bd, n, &grid, &options.recovery)?;
    let path = solve_frame(&rec.generator(), &grid);
    let ruling = RulingData::from_recovery(&rec);
    let surface = build_isometry(reference, &path, &ruling)?;
    let strip = StripChart::new(reference, eps)?;
    let forms = rescaled_forms(&surface, &strip)?;
    strip_energy(density, &forms, &strip, frustration)
}

/// Width sweep of the strip energy along recovery surfaces of framed-curve
/// data, against the limit functional of the same data.
///
/// Per width, the transversally minimal curvature field of the moments is
/// laminated at the coupled count, framed, corrected to the boundary data,
/// and ruled into an isometric surface whose strip energy is integrated.
/// Entries are independent and run in parallel.
///
/// Degenerate moment data (vanishing tangential bending moment) is outside
/// the ruled construction: it is accepted only in the fully flat unfrustrated
/// case, where the recovery is the identity strip.
pub fn gamma_sweep(
    density: &RelaxedDensity,
    reference: &ReferenceCurve,
    frustration: &FrustrationField,
    fc: &FramedCurve,
    bd: &BoundaryData,
    eps_list: &[f64],
    options: &SweepOptions,
) -> Result<EnergyReport> {
    if eps_list.is_empty() {
        return Err(RibbonError::InvalidInput("the width list is empty".into()));
    }
    for pair in eps_list.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(RibbonError::InvalidInput(format!(
                "the width list must be strictly decreasing, got {} before {}",
                pair[0], pair[1]
            )));
        }
    }
    if !(eps_list[0].is_finite() && eps_list[eps_list.len() - 1] > 0.0) {
        return Err(RibbonError::InvalidInput(
            "strip widths must be finite and positive".into(),
        ));
    }
    if !(options.eps0.is_finite() && options.eps0 > 0.0) {
        return Err(RibbonError::InvalidInput(format!(
            "the coupling anchor must be positive, got {}",
            options.eps0
        )));
    }
    if fc.grid != reference.grid {
        return Err(RibbonError::InvalidInput(format!(
            "framed-curve grid ({} cells over {}) does not match the reference \
             ({} cells over {})",
            fc.grid.cells(),
            fc.grid.len(),
            reference.grid.cells(),
            reference.grid.len()
        )));
    }

    let (j_limit, _trace) = limit_functional(density, reference, frustration, &fc.mu, &fc.tau)?;

    // Transversally minimal curvature field of the moments, in fixed plane
    // coordinates.  Probe every node and midpoint first so the closure can
    // rely on successful evaluation.
    let mu_f = Field1::from_samples_linear(fc.grid, fc.mu.clone())?;
    let tau_f = Field1::from_samples_linear(fc.grid, fc.tau.clone())?;
    for i in 0..=2 * fc.grid.cells() {
        let t = fc.grid.len() * i as f64 / (2 * fc.grid.cells()) as f64;
        qbar(density, reference, frustration, t, mu_f.eval(t), tau_f.eval(t))?;
    }
    let m_field: SymField2 = {
        let density = density.clone();
        let reference = reference.clone();
        let frustration = frustration.clone();
        let (mu_f, tau_f) = (mu_f.clone(), tau_f.clone());
        Arc::new(move |t| {
            qbar(&density, &reference, &frustration, t, mu_f.eval(t), tau_f.eval(t))
                .expect("transversal minimisation succeeded on the probe grid")
                .m_star
        })
    };

    // Degeneracy screen: the ruled construction needs the tangential bending
    // moment bounded away from zero on the middle half of the midline.
    let len = reference.length();
    let dense = 2048usize;
    let mut sup_m = 0.0f64;
    let mut inf_mu_mid = f64::INFINITY;
    for i in 0..=dense {
        let t = len * i as f64 / dense as f64;
        sup_m = sup_m.max(m_field(t).norm());
        if (0.25 * len..=0.75 * len).contains(&t) {
            inf_mu_mid = inf_mu_mid.min(mu_f.eval(t).abs());
        }
    }
    let trivial = sup_m <= 1e-11;
    if trivial && !frustration.is_zero() {
        return Err(RibbonError::Unsupported(
            "frustrated data without bending moments: the flat strip is the only \
             admissible recovery and it cannot relieve a nonzero natural curvature"
                .into(),
        ));
    }
    if !trivial && inf_mu_mid <= 1e-10 {
        return Err(RibbonError::Unsupported(
            "the tangential bending moment vanishes on the middle half of the \
             midline; the ruled recovery construction needs it bounded away from zero"
                .into(),
        ));
    }

    let n_first = lamination_count(options.eps0, eps_list[0]);
    let entries: Vec<(f64, usize)> = eps_list
        .iter()
        .map(|&eps| {
            let n = if options.couple {
                lamination_count(options.eps0, eps)
            } else {
                n_first
            };
            (eps, n)
        })
        .collect();

    let basis = moving_basis(density, reference)?;
    let j_eps: Vec<f64> = std::thread::scope(|scope| {
        let handles: Vec<_> = entries
            .iter()
            .map(|&(eps, n)| {
                let m_field = m_field.clone();
                let basis = &basis;
                scope.spawn(move || {
                    sweep_entry(
                        density,
                        basis,
                        reference,
                        frustration,
                        &m_field,
                        bd,
                        eps,
                        n,
                        options,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| match h.join() {
                Ok(r) => r,
                Err(panic) => std::panic::resume_unwind(panic),
            })
            .collect::<Result<Vec<f64>>>()
    })?;

    let gaps: Vec<f64> = j_eps.iter().map(|j| j - j_limit).collect();
    let mut slopes = Vec::with_capacity(gaps.len().saturating_sub(1));
    for k in 0..gaps.len().saturating_sub(1) {
        let (g0, g1) = (gaps[k].abs(), gaps[k + 1].abs());
        if g0 <= 1e-14 || g1 <= 1e-14 {
            slopes.push(0.0);
        } else {
            slopes.push((g0.ln() - g1.ln()) / (entries[k].0.ln() - entries[k + 1].0.ln()));
        }
    }

    Ok(EnergyReport {
        eps: entries.iter().map(|e| e.0).collect(),
        n: entries.iter().map(|e| e.1).collect(),
        j_eps,
        j_limit,
        gaps,
        slopes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{framed_curve_from, induced_boundary, SkewField};
    use crate::geometry::{build_reference, CurveSpec};
    use crate::quadform::{build_density, MaterialSpec, SymMat2};
    use crate::ruled_surface::RuledSurface;
    use nalgebra::Vector2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn iso_density() -> RelaxedDensity {
        build_density(&MaterialSpec::Isotropic { isotropic: true }).unwrap()
    }

    fn aniso_density() -> RelaxedDensity {
        build_density(&MaterialSpec::TensorFlat {
            k: [1.0, 1.0, 0.2, 0.0, 0.4, 0.0],
        })
        .unwrap()
    }

    fn flat(cells: usize) -> ReferenceCurve {
        build_reference(&CurveSpec::FlatRectangle { length: 1.0 }, cells).unwrap()
    }

    fn cylinder_surface(cells: usize) -> (ReferenceCurve, RuledSurface) {
        let rc = flat(cells);
        let field = SkewField::new(Field1::Zero, Field1::Const(1.0), Field1::Zero);
        let path = solve_frame(&field, &rc.grid);
        let ruling = RulingData::constant_angle(&rc, 1.0, 0.0);
        let surface = build_isometry(&rc, &path, &ruling).unwrap();
        (rc, surface)
    }

    #[test]
    fn flat_identity_strip_has_zero_energy() {
        let rc = flat(64);
        let field = SkewField::new(Field1::Zero, Field1::Zero, Field1::Zero);
        let path = solve_frame(&field, &rc.grid);
        let ruling = RulingData::tangent_aligned(&rc);
        let surface = build_isometry(&rc, &path, &ruling).unwrap();
        let strip = StripChart::new(&rc, 0.2).unwrap();
        let forms = rescaled_forms(&surface, &strip).unwrap();
        let j = strip_energy(&iso_density(), &forms, &strip, &FrustrationField::zero()).unwrap();
        assert!(j.abs() <= 1e-12, "flat strip energy {j}");
    }

    #[test]
    fn cylinder_strip_energy_matches_midline_length() {
        let (rc, surface) = cylinder_surface(128);
        let strip = StripChart::new(&rc, 0.1).unwrap();
        let forms = rescaled_forms(&surface, &strip).unwrap();
        let j = strip_energy(&iso_density(), &forms, &strip, &FrustrationField::zero()).unwrap();
        assert!(
            (j - rc.length()).abs() <= 1e-6,
            "cylinder strip energy {j}, expected {}",
            rc.length()
        );
    }

    #[test]
    fn cylinder_strip_energy_with_relieving_frustration_vanishes() {
        let (rc, surface) = cylinder_surface(128);
        let strip = StripChart::new(&rc, 0.1).unwrap();
        let forms = rescaled_forms(&surface, &strip).unwrap();
        let fr = FrustrationField::constant(SymMat2::new(1.0, 0.0, 0.0));
        let j = strip_energy(&iso_density(), &forms, &strip, &fr).unwrap();
        assert!(j.abs() <= 1e-10, "relieved cylinder strip energy {j}");
    }

    #[test]
    fn strip_energy_rejects_width_mismatch() {
        let (rc, surface) = cylinder_surface(64);
        let strip = StripChart::new(&rc, 0.1).unwrap();
        let forms = rescaled_forms(&surface, &strip).unwrap();
        let other = StripChart::new(&rc, 0.2).unwrap();
        let err = strip_energy(&iso_density(), &forms, &other, &FrustrationField::zero());
        assert!(matches!(err, Err(RibbonError::InvalidInput(_))), "{err:?}");
    }

    #[test]
    fn relaxed_functional_examples() {
        let d = iso_density();
        let rc = flat(64);
        let zero: SymField2 = Arc::new(|_| SymMat2::ZERO);
        assert_eq!(f_relaxed(&d, &rc, &zero), 0.0);

        // Identity field: Q(I) = 2 and the determinant term adds alpha_plus.
        let ident: SymField2 = Arc::new(|_| SymMat2::new(1.0, 0.0, 1.0));
        let v = f_relaxed(&d, &rc, &ident);
        assert!((v - 4.0).abs() <= 1e-10, "identity field value {v}");

        // Indefinite field with det = -1/4.
        let m = SymMat2::new(1.0, 0.5, 0.0);
        let field: SymField2 = Arc::new(move |_| m);
        let expected = d.q(&m.vec()) + d.alpha_minus * 0.25;
        let v = f_relaxed(&d, &rc, &field);
        assert!(
            (v - expected).abs() <= 1e-10,
            "indefinite field value {v}, expected {expected}"
        );
    }

    #[test]
    fn unrelaxed_functional_flags_indefinite_fields() {
        let d = iso_density();
        let rc = flat(64);
        let ident: SymField2 = Arc::new(|_| SymMat2::new(1.0, 0.0, 1.0));
        match f_hat(&d, &rc, &ident) {
            EnergyValue::Unbounded { max_abs_det } => {
                assert!((max_abs_det - 1.0).abs() <= 1e-12);
            }
            other => panic!("identity field should have no finite value, got {other:?}"),
        }
    }

    #[test]
    fn rank_one_fields_have_equal_functionals() {
        let d = aniso_density();
        let rc = flat(64);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0077);
        for _ in 0..20 {
            let amp = rng.gen_range(0.2..2.0);
            let wob = rng.gen_range(0.0..1.0);
            let theta0 = rng.gen_range(0.0..std::f64::consts::TAU);
            let twist = rng.gen_range(-2.0..2.0);
            let field: SymField2 = Arc::new(move |t| {
                let lambda = amp + wob * (std::f64::consts::TAU * t).sin();
                let theta = theta0 + twist * t;
                let p = Vector2::new(theta.cos(), theta.sin());
                SymMat2::new(lambda * p.x * p.x, lambda * p.x * p.y, lambda * p.y * p.y)
            });
            let fh = f_hat(&d, &rc, &field)
                .finite()
                .expect("rank-one field must have a finite unrelaxed value");
            let fr = f_relaxed(&d, &rc, &field);
            assert!(
                (fh - fr).abs() <= 1e-12 * (1.0 + fr.abs()),
                "unrelaxed {fh} differs from relaxed {fr}"
            );
        }
    }

    /// Laminated fixture: an anisotropic density and a positive-determinant
    /// curvature target, recovered against the boundary data of its own
    /// moment field.
    fn laminated_recovery(
        n: usize,
        cells: usize,
    ) -> (RelaxedDensity, ReferenceCurve, crate::relaxation::RecoveryFields) {
        let density = aniso_density();
        let rc = flat(cells);
        let basis = moving_basis(&density, &rc).unwrap();
        let limit = SkewField::new(Field1::Zero, Field1::Const(1.0), Field1::Const(0.015));
        let bd = induced_boundary(&limit, &rc, &rc.grid).unwrap();
        let target = SymMat2::new(1.0, 0.015, 0.04);
        let m_field: SymField2 = Arc::new(move |_| target);
        let options = RecoveryOptions {
            blend_fraction: 0.8,
            blend_decay: false,
            ..RecoveryOptions::default()
        };
        let rec = build_recovery(&basis, &m_field, &bd, n, &rc.grid, &options).unwrap();
        (density, rc, rec)
    }

    #[test]
    fn unrelaxed_functional_matches_recovery_energy() {
        let (density, rc, rec) = laminated_recovery(8, 256);
        let m_field: SymField2 = {
            let rec = rec.clone();
            Arc::new(move |t| rec.m_at(t))
        };
        let fh = f_hat(&density, &rc, &m_field)
            .finite()
            .expect("recovery fields are rank-one by construction");
        let fr = f_relaxed(&density, &rc, &m_field);
        assert!(
            (fh - fr).abs() <= 1e-10 * (1.0 + fr.abs()),
            "unrelaxed {fh} vs relaxed {fr} on a rank-one field"
        );
        let e = rec.energy();
        assert!(
            (fh - e).abs() <= 1e-5 * (1.0 + e.abs()),
            "unrelaxed functional {fh} vs recovery energy {e}"
        );
    }

    #[test]
    fn congruence_shift_leaves_strip_energy_invariant() {
        let (rc, surface) = cylinder_surface(64);
        let strip = StripChart::new(&rc, 0.1).unwrap();
        let forms = rescaled_forms(&surface, &strip).unwrap();
        let d = aniso_density();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0088);
        for _ in 0..5 {
            let base = SymMat2::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let fr0 = FrustrationField::constant(base);
            let j0 = strip_energy(&d, &forms, &strip, &fr0).unwrap();

            // Plane-coordinate shift field and its two congruent images.
            let coeffs: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-0.4..0.4));
            let shift = move |t: f64| {
                let s = (std::f64::consts::TAU * t).sin();
                SymMat2::new(
                    coeffs[0] + coeffs[1] * s,
                    coeffs[2] + coeffs[3] * s,
                    coeffs[4] + coeffs[5] * s,
                )
            };
            let mut shifted = RescaledForms {
                grid: forms.grid,
                s_count: forms.s_count,
                eps: forms.eps,
                pi: forms.pi.clone(),
                chart_ts: forms.chart_ts.clone(),
                points: forms.points.clone(),
            };
            for i in 0..forms.grid.nodes() {
                let x1 = forms.grid.t(i);
                for j in 0..forms.s_count {
                    let x2 = -0.5 + j as f64 / (forms.s_count - 1) as f64;
                    let de = strip.d_eps(x1, x2);
                    let node = forms.node(i, j);
                    shifted.pi[node] = shifted.pi[node] + shift(x1).congruence(&de);
                }
            }
            let fr1 = {
                let rc = rc.clone();
                let fr0 = fr0.clone();
                FrustrationField::constant(base).with_family(Arc::new(move |x1, x2, eps| {
                    fr0.at_strip(x1, x2, eps) + shift(x1).congruence(&rc.d_at(x1))
                }))
            };
            let j1 = strip_energy(&d, &shifted, &strip, &fr1).unwrap();
            assert!(
                (j0 - j1).abs() <= 1e-9 * (1.0 + j0.abs()),
                "shifted strip energy {j1} differs from {j0}"
            );
        }
    }

    #[test]
    fn sweep_of_trivial_data_is_identically_zero() {
        let rc = flat(64);
        let fc = framed_curve_from(&Field1::Zero, &Field1::Zero, &rc, false);
        let field = SkewField::new(Field1::Zero, Field1::Zero, Field1::Zero);
        let bd = induced_boundary(&field, &rc, &rc.grid).unwrap();
        let report = gamma_sweep(
            &iso_density(),
            &rc,
            &FrustrationField::zero(),
            &fc,
            &bd,
            &[0.2, 0.1],
            &SweepOptions {
                cells: 64,
                ..SweepOptions::default()
            },
        )
        .unwrap();
        assert!(report.j_limit.abs() <= 1e-14);
        for (j, gap) in report.j_eps.iter().zip(&report.gaps) {
            assert!(j.abs() <= 1e-12, "trivial strip energy {j}");
            assert!(gap.abs() <= 1e-12);
        }
    }

    #[test]
    fn sweep_cylinder_converges_to_limit() {
        let rc = flat(256);
        let fc = framed_curve_from(&Field1::Const(1.0), &Field1::Zero, &rc, false);
        let field = SkewField::new(Field1::Zero, Field1::Const(1.0), Field1::Zero);
        let bd = induced_boundary(&field, &rc, &rc.grid).unwrap();
        let report = gamma_sweep(
            &iso_density(),
            &rc,
            &FrustrationField::zero(),
            &fc,
            &bd,
            &[0.2, 0.1, 0.05],
            &SweepOptions::default(),
        )
        .unwrap();
        assert_eq!(report.n, vec![3, 4, 5]);
        assert!(
            (report.j_limit - rc.length()).abs() <= 1e-10,
            "cylinder limit {}",
            report.j_limit
        );
        let last = *report.gaps.last().unwrap();
        assert!(last.abs() <= 1e-4, "final cylinder gap {last}");
        for gap in &report.gaps {
            assert!(*gap >= -1e-6, "strip energy undercuts the limit: gap {gap}");
        }
    }

    /// Frustration level that moves the transversally minimal field of the
    /// moment data `(mu, tau) = (1, 0.015)` to a positive-determinant
    /// target with transversal curvature `gamma`: the optimality condition
    /// of the det-positive branch places the minimiser at
    /// `pi0_22 - alpha_plus/2`.
    fn laminating_frustration(density: &RelaxedDensity, gamma: f64) -> FrustrationField {
        FrustrationField::constant(SymMat2::new(0.0, 0.0, gamma + density.alpha_plus / 2.0))
    }

    /// Transversal curvature of the laminated sweep target.  Kept small so
    /// the widest strip of the sweep still fits inside the ruled chart of
    /// the three-piece laminate (the ruling swing grows with the square
    /// root of the determinant excess).
    const SWEEP_GAMMA: f64 = 0.004;

    #[test]
    fn sweep_laminated_fixture_gaps_decrease() {
        let density = aniso_density();
        let rc = flat(256);
        let fr = laminating_frustration(&density, SWEEP_GAMMA);

        // The engineered frustration really lands the minimiser on the
        // positive-determinant target.
        let qr = qbar(&density, &rc, &fr, 0.5, 1.0, 0.015).unwrap();
        let target = SymMat2::new(1.0, 0.015, SWEEP_GAMMA);
        assert!(
            (qr.m_star - target).norm() <= 1e-10,
            "transversal minimiser {:?} is not the laminated target",
            qr.m_star
        );
        assert!(qr.det_m > 1e-3, "target determinant {}", qr.det_m);
        assert!(target.det() > 1e-3);

        let fc = framed_curve_from(&Field1::Const(1.0), &Field1::Const(0.015), &rc, false);
        let limit = SkewField::new(Field1::Zero, Field1::Const(1.0), Field1::Const(0.015));
        let bd = induced_boundary(&limit, &rc, &rc.grid).unwrap();
        let report = gamma_sweep(
            &density,
            &rc,
            &fr,
            &fc,
            &bd,
            &[0.2, 0.1, 0.05, 0.025],
            &SweepOptions::default(),
        )
        .unwrap();
        assert_eq!(report.n, vec![3, 4, 5, 6]);

        // Hand value of the limit: the minimiser is constant in t.
        let v = (target - SymMat2::new(0.0, 0.0, SWEEP_GAMMA + density.alpha_plus / 2.0)).vec();
        let expected = density.q(&v) + density.alpha_plus * target.det();
        assert!(
            (report.j_limit - expected).abs() <= 1e-8,
            "laminated limit {} vs hand value {}",
            report.j_limit,
            expected
        );

        println!(
            "laminated sweep gaps {:?} slopes {:?}",
            report.gaps, report.slopes
        );
        for pair in report.gaps.windows(2) {
            assert!(
                pair[1].abs() < pair[0].abs(),
                "gaps not strictly decreasing: {:?}",
                report.gaps
            );
        }
        for gap in &report.gaps {
            assert!(*gap >= -1e-6, "strip energy undercuts the limit: gap {gap}");
        }
    }

    #[test]
    fn sweep_rejects_frustrated_data_without_moments() {
        let rc = flat(64);
        let fc = framed_curve_from(&Field1::Zero, &Field1::Zero, &rc, false);
        let field = SkewField::new(Field1::Zero, Field1::Zero, Field1::Zero);
        let bd = induced_boundary(&field, &rc, &rc.grid).unwrap();
        let fr = FrustrationField::constant(SymMat2::new(1.0, 0.0, 0.0));
        let err = gamma_sweep(
            &iso_density(),
            &rc,
            &fr,
            &fc,
            &bd,
            &[0.2, 0.1],
            &SweepOptions {
                cells: 64,
                ..SweepOptions::default()
            },
        );
        assert!(matches!(err, Err(RibbonError::Unsupported(_))), "{err:?}");
    }

    #[test]
    fn sweep_rejects_vanishing_bending_moment() {
        let rc = flat(64);
        let fc = framed_curve_from(&Field1::Zero, &Field1::Zero, &rc, false);
        let field = SkewField::new(Field1::Zero, Field1::Zero, Field1::Zero);
        let bd = induced_boundary(&field, &rc, &rc.grid).unwrap();
        // Transversal frustration: the minimiser is a nonzero pure-transversal
        // field, which the ruled construction cannot reach.
        let fr = FrustrationField::constant(SymMat2::new(0.0, 0.0, 0.5));
        let err = gamma_sweep(
            &iso_density(),
            &rc,
            &fr,
            &fc,
            &bd,
            &[0.2, 0.1],
            &SweepOptions {
                cells: 64,
                ..SweepOptions::default()
            },
        );
        assert!(matches!(err, Err(RibbonError::Unsupported(_))), "{err:?}");
    }

    #[test]
    fn sweep_rejects_bad_width_lists_and_grids() {
        let rc = flat(64);
        let fc = framed_curve_from(&Field1::Const(1.0), &Field1::Zero, &rc, false);
        let field = SkewField::new(Field1::Zero, Field1::Const(1.0), Field1::Zero);
        let bd = induced_boundary(&field, &rc, &rc.grid).unwrap();
        let d = iso_density();
        let opts = SweepOptions {
            cells: 64,
            ..SweepOptions::default()
        };
        let err = gamma_sweep(&d, &rc, &FrustrationField::zero(), &fc, &bd, &[], &opts);
        assert!(matches!(err, Err(RibbonError::InvalidInput(_))), "{err:?}");
        let err = gamma_sweep(
            &d,
            &rc,
            &FrustrationField::zero(),
            &fc,
            &bd,
            &[0.1, 0.2],
            &opts,
        );
        assert!(matches!(err, Err(RibbonError::InvalidInput(_))), "{err:?}");

        let rc_other = flat(128);
        let err = gamma_sweep(
            &d,
            &rc_other,
            &FrustrationField::zero(),
            &fc,
            &bd,
            &[0.2, 0.1],
            &opts,
        );
        assert!(matches!(err, Err(RibbonError::InvalidInput(_))), "{err:?}");
    }

    #[test]
    fn probe_laminate_ruling() {
        use crate::ruled_surface::chart_width;
        let density = aniso_density();
        let rc = flat(256);
        let basis = moving_basis(&density, &rc).unwrap();
        let limit = SkewField::new(Field1::Zero, Field1::Const(1.0), Field1::Const(0.015));
        let bd = induced_boundary(&limit, &rc, &rc.grid).unwrap();
        for (gamma, correct) in [(0.004, true), (0.004, false)] {
            let target = SymMat2::new(1.0, 0.015, gamma);
            let m_field: SymField2 = Arc::new(move |_| target);
            let options = RecoveryOptions {
                blend_fraction: 0.8,
                blend_decay: false,
                correct,
                ..RecoveryOptions::default()
            };
            let rec = build_recovery(&basis, &m_field, &bd, 3, &rc.grid, &options).unwrap();
            let ruling = RulingData::from_recovery(&rec);
            let eta = chart_width(&rc, &ruling);
            let mut worst = (0.0f64, 0.0f64);
            let n = 20000;
            let mut prev = ruling.p_at(0.0);
            for i in 1..=n {
                let t = i as f64 / n as f64;
                let p = ruling.p_at(t);
                let sl = (p - prev).norm() * n as f64;
                if sl > worst.0 {
                    worst = (sl, t);
                }
                prev = p;
            }
            println!(
                "gamma {gamma} correct {correct}: eta {eta:?} worst p-slope {:.3} at t {:.5}",
                worst.0, worst.1
            );
            println!("  all breaks: {:?}", ruling.breaks());
            let t0 = worst.1;
            for k in -3i32..=3 {
                let t = t0 + k as f64 * 2e-4;
                let p = ruling.p_at(t);
                println!(
                    "  t {t:.6} lambda {:+.6} p ({:+.8}, {:+.8})",
                    ruling.lambda_at(t),
                    p.x,
                    p.y
                );
            }
            let nearby: Vec<f64> = ruling
                .breaks()
                .iter()
                .copied()
                .filter(|b| (b - t0).abs() < 0.02)
                .collect();
            println!("  breaks near: {nearby:?}");
        }
    }

    #[test]
    fn unrelaxed_functional_zero_field() {
        let d = iso_density();
        let rc = flat(64);
        let zero: SymField2 = Arc::new(|_| SymMat2::ZERO);
        match f_hat(&d, &rc, &zero) {
            EnergyValue::Finite(v) => assert_eq!(v, 0.0),
            other => panic!("zero field should be finite, got {other:?}"),
        }
    }
}
