//! Centering `a_f` and variance `σ_f²` of `tr f(R)` by contour quadrature.
//!
//! Conventions: `phi = n/p`, `s(z)` is the limiting Stieltjes transform of the
//! n×n matrix `R` and `m̲(z) = φs(z) - (1 - φ)/z` that of the p×p matrix `Y*Y`.
//! With counterclockwise contours
//!
//! ```text
//! a_f  = -(2πi)⁻¹ ∮ f(z) [n s(z) + c(z)] dz
//! c(z) = (2s² - s') / (φ(1+s)³ (z - 1/(φ(1+s)²)))
//! σ_f² = (2π²)⁻¹ ∮∮ f(z₁) f(z₂) K(z₁, z₂) dz₁ dz₂
//! K    = -m̲₁'m̲₂'/(m̲₁ - m̲₂)² + φ (z₁s₁)' (z₂s₂)'
//! ```
//!
//! `c(z)` is the O(1) correction of `E tr G(z)` for self-normalized columns;
//! the variance kernel is the real Gaussian kernel minus the contribution of
//! the column-norm fluctuations that self-normalization removes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::contour::{default_pair, try_contour_integrate, Contour, ContourParams, Regime, BASE_ORDER, MAX_REFINEMENTS};
use crate::error::{Error, Result};
use crate::mp_law::{correlation_stieltjes, AspectRatio, StieltjesValue};
pub use crate::test_function::{FunctionKind, TestFunction};

const POLE_TOL: f64 = 1e-8;
const REAL_TOL: f64 = 1e-6;
const CLAMP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFormula {
    /// Leading term plus the self-normalized O(1) correction.
    #[default]
    SelfNormalized,
    /// `(2πi)⁻¹∮ f (-n + 2z(1+zm)m̲ - φ⁻¹(zm̲)') / (z(1+φ⁻¹m̲)) dz` taken literally.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceFormula {
    #[default]
    Universal,
    /// `∂_{z₂}[(z₁m₁ - z₂m₂)/(z₁ - z₂) + φ⁻¹z₁m₁m̲₁z₂m̲₂] / (z₁(1+φ⁻¹m̲₁))` taken literally.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub mean_imag: f64,
    pub mean_residual: f64,
    pub variance_imag: f64,
    pub variance_residual: f64,
    pub nodes_per_segment: usize,
    /// Set when a slightly negative variance was clamped to zero.
    pub clamped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltTarget {
    pub a_f: f64,
    pub sigma2_f: f64,
    pub f: TestFunction,
    pub phi: f64,
    pub n: usize,
    pub p: usize,
    pub contours: (ContourParams, ContourParams),
    pub diagnostics: Diagnostics,
}

fn law(z: Complex64, ratio: &AspectRatio) -> Result<StieltjesValue> {
    correlation_stieltjes(z, ratio)
}

fn require_n(ratio: &AspectRatio) -> Result<usize> {
    ratio
        .n()
        .ok_or_else(|| Error::InvalidArgument("the centering a_f needs n; build the ratio with dimensions".into()))
}

/// Integrand `E tr G(z)` (up to o(1)) under the chosen formula.
fn mean_density(z: Complex64, ratio: &AspectRatio, n: f64, formula: MeanFormula) -> Result<Complex64> {
    let phi = ratio.phi();
    let v = law(z, ratio)?;
    let (s, sp) = (v.m, v.m_prime);
    match formula {
        MeanFormula::SelfNormalized => {
            let one_s = 1.0 + s;
            let pole = z - 1.0 / (phi * one_s * one_s);
            if one_s.norm() < POLE_TOL || pole.norm() < POLE_TOL {
                return Err(Error::PoleProximity(z));
            }
            let corr = (2.0 * s * s - sp) / (phi * one_s * one_s * one_s * pole);
            Ok(n * s + corr)
        }
        MeanFormula::Printed => {
            let mu = v.m_under;
            let mup = v.m_under_prime(phi);
            let den = z * (1.0 + mu / phi);
            if (1.0 + mu / phi).norm() < POLE_TOL {
                return Err(Error::PoleProximity(z));
            }
            let num = -n + 2.0 * z * (1.0 + z * s) * mu - (mu + z * mup) / phi;
            // Sign flipped so that both formulas share the Cauchy convention below.
            Ok(-num / den)
        }
    }
}

pub fn mean_af(f: &TestFunction, ratio: &AspectRatio, contour: &Contour) -> Result<f64> {
    Ok(mean_af_with(f, ratio, contour, MeanFormula::default())?.0)
}

/// Returns `(a_f, imaginary part, quadrature residual, nodes per segment)`.
pub fn mean_af_with(
    f: &TestFunction,
    ratio: &AspectRatio,
    contour: &Contour,
    formula: MeanFormula,
) -> Result<(f64, f64, f64, usize)> {
    let n = require_n(ratio)? as f64;
    let integral = try_contour_integrate(
        |z| Ok(f.eval_complex(z) * mean_density(z, ratio, n, formula)?),
        contour,
    )?;
    let value = -integral.value / Complex64::new(0.0, 2.0 * PI);
    Ok((value.re, value.im, integral.residual, integral.nodes_per_segment))
}

/// Kernel `K(z₁, z₂)` of the default variance formula.
pub fn kernel_dz2(z1: Complex64, z2: Complex64, ratio: &AspectRatio) -> Result<Complex64> {
    let d = (z1 - z2).norm();
    if d < 1e-6 {
        return Err(Error::Coincidence(d));
    }
    let phi = ratio.phi();
    let a = law(z1, ratio)?;
    let b = law(z2, ratio)?;
    Ok(universal_kernel(&a, &b, phi))
}

/// `P(z₁, z₂)` with `∂_{z₂}P = K`: `-m̲₁'/(m̲₁ - m̲₂) + φ(z₁s₁)' z₂s₂`.
pub fn kernel_primitive(z1: Complex64, z2: Complex64, ratio: &AspectRatio) -> Result<Complex64> {
    let phi = ratio.phi();
    let a = law(z1, ratio)?;
    let b = law(z2, ratio)?;
    Ok(-a.m_under_prime(phi) / (a.m_under - b.m_under) + phi * (a.m + a.z * a.m_prime) * b.z * b.m)
}

fn universal_kernel(a: &StieltjesValue, b: &StieltjesValue, phi: f64) -> Complex64 {
    let diff = a.m_under - b.m_under;
    -a.m_under_prime(phi) * b.m_under_prime(phi) / (diff * diff)
        + phi * (a.m + a.z * a.m_prime) * (b.m + b.z * b.m_prime)
}

/// Kernel of [`VarianceFormula::Printed`], including the `1/(z₁(1+φ⁻¹m̲₁))` factor.
pub fn printed_kernel_dz2(z1: Complex64, z2: Complex64, ratio: &AspectRatio) -> Result<Complex64> {
    let d = (z1 - z2).norm();
    if d < 1e-6 {
        return Err(Error::Coincidence(d));
    }
    let phi = ratio.phi();
    let a = law(z1, ratio)?;
    let b = law(z2, ratio)?;
    printed_kernel(&a, &b, phi)
}

fn printed_kernel(a: &StieltjesValue, b: &StieltjesValue, phi: f64) -> Result<Complex64> {
    let (z1, z2) = (a.z, b.z);
    let den = z1 * (1.0 + a.m_under / phi);
    if (1.0 + a.m_under / phi).norm() < POLE_TOL {
        return Err(Error::PoleProximity(z1));
    }
    let a1 = z1 * a.m;
    let a2 = z2 * b.m;
    let da2 = b.m + z2 * b.m_prime;
    let dz = z1 - z2;
    let quotient = (-da2 * dz + (a1 - a2)) / (dz * dz);
    let second = a1 * a.m_under * (b.m_under + z2 * b.m_under_prime(phi)) / phi;
    Ok((quotient + second) / den)
}

struct NodeValue {
    w: Complex64,
    fz: Complex64,
    v: StieltjesValue,
}

fn node_values(f: &TestFunction, ratio: &AspectRatio, nodes: &[(Complex64, Complex64)]) -> Result<Vec<NodeValue>> {
    nodes
        .iter()
        .map(|&(z, w)| {
            let fz = f.eval_complex(z);
            if !(fz.re.is_finite() && fz.im.is_finite()) {
                return Err(Error::NonFinite(z));
            }
            Ok(NodeValue { w, fz, v: law(z, ratio)? })
        })
        .collect()
}

fn double_integral(
    f: &TestFunction,
    ratio: &AspectRatio,
    inner: &Contour,
    outer: &Contour,
    order: usize,
    formula: VarianceFormula,
) -> Result<Complex64> {
    let phi = ratio.phi();
    let a = node_values(f, ratio, &inner.nodes_with_order(order))?;
    let b = node_values(f, ratio, &outer.nodes_with_order(order))?;
    let mut total = Complex64::new(0.0, 0.0);
    match formula {
        VarianceFormula::Universal => {
            let mut sep_a = Complex64::new(0.0, 0.0);
            for x in &a {
                let fw = x.fz * x.w;
                let d1 = x.v.m_under_prime(phi);
                let mut row = Complex64::new(0.0, 0.0);
                for y in &b {
                    let diff = x.v.m_under - y.v.m_under;
                    row += y.fz * y.w * y.v.m_under_prime(phi) / (diff * diff);
                }
                total -= fw * d1 * row;
                sep_a += fw * (x.v.m + x.v.z * x.v.m_prime);
            }
            let sep_b: Complex64 = b.iter().map(|y| y.fz * y.w * (y.v.m + y.v.z * y.v.m_prime)).sum();
            total += phi * sep_a * sep_b;
        }
        VarianceFormula::Printed => {
            for x in &a {
                let mut row = Complex64::new(0.0, 0.0);
                for y in &b {
                    row += y.fz * y.w * printed_kernel(&x.v, &y.v, phi)?;
                }
                total += x.fz * x.w * row;
            }
        }
    }
    Ok(total / (2.0 * PI * PI))
}

pub fn variance_sigma_f(f: &TestFunction, ratio: &AspectRatio, pair: (&Contour, &Contour)) -> Result<f64> {
    Ok(variance_sigma_f_with(f, ratio, pair, VarianceFormula::default())?.0)
}

/// Returns `(σ², imaginary part, quadrature residual, clamped)`.
pub fn variance_sigma_f_with(
    f: &TestFunction,
    ratio: &AspectRatio,
    pair: (&Contour, &Contour),
    formula: VarianceFormula,
) -> Result<(f64, f64, f64, bool)> {
    // For φ < 1 the kernel is analytic at the origin (m̲ has a simple pole there and
    // K = ∂₁∂₂ log(m̲₁ - m̲₂)), so entire f may use the wide rectangles instead of the
    // keyholes, whose slots run close to each other.
    let rectangles;
    let (inner, outer) = if formula == VarianceFormula::Universal
        && pair.0.params.regime == Regime::AvoidOrigin
        && f.coefficients().is_some()
    {
        rectangles = (pair.0.enclosing_rectangle(), pair.1.enclosing_rectangle());
        (&rectangles.0, &rectangles.1)
    } else {
        pair
    };
    let mut order = BASE_ORDER;
    let mut prev = double_integral(f, ratio, inner, outer, order, formula)?;
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_REFINEMENTS.min(2) {
        order *= 2;
        let cur = double_integral(f, ratio, inner, outer, order, formula)?;
        residual = (cur - prev).norm();
        prev = cur;
        if residual < 1e-9 * (1.0 + cur.norm()) {
            break;
        }
    }
    if residual > 1e-6 * (1.0 + prev.norm()) {
        return Err(Error::QuadratureNonConvergence(residual));
    }
    let mut value = prev.re;
    let mut clamped = false;
    if value < 0.0 {
        if value < -CLAMP_TOL * (1.0 + prev.norm()) {
            return Err(Error::Invariant(format!("negative variance {value:e}")));
        }
        value = 0.0;
        clamped = true;
    }
    Ok((value, prev.im, residual, clamped))
}

/// Mean and variance with the default nested contour pair.
pub fn clt_target(f: &TestFunction, ratio: &AspectRatio) -> Result<CltTarget> {
    let (inner, outer) = default_pair(ratio)?;
    clt_target_on(f, ratio, &inner, &outer, MeanFormula::default(), VarianceFormula::default())
}

pub fn clt_target_on(
    f: &TestFunction,
    ratio: &AspectRatio,
    inner: &Contour,
    outer: &Contour,
    mean_formula: MeanFormula,
    variance_formula: VarianceFormula,
) -> Result<CltTarget> {
    let n = require_n(ratio)?;
    let p = ratio.p().unwrap_or(((n as f64) / ratio.phi()).round() as usize);
    let (a_f, mean_imag, mean_residual, nodes) = mean_af_with(f, ratio, inner, mean_formula)?;
    let (sigma2_f, variance_imag, variance_residual, clamped) =
        variance_sigma_f_with(f, ratio, (inner, outer), variance_formula)?;
    if mean_imag.abs() > REAL_TOL * (1.0 + a_f.abs()) {
        return Err(Error::Invariant(format!("a_f has imaginary part {mean_imag:e}")));
    }
    if variance_imag.abs() > REAL_TOL * (1.0 + sigma2_f.abs()) {
        return Err(Error::Invariant(format!("sigma_f^2 has imaginary part {variance_imag:e}")));
    }
    Ok(CltTarget {
        a_f,
        sigma2_f,
        f: f.clone(),
        phi: ratio.phi(),
        n,
        p,
        contours: (inner.params, outer.params),
        diagnostics: Diagnostics {
            mean_imag,
            mean_residual,
            variance_imag,
            variance_residual,
            nodes_per_segment: nodes,
            clamped,
        },
    })
}

/// Exact first two moments of Schott's statistic `tr R̃²` in terms of the
/// mixed moments `β` of self-normalized entries.
pub fn schott_moments(n: usize, p: usize, beta2: f64, beta4: f64, beta11: f64) -> (f64, f64) {
    let (nf, pf) = (n as f64, p as f64);
    let mean = pf + nf * pf * (pf - 1.0) * beta2 * beta2 + nf * (nf - 1.0) * pf * (pf - 1.0) * beta11 * beta11;
    let variance = 2.0 * nf * pf * pf * beta4 * beta4 + 4.0 * pf * pf / (nf * nf);
    (mean, variance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contour::{build_contour, disjoint_pair};
    use approx::assert_relative_eq;

    fn pair(ratio: &AspectRatio) -> (Contour, Contour) {
        default_pair(ratio).unwrap()
    }

    #[test]
    fn mean_of_trace_is_p() {
        let r = AspectRatio::n_over_p(400, 200).unwrap();
        let (k, _) = pair(&r);
        let a = mean_af(&TestFunction::monomial(1), &r, &k).unwrap();
        assert!((a - 200.0).abs() < 1e-8, "{a}");
    }

    #[test]
    fn mean_of_schott_statistic() {
        for (n, p) in [(400, 200), (200, 400), (300, 100)] {
            let r = AspectRatio::n_over_p(n, p).unwrap();
            let (k, _) = pair(&r);
            let a = mean_af(&TestFunction::monomial(2), &r, &k).unwrap();
            let (nf, pf) = (n as f64, p as f64);
            assert_relative_eq!(a, pf + pf * (pf - 1.0) / nf, max_relative = 1e-10);
        }
    }

    #[test]
    fn mean_is_linear() {
        let r = AspectRatio::n_over_p(400, 200).unwrap();
        let (k, _) = pair(&r);
        let f = TestFunction::monomial(2);
        let a = mean_af(&f, &r, &k).unwrap();
        let b = mean_af(&f.scaled(3.7), &r, &k).unwrap();
        assert_relative_eq!(b, 3.7 * a, max_relative = 1e-10);
    }

    #[test]
    fn variance_examples() {
        let r = AspectRatio::n_over_p(400, 200).unwrap();
        let (a, b) = pair(&r);
        let v1 = variance_sigma_f(&TestFunction::monomial(1), &r, (&a, &b)).unwrap();
        assert!(v1 < 1e-6);
        let v2 = variance_sigma_f(&TestFunction::monomial(2), &r, (&a, &b)).unwrap();
        assert_relative_eq!(v2, 1.0, max_relative = 1e-8);
        let v2c = variance_sigma_f(&TestFunction::monomial(2).scaled(2.0), &r, (&a, &b)).unwrap();
        assert_relative_eq!(v2c, 4.0 * v2, max_relative = 1e-10);
    }

    #[test]
    fn printed_variance_agrees_for_schott_statistic() {
        let r = AspectRatio::n_over_p(400, 200).unwrap();
        let (a, b) = pair(&r);
        let f = TestFunction::monomial(2);
        let (v, _, _, _) = variance_sigma_f_with(&f, &r, (&a, &b), VarianceFormula::Printed).unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn kernel_matches_finite_difference_of_primitive() {
        let r = AspectRatio::new(2.0).unwrap();
        let (_, hi) = crate::mp_law::correlation_edges(&r);
        let z1 = Complex64::new(hi + 1.0, 1.0);
        let z2 = Complex64::new(hi + 2.0, 2.0);
        let h = 1e-6;
        let fd = (kernel_primitive(z1, z2 + h, &r).unwrap() - kernel_primitive(z1, z2 - h, &r).unwrap()) / (2.0 * h);
        let k = kernel_dz2(z1, z2, &r).unwrap();
        assert!((fd - k).norm() / k.norm() < 1e-5);
        let kc = kernel_dz2(z1.conj(), z2.conj(), &r).unwrap();
        assert!((kc - k.conj()).norm() < 1e-12 * (1.0 + k.norm()));
        let far = kernel_dz2(z1, Complex64::new(1e6, 1e6), &r).unwrap();
        assert!(far.norm() < 1e-8);
        assert!(matches!(kernel_dz2(z1, z1, &r), Err(Error::Coincidence(_))));
    }

    #[test]
    fn contour_independence() {
        let r = AspectRatio::n_over_p(300, 150).unwrap();
        let base = ContourParams::defaults(&r);
        let f = TestFunction::parse("x^3 + x^2").unwrap();
        let (a, b) = disjoint_pair(&r, base, base.perturbed(0.7, 1.3)).unwrap();
        let t0 = clt_target_on(&f, &r, &a, &b, MeanFormula::default(), VarianceFormula::default()).unwrap();
        let (a2, b2) = disjoint_pair(&r, base.perturbed(0.8, 1.2), base.perturbed(0.6, 1.5)).unwrap();
        let t1 = clt_target_on(&f, &r, &a2, &b2, MeanFormula::default(), VarianceFormula::default()).unwrap();
        assert_relative_eq!(t0.a_f, t1.a_f, max_relative = 1e-6);
        assert_relative_eq!(t0.sigma2_f, t1.sigma2_f, max_relative = 1e-6);
        let _ = build_contour(&r, base).unwrap();
    }

    #[test]
    fn schott_closed_forms() {
        let (n, p) = (400usize, 200usize);
        let (mean, _) = schott_moments(n, p, 1.0 / n as f64, 0.0, 0.0);
        assert_relative_eq!(mean, 200.0 + 200.0 * 199.0 / 400.0, max_relative = 1e-14);
        let nf = n as f64;
        let (_, var) = schott_moments(n, p, 1.0 / nf, 3.0 / (nf * nf), 0.0);
        let pf = p as f64;
        assert_relative_eq!(var, 18.0 * pf * pf / nf.powi(3) + 4.0 * pf * pf / (nf * nf), max_relative = 1e-14);
    }
}
