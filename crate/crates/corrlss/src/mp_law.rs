//! Marčenko–Pastur law: edges, density, CDF and Stieltjes transform.
//!
//! The law with ratio `phi` has density
//! `sqrt((λ₊ - x)(x - λ₋)) / (2π φ x)` on `[λ₋, λ₊] = [(1-√φ)², (1+√φ)²]`
//! plus an atom of mass `(1 - 1/φ)₊` at the origin. Its Stieltjes transform
//! solves `zφm² + (z - (1 - φ))m + 1 = 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Dimensional ratio, optionally tied to concrete dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectRatio {
    phi: f64,
    n: Option<usize>,
    p: Option<usize>,
}

impl AspectRatio {
    pub fn new(phi: f64) -> Result<Self> {
        if !(phi.is_finite() && phi > 0.0) {
            return Err(Error::InvalidArgument(format!("phi must be positive, got {phi}")));
        }
        if (phi - 1.0).abs() < 1e-12 {
            return Err(Error::InvalidArgument("phi = 1 is excluded".into()));
        }
        Ok(Self { phi, n: None, p: None })
    }

    pub fn with_dims(phi: f64, n: usize, p: usize) -> Result<Self> {
        let mut r = Self::new(phi)?;
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        let slack = 1.0 / n.min(p) as f64;
        if (n as f64 / p as f64 - phi).abs() > slack {
            return Err(Error::InvalidArgument(format!(
                "phi = {phi} inconsistent with n/p = {n}/{p}"
            )));
        }
        r.n = Some(n);
        r.p = Some(p);
        Ok(r)
    }

    /// `phi = n / p`.
    pub fn n_over_p(n: usize, p: usize) -> Result<Self> {
        Self::with_dims(n as f64 / p as f64, n, p)
    }

    /// `phi = p / n`, with the dimension fields stored as given.
    pub fn p_over_n(n: usize, p: usize) -> Result<Self> {
        let mut r = Self::new(p as f64 / n as f64)?;
        r.n = Some(n);
        r.p = Some(p);
        Ok(r)
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn n(&self) -> Option<usize> {
        self.n
    }

    pub fn p(&self) -> Option<usize> {
        self.p
    }
}

/// Numerical tolerances of the Stieltjes solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpTolerances {
    /// Relative discriminant size below which the branch is ambiguous.
    pub branch: f64,
    /// Imaginary offset used to continue onto the real axis.
    pub continuation: f64,
}

impl Default for MpTolerances {
    fn default() -> Self {
        Self { branch: 1e-14, continuation: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StieltjesValue {
    pub z: Complex64,
    pub m: Complex64,
    pub m_under: Complex64,
    pub m_prime: Complex64,
}

impl StieltjesValue {
    /// Residual of the defining quadratic.
    pub fn residual(&self, phi: f64) -> f64 {
        let z = self.z;
        let m = self.m;
        (z * phi * m * m + (z - (1.0 - phi)) * m + 1.0).norm()
    }

    /// Derivative of the companion transform.
    pub fn m_under_prime(&self, phi: f64) -> Complex64 {
        phi * self.m_prime + (1.0 - phi) / (self.z * self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpDensity {
    pub density: f64,
    pub atom_mass: f64,
}

pub fn mp_edges(ratio: &AspectRatio) -> (f64, f64) {
    let r = ratio.phi.sqrt();
    ((1.0 - r).powi(2), (1.0 + r).powi(2))
}

pub fn atom_mass(ratio: &AspectRatio) -> f64 {
    (1.0 - 1.0 / ratio.phi).max(0.0)
}

pub fn mp_density(x: f64, ratio: &AspectRatio) -> Result<MpDensity> {
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!("density needs x >= 0, got {x}")));
    }
    let (lo, hi) = mp_edges(ratio);
    let density = if x <= lo || x >= hi {
        0.0
    } else {
        ((hi - x) * (x - lo)).sqrt() / (2.0 * PI * ratio.phi * x)
    };
    Ok(MpDensity { density, atom_mass: atom_mass(ratio) })
}

/// Cumulative distribution function, atom at the origin included.
pub fn mp_cdf(x: f64, ratio: &AspectRatio) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let atom = atom_mass(ratio);
    let (lo, hi) = mp_edges(ratio);
    if x <= lo {
        return atom;
    }
    if x >= hi {
        return 1.0;
    }
    // x = lo + (hi - lo)(1 - cos θ)/2 removes both square-root endpoints.
    let theta_max = (1.0 - 2.0 * (x - lo) / (hi - lo)).clamp(-1.0, 1.0).acos();
    let half = 0.5 * (hi - lo);
    let rule = GaussLegendre::cached(64);
    let phi = ratio.phi;
    let cont = rule.integrate(0.0, theta_max, |th| {
        let s = th.sin();
        let xv = lo + half * (1.0 - th.cos());
        half * half * s * s / (2.0 * PI * phi * xv)
    });
    (atom + cont).min(1.0)
}

/// Quantile of the continuous part scaled to total mass one, by bisection on the CDF.
pub fn mp_quantile(u: f64, ratio: &AspectRatio) -> f64 {
    let (lo, hi) = mp_edges(ratio);
    let atom = atom_mass(ratio);
    if u <= atom {
        return 0.0;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mp_cdf(mid, ratio) < u {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-14 {
            break;
        }
    }
    0.5 * (a + b)
}

fn quadratic_roots(a: Complex64, b: Complex64, c: Complex64) -> (Complex64, Complex64, Complex64) {
    let disc = b * b - 4.0 * a * c;
    let sq = disc.sqrt();
    let sign = if (b.conj() * sq).re >= 0.0 { 1.0 } else { -1.0 };
    let q = -0.5 * (b + sign * sq);
    let r1 = q / a;
    let r2 = if q.norm() > 0.0 { c / q } else { -b / a - r1 };
    (r1, r2, disc)
}

fn select_root(z: Complex64, phi: f64, tol: &MpTolerances) -> Result<Complex64> {
    let a = z * phi;
    let b = z - (1.0 - phi);
    let (r1, r2, disc) = quadratic_roots(a, b, Complex64::new(1.0, 0.0));
    if disc.norm() < tol.branch * z.norm_sqr() {
        return Err(Error::BranchAmbiguity { z, disc: disc.norm() });
    }
    if z.im != 0.0 {
        let s = z.im.signum();
        return Ok(if r1.im * s >= r2.im * s { r1 } else { r2 });
    }
    let shifted = select_root(z + Complex64::new(0.0, tol.continuation), phi, tol)?;
    Ok(if (r1 - shifted).norm() <= (r2 - shifted).norm() { r1 } else { r2 })
}

pub fn mp_stieltjes(z: Complex64, ratio: &AspectRatio) -> Result<StieltjesValue> {
    mp_stieltjes_with(z, ratio, &MpTolerances::default())
}

pub fn mp_stieltjes_with(
    z: Complex64,
    ratio: &AspectRatio,
    tol: &MpTolerances,
) -> Result<StieltjesValue> {
    if !(z.re.is_finite() && z.im.is_finite()) || z.norm() == 0.0 {
        return Err(Error::InvalidArgument(format!("inadmissible z = {z}")));
    }
    let phi = ratio.phi;
    if z.im == 0.0 {
        let (lo, hi) = mp_edges(ratio);
        if z.re > lo && z.re < hi {
            return Err(Error::InvalidArgument(format!("z = {z} lies in the support")));
        }
    }
    let m = select_root(z, phi, tol)?;
    let m_prime = -(phi * m * m + m) / (2.0 * z * phi * m + z - (1.0 - phi));
    let m_under = phi * m - (1.0 - phi) / z;
    Ok(StieltjesValue { z, m, m_under, m_prime })
}

/// `(1 - t)⁻¹ m(ζ / (1 - t))`.
pub fn mp_stieltjes_scaled(zeta: Complex64, t: f64, ratio: &AspectRatio) -> Result<Complex64> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t must lie in [0, 1), got {t}")));
    }
    let s = 1.0 - t;
    Ok(mp_stieltjes(zeta / s, ratio)?.m / s)
}

/// Limiting Stieltjes transform of the n×n correlation matrix `R = YY*`
/// when `ratio.phi() = n / p`: `s(z) = φ m(φz)`.
///
/// The returned `m_under` is `φ s - (1 - φ)/z`, the transform of the p×p
/// matrix `Y*Y`, and `m_prime` is `s'(z)`.
pub fn correlation_stieltjes(z: Complex64, ratio: &AspectRatio) -> Result<StieltjesValue> {
    let phi = ratio.phi;
    let inner = mp_stieltjes(z * phi, ratio)?;
    let m = inner.m * phi;
    let m_prime = inner.m_prime * phi * phi;
    let m_under = phi * m - (1.0 - phi) / z;
    Ok(StieltjesValue { z, m, m_under, m_prime })
}

/// Support of the correlation law from [`correlation_stieltjes`].
pub fn correlation_edges(ratio: &AspectRatio) -> (f64, f64) {
    let (lo, hi) = mp_edges(ratio);
    (lo / ratio.phi, hi / ratio.phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn edges_by_hand() {
        let (lo, hi) = mp_edges(&AspectRatio::new(4.0).unwrap());
        assert_relative_eq!(lo, 1.0);
        assert_relative_eq!(hi, 9.0);
        let (lo, hi) = mp_edges(&AspectRatio::new(0.25).unwrap());
        assert_relative_eq!(lo, 0.25);
        assert_relative_eq!(hi, 2.25);
    }

    #[test]
    fn phi_one_rejected() {
        assert!(AspectRatio::new(1.0).is_err());
        assert!(AspectRatio::new(-2.0).is_err());
        assert!(AspectRatio::with_dims(2.0, 400, 100).is_err());
        assert!(AspectRatio::with_dims(2.0, 400, 200).is_ok());
    }

    #[test]
    fn density_examples() {
        let r = AspectRatio::new(4.0).unwrap();
        assert_eq!(mp_density(0.5, &r).unwrap().density, 0.0);
        assert_relative_eq!(mp_density(5.0, &r).unwrap().density, 1.0 / (10.0 * PI), epsilon = 1e-12);
        assert_relative_eq!(mp_density(5.0, &r).unwrap().atom_mass, 0.75);
        assert!(mp_density(-1.0, &r).is_err());
    }

    #[test]
    fn total_mass_is_one() {
        for phi in [0.25, 0.5, 2.0, 4.0] {
            let r = AspectRatio::new(phi).unwrap();
            let (_, hi) = mp_edges(&r);
            assert!((mp_cdf(hi, &r) - 1.0).abs() < 1e-12);
            assert!((mp_cdf(hi - 1e-9, &r) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn large_z_asymptotics() {
        let r = AspectRatio::new(2.0).unwrap();
        let z = c(0.0, 1e6);
        let v = mp_stieltjes(z, &r).unwrap();
        assert!((v.m + 1.0 / z).norm() < 1e-9);
    }

    #[test]
    fn right_edge_value() {
        let r = AspectRatio::new(4.0).unwrap();
        let v = mp_stieltjes(c(9.0 + 1e-6, 0.0), &r).unwrap();
        assert!((v.m.re + 1.0 / 6.0).abs() < 1e-3, "{}", v.m);
        assert!(v.m.im.abs() < 1e-12);
    }

    #[test]
    fn exact_edge_is_ambiguous() {
        let r = AspectRatio::new(4.0).unwrap();
        assert!(matches!(
            mp_stieltjes(c(9.0, 0.0), &r),
            Err(Error::BranchAmbiguity { .. }) | Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn real_axis_branch_matches_integral() {
        // Outside the support m(x) = ∫ dμ(λ)/(λ - x) is real and, right of the
        // support, negative; left of the support (and off the atom) positive
        // continuous part plus the atom term.
        let r = AspectRatio::new(0.5).unwrap();
        let v = mp_stieltjes(c(5.0, 0.0), &r).unwrap();
        assert!(v.m.re < 0.0);
        let v = mp_stieltjes(c(0.01, 0.0), &r).unwrap();
        assert!(v.m.re > 0.0);
        let v = mp_stieltjes(c(-3.0, 0.0), &r).unwrap();
        assert!(v.m.re > 0.0 && v.m.re < 1.0 / 3.0);
    }

    #[test]
    fn scaled_transform_identities() {
        let r = AspectRatio::new(2.0).unwrap();
        let z0 = c(1.0, 0.7);
        assert_eq!(mp_stieltjes_scaled(z0, 0.0, &r).unwrap(), mp_stieltjes(z0, &r).unwrap().m);
        let got = mp_stieltjes_scaled(0.5 * z0, 0.5, &r).unwrap();
        assert!((got - 2.0 * mp_stieltjes(z0, &r).unwrap().m).norm() < 1e-14);
        let zeta = c(1e4, 1.0);
        let got = mp_stieltjes_scaled(zeta, 0.999, &r).unwrap();
        assert!((got + 1.0 / zeta).norm() / (1.0 / zeta).norm() < 0.2);
    }

    #[test]
    fn correlation_law_has_mean_one_over_phi() {
        // s(z) = -1/z - M1/z² - ..., M1 = ∫x dμ_R = p/n = 1/φ.
        let r = AspectRatio::new(2.0).unwrap();
        let z = c(0.0, 1e4);
        let s = correlation_stieltjes(z, &r).unwrap().m;
        let m1 = -((s + 1.0 / z) * z * z).re;
        assert!((m1 - 0.5).abs() < 1e-3, "{m1}");
        let v = correlation_stieltjes(c(0.3, 0.8), &r).unwrap();
        let resid = v.z * v.m * v.m + (v.z + 1.0 - 0.5) * v.m + 1.0;
        assert!(resid.norm() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let r = AspectRatio::new(0.5).unwrap();
        for u in [0.1, 0.5, 0.9] {
            let x = mp_quantile(u, &r);
            assert!((mp_cdf(x, &r) - u).abs() < 1e-10);
        }
    }
}
