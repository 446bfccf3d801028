//! Gaussian divisible model: the spectrum of `Y_t = √t W + V` for Gaussian
//! noise `W` (entries of variance `1/n`) and a fixed `n × p` matrix `V` whose
//! `p × p` Gram spectrum is `{dᵢ}`.
//!
//! With `φ = p/n`, `b = 1 + φtm` and `ζ = zb² - tb(1-φ)`, the Stieltjes
//! transform of `Y_t*Y_t` solves `m = (1/p) Σ b/(dᵢ - ζ)`. The inverse map is
//! `Φ_t(ζ) = ζ(1 - φt m₀(ζ))² + (1-φ)t(1 - φt m₀(ζ))`, `m₀` the transform of `{dᵢ}`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 10_000;
const TOLERANCE: f64 = 1e-12;
const RESIDUAL_LIMIT: f64 = 1e-9;
const POLE_TOL: f64 = 1e-13;
pub const DEFAULT_ETA0: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdmModel {
    pub t: f64,
    /// Descending.
    pub base_spectrum: Vec<f64>,
    /// `p / n`.
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GdmPoint {
    pub z: Complex64,
    pub m_t: Complex64,
    pub b_t: Complex64,
    pub zeta_t: Complex64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GdmEdge {
    pub zeta_plus: f64,
    pub lambda_plus_t: f64,
    pub xi_plus: f64,
    /// Sign changes of `Φ_t'` seen left of `ζ₊` on the scan (interior edges are not located).
    pub extra_sign_changes: usize,
}

impl GdmModel {
    pub fn new(t: f64, mut base_spectrum: Vec<f64>, phi: f64) -> Result<Self> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidArgument(format!("t must lie in (0, 1), got {t}")));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::InvalidArgument(format!("phi must be positive, got {phi}")));
        }
        if base_spectrum.is_empty() || base_spectrum.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidArgument("base spectrum must be nonempty, finite and nonnegative".into()));
        }
        base_spectrum.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { t, base_spectrum, phi })
    }

    pub fn d1(&self) -> f64 {
        self.base_spectrum[0]
    }

    /// `C` with `d₁ = p^C`.
    pub fn norm_exponent(&self) -> f64 {
        let p = self.base_spectrum.len() as f64;
        if p <= 1.0 {
            return 0.0;
        }
        self.d1().max(1.0).ln() / p.ln()
    }

    /// `(m₀(ζ), m₀'(ζ))` of the base spectrum.
    pub fn base_transform(&self, zeta: Complex64) -> Result<(Complex64, Complex64)> {
        let mut m = Complex64::new(0.0, 0.0);
        let mut dm = Complex64::new(0.0, 0.0);
        for &d in &self.base_spectrum {
            let r = d - zeta;
            if r.norm() < POLE_TOL {
                return Err(Error::PoleProximity(zeta));
            }
            let inv = 1.0 / r;
            m += inv;
            dm += inv * inv;
        }
        let p = self.base_spectrum.len() as f64;
        Ok((m / p, dm / p))
    }

    fn b_and_zeta(&self, z: Complex64, m: Complex64) -> (Complex64, Complex64) {
        let b = 1.0 + self.phi * self.t * m;
        let zeta = z * b * b - self.t * b * (1.0 - self.phi);
        (b, zeta)
    }

    /// `(RHS(m), dRHS/dm)` of the self-consistent equation.
    fn rhs(&self, z: Complex64, m: Complex64) -> Result<(Complex64, Complex64)> {
        let (b, zeta) = self.b_and_zeta(z, m);
        let (m0, dm0) = self.base_transform(zeta)?;
        let ft = self.phi * self.t;
        let dzeta = (2.0 * z * b - self.t * (1.0 - self.phi)) * ft;
        Ok((b * m0, ft * m0 + b * dm0 * dzeta))
    }

    fn point(&self, z: Complex64, m: Complex64) -> Result<GdmPoint> {
        let (b, zeta) = self.b_and_zeta(z, m);
        let (r, _) = self.rhs(z, m)?;
        Ok(GdmPoint { z, m_t: m, b_t: b, zeta_t: zeta, residual: (m - r).norm() })
    }

    /// Damped fixed-point iteration from `seed`, polished by Newton steps.
    fn iterate(&self, z: Complex64, seed: Complex64) -> Result<GdmPoint> {
        let mut m = seed;
        let mut omega = 0.5;
        let (r, _) = self.rhs(z, m)?;
        let mut res = (r - m).norm();
        let mut it = 0;
        while it < MAX_ITERATIONS && res > TOLERANCE * (1.0 + m.norm()) {
            it += 1;
            let (r, dr) = self.rhs(z, m)?;
            // Newton on m - RHS(m) when it lands in the upper half plane and reduces the residual.
            let newton = m - (m - r) / (1.0 - dr);
            let candidates = [newton, (1.0 - omega) * m + omega * r];
            let mut accepted = false;
            for (k, cand) in candidates.iter().enumerate() {
                if !(cand.re.is_finite() && cand.im.is_finite()) || (z.im > 0.0 && cand.im <= 0.0) {
                    continue;
                }
                let Ok((rc, _)) = self.rhs(z, *cand) else { continue };
                let rc_res = (rc - cand).norm();
                if rc_res < res {
                    m = *cand;
                    res = rc_res;
                    accepted = true;
                    if k == 1 {
                        omega = (omega * 1.5).min(1.0);
                    }
                    break;
                }
            }
            if !accepted {
                omega *= 0.5;
                if omega < 1e-12 {
                    break;
                }
            }
        }
        let pt = self.point(z, m)?;
        if !(pt.residual < RESIDUAL_LIMIT) {
            return Err(Error::FixedPointNonConvergence { iterations: it, residual: pt.residual });
        }
        Ok(pt)
    }

    fn check(&self, pt: &GdmPoint) -> Result<()> {
        if pt.z.im > 0.0 {
            if !(pt.m_t.im > 0.0) || !((pt.z * pt.m_t).im > 0.0) {
                return Err(Error::Invariant(format!("Nevanlinna sign lost at z = {}", pt.z)));
            }
            if !(pt.zeta_t.im > 0.0) {
                return Err(Error::Invariant(format!("Im zeta_t <= 0 at z = {}", pt.z)));
            }
        }
        Ok(())
    }

    /// Solves at `z` (`Im z > 0`), continuing in `η` from the well-conditioned region.
    pub fn solve_mt(&self, z: Complex64) -> Result<GdmPoint> {
        if !(z.im > 0.0) {
            return Err(Error::InvalidArgument(format!("solve_mt needs Im z > 0, got {z}")));
        }
        let start = z.im.max(1.0);
        let mut eta = start;
        let w = Complex64::new(z.re, eta);
        let (seed, _) = self.base_transform(w)?;
        let mut pt = self.iterate(w, seed)?;
        self.check(&pt)?;
        while eta > z.im {
            eta = (eta * 0.25).max(z.im);
            let w = Complex64::new(z.re, eta);
            pt = self.iterate(w, pt.m_t)?;
            self.check(&pt)?;
        }
        Ok(pt)
    }

    /// Solves with an explicit seed and no continuation.
    pub fn solve_mt_from(&self, z: Complex64, seed: Complex64) -> Result<GdmPoint> {
        let pt = self.iterate(z, seed)?;
        self.check(&pt)?;
        Ok(pt)
    }

    pub fn phi_t(&self, zeta: Complex64) -> Result<Complex64> {
        let (m0, _) = self.base_transform(zeta)?;
        let g = 1.0 - self.phi * self.t * m0;
        Ok(zeta * g * g + (1.0 - self.phi) * self.t * g)
    }

    /// `Φ_t'(ζ)` for real `ζ` right of the spectrum.
    pub fn phi_t_prime(&self, zeta: f64) -> Result<f64> {
        let (m0, dm0) = self.base_transform(Complex64::new(zeta, 0.0))?;
        let ft = self.phi * self.t;
        let g = 1.0 - ft * m0.re;
        let dg = -ft * dm0.re;
        Ok(g * g + 2.0 * zeta * g * dg + (1.0 - self.phi) * self.t * dg)
    }

    /// Rightmost critical point of `Φ_t` on `(d₁, d₁ + 1]` and the edge `λ₊,t = Φ_t(ζ₊)`.
    pub fn gdm_edge(&self) -> Result<GdmEdge> {
        let d1 = self.d1();
        let scan = 2000;
        let mut prev: Option<(f64, f64)> = None;
        let mut brackets = Vec::new();
        for k in 1..=scan {
            // Points cluster near d₁, where ζ₊ - d₁ ∼ t².
            let u = (k as f64 / scan as f64).powi(3);
            let zeta = d1 + u;
            let Ok(v) = self.phi_t_prime(zeta) else { continue };
            if let Some((zp, vp)) = prev {
                if vp < 0.0 && v >= 0.0 {
                    brackets.push((zp, zeta));
                }
            }
            prev = Some((zeta, v));
        }
        let Some(&(mut lo, mut hi)) = brackets.last() else {
            return Err(Error::Bracket(format!(
                "Phi_t' has no sign change on (d1, d1 + 1] with d1 = {d1}, t = {}",
                self.t
            )));
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.phi_t_prime(mid)? < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * hi.max(1.0) {
                break;
            }
        }
        let zeta_plus = 0.5 * (lo + hi);
        let lambda = self.phi_t(Complex64::new(zeta_plus, 0.0))?.re;
        Ok(GdmEdge {
            zeta_plus,
            lambda_plus_t: lambda,
            xi_plus: zeta_plus - d1,
            extra_sign_changes: brackets.len() - 1,
        })
    }

    /// `π⁻¹ Im m_t(E + iη₀)` on a grid.
    pub fn gdm_density(&self, grid: &[f64], eta0: f64) -> Result<Vec<f64>> {
        if !(eta0 > 0.0) {
            return Err(Error::InvalidArgument("eta0 must be positive".into()));
        }
        grid.par_iter()
            .map(|&e| self.solve_mt(Complex64::new(e, eta0)).map(|pt| pt.m_t.im / PI))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mp_law::{mp_stieltjes, AspectRatio};

    #[test]
    fn zero_base_is_scaled_mp() {
        let phi = 0.5;
        let t = 0.3;
        let model = GdmModel::new(t, vec![0.0; 50], phi).unwrap();
        let ratio = AspectRatio::new(phi).unwrap();
        for k in 0..20 {
            let z = Complex64::new(-0.5 + 0.15 * k as f64, 0.2 + 0.05 * k as f64);
            let pt = model.solve_mt(z).unwrap();
            let expect = mp_stieltjes(z / t, &ratio).unwrap().m / t;
            assert!((pt.m_t - expect).norm() < 1e-6, "{z}: {} vs {expect}", pt.m_t);
        }
    }

    #[test]
    fn phi_t_hand_value() {
        let model = GdmModel::new(0.1, vec![0.0; 7], 2.0).unwrap();
        let v = model.phi_t(Complex64::new(1.0, 0.0)).unwrap();
        assert!((v.re - 1.32).abs() < 1e-12 && v.im.abs() < 1e-15);
    }

    #[test]
    fn subordination_round_trip_and_sign_link() {
        let base: Vec<f64> = (0..40).map(|k| 0.3 + 0.05 * k as f64).collect();
        let model = GdmModel::new(0.2, base, 0.5).unwrap();
        for k in 0..20 {
            let z = Complex64::new(0.1 * k as f64, 0.5);
            let pt = model.solve_mt(z).unwrap();
            assert!(pt.residual < 1e-9);
            assert!((model.phi_t(pt.zeta_t).unwrap() - z).norm() < 1e-8);
            let (m0, _) = model.base_transform(pt.zeta_t).unwrap();
            let b = 1.0 / (1.0 - model.phi * model.t * m0);
            assert!((b - pt.b_t).norm() < 1e-8);
            assert!(pt.b_t.re > 0.0);
            assert!(pt.m_t.norm() <= (model.phi * model.t * z.norm()).powf(-0.5));
        }
    }

    #[test]
    fn small_noise_is_bare_resolvent() {
        let base: Vec<f64> = (0..30).map(|k| 0.5 + 0.1 * k as f64).collect();
        let model = GdmModel::new(1e-6, base, 0.5).unwrap();
        let z = Complex64::new(1.3, 1.0);
        let (m0, _) = model.base_transform(z).unwrap();
        assert!((model.solve_mt(z).unwrap().m_t - m0).norm() < 1e-4);
    }
}
