//! Light/medium/heavy decomposition of the data and of `diag S`.
//!
//! The bands are cut deterministically from the realized `X`. Conditioned on
//! its band, an entry has exactly the restricted law, so the joint law of
//! `(L, M, H, Ψ, χ)` is the same as drawing fresh variables per band, while
//! reconstruction stays exact because entries are copied, never recomputed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tail_sampler::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlParams {
    pub eps_l: f64,
    pub eps_h: f64,
    pub eps_s: f64,
    pub eps_y: f64,
    pub eps_mu: f64,
    pub beta_exp: f64,
    pub alpha: f64,
}

impl ControlParams {
    /// Midpoints of the admissible ranges for tail index `alpha`.
    pub fn defaults(alpha: f64) -> Result<Self> {
        if !(alpha > 2.0 && alpha <= 4.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (2, 4], got {alpha}")));
        }
        let eps_h = (alpha - 2.0) / (20.0 * alpha);
        let eps_y = eps_h;
        let eps_s = (alpha - 2.0) / (6.0 * alpha);
        let eps_l = low_cap(eps_h, eps_y, alpha) / 2000.0;
        let beta_exp = 1.0 / alpha + 0.5 + 2.0 * eps_s;
        let eps_mu = eps_h.min(eps_s).min(1.0 - beta_exp).min(eps_y) / 4.0;
        let params = Self { eps_l, eps_h, eps_s, eps_y, eps_mu, beta_exp, alpha };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.alpha;
        let bad = |what: &str| Err(Error::InvalidArgument(format!("control parameters: {what}")));
        if !(self.eps_l > 0.0 && self.eps_l < low_cap(self.eps_h, self.eps_y, a) / 1000.0) {
            return bad("need 0 < eps_l < min(eps_h, eps_y, 4 - alpha)/1000");
        }
        if !(self.eps_h > 0.0 && self.eps_h < (a - 2.0) / (10.0 * a)) {
            return bad("need 0 < eps_h < (alpha - 2)/(10 alpha)");
        }
        if !(self.eps_s > 0.0 && self.eps_s <= (a - 2.0) / (6.0 * a)) {
            return bad("need 0 < eps_s <= (alpha - 2)/(6 alpha)");
        }
        if !(self.eps_y > 0.0 && self.eps_y < (a - 2.0) / (10.0 * a)) {
            return bad("need 0 < eps_y < (alpha - 2)/(10 alpha)");
        }
        if (self.beta_exp - (1.0 / a + 0.5 + 2.0 * self.eps_s)).abs() > 1e-12 || self.beta_exp >= 1.0 {
            return bad("beta_exp must equal 1/alpha + 1/2 + 2 eps_s and stay below 1");
        }
        let cap = self.eps_h.min(self.eps_s).min(1.0 - self.beta_exp).min(self.eps_y) / 2.0;
        if !(self.eps_mu > 0.0 && self.eps_mu < cap) {
            return bad("need 0 < eps_mu < min(eps_h, eps_s, 1 - beta, eps_y)/2");
        }
        Ok(())
    }

    /// `(n^{-ε_l}, n^{1/2-ε_h})`.
    pub fn entry_thresholds(&self, n: usize) -> (f64, f64) {
        let nf = n as f64;
        (nf.powf(-self.eps_l), nf.powf(0.5 - self.eps_h))
    }

    /// `(n^{-ε_s}, n^{ε_h})`.
    pub fn diag_thresholds(&self, n: usize) -> (f64, f64) {
        let nf = n as f64;
        (nf.powf(-self.eps_s), nf.powf(self.eps_h))
    }
}

/// `min(ε_h, ε_y, 4 - α)`; the last term is dropped at `α = 4` where it vanishes.
fn low_cap(eps_h: f64, eps_y: f64, alpha: f64) -> f64 {
    let m = eps_h.min(eps_y);
    if alpha < 4.0 {
        m.min(4.0 - alpha)
    } else {
        m
    }
}

/// `X* = L + M + H`, all stored column-major `n × p` (column `j` is variable `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub n: usize,
    pub p: usize,
    pub l: Vec<f64>,
    pub m: Vec<f64>,
    pub h: Vec<f64>,
    pub psi: Vec<bool>,
    pub chi: Vec<bool>,
    pub thresholds: (f64, f64),
}

impl Decomposition {
    pub fn psi_count(&self) -> usize {
        self.psi.iter().filter(|&&b| b).count()
    }

    pub fn chi_count(&self) -> usize {
        self.chi.iter().filter(|&&b| b).count()
    }

    /// `H̃ = M + H`, column-major.
    pub fn heavy_part(&self) -> Vec<f64> {
        self.m.iter().zip(&self.h).map(|(a, b)| a + b).collect()
    }

    /// Returns `L + M + H`; at most one summand is nonzero per entry.
    pub fn reconstruct(&self) -> Vec<f64> {
        (0..self.l.len())
            .map(|k| {
                if self.psi[k] {
                    self.h[k]
                } else if self.chi[k] {
                    self.m[k]
                } else {
                    self.l[k]
                }
            })
            .collect()
    }

    pub fn supports_disjoint(&self) -> bool {
        (0..self.l.len()).all(|k| {
            let nz = [self.l[k] != 0.0, self.m[k] != 0.0, self.h[k] != 0.0];
            nz.iter().filter(|&&b| b).count() <= 1
        })
    }

    /// `n · mean(L²_ij / ρ_j²)`.
    pub fn t_estimate(&self, rho: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.p {
            let r2 = rho[j] * rho[j];
            acc += self.l[j * self.n..(j + 1) * self.n].iter().map(|v| v * v).sum::<f64>() / r2;
        }
        acc / self.p as f64
    }
}

pub fn decompose(x: &DataMatrix, params: &ControlParams) -> Result<Decomposition> {
    params.validate()?;
    let (t_low, t_high) = params.entry_thresholds(x.n);
    let len = x.data.len();
    let mut out = Decomposition {
        n: x.n,
        p: x.p,
        l: vec![0.0; len],
        m: vec![0.0; len],
        h: vec![0.0; len],
        psi: vec![false; len],
        chi: vec![false; len],
        thresholds: (t_low, t_high),
    };
    // X is p×n row-major, which is exactly X* column-major.
    for (k, &v) in x.data.iter().enumerate() {
        let a = v.abs();
        if a >= t_high {
            out.h[k] = v;
            out.psi[k] = true;
        } else if a >= t_low {
            out.m[k] = v;
            out.chi[k] = true;
        } else {
            out.l[k] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagDecomposition {
    pub ls: Vec<f64>,
    pub ms: Vec<f64>,
    pub hs: Vec<f64>,
    pub pi: Vec<bool>,
    pub thresholds: (f64, f64),
}

impl DiagDecomposition {
    pub fn pi_count(&self) -> usize {
        self.pi.iter().filter(|&&b| b).count()
    }
}

/// Splits `n⁻¹ρ_j² - 1` by magnitude against `(n^{-ε_s}, n^{ε_h})`.
pub fn decompose_diag(rho: &[f64], n: usize, params: &ControlParams) -> DiagDecomposition {
    let (lo, hi) = params.diag_thresholds(n);
    let p = rho.len();
    let mut d = DiagDecomposition {
        ls: vec![0.0; p],
        ms: vec![0.0; p],
        hs: vec![0.0; p],
        pi: vec![false; p],
        thresholds: (lo, hi),
    };
    for (j, r) in rho.iter().enumerate() {
        let v = r * r / n as f64 - 1.0;
        if v.abs() >= hi {
            d.hs[j] = v;
            d.pi[j] = true;
        } else if v.abs() >= lo {
            d.ms[j] = v;
            d.pi[j] = true;
        } else {
            d.ls[j] = v;
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Configuration {
    pub psi_ok: bool,
    pub pi_ok: bool,
    pub psi_count: usize,
    pub pi_count: usize,
    pub psi_limit: f64,
    pub pi_limit: f64,
}

pub fn well_configured(dec: &Decomposition, diag: &DiagDecomposition, params: &ControlParams) -> Result<Configuration> {
    if diag.pi.len() != dec.p {
        return Err(Error::InvalidArgument(format!(
            "diagonal decomposition has {} entries, data has p = {}",
            diag.pi.len(),
            dec.p
        )));
    }
    let nf = dec.n as f64;
    let psi_limit = nf.powf(1.0 - params.eps_y);
    let pi_limit = nf.powf(params.beta_exp);
    let psi_count = dec.psi_count();
    let pi_count = diag.pi_count();
    Ok(Configuration {
        psi_ok: psi_count as f64 <= psi_limit,
        pi_ok: pi_count as f64 <= pi_limit,
        psi_count,
        pi_count,
        psi_limit,
        pi_limit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceDiagnostic {
    pub s: u32,
    pub trace_dev: f64,
    pub bound: f64,
    pub pass: bool,
}

pub const DEFAULT_TRACE_SLACK: f64 = 10.0;

/// `Σⱼ |ρ_j^{-2s} - n^{-s}|` against `C·n^{-(s-1)-(α-2)/(6α)}`.
pub fn diag_s_diagnostics(x: &DataMatrix, s: u32, alpha: f64, slack: f64) -> Result<TraceDiagnostic> {
    if !(1..=3).contains(&s) {
        return Err(Error::InvalidArgument(format!("s must be 1, 2 or 3, got {s}")));
    }
    let nf = x.n as f64;
    let target = nf.powi(-(s as i32));
    let mut dev = 0.0;
    for j in 0..x.p {
        let r2: f64 = x.row(j).iter().map(|v| v * v).sum();
        if r2 == 0.0 {
            return Err(Error::DegenerateColumn(j));
        }
        dev += (r2.powi(-(s as i32)) - target).abs();
    }
    let bound = slack * nf.powf(-(s as f64 - 1.0) - (alpha - 2.0) / (6.0 * alpha));
    Ok(TraceDiagnostic { s, trace_dev: dev, bound, pass: dev <= bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tail_sampler::{sample_matrix, DataLaw};

    #[test]
    fn defaults_are_admissible() {
        for a in [2.1, 2.5, 3.0, 3.5, 3.9, 4.0] {
            ControlParams::defaults(a).unwrap();
        }
        let mut p = ControlParams::defaults(3.0).unwrap();
        p.eps_h = 0.2;
        assert!(p.validate().is_err());
    }

    #[test]
    fn small_entries_stay_light() {
        let params = ControlParams::defaults(3.5).unwrap();
        let x = DataMatrix::from_rows(2, 3, vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.4]).unwrap();
        let d = decompose(&x, &params).unwrap();
        assert_eq!(d.l, x.data);
        assert!(d.m.iter().chain(&d.h).all(|v| *v == 0.0));
    }

    #[test]
    fn reconstruction_is_bit_exact() {
        let x = sample_matrix(&DataLaw::Gaussian, 40, 10, 3).unwrap();
        let params = ControlParams::defaults(3.0).unwrap();
        let d = decompose(&x, &params).unwrap();
        assert_eq!(d.reconstruct(), x.data);
        let summed: Vec<f64> = (0..x.data.len()).map(|k| d.l[k] + d.m[k] + d.h[k]).collect();
        assert_eq!(summed, x.data);
        assert!(d.supports_disjoint());
    }

    #[test]
    fn equal_norm_columns_have_no_trace_deviation() {
        let x = DataMatrix::from_rows(2, 4, vec![1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0]).unwrap();
        for s in 1..=3 {
            assert_eq!(diag_s_diagnostics(&x, s, 3.5, 10.0).unwrap().trace_dev, 0.0);
        }
    }

    #[test]
    fn label_counts_bound() {
        let params = ControlParams::defaults(3.0).unwrap();
        let n = 20;
        let empty = Decomposition {
            n,
            p: 2,
            l: vec![0.0; 2 * n],
            m: vec![0.0; 2 * n],
            h: vec![0.0; 2 * n],
            psi: vec![false; 2 * n],
            chi: vec![false; 2 * n],
            thresholds: (0.0, 0.0),
        };
        let diag = decompose_diag(&[(n as f64).sqrt(); 2], n, &params);
        assert!(well_configured(&empty, &diag, &params).unwrap().psi_ok);
        let full = Decomposition { psi: vec![true; 2 * n], ..empty };
        assert!(!well_configured(&full, &diag, &params).unwrap().psi_ok);
    }
}
