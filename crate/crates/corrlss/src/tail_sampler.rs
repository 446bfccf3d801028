//! Regularly varying laws, data matrices and self-normalization, plus moment
//! and cumulant oracles for self-normalized entries.
//!
//! A [`TailLaw`] is a mixture: with probability `q = l(x₀)/x₀^α` the value is
//! drawn from the exact tail `P(|ξ| > x) = l(x)/x^α`, `x ≥ x₀`, otherwise from
//! a uniform core inside `(-x₀, x₀)` whose centre and width are chosen in
//! closed form so that `E ξ = 0` and `E ξ² = 1`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::rng::{stream, StreamRng};

/// Tail second moment the default threshold is chosen to respect.
const TAIL_VARIANCE_BUDGET: f64 = 0.75;
const DEFAULT_X0: f64 = 3.0;
const DEFAULT_RIGHT_WEIGHT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlowlyVarying {
    /// `l(x) = c`.
    Const(f64),
    /// `l(x) = (log x)^γ`.
    LogPower(f64),
}

impl SlowlyVarying {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SlowlyVarying::Const(c) => c,
            SlowlyVarying::LogPower(g) => x.ln().powf(g),
        }
    }

    /// `lim l(tx)/l(x)`; equals one for both families.
    pub fn ratio_limit(&self, _t: f64) -> f64 {
        1.0
    }
}

/// User-facing parameters of a [`TailLaw`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailLawSpec {
    pub alpha: f64,
    #[serde(default = "default_sv")]
    pub slowly_varying: SlowlyVarying,
    #[serde(default = "default_true")]
    pub symmetric: bool,
    /// Threshold where the tail starts; chosen automatically when absent.
    #[serde(default)]
    pub x0: Option<f64>,
    /// Probability that a tail draw is positive (asymmetric laws only).
    #[serde(default)]
    pub right_weight: Option<f64>,
}

fn default_sv() -> SlowlyVarying {
    SlowlyVarying::Const(1.0)
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TailLawSpec", into = "TailLawSpec")]
pub struct TailLaw {
    pub alpha: f64,
    pub slowly_varying: SlowlyVarying,
    pub symmetric: bool,
    pub x0: f64,
    pub right_weight: f64,
    /// Probability of a tail draw.
    pub tail_prob: f64,
    pub core_center: f64,
    pub core_half_width: f64,
    /// Standardization constant; the construction is standardized exactly, so this is 1.
    pub scale: f64,
}

impl From<TailLaw> for TailLawSpec {
    fn from(law: TailLaw) -> Self {
        TailLawSpec {
            alpha: law.alpha,
            slowly_varying: law.slowly_varying,
            symmetric: law.symmetric,
            x0: Some(law.x0),
            right_weight: if law.symmetric { None } else { Some(law.right_weight) },
        }
    }
}

impl TryFrom<TailLawSpec> for TailLaw {
    type Error = Error;

    fn try_from(spec: TailLawSpec) -> Result<Self> {
        TailLaw::from_spec(&spec)
    }
}

impl TailLaw {
    pub fn new(alpha: f64, slowly_varying: SlowlyVarying, symmetric: bool) -> Result<Self> {
        Self::from_spec(&TailLawSpec { alpha, slowly_varying, symmetric, x0: None, right_weight: None })
    }

    pub fn from_spec(spec: &TailLawSpec) -> Result<Self> {
        let alpha = spec.alpha;
        if !(alpha > 2.0 && alpha <= 4.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (2, 4], got {alpha}")));
        }
        match spec.slowly_varying {
            SlowlyVarying::Const(c) if !(c > 0.0 && c.is_finite()) => {
                return Err(Error::InvalidArgument(format!("l = const needs c > 0, got {c}")));
            }
            SlowlyVarying::LogPower(g) if !g.is_finite() => {
                return Err(Error::InvalidArgument("log power must be finite".into()));
            }
            _ => {}
        }
        let right_weight = if spec.symmetric { 0.5 } else { spec.right_weight.unwrap_or(DEFAULT_RIGHT_WEIGHT) };
        if !(0.0..=1.0).contains(&right_weight) {
            return Err(Error::InvalidArgument(format!("right_weight must lie in [0, 1], got {right_weight}")));
        }
        let lower = min_threshold(alpha, spec.slowly_varying);
        let x0 = match spec.x0 {
            Some(x0) => {
                if !(x0 > lower) {
                    return Err(Error::InvalidArgument(format!(
                        "x0 = {x0} too small; the tail needs x0 > {lower}"
                    )));
                }
                x0
            }
            None => default_threshold(alpha, spec.slowly_varying)?,
        };
        let sv = spec.slowly_varying;
        let q = (sv.eval(x0).ln() - alpha * x0.ln()).exp();
        let qt1 = tail_weighted_moment(alpha, sv, x0, 1);
        let qt2 = tail_weighted_moment(alpha, sv, x0, 2);
        if !(q < 1.0) || !(qt2 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tail at x0 = {x0} carries variance {qt2:.4} >= 1; raise x0"
            )));
        }
        let tail_mean = (2.0 * right_weight - 1.0) * qt1;
        let center = -tail_mean / (1.0 - q);
        let core_second = (1.0 - qt2) / (1.0 - q);
        let w2 = 3.0 * (core_second - center * center);
        if !(w2 > 0.0) {
            return Err(Error::InvalidArgument("no core can standardize this tail".into()));
        }
        let half_width = w2.sqrt();
        if center.abs() + half_width >= x0 {
            return Err(Error::InvalidArgument(format!("core exceeds the threshold x0 = {x0}")));
        }
        Ok(Self {
            alpha,
            slowly_varying: sv,
            symmetric: spec.symmetric,
            x0,
            right_weight,
            tail_prob: q,
            core_center: center,
            core_half_width: half_width,
            scale: 1.0,
        })
    }

    /// `P(|ξ| > x)`.
    pub fn survival(&self, x: f64) -> f64 {
        if x >= self.x0 {
            return self.slowly_varying.eval(x) / x.powf(self.alpha);
        }
        let core_abs = |y: f64| {
            // P(|U| > y) for U uniform on [c - w, c + w].
            let (lo, hi) = (self.core_center - self.core_half_width, self.core_center + self.core_half_width);
            let len = hi - lo;
            let above = ((hi - y.max(lo)) / len).clamp(0.0, 1.0);
            let below = ((-y).min(hi) - lo).max(0.0) / len;
            (above + below.min(1.0)).min(1.0)
        };
        self.tail_prob + (1.0 - self.tail_prob) * core_abs(x.max(0.0))
    }

    /// `E ξ` and `E ξ²` from the mixture in closed form.
    pub fn mean_and_variance(&self) -> (f64, f64) {
        let q = self.tail_prob;
        let qt1 = tail_weighted_moment(self.alpha, self.slowly_varying, self.x0, 1);
        let qt2 = tail_weighted_moment(self.alpha, self.slowly_varying, self.x0, 2);
        let c = self.core_center;
        let w = self.core_half_width;
        let mean = (1.0 - q) * c + (2.0 * self.right_weight - 1.0) * qt1;
        let second = (1.0 - q) * (c * c + w * w / 3.0) + qt2;
        (mean, second - mean * mean)
    }

    /// Magnitude `x ≥ x₀` with `P(|ξ| > x | tail) = u`.
    pub fn tail_quantile(&self, u: f64) -> f64 {
        match self.slowly_varying {
            SlowlyVarying::Const(_) => self.x0 * u.powf(-1.0 / self.alpha),
            SlowlyVarying::LogPower(g) => {
                // Solve g ln y - α y = ln(q u) for y = ln x with Newton.
                let target = (self.tail_prob * u).ln();
                let mut y = self.x0.ln() - u.ln() / self.alpha;
                for _ in 0..100 {
                    let h = g * y.ln() - self.alpha * y - target;
                    let dh = g / y - self.alpha;
                    let step = h / dh;
                    let mut next = y - step;
                    if next <= self.x0.ln() {
                        next = 0.5 * (y + self.x0.ln());
                    }
                    if (next - y).abs() < 1e-14 * y.abs() {
                        y = next;
                        break;
                    }
                    y = next;
                }
                y.exp().max(self.x0)
            }
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u < self.tail_prob {
            let sign = if u < self.tail_prob * self.right_weight { 1.0 } else { -1.0 };
            let v: f64 = rng.random();
            sign * self.tail_quantile(1.0 - v)
        } else {
            let v = (u - self.tail_prob) / (1.0 - self.tail_prob);
            self.core_center + self.core_half_width * (2.0 * v - 1.0)
        }
    }
}

fn min_threshold(alpha: f64, sv: SlowlyVarying) -> f64 {
    match sv {
        SlowlyVarying::Const(_) => 1.0,
        // l is defined for x ≥ e and the survival must decrease: x > e^{γ/α}.
        SlowlyVarying::LogPower(g) => std::f64::consts::E.max((g / alpha).exp()),
    }
}

/// `max(3, smallest x₀ whose tail second moment is at most 0.75)`.
fn default_threshold(alpha: f64, sv: SlowlyVarying) -> Result<f64> {
    let lower = min_threshold(alpha, sv).max(DEFAULT_X0);
    let budget = |x0: f64| tail_weighted_moment(alpha, sv, x0, 2);
    if budget(lower) <= TAIL_VARIANCE_BUDGET {
        return Ok(lower);
    }
    if let SlowlyVarying::Const(c) = sv {
        let x = (c * alpha / (TAIL_VARIANCE_BUDGET * (alpha - 2.0))).powf(1.0 / (alpha - 2.0));
        return Ok(x.max(lower));
    }
    let mut hi = lower * 2.0;
    while budget(hi) > TAIL_VARIANCE_BUDGET {
        hi *= 2.0;
        if hi > 1e200 {
            return Err(Error::InvalidArgument("no threshold keeps the tail variance below 0.75".into()));
        }
    }
    let mut lo = lower;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if budget(mid) > TAIL_VARIANCE_BUDGET {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `E[|ξ|^k | |ξ| ≥ x₀] / x₀^k` for the exact tail, `k < α`.
fn tail_moment_factor(alpha: f64, sv: SlowlyVarying, x0: f64, k: i32) -> f64 {
    let kf = k as f64;
    match sv {
        SlowlyVarying::Const(_) => alpha / (alpha - kf),
        SlowlyVarying::LogPower(g) => {
            // 1 + k∫₀^∞ e^{-(α-k)u} ((ln x₀ + u)/ln x₀)^γ du, from x = x₀eᵘ.
            let l0 = x0.ln();
            let rate = alpha - kf;
            let upper = (60.0 + g.abs() * 10.0) / rate;
            let pieces = 400;
            let rule = GaussLegendre::cached(32);
            let h = upper / pieces as f64;
            let mut acc = 0.0;
            for i in 0..pieces {
                let a = i as f64 * h;
                acc += rule.integrate(a, a + h, |u| (-rate * u + g * (1.0 + u / l0).ln()).exp());
            }
            1.0 + kf * acc
        }
    }
}

/// `E[|ξ|^k | |ξ| ≥ x₀]` for the exact tail, `k < α`.
pub fn tail_abs_moment(alpha: f64, sv: SlowlyVarying, x0: f64, k: i32) -> f64 {
    x0.powi(k) * tail_moment_factor(alpha, sv, x0, k)
}

/// `E[|ξ|^k; |ξ| ≥ x₀] = S(x₀) E[|ξ|^k | |ξ| ≥ x₀]`, evaluated in logs so huge `x₀` stay finite.
fn tail_weighted_moment(alpha: f64, sv: SlowlyVarying, x0: f64, k: i32) -> f64 {
    (sv.eval(x0).ln() + (k as f64 - alpha) * x0.ln()).exp() * tail_moment_factor(alpha, sv, x0, k)
}

/// Distribution of the data entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DataLaw {
    Gaussian,
    RegularlyVarying(TailLaw),
}

impl DataLaw {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DataLaw::Gaussian => rng.sample(StandardNormal),
            DataLaw::RegularlyVarying(law) => law.sample(rng),
        }
    }

    /// Tail index; Gaussian data are treated as `α = 4`.
    pub fn alpha(&self) -> f64 {
        match self {
            DataLaw::Gaussian => 4.0,
            DataLaw::RegularlyVarying(law) => law.alpha,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            DataLaw::Gaussian => true,
            DataLaw::RegularlyVarying(law) => law.symmetric,
        }
    }

    pub fn fill_row(&self, rng: &mut StreamRng, row: &mut [f64]) {
        for x in row.iter_mut() {
            *x = self.sample(rng);
        }
    }
}

/// Row-major p×n data matrix `X`; row `j` holds the n observations of variable `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub p: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl DataMatrix {
    pub fn from_rows(p: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != p * n {
            return Err(Error::InvalidArgument(format!("expected {} entries, got {}", p * n, data.len())));
        }
        Ok(Self { p, n, data })
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.data[j * self.n + i]
    }
}

/// Samples `X` with row `j` drawn from stream `(seed, replicate, j)`.
pub fn sample_matrix_replicate(law: &DataLaw, n: usize, p: usize, seed: u64, replicate: u64) -> Result<DataMatrix> {
    if n < 2 || p < 2 {
        return Err(Error::InvalidArgument(format!("need n, p >= 2, got n={n}, p={p}")));
    }
    let mut data = vec![0.0; n * p];
    data.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        let mut rng = stream(seed, replicate, j as u64);
        law.fill_row(&mut rng, row);
    });
    Ok(DataMatrix { p, n, data })
}

pub fn sample_matrix(law: &DataLaw, n: usize, p: usize, seed: u64) -> Result<DataMatrix> {
    sample_matrix_replicate(law, n, p, seed, 0)
}

/// `Y = X*(diag S)^{-1/2}` stored column-major: column `j` is `X_j/ρ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfNormalized {
    pub n: usize,
    pub p: usize,
    pub y: Vec<f64>,
    pub rho: Vec<f64>,
}

impl SelfNormalized {
    pub fn column(&self, j: usize) -> &[f64] {
        &self.y[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.y[j * self.n + i]
    }

    pub fn x_dims(&self) -> (usize, usize) {
        (self.p, self.n)
    }
}

pub fn self_normalize(x: &DataMatrix) -> Result<SelfNormalized> {
    let mut rho = Vec::with_capacity(x.p);
    let mut y = Vec::with_capacity(x.p * x.n);
    for j in 0..x.p {
        let row = x.row(j);
        let r = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::DegenerateColumn(j));
        }
        rho.push(r);
        y.extend(row.iter().map(|v| v / r));
    }
    Ok(SelfNormalized { n: x.n, p: x.p, y, rho })
}

/// Leading-order `E Y₁₁^{2k} ≈ αΓ(α/2)Γ(k-α/2)/(2Γ(k)) · l(√n)/n^{α/2}`.
pub fn asymptotic_even_moment(alpha: f64, k: u32, n: usize, law: &TailLaw) -> Result<f64> {
    let kf = k as f64;
    if k < 2 {
        return Err(Error::Domain("k must be at least 2 (E Y² = 1/n exactly)".into()));
    }
    let arg = kf - alpha / 2.0;
    if arg <= 0.0 && (arg.fract() == 0.0) {
        return Err(Error::Domain(format!("Gamma pole at k - alpha/2 = {arg}")));
    }
    if arg <= 0.0 {
        return Err(Error::Domain(format!("need k > alpha/2, got k={k}, alpha={alpha}")));
    }
    let nf = n as f64;
    let c = alpha * gamma(alpha / 2.0) * gamma(arg) / (2.0 * gamma(kf));
    Ok(c * law.slowly_varying.eval(nf.sqrt()) / nf.powf(alpha / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalClass {
    Zero,
    PositiveFinite(f64),
    Infinite,
}

/// Classifies `lim x³ P(|ξ| > x)`.
pub fn critical_condition(law: &TailLaw) -> CriticalClass {
    if law.alpha > 3.0 {
        return CriticalClass::Zero;
    }
    if law.alpha < 3.0 {
        return CriticalClass::Infinite;
    }
    match law.slowly_varying {
        SlowlyVarying::Const(c) => CriticalClass::PositiveFinite(c),
        SlowlyVarying::LogPower(g) if g < 0.0 => CriticalClass::Zero,
        SlowlyVarying::LogPower(g) if g > 0.0 => CriticalClass::Infinite,
        SlowlyVarying::LogPower(_) => CriticalClass::PositiveFinite(1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    Analytic,
    MonteCarlo { samples: usize, stderr: BTreeMap<String, f64> },
}

/// Mixed moments `β_{k₁,…,k_q} = E(Y₁₁^{k₁}⋯Y_{q1}^{k_q})` keyed like `"4"` or `"1,1"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub n: usize,
    pub beta: BTreeMap<String, f64>,
    pub source: MomentSource,
}

impl MomentTable {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.beta.get(key).copied()
    }
}

/// Per-column statistics whose means are β₂, β₄, β₁,₁, β₂,₂.
fn column_moments(col: &[f64]) -> [f64; 4] {
    let n = col.len() as f64;
    let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
    for &v in col {
        let v2 = v * v;
        s1 += v;
        s2 += v2;
        s4 += v2 * v2;
    }
    let pairs = n * (n - 1.0);
    [s2 / n, s4 / n, (s1 * s1 - s2) / pairs, (s2 * s2 - s4) / pairs]
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    (mean, (var / m).sqrt())
}

/// Monte Carlo mixed moments from `columns` independent self-normalized columns of length `n`.
pub fn monte_carlo_moments(law: &DataLaw, n: usize, columns: usize, seed: u64) -> Result<MomentTable> {
    if columns < 2 || n < 2 {
        return Err(Error::InvalidArgument("need at least two columns of length >= 2".into()));
    }
    let stats: Vec<[f64; 4]> = (0..columns)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |buf, j| {
                let mut rng = stream(seed, u64::MAX, j as u64);
                law.fill_row(&mut rng, buf);
                let r2: f64 = buf.iter().map(|v| v * v).sum();
                let r = r2.sqrt();
                for v in buf.iter_mut() {
                    *v /= r;
                }
                column_moments(buf)
            },
        )
        .collect();
    let mut beta = BTreeMap::new();
    let mut stderr = BTreeMap::new();
    for (idx, key) in ["2", "4", "1,1", "2,2"].iter().enumerate() {
        let vals: Vec<f64> = stats.iter().map(|s| s[idx]).collect();
        let (m, se) = mean_and_stderr(&vals);
        beta.insert(key.to_string(), m);
        stderr.insert(key.to_string(), se);
    }
    Ok(MomentTable { n, beta, source: MomentSource::MonteCarlo { samples: columns, stderr } })
}

/// Exact β₂ = 1/n.
pub fn analytic_moments(n: usize) -> MomentTable {
    let mut beta = BTreeMap::new();
    beta.insert("2".to_string(), 1.0 / n as f64);
    MomentTable { n, beta, source: MomentSource::Analytic }
}

/// Monte Carlo `E Y₁₁⁴` with its standard error, from `columns` columns.
pub fn fourth_moment_estimate(law: &DataLaw, n: usize, columns: usize, seed: u64) -> Result<(f64, f64)> {
    let t = monte_carlo_moments(law, n, columns, seed)?;
    let se = match &t.source {
        MomentSource::MonteCarlo { stderr, .. } => stderr["4"],
        MomentSource::Analytic => 0.0,
    };
    Ok((t.beta["4"], se))
}

/// Monte Carlo `E(Y₁₁Y₂₁)` with its standard error.
pub fn odd_moment_estimate(law: &DataLaw, n: usize, mc_samples: usize, seed: u64) -> Result<(f64, f64)> {
    if mc_samples < 10_000 {
        return Err(Error::InvalidArgument("odd-moment estimation needs at least 10^4 samples".into()));
    }
    let t = monte_carlo_moments(law, n, mc_samples, seed)?;
    let se = match &t.source {
        MomentSource::MonteCarlo { stderr, .. } => stderr["1,1"],
        MomentSource::Analytic => 0.0,
    };
    Ok((t.beta["1,1"], se))
}

/// Cumulants `κ₁…κ_q` from raw moments `m₁…m_q`.
pub fn cumulants_from_moments(moments: &[f64]) -> Vec<f64> {
    let q = moments.len();
    let raw = |k: usize| if k == 0 { 1.0 } else { moments[k - 1] };
    let mut kappa = vec![0.0; q];
    for nn in 1..=q {
        let mut acc = raw(nn);
        for k in 1..nn {
            acc -= binomial(nn - 1, k - 1) * kappa[k - 1] * raw(nn - k);
        }
        kappa[nn - 1] = acc;
    }
    kappa
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// Exact raw moments `E ξ^k`, `k = 1..=q`, of the standard normal.
pub fn gaussian_moments(q: usize) -> Vec<f64> {
    (1..=q)
        .map(|k| if k % 2 == 1 { 0.0 } else { (1..k).step_by(2).map(|j| j as f64).product() })
        .collect()
}

/// `|E(ξf(ξ)) - Σ_{k=0}^{ℓ} κ_{k+1}/k! · E f^{(k)}(ξ)|` with exact polynomial expectations.
pub fn cumulant_expansion_residual(moments: &[f64], coefficients: &[f64], ell: usize) -> Result<f64> {
    let d = coefficients.len().saturating_sub(1);
    let need = (d + 1).max(ell + 1);
    if moments.len() < need {
        return Err(Error::InsufficientMoments { need, have: moments.len() });
    }
    let raw = |k: usize| if k == 0 { 1.0 } else { moments[k - 1] };
    let lhs: f64 = coefficients.iter().enumerate().map(|(j, c)| c * raw(j + 1)).sum();
    let kappa = cumulants_from_moments(&moments[..need]);
    let mut rhs = 0.0;
    let mut factorial = 1.0;
    for k in 0..=ell {
        if k > 0 {
            factorial *= k as f64;
        }
        // E f^{(k)}(ξ) = Σ_j c_j j!/(j-k)! E ξ^{j-k}.
        let mut ef = 0.0;
        for (j, c) in coefficients.iter().enumerate().skip(k) {
            let falling: f64 = (0..k).map(|i| (j - i) as f64).product();
            ef += c * falling * raw(j - k);
        }
        rhs += kappa[k] / factorial * ef;
    }
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn laws_are_standardized() {
        for alpha in [2.5, 3.0, 3.5, 4.0] {
            for sv in [SlowlyVarying::Const(1.0), SlowlyVarying::LogPower(-1.0), SlowlyVarying::LogPower(0.5)] {
                for symmetric in [true, false] {
                    let law = TailLaw::new(alpha, sv, symmetric).unwrap();
                    let (m, v) = law.mean_and_variance();
                    assert!(m.abs() < 1e-8 && (v - 1.0).abs() < 1e-8, "{law:?}: {m} {v}");
                }
            }
        }
    }

    #[test]
    fn thresholds_follow_the_variance_budget() {
        let t = |a: f64| TailLaw::new(a, SlowlyVarying::Const(1.0), true).unwrap().x0;
        assert_relative_eq!(t(3.5), 3.0);
        assert_relative_eq!(t(3.0), 4.0, epsilon = 1e-12);
        assert_relative_eq!(t(2.5), 400.0 / 9.0, epsilon = 1e-9);
    }

    #[test]
    fn tail_is_exact() {
        for sv in [SlowlyVarying::Const(1.0), SlowlyVarying::LogPower(-1.0), SlowlyVarying::LogPower(2.0)] {
            let law = TailLaw::new(3.0, sv, true).unwrap();
            for mult in [1.0, 1.5, 3.0, 10.0, 1e3] {
                let x = law.x0 * mult;
                let s = law.survival(x);
                assert_relative_eq!(s * x.powf(3.0) / sv.eval(x), 1.0, epsilon = 1e-12);
                // The quantile map inverts the conditional survival.
                let u = s / law.tail_prob;
                assert_relative_eq!(law.tail_quantile(u), x, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn critical_classes() {
        let law = |a, sv| TailLaw::new(a, sv, true).unwrap();
        assert_eq!(critical_condition(&law(3.5, SlowlyVarying::Const(1.0))), CriticalClass::Zero);
        assert_eq!(critical_condition(&law(3.0, SlowlyVarying::Const(0.5))), CriticalClass::PositiveFinite(0.5));
        assert_eq!(critical_condition(&law(3.0, SlowlyVarying::LogPower(-1.0))), CriticalClass::Zero);
        assert_eq!(critical_condition(&law(3.0, SlowlyVarying::LogPower(1.0))), CriticalClass::Infinite);
        assert_eq!(critical_condition(&law(2.5, SlowlyVarying::Const(1.0))), CriticalClass::Infinite);
    }

    #[test]
    fn moment_rate_constant() {
        let law = TailLaw::new(3.0, SlowlyVarying::Const(1.0), true).unwrap();
        let n = 10_000usize;
        let v = asymptotic_even_moment(3.0, 2, n, &law).unwrap();
        assert_relative_eq!(v, 3.0 * std::f64::consts::PI / 4.0 / (n as f64).powf(1.5), max_relative = 1e-12);
        let law4 = TailLaw::new(4.0, SlowlyVarying::Const(1.0), true).unwrap();
        assert!(asymptotic_even_moment(4.0, 2, n, &law4).is_err());
    }

    #[test]
    fn cumulant_recursion() {
        let k = cumulants_from_moments(&gaussian_moments(6));
        for (i, v) in k.iter().enumerate() {
            let expect = if i == 1 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12);
        }
        // Poisson(2) raw moments 2, 6, 22, 94.
        let k = cumulants_from_moments(&[2.0, 6.0, 22.0, 94.0]);
        for v in k {
            assert_relative_eq!(v, 2.0, epsilon = 1e-12);
        }
        // Shifting by c: only κ₁ moves.
        let base = cumulants_from_moments(&gaussian_moments(4));
        let c = 0.7f64;
        let shifted = [c, 1.0 + c * c, 3.0 * c + c.powi(3), 3.0 + 6.0 * c * c + c.powi(4)];
        let k = cumulants_from_moments(&shifted);
        assert_relative_eq!(k[0], c, epsilon = 1e-12);
        for i in 1..4 {
            assert!((k[i] - base[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cumulant_expansion_examples() {
        let g = gaussian_moments(10);
        assert_eq!(cumulant_expansion_residual(&g, &[0.0, 0.0, 0.0, 1.0], 1).unwrap(), 0.0);
        // Two-point law ±1.
        let two = [0.0, 1.0, 0.0, 1.0, 0.0];
        assert!(cumulant_expansion_residual(&two, &[0.0, 0.0, 1.0], 3).unwrap() < 1e-15);
        assert!(matches!(
            cumulant_expansion_residual(&g[..2], &[0.0, 0.0, 0.0, 1.0], 1),
            Err(Error::InsufficientMoments { .. })
        ));
    }

    #[test]
    fn self_normalized_columns_are_unit() {
        let law = DataLaw::RegularlyVarying(TailLaw::new(3.0, SlowlyVarying::Const(1.0), false).unwrap());
        let x = sample_matrix(&law, 50, 7, 1).unwrap();
        let y = self_normalize(&x).unwrap();
        let mut total = 0.0;
        for j in 0..7 {
            let s: f64 = y.column(j).iter().map(|v| v * v).sum();
            assert!((s - 1.0).abs() < 1e-10);
            total += s;
            assert!(y.column(j).iter().all(|v| v.abs() <= 1.0));
        }
        assert!((total - 7.0).abs() < 1e-10);
        let zero = DataMatrix::from_rows(2, 3, vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(self_normalize(&zero), Err(Error::DegenerateColumn(1))));
    }

    #[test]
    fn spec_round_trip() {
        let law = TailLaw::new(3.0, SlowlyVarying::LogPower(-1.0), false).unwrap();
        let text = serde_json::to_string(&law).unwrap();
        let back: TailLaw = serde_json::from_str(&text).unwrap();
        assert_eq!(law, back);
    }
}
