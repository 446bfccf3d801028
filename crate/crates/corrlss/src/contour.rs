//! Closed counterclockwise contours around the spectral support and complex
//! Gauss–Legendre quadrature along them.
//!
//! Two shapes are built. `AvoidOrigin` keeps the origin outside: a rectangle
//! `[-C₁, C₁] × [-C₂, C₂]` with a horizontal slot at height `±h`,
//! `h = √(c₁² - c₂²)`, ending in an arc of radius `c₁` around the origin.
//! `EncloseOrigin` is the plain rectangle.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mp_law::{correlation_edges, AspectRatio};
use crate::quadrature::GaussLegendre;

/// Nodes per segment before refinement.
pub const BASE_ORDER: usize = 32;
/// Maximum number of node doublings.
pub const MAX_REFINEMENTS: u32 = 4;
/// Exponent `K` of the truncation band `|Im z| ≥ n^{-K}`.
pub const TRUNCATION_EXPONENT: i32 = 12;

const CONVERGED: f64 = 1e-9;
const ACCEPTABLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    AvoidOrigin,
    EncloseOrigin,
}

impl Regime {
    /// The origin must be avoided exactly when `phi = n/p < 1`.
    pub fn for_ratio(ratio: &AspectRatio) -> Self {
        if ratio.phi() < 1.0 {
            Regime::AvoidOrigin
        } else {
            Regime::EncloseOrigin
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourParams {
    pub c1: f64,
    pub c2: f64,
    #[serde(rename = "C1")]
    pub big_c1: f64,
    #[serde(rename = "C2")]
    pub big_c2: f64,
    pub regime: Regime,
}

impl ContourParams {
    /// Defaults from the support `[λ₋, λ₊]` of the correlation law:
    /// `c₁ = λ₋/2`, `c₂ = λ₋/4`, `C₁ = 2λ₊`, `C₂ = 3λ₊`.
    pub fn defaults(ratio: &AspectRatio) -> Self {
        let (lo, hi) = correlation_edges(ratio);
        Self {
            c1: lo / 2.0,
            c2: lo / 4.0,
            big_c1: 2.0 * hi,
            big_c2: 3.0 * hi,
            regime: Regime::for_ratio(ratio),
        }
    }

    /// Multiplies the small constants by `small` and the large ones by `large`.
    pub fn perturbed(&self, small: f64, large: f64) -> Self {
        Self {
            c1: self.c1 * small,
            c2: self.c2 * small,
            big_c1: self.big_c1 * large,
            big_c2: self.big_c2 * large,
            regime: self.regime,
        }
    }

    pub fn validate(&self, ratio: &AspectRatio) -> Result<()> {
        let (lo, hi) = correlation_edges(ratio);
        let finite = [self.c1, self.c2, self.big_c1, self.big_c2].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Geometry("non-finite contour constant".into()));
        }
        if !(0.0 < self.c2 && self.c2 < self.c1) {
            return Err(Error::Geometry(format!("need 0 < c2 < c1, got c1={}, c2={}", self.c1, self.c2)));
        }
        if !(0.0 < self.big_c1 && self.big_c1 < self.big_c2) {
            return Err(Error::Geometry(format!(
                "need 0 < C1 < C2, got C1={}, C2={}",
                self.big_c1, self.big_c2
            )));
        }
        if self.c1 >= self.big_c1 {
            return Err(Error::Geometry("pieces cannot connect: c1 >= C1".into()));
        }
        if self.big_c1 <= hi {
            return Err(Error::Geometry(format!("C1 = {} must exceed the right edge {hi}", self.big_c1)));
        }
        if self.regime != Regime::for_ratio(ratio) {
            return Err(Error::Geometry(format!(
                "regime {:?} inconsistent with phi = {}",
                self.regime,
                ratio.phi()
            )));
        }
        if self.regime == Regime::AvoidOrigin && self.c1 >= lo {
            return Err(Error::Geometry(format!("c1 = {} must stay below the left edge {lo}", self.c1)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    CircularArc { radius: f64, theta_start: f64, theta_end: f64 },
    Horizontal { start: [f64; 2], end: [f64; 2] },
    Vertical { start: [f64; 2], end: [f64; 2] },
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

impl Segment {
    fn line(a: Complex64, b: Complex64) -> Self {
        let (start, end) = ([a.re, a.im], [b.re, b.im]);
        if (a.im - b.im).abs() <= (a.re - b.re).abs() {
            Segment::Horizontal { start, end }
        } else {
            Segment::Vertical { start, end }
        }
    }

    pub fn start(&self) -> Complex64 {
        match *self {
            Segment::CircularArc { radius, theta_start, .. } => Complex64::from_polar(radius, theta_start),
            Segment::Horizontal { start, .. } | Segment::Vertical { start, .. } => c(start[0], start[1]),
        }
    }

    pub fn end(&self) -> Complex64 {
        match *self {
            Segment::CircularArc { radius, theta_end, .. } => Complex64::from_polar(radius, theta_end),
            Segment::Horizontal { end, .. } | Segment::Vertical { end, .. } => c(end[0], end[1]),
        }
    }

    fn mirrored(&self) -> Self {
        match *self {
            Segment::CircularArc { radius, theta_start, theta_end } => Segment::CircularArc {
                radius,
                theta_start: -theta_end,
                theta_end: -theta_start,
            },
            _ => {
                let (a, b) = (self.start(), self.end());
                Segment::line(b.conj(), a.conj())
            }
        }
    }

    fn push_nodes(&self, rule: &GaussLegendre, out: &mut Vec<(Complex64, Complex64)>) {
        match *self {
            Segment::CircularArc { radius, theta_start, theta_end } => {
                let mid = 0.5 * (theta_start + theta_end);
                let half = 0.5 * (theta_end - theta_start);
                for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                    let z = Complex64::from_polar(radius, mid + half * x);
                    out.push((z, Complex64::i() * z * (half * w)));
                }
            }
            _ => {
                let (a, b) = (self.start(), self.end());
                let mid = 0.5 * (a + b);
                let half = 0.5 * (b - a);
                for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                    out.push((mid + half * x, half * w));
                }
            }
        }
    }

    /// Splits the segment at its parameter midpoint.
    pub fn split(&self) -> (Segment, Segment) {
        match *self {
            Segment::CircularArc { radius, theta_start, theta_end } => {
                let mid = 0.5 * (theta_start + theta_end);
                (
                    Segment::CircularArc { radius, theta_start, theta_end: mid },
                    Segment::CircularArc { radius, theta_start: mid, theta_end },
                )
            }
            _ => {
                let (a, b) = (self.start(), self.end());
                let m = 0.5 * (a + b);
                (Segment::line(a, m), Segment::line(m, b))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Contour {
    pub params: ContourParams,
    pub segments: Vec<Segment>,
    pub orientation: &'static str,
    /// Minimum `|Im z|` allowed for nodes.
    pub truncation: f64,
    #[serde(skip)]
    pub nodes: Vec<(Complex64, Complex64)>,
}

impl Contour {
    pub fn from_segments(params: ContourParams, segments: Vec<Segment>, truncation: f64) -> Self {
        let mut contour = Self { params, segments, orientation: "counterclockwise", truncation, nodes: Vec::new() };
        contour.nodes = contour.nodes_with_order(BASE_ORDER);
        contour
    }

    /// Quadrature nodes and weights with `order` points per segment.
    pub fn nodes_with_order(&self, order: usize) -> Vec<(Complex64, Complex64)> {
        let rule = GaussLegendre::cached(order);
        let mut out = Vec::with_capacity(order * self.segments.len());
        for seg in &self.segments {
            seg.push_nodes(&rule, &mut out);
        }
        for (z, _) in out.iter_mut() {
            if z.im.abs() < self.truncation {
                z.im = if z.im < 0.0 { -self.truncation } else { self.truncation };
            }
        }
        out
    }

    /// Rectangle `[-C₁, C₁] × [-C₂, C₂]` with the same constants. It encloses
    /// the origin, so it is only a valid substitute when the integrand is
    /// analytic there.
    pub fn enclosing_rectangle(&self) -> Contour {
        let ContourParams { big_c1, big_c2, .. } = self.params;
        let upper = [
            Segment::line(c(big_c1, 0.0), c(big_c1, big_c2)),
            Segment::line(c(big_c1, big_c2), c(-big_c1, big_c2)),
            Segment::line(c(-big_c1, big_c2), c(-big_c1, 0.0)),
        ];
        let mut segments = upper.to_vec();
        segments.extend(upper.iter().rev().map(Segment::mirrored));
        Contour::from_segments(self.params, segments, self.truncation)
    }

    /// Distance between the first start point and last end point.
    pub fn closure_gap(&self) -> f64 {
        match (self.segments.first(), self.segments.last()) {
            (Some(a), Some(b)) => (a.start() - b.end()).norm(),
            _ => f64::INFINITY,
        }
    }

    /// Numerical winding number around `a`.
    pub fn winding_number(&self, a: Complex64) -> Result<f64> {
        let v = contour_integrate(|z| 1.0 / (z - a), self)?;
        Ok((v.value / Complex64::new(0.0, 2.0 * PI)).re)
    }

    /// Same contour with every segment split in two.
    pub fn split_segments(&self) -> Contour {
        let segments = self
            .segments
            .iter()
            .flat_map(|s| {
                let (a, b) = s.split();
                [a, b]
            })
            .collect();
        Contour::from_segments(self.params, segments, self.truncation)
    }
}

fn truncation_for(ratio: &AspectRatio) -> f64 {
    match ratio.n() {
        Some(n) => (n as f64).powi(-TRUNCATION_EXPONENT),
        None => 1e-12,
    }
}

pub fn build_contour(ratio: &AspectRatio, params: ContourParams) -> Result<Contour> {
    params.validate(ratio)?;
    let ContourParams { c1, c2, big_c1, big_c2, regime } = params;
    let upper = match regime {
        Regime::AvoidOrigin => {
            let h = (c1 * c1 - c2 * c2).sqrt();
            vec![
                Segment::line(c(big_c1, 0.0), c(big_c1, h)),
                Segment::line(c(big_c1, h), c(big_c1, big_c2)),
                Segment::line(c(big_c1, big_c2), c(-big_c1, big_c2)),
                Segment::line(c(-big_c1, big_c2), c(-big_c1, h)),
                Segment::line(c(-big_c1, h), c(-c2, h)),
                Segment::CircularArc { radius: c1, theta_start: (-c2 / c1).acos(), theta_end: 0.0 },
            ]
        }
        Regime::EncloseOrigin => vec![
            Segment::line(c(big_c1, 0.0), c(big_c1, big_c2)),
            Segment::line(c(big_c1, big_c2), c(-big_c1, big_c2)),
            Segment::line(c(-big_c1, big_c2), c(-big_c1, 0.0)),
        ],
    };
    let mut segments = upper.clone();
    segments.extend(upper.iter().rev().map(Segment::mirrored));
    let contour = Contour::from_segments(params, segments, truncation_for(ratio));
    if contour.closure_gap() > 1e-12 {
        return Err(Error::Geometry(format!("contour not closed: gap {:e}", contour.closure_gap())));
    }
    Ok(contour)
}

pub fn min_node_distance(a: &Contour, b: &Contour) -> f64 {
    let mut best = f64::INFINITY;
    for (za, _) in &a.nodes {
        for (zb, _) in &b.nodes {
            best = best.min((za - zb).norm());
        }
    }
    best
}

/// Builds two nested contours; the one with the larger `C₁` is returned second.
pub fn disjoint_pair(
    ratio: &AspectRatio,
    p1: ContourParams,
    p2: ContourParams,
) -> Result<(Contour, Contour)> {
    let (inner, outer) = if p1.big_c1 <= p2.big_c1 { (p1, p2) } else { (p2, p1) };
    let a = build_contour(ratio, inner)?;
    let b = build_contour(ratio, outer)?;
    let d = min_node_distance(&a, &b);
    if d < 1e-3 {
        return Err(Error::Separation(d));
    }
    Ok((a, b))
}

/// Default nested pair: the inner contour uses the defaults, the outer one
/// is pushed out by 20% in every direction.
pub fn default_pair(ratio: &AspectRatio) -> Result<(Contour, Contour)> {
    let inner = ContourParams::defaults(ratio);
    disjoint_pair(ratio, inner, inner.perturbed(0.7, 1.3))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integral {
    pub value: Complex64,
    /// Difference between the last two refinement levels.
    pub residual: f64,
    pub nodes_per_segment: usize,
}

fn weighted_sum<F: Fn(Complex64) -> Result<Complex64>>(f: &F, nodes: &[(Complex64, Complex64)]) -> Result<Complex64> {
    let mut acc = Complex64::new(0.0, 0.0);
    for &(z, w) in nodes {
        let v = f(z)?;
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite(z));
        }
        acc += w * v;
    }
    Ok(acc)
}

/// Adaptive quadrature: doubles nodes per segment until successive
/// estimates agree to `1e-9 (1 + |I|)`.
pub fn contour_integrate<F: Fn(Complex64) -> Complex64>(f: F, contour: &Contour) -> Result<Integral> {
    try_contour_integrate(|z| Ok(f(z)), contour)
}

/// [`contour_integrate`] for integrands that can fail at a node.
pub fn try_contour_integrate<F: Fn(Complex64) -> Result<Complex64>>(
    f: F,
    contour: &Contour,
) -> Result<Integral> {
    let mut order = BASE_ORDER;
    let mut prev = weighted_sum(&f, &contour.nodes)?;
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_REFINEMENTS {
        order *= 2;
        let cur = weighted_sum(&f, &contour.nodes_with_order(order))?;
        residual = (cur - prev).norm();
        prev = cur;
        if residual < CONVERGED * (1.0 + cur.norm()) {
            return Ok(Integral { value: cur, residual, nodes_per_segment: order });
        }
    }
    if residual > ACCEPTABLE * (1.0 + prev.norm()) {
        return Err(Error::QuadratureNonConvergence(residual));
    }
    Ok(Integral { value: prev, residual, nodes_per_segment: order })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pi_i() -> Complex64 {
        Complex64::new(0.0, 2.0 * PI)
    }

    #[test]
    fn residues_inside_and_outside() {
        for phi in [2.0, 0.5] {
            let r = AspectRatio::new(phi).unwrap();
            let k = build_contour(&r, ContourParams::defaults(&r)).unwrap();
            let (lo, hi) = correlation_edges(&r);
            let inside = c(0.5 * (lo + hi), 0.0);
            let v = contour_integrate(|z| 1.0 / (z - inside), &k).unwrap().value;
            assert!((v - two_pi_i()).norm() < 1e-8, "{v}");
            let outside = c(10.0 * hi, 1.0);
            let v = contour_integrate(|z| 1.0 / (z - outside), &k).unwrap().value;
            assert!(v.norm() < 1e-8);
            let v = contour_integrate(|z| z * z, &k).unwrap().value;
            assert!(v.norm() < 1e-8);
        }
    }

    #[test]
    fn origin_winding_follows_regime() {
        let r = AspectRatio::new(0.5).unwrap();
        let k = build_contour(&r, ContourParams::defaults(&r)).unwrap();
        assert!(k.winding_number(c(0.0, 0.0)).unwrap().abs() < 1e-8);
        let r = AspectRatio::new(2.0).unwrap();
        let k = build_contour(&r, ContourParams::defaults(&r)).unwrap();
        assert!((k.winding_number(c(0.0, 0.0)).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn closed_and_conjugate_symmetric() {
        for phi in [0.25, 0.5, 2.0, 4.0] {
            let r = AspectRatio::new(phi).unwrap();
            let k = build_contour(&r, ContourParams::defaults(&r)).unwrap();
            assert!(k.closure_gap() < 1e-12);
            for (z, _) in &k.nodes {
                let mirror = k.nodes.iter().map(|(w, _)| (w - z.conj()).norm()).fold(f64::INFINITY, f64::min);
                assert!(mirror < 1e-12);
            }
        }
    }

    #[test]
    fn identical_params_fail_separation() {
        let r = AspectRatio::new(2.0).unwrap();
        let p = ContourParams::defaults(&r);
        assert!(matches!(disjoint_pair(&r, p, p), Err(Error::Separation(_))));
    }

    #[test]
    fn pair_is_order_insensitive() {
        let r = AspectRatio::new(2.0).unwrap();
        let p = ContourParams::defaults(&r);
        let q = p.perturbed(0.7, 1.3);
        let (a, b) = disjoint_pair(&r, p, q).unwrap();
        let (a2, b2) = disjoint_pair(&r, q, p).unwrap();
        assert_eq!(a.params, a2.params);
        assert_eq!(b.params, b2.params);
        assert!(min_node_distance(&a, &b) > 0.05);
    }

    #[test]
    fn bad_geometry_rejected() {
        let r = AspectRatio::new(0.5).unwrap();
        let mut p = ContourParams::defaults(&r);
        p.c2 = p.c1 * 1.5;
        assert!(build_contour(&r, p).is_err());
        let mut p = ContourParams::defaults(&r);
        p.regime = Regime::EncloseOrigin;
        assert!(build_contour(&r, p).is_err());
        let mut p = ContourParams::defaults(&r);
        p.big_c1 = 0.1;
        assert!(build_contour(&r, p).is_err());
    }

    #[test]
    fn splitting_segments_is_invisible() {
        let r = AspectRatio::new(0.5).unwrap();
        let k = build_contour(&r, ContourParams::defaults(&r)).unwrap();
        let f = |z: Complex64| z.exp() / (z - c(1.0, 0.2));
        let a = contour_integrate(f, &k).unwrap().value;
        let b = contour_integrate(f, &k.split_segments()).unwrap().value;
        assert!((a - b).norm() < 1e-10);
    }
}
