//! Correlation matrices, their spectra and the spectral functionals built on them.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, MatRef, Par, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mp_law::{mp_cdf, mp_quantile, AspectRatio};
use crate::tail_sampler::SelfNormalized;
use crate::test_function::TestFunction;

/// Largest dense eigenproblem accepted.
pub const MAX_DIMENSION: usize = 4096;
const POLE_TOL: f64 = 1e-14;
const NEGATIVE_TOL: f64 = 1e-8;
const ZERO_SNAP: f64 = 1e-10;
const KS_QUANTILES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixKind {
    /// `R = YY*`, `n × n`.
    NbyN,
    /// `R̃ = Y*Y`, `p × p`.
    PbyP,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralData {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub n: usize,
    pub p: usize,
    pub matrix_kind: MatrixKind,
}

impl SpectralData {
    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The same nonzero spectrum seen from the other side, padded or trimmed with zeros.
    pub fn as_kind(&self, kind: MatrixKind) -> SpectralData {
        if kind == self.matrix_kind {
            return self.clone();
        }
        let target = match kind {
            MatrixKind::NbyN => self.n,
            MatrixKind::PbyP => self.p,
        };
        let mut eigenvalues = self.eigenvalues.clone();
        eigenvalues.resize(target, 0.0);
        SpectralData { eigenvalues, n: self.n, p: self.p, matrix_kind: kind }
    }

    /// Ascending copy, convenient for CDF work.
    pub fn ascending(&self) -> Vec<f64> {
        let mut v = self.eigenvalues.clone();
        v.reverse();
        v
    }
}

/// Copies `Y` into a faer matrix (`n × p`).
pub fn y_matrix(sn: &SelfNormalized) -> Mat<f64> {
    MatRef::from_column_major_slice(&sn.y, sn.n, sn.p).to_owned()
}

pub fn correlation_matrix(sn: &SelfNormalized, kind: MatrixKind) -> Result<Mat<f64>> {
    let dim = match kind {
        MatrixKind::NbyN => sn.n,
        MatrixKind::PbyP => sn.p,
    };
    if dim > MAX_DIMENSION {
        return Err(Error::Guardrail(format!("{dim} x {dim} exceeds the dense limit {MAX_DIMENSION}")));
    }
    let y = MatRef::from_column_major_slice(&sn.y, sn.n, sn.p);
    let mut r = Mat::<f64>::zeros(dim, dim);
    match kind {
        MatrixKind::NbyN => matmul(r.as_mut(), Accum::Replace, y, y.transpose(), 1.0, Par::Seq),
        MatrixKind::PbyP => matmul(r.as_mut(), Accum::Replace, y.transpose(), y, 1.0, Par::Seq),
    }
    // Exact symmetry, and the unit diagonal of R̃ that the columns guarantee.
    for j in 0..dim {
        for i in 0..j {
            let v = 0.5 * (r[(i, j)] + r[(j, i)]);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    if kind == MatrixKind::PbyP {
        for j in 0..dim {
            r[(j, j)] = 1.0;
        }
    }
    Ok(r)
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn symmetric_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidArgument(format!("matrix is {} x {}", a.nrows(), a.ncols())));
    }
    if a.nrows() > MAX_DIMENSION {
        return Err(Error::Guardrail(format!("dimension {} exceeds {MAX_DIMENSION}", a.nrows())));
    }
    let mut ev = a.self_adjoint_eigenvalues(Side::Lower).map_err(|e| {
        let norm = a.norm_max();
        Error::Eigen(format!("{e:?} (max entry {norm:e}, dimension {})", a.nrows()))
    })?;
    if ev.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    ev.reverse();
    Ok(ev)
}

/// Spectrum of a correlation matrix: round-off negatives are clamped and
/// rank-deficiency noise is snapped to exact zeros.
pub fn eigenvalues(r: MatRef<'_, f64>, n: usize, p: usize, kind: MatrixKind) -> Result<SpectralData> {
    let expected = match kind {
        MatrixKind::NbyN => n,
        MatrixKind::PbyP => p,
    };
    if r.nrows() != expected {
        return Err(Error::InvalidArgument(format!("{kind:?} matrix should have dimension {expected}")));
    }
    let mut ev = symmetric_eigenvalues(r)?;
    let top = ev.first().copied().unwrap_or(0.0).max(1.0);
    for v in ev.iter_mut() {
        if *v < -NEGATIVE_TOL * top {
            return Err(Error::Invariant(format!("correlation matrix has eigenvalue {v:e}")));
        }
        if *v < ZERO_SNAP * top {
            *v = 0.0;
        }
    }
    Ok(SpectralData { eigenvalues: ev, n, p, matrix_kind: kind })
}

/// Builds the requested kind from the cheaper `p × p` or `n × n` side.
pub fn spectrum(sn: &SelfNormalized, kind: MatrixKind) -> Result<SpectralData> {
    let small = if sn.p <= sn.n { MatrixKind::PbyP } else { MatrixKind::NbyN };
    let r = correlation_matrix(sn, small)?;
    Ok(eigenvalues(r.as_ref(), sn.n, sn.p, small)?.as_kind(kind))
}

pub fn lss(sd: &SpectralData, f: &TestFunction) -> Result<f64> {
    let mut acc = 0.0;
    for &l in &sd.eigenvalues {
        let v = f.eval(l);
        if !v.is_finite() {
            return Err(Error::NonFinite(Complex64::new(l, 0.0)));
        }
        acc += v;
    }
    Ok(acc)
}

pub fn empirical_stieltjes(sd: &SpectralData, z: Complex64) -> Result<Complex64> {
    let mut acc = Complex64::new(0.0, 0.0);
    for &l in &sd.eigenvalues {
        let d = l - z;
        if d.norm() < POLE_TOL {
            return Err(Error::PoleProximity(z));
        }
        acc += 1.0 / d;
    }
    Ok(acc / sd.count() as f64)
}

/// Selected entries `G_ij(z)` of `(R - z)⁻¹`, one LU solve per requested column.
pub fn green_entries(r: MatRef<'_, f64>, z: Complex64, rows: &[usize], cols: &[usize]) -> Result<Vec<Vec<Complex64>>> {
    let dim = r.nrows();
    if rows.iter().chain(cols).any(|&i| i >= dim) {
        return Err(Error::InvalidArgument(format!("index out of range for dimension {dim}")));
    }
    let a = Mat::<Complex64>::from_fn(dim, dim, |i, j| {
        let v = Complex64::new(r[(i, j)], 0.0);
        if i == j {
            v - z
        } else {
            v
        }
    });
    let lu = a.partial_piv_lu();
    let mut rhs = Mat::<Complex64>::zeros(dim, cols.len());
    for (k, &j) in cols.iter().enumerate() {
        rhs[(j, k)] = Complex64::new(1.0, 0.0);
    }
    lu.solve_in_place(rhs.as_mut());
    let mut biggest = 0.0f64;
    for k in 0..cols.len() {
        for i in 0..dim {
            let v = rhs[(i, k)];
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NearSingular(0.0));
            }
            biggest = biggest.max(v.norm());
        }
    }
    // ‖G‖ = 1/dist(z, spec R); an enormous column flags a near-singular solve.
    if biggest > 1e12 {
        return Err(Error::NearSingular(1.0 / biggest));
    }
    Ok(rows.iter().map(|&i| (0..cols.len()).map(|k| rhs[(i, k)]).collect()).collect())
}

/// CDF to compare an empirical spectrum with.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Mp(AspectRatio),
    Tabulated(TabulatedCdf),
}

/// Piecewise-linear CDF from a density table, with an optional atom at 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabulatedCdf {
    pub x: Vec<f64>,
    pub cdf: Vec<f64>,
    pub atom: f64,
    /// Mass before normalization (continuous part plus atom).
    pub raw_mass: f64,
}

impl TabulatedCdf {
    /// Trapezoid integration of `(x, ρ)`; the continuous part is rescaled so the total is one.
    pub fn from_density(x: &[f64], rho: &[f64], atom: f64) -> Result<Self> {
        if x.len() != rho.len() || x.len() < 2 {
            return Err(Error::InvalidArgument("density table needs matching x and rho of length >= 2".into()));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("density grid must be increasing".into()));
        }
        let mut cdf = vec![0.0; x.len()];
        for k in 1..x.len() {
            cdf[k] = cdf[k - 1] + 0.5 * (rho[k] + rho[k - 1]) * (x[k] - x[k - 1]);
        }
        let cont = *cdf.last().unwrap();
        if !(cont > 0.0) {
            return Err(Error::InvalidArgument("density has no mass".into()));
        }
        let scale = (1.0 - atom) / cont;
        for v in cdf.iter_mut() {
            *v = atom + *v * scale;
        }
        Ok(Self { x: x.to_vec(), cdf, atom, raw_mass: cont + atom })
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        if t <= self.x[0] {
            return if self.x[0] > 0.0 { self.atom } else { self.cdf[0] };
        }
        let last = self.x.len() - 1;
        if t >= self.x[last] {
            return 1.0;
        }
        let k = self.x.partition_point(|&v| v <= t);
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let w = (t - x0) / (x1 - x0);
        self.cdf[k - 1] + w * (self.cdf[k] - self.cdf[k - 1])
    }

    fn quantile(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&v| v < u).clamp(1, self.x.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        if c1 <= c0 {
            return self.x[k];
        }
        self.x[k - 1] + (u - c0) / (c1 - c0) * (self.x[k] - self.x[k - 1])
    }
}

impl Reference {
    fn cdf(&self, x: f64) -> f64 {
        match self {
            Reference::Mp(r) => mp_cdf(x, r),
            Reference::Tabulated(t) => t.eval(x),
        }
    }

    /// Left limit; differs from the CDF only at the atom.
    fn cdf_left(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.cdf(x)
        }
    }

    fn quantile_points(&self) -> Vec<f64> {
        (1..KS_QUANTILES)
            .map(|k| {
                let u = k as f64 / KS_QUANTILES as f64;
                match self {
                    Reference::Mp(r) => mp_quantile(u, r),
                    Reference::Tabulated(t) => {
                        let lo = t.atom;
                        t.quantile(lo + u * (1.0 - lo))
                    }
                }
            })
            .collect()
    }
}

/// Kolmogorov–Smirnov distance between the spectrum's empirical CDF and the reference.
pub fn esd_distance(sd: &SpectralData, reference: &Reference) -> f64 {
    ks_distance(&sd.ascending(), reference)
}

/// KS distance for an ascending sample against a reference CDF.
pub fn ks_distance(sorted: &[f64], reference: &Reference) -> f64 {
    let total = sorted.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == x {
            j += 1;
        }
        let below = i as f64 / total;
        let upto = (j + 1) as f64 / total;
        d = d.max((reference.cdf_left(x) - below).abs()).max((upto - reference.cdf(x)).abs());
        i = j + 1;
    }
    for q in reference.quantile_points() {
        let emp = sorted.partition_point(|&v| v <= q) as f64 / total;
        d = d.max((emp - reference.cdf(q)).abs());
    }
    d.clamp(0.0, 1.0)
}

/// KS distance between two samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularityPoint {
    pub e: f64,
    pub eta: f64,
    pub im_m: f64,
    pub kappa0: f64,
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub eta_star: f64,
    pub fitted_cv: f64,
    pub cv_used: f64,
    pub condition_i_pass: bool,
    pub condition_ii_pass: bool,
    pub condition_iii_pass: bool,
    pub grid: Vec<RegularityPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CvMode {
    /// Fit the smallest constant; condition (i) passes when it stays below `cap`.
    Fit { cap: f64 },
    Fixed(f64),
}

impl Default for CvMode {
    fn default() -> Self {
        CvMode::Fit { cap: 20.0 }
    }
}

const REG_E_POINTS: usize = 41;
const REG_ETA_POINTS: usize = 8;

/// Checks square-root behaviour of `Im m` down to scale `η_*`, the spectral bounds and the norm bound.
pub fn eta_regularity_check(sd: &SpectralData, eta_star: f64, mode: CvMode) -> Result<RegularityReport> {
    let dim = sd.n.max(sd.p) as f64;
    if !(eta_star > dim.powf(-2.0 / 3.0) && eta_star < 1.0) {
        return Err(Error::InvalidArgument(format!("eta_star = {eta_star} outside (n^-2/3, 1)")));
    }
    let nonzero: Vec<f64> = sd.eigenvalues.iter().copied().filter(|&v| v > 0.0).collect();
    if nonzero.len() < 10 {
        return Err(Error::InsufficientSpectrum(format!("{} nonzero eigenvalues, need 10", nonzero.len())));
    }
    let hi = nonzero[0];
    let lo = *nonzero.last().unwrap();
    let width = hi - lo;
    let e_lo = (lo - 0.25 * width).max(0.0);
    let e_hi = hi + 0.25 * width;
    let count = nonzero.len() as f64;
    let mut grid = Vec::with_capacity(REG_E_POINTS * REG_ETA_POINTS);
    let mut worst = 1.0f64;
    for a in 0..REG_E_POINTS {
        let e = e_lo + (e_hi - e_lo) * a as f64 / (REG_E_POINTS - 1) as f64;
        let inside = e >= lo && e <= hi;
        let kappa0 = if inside { (e - lo).min(hi - e) } else { (lo - e).max(e - hi) };
        let cutoff = if inside { eta_star + (eta_star * kappa0).sqrt() } else { eta_star };
        if cutoff >= 1.0 {
            continue;
        }
        for b in 0..REG_ETA_POINTS {
            let eta = cutoff * (1.0 / cutoff).powf(b as f64 / (REG_ETA_POINTS - 1) as f64);
            let im_m: f64 = nonzero.iter().map(|&l| eta / ((l - e).powi(2) + eta * eta)).sum::<f64>() / count;
            let target = if inside { (kappa0 + eta).sqrt() } else { eta / (kappa0 + eta).sqrt() };
            let ratio = im_m / target;
            worst = worst.max(ratio).max(1.0 / ratio);
            grid.push(RegularityPoint { e, eta, im_m, kappa0, inside });
        }
    }
    let (cv_used, condition_i_pass) = match mode {
        CvMode::Fit { cap } => (worst, worst <= cap),
        CvMode::Fixed(c) => (c, worst <= c),
    };
    let condition_ii_pass = 1.0 / cv_used <= lo && hi <= cv_used;
    let condition_iii_pass = hi <= dim.powf(cv_used);
    Ok(RegularityReport {
        eta_star,
        fitted_cv: worst,
        cv_used,
        condition_i_pass,
        condition_ii_pass,
        condition_iii_pass,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tail_sampler::{sample_matrix, self_normalize, DataLaw};

    fn sn(n: usize, p: usize, seed: u64) -> SelfNormalized {
        self_normalize(&sample_matrix(&DataLaw::Gaussian, n, p, seed).unwrap()).unwrap()
    }

    #[test]
    fn traces_and_shared_spectrum() {
        let y = sn(30, 12, 5);
        let r = correlation_matrix(&y, MatrixKind::NbyN).unwrap();
        let rt = correlation_matrix(&y, MatrixKind::PbyP).unwrap();
        let tr: f64 = (0..30).map(|i| r[(i, i)]).sum();
        assert!((tr - 12.0).abs() < 1e-8);
        let a = eigenvalues(r.as_ref(), 30, 12, MatrixKind::NbyN).unwrap();
        let b = eigenvalues(rt.as_ref(), 30, 12, MatrixKind::PbyP).unwrap();
        for k in 0..12 {
            assert!((a.eigenvalues[k] - b.eigenvalues[k]).abs() < 1e-6);
        }
        assert!(a.eigenvalues[12..].iter().all(|&v| v == 0.0));
        assert!((lss(&a, &TestFunction::monomial(1)).unwrap() - 12.0).abs() < 1e-8);
        assert!((lss(&a, &TestFunction::monomial(0)).unwrap() - 30.0).abs() < 1e-12);
    }

    #[test]
    fn single_projection() {
        let y = SelfNormalized { n: 2, p: 1, y: vec![0.6, 0.8], rho: vec![1.0] };
        let r = correlation_matrix(&y, MatrixKind::NbyN).unwrap();
        let sd = eigenvalues(r.as_ref(), 2, 1, MatrixKind::NbyN).unwrap();
        assert!((sd.eigenvalues[0] - 1.0).abs() < 1e-12 && sd.eigenvalues[1] == 0.0);
    }

    #[test]
    fn stieltjes_basics() {
        let sd = SpectralData { eigenvalues: vec![1.0], n: 1, p: 1, matrix_kind: MatrixKind::PbyP };
        let m = empirical_stieltjes(&sd, Complex64::new(0.0, 1.0)).unwrap();
        assert!((m - Complex64::new(0.5, 0.5)).norm() < 1e-15);
        let z = Complex64::new(1e6, 0.0);
        assert!((empirical_stieltjes(&sd, z).unwrap() + 1.0 / z).norm() < 1e-6);
        assert!(empirical_stieltjes(&sd, Complex64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn green_of_zero_matrix() {
        let r = Mat::<f64>::zeros(3, 3);
        let g = green_entries(r.as_ref(), Complex64::new(0.0, 1.0), &[0, 1], &[0, 1]).unwrap();
        assert!((g[0][0] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        assert!(g[0][1].norm() < 1e-15);
    }

    #[test]
    fn tabulated_cdf_is_monotone() {
        let x: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let rho = vec![1.0; 101];
        let t = TabulatedCdf::from_density(&x, &rho, 0.0).unwrap();
        assert!((t.eval(0.5) - 0.5).abs() < 1e-12);
        assert_eq!(t.eval(2.0), 1.0);
    }
}
