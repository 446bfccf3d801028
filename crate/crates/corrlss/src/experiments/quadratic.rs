use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{mean_var, with_workers};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::spectra::{correlation_matrix, MatrixKind};
use crate::tail_sampler::{sample_matrix_replicate, self_normalize, DataMatrix};

const BOUND_SLACK: f64 = 5.0;
const RESOLVENT_TAG: u64 = 0x7E50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuadraticKind {
    Identity,
    /// `diag(1, -1, 1, …)`.
    AlternatingSign,
    /// `(R' - z)⁻¹` for the `n × n` correlation matrix `R'` of independent data and real `z` off its spectrum.
    ResolventReal { z: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct QuadraticRow {
    pub n: usize,
    pub p: usize,
    pub samples: usize,
    pub mean_delta2: f64,
    pub stderr: f64,
    pub max_abs_delta: f64,
    pub beta4: f64,
    pub n_beta4: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuadraticReport {
    pub config: ExperimentConfig,
    pub kind: QuadraticKind,
    pub rows: Vec<QuadraticRow>,
    pub pass: bool,
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// `Δⱼ = Yⱼ*AYⱼ - tr A/n` for the diagonal kinds, computed from `X` so that
/// `A = I` reproduces `ρⱼ²` with the same floating-point operations.
fn diagonal_deltas(x: &DataMatrix, alternating: bool) -> Vec<f64> {
    let n = x.n;
    let tr_a = if alternating { (n % 2) as f64 } else { n as f64 };
    (0..x.p)
        .map(|j| {
            let row = x.row(j);
            let rho2: f64 = row.iter().map(|v| v * v).sum();
            let q: f64 = row
                .iter()
                .enumerate()
                .map(|(i, v)| if alternating && i % 2 == 1 { -(v * v) } else { v * v })
                .sum();
            q / rho2 - tr_a / n as f64
        })
        .collect()
}

fn resolvent_deltas(config: &ExperimentConfig, n: usize, p: usize, seed: u64, r: u64, z: f64, x: &DataMatrix) -> Result<Vec<f64>> {
    let other = self_normalize(&sample_matrix_replicate(&config.law, n, p, derive_seed(seed, RESOLVENT_TAG), r)?)?;
    let rp = correlation_matrix(&other, MatrixKind::NbyN)?;
    let eig = rp.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let lam: Vec<f64> = (0..n).map(|k| eig.S()[k]).collect();
    let top = lam.iter().copied().fold(0.0, f64::max);
    if z > -0.1 && z < top + 0.1 {
        return Err(Error::InvalidArgument(format!("z = {z} not outside the spectrum [0, {top:.4}] by 0.1")));
    }
    let sn = self_normalize(x)?;
    let y = MatRef::from_column_major_slice(&sn.y, n, p);
    let mut b = Mat::<f64>::zeros(n, p);
    matmul(b.as_mut(), Accum::Replace, eig.U().transpose(), y, 1.0, Par::Seq);
    let tr_a: f64 = lam.iter().map(|l| 1.0 / (l - z)).sum();
    Ok((0..p)
        .map(|j| (0..n).map(|k| b[(k, j)] * b[(k, j)] / (lam[k] - z)).sum::<f64>() - tr_a / n as f64)
        .collect())
}

/// Monte Carlo `E|Yⱼ*AYⱼ - n⁻¹tr A|²` against `5(nβ̂₄ + n^{-1/2})`.
pub fn quadratic_concentration_experiment(
    config: &ExperimentConfig,
    kind: QuadraticKind,
    n_grid: &[usize],
) -> Result<QuadraticReport> {
    let start = std::time::Instant::now();
    let resolved = config.resolved()?;
    let aspect = config.p as f64 / config.n as f64;
    let sizes: Vec<usize> = if n_grid.is_empty() { vec![config.n] } else { n_grid.to_vec() };
    let mut rows = Vec::new();
    for (k, &n) in sizes.iter().enumerate() {
        let p = if n == config.n { config.p } else { ((n as f64) * aspect).round().max(2.0) as usize };
        let seed = derive_seed(config.master_seed, k as u64);
        let per_rep: Vec<(Vec<f64>, f64)> = with_workers(config.workers, || {
            (0..config.replicates as u64)
                .into_par_iter()
                .map(|r| -> Result<(Vec<f64>, f64)> {
                    let x = sample_matrix_replicate(&config.law, n, p, seed, r)?;
                    let deltas = match kind {
                        QuadraticKind::Identity => diagonal_deltas(&x, false),
                        QuadraticKind::AlternatingSign => diagonal_deltas(&x, true),
                        QuadraticKind::ResolventReal { z } => resolvent_deltas(config, n, p, seed, r, z, &x)?,
                    };
                    let sn = self_normalize(&x)?;
                    let b4 = sn.y.iter().map(|v| v.powi(4)).sum::<f64>() / (n * p) as f64;
                    Ok((deltas, b4))
                })
                .collect::<Result<Vec<_>>>()
        })??;
        let d2: Vec<f64> = per_rep.iter().flat_map(|(d, _)| d.iter().map(|v| v * v)).collect();
        let max_abs = per_rep.iter().flat_map(|(d, _)| d.iter().map(|v| v.abs())).fold(0.0, f64::max);
        let (mean_delta2, var) = mean_var(&d2);
        let beta4 = per_rep.iter().map(|(_, b)| b).sum::<f64>() / per_rep.len() as f64;
        let nf = n as f64;
        let bound = BOUND_SLACK * (nf * beta4 + nf.powf(-0.5));
        rows.push(QuadraticRow {
            n,
            p,
            samples: d2.len(),
            mean_delta2,
            stderr: (var / d2.len() as f64).sqrt(),
            max_abs_delta: max_abs,
            beta4,
            n_beta4: nf * beta4,
            bound,
            pass: mean_delta2 <= bound,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(QuadraticReport { config: resolved, kind, rows, pass, runtime_secs: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tail_sampler::{sample_matrix, DataLaw, SlowlyVarying, TailLaw};

    #[test]
    fn identity_gives_exact_zero() {
        let law = DataLaw::RegularlyVarying(TailLaw::new(3.0, SlowlyVarying::Const(1.0), false).unwrap());
        for n in [7, 49, 100] {
            let x = sample_matrix(&law, n, 5, 9).unwrap();
            assert!(diagonal_deltas(&x, false).iter().all(|d| *d == 0.0));
        }
    }
}
