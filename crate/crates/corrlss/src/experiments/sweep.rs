use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{mean_var, with_workers};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tail_sampler::{
    critical_condition, sample_matrix_replicate, self_normalize, CriticalClass, DataLaw, SlowlyVarying, TailLaw,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub alpha_grid: Vec<f64>,
    pub l_choices: Vec<SlowlyVarying>,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_true")]
    pub symmetric: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub l: SlowlyVarying,
    pub n: usize,
    pub p: usize,
    pub replicates: usize,
    pub emp_mean: f64,
    pub emp_var: f64,
    pub emp_var_se: f64,
    /// `4p²/n²`.
    pub universal: f64,
    /// `2np²β̂₄²`.
    pub excess: f64,
    pub excess_se: f64,
    pub beta4: f64,
    pub beta4_se: f64,
    pub ratio: f64,
    pub classification: CriticalClass,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub settings: SweepSettings,
    pub rows: Vec<SweepRow>,
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// `(tr R̃², mean over columns of Σᵢ Y⁴ᵢⱼ / n)` for one replicate.
fn schott_replicate(law: &DataLaw, n: usize, p: usize, seed: u64, r: u64) -> Result<(f64, f64)> {
    let sn = self_normalize(&sample_matrix_replicate(law, n, p, seed, r)?)?;
    let y = MatRef::from_column_major_slice(&sn.y, n, p);
    let mut g = Mat::<f64>::zeros(p, p);
    matmul(g.as_mut(), Accum::Replace, y.transpose(), y, 1.0, Par::Seq);
    let mut tr2 = 0.0;
    for j in 0..p {
        for i in 0..p {
            tr2 += g[(i, j)] * g[(i, j)];
        }
    }
    let b4 = sn.y.iter().map(|v| v.powi(4)).sum::<f64>() / (n * p) as f64;
    Ok((tr2, b4))
}

/// Empirical variance of Schott's statistic `tr R̃²` across tail indices,
/// slowly varying factors and sizes, against the universal and excess predictions.
pub fn phase_transition_sweep(config: &ExperimentConfig, settings: &SweepSettings) -> Result<SweepReport> {
    let start = std::time::Instant::now();
    let resolved = config.resolved()?;
    if config.replicates < 2 {
        return Err(Error::InvalidArgument("the sweep needs at least two replicates".into()));
    }
    let aspect = config.p as f64 / config.n as f64;
    let mut rows = Vec::new();
    let mut index = 0u64;
    for &alpha in &settings.alpha_grid {
        for &l in &settings.l_choices {
            let law = TailLaw::new(alpha, l, settings.symmetric)?;
            let data_law = DataLaw::RegularlyVarying(law);
            for &n in &settings.n_grid {
                let p = ((n as f64) * aspect).round() as usize;
                if p < 2 || p == n || n * p > super::config::MAX_ENTRIES {
                    return Err(Error::InvalidArgument(format!("sweep size n={n}, p={p} not allowed")));
                }
                let seed = derive_seed(config.master_seed, index);
                index += 1;
                let out: Vec<(f64, f64)> = with_workers(config.workers, || {
                    (0..config.replicates as u64)
                        .into_par_iter()
                        .map(|r| schott_replicate(&data_law, n, p, seed, r))
                        .collect::<Result<Vec<_>>>()
                })??;
                let tr: Vec<f64> = out.iter().map(|o| o.0).collect();
                let b4: Vec<f64> = out.iter().map(|o| o.1).collect();
                let reps = out.len() as f64;
                let (emp_mean, emp_var) = mean_var(&tr);
                let (beta4, b4_var) = mean_var(&b4);
                let beta4_se = (b4_var / reps).sqrt();
                let (nf, pf) = (n as f64, p as f64);
                let universal = 4.0 * pf * pf / (nf * nf);
                let excess = 2.0 * nf * pf * pf * beta4 * beta4;
                rows.push(SweepRow {
                    alpha,
                    l,
                    n,
                    p,
                    replicates: out.len(),
                    emp_mean,
                    emp_var,
                    emp_var_se: emp_var * (2.0 / (reps - 1.0)).sqrt(),
                    universal,
                    excess,
                    excess_se: 4.0 * nf * pf * pf * beta4 * beta4_se,
                    beta4,
                    beta4_se,
                    ratio: emp_var / universal,
                    classification: critical_condition(&law),
                });
            }
        }
    }
    Ok(SweepReport {
        config: resolved,
        settings: settings.clone(),
        rows,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
