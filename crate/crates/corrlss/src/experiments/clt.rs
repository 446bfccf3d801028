use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::calibration::mp_fit_calibration;
use super::config::{Convention, ExperimentConfig};
use super::{check_failures, mean_var, with_workers};
use crate::clt_target::{clt_target_on, CltTarget, MeanFormula, VarianceFormula};
use crate::contour::{default_pair, disjoint_pair};
use crate::error::{Error, Result};
use crate::mp_law::AspectRatio;
use crate::rng::derive_seed;
use crate::spectra::{lss, spectrum, MatrixKind};
use crate::tail_sampler::{sample_matrix_replicate, self_normalize};
use crate::test_function::TestFunction;

pub const MIN_REPLICATES: usize = 100;
const CALIBRATION_TAG: u64 = 0xCA11;
const QQ_POINTS: usize = 99;

#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub config: ExperimentConfig,
    pub convention_used: Convention,
    pub target: CltTarget,
    pub a_f: f64,
    pub sigma2_f: f64,
    /// `(LSS - a_f)/σ_f` per replicate, in replicate order.
    pub samples: Vec<f64>,
    pub lss: Vec<f64>,
    pub emp_mean: f64,
    pub emp_var: f64,
    pub ks_normal: f64,
    /// `(normal quantile, sample quantile)` at levels `1%, …, 99%`.
    pub qq: Vec<(f64, f64)>,
    /// Mean and variance of the raw statistic, for empirically centered diagnostics.
    pub lss_mean: f64,
    pub lss_var: f64,
    pub failed_replicates: usize,
    pub pass: bool,
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// Dimensions and matrix side under a convention: `(n', p', side)`.
fn reading(convention: Convention, n: usize, p: usize) -> (usize, usize, MatrixKind) {
    match convention {
        Convention::PhiEqualsNOverP => (p, n, MatrixKind::PbyP),
        _ => (n, p, MatrixKind::NbyN),
    }
}

pub fn theory_target(config: &ExperimentConfig, convention: Convention, f: &TestFunction) -> Result<CltTarget> {
    let (n, p, _) = reading(convention, config.n, config.p);
    let ratio = AspectRatio::n_over_p(n, p)?;
    let (inner, outer) = match (&config.contour, convention) {
        (Some(c), Convention::PhiEqualsPOverN | Convention::Auto) => disjoint_pair(&ratio, c.inner, c.outer)?,
        _ => default_pair(&ratio)?,
    };
    clt_target_on(f, &ratio, &inner, &outer, MeanFormula::default(), VarianceFormula::default())
}

/// Resolves `Auto` through a calibration run on a derived seed.
pub fn resolve_convention(config: &ExperimentConfig) -> Result<Convention> {
    match config.convention {
        Convention::Auto => {
            let mut cal = config.clone();
            cal.master_seed = derive_seed(config.master_seed, CALIBRATION_TAG);
            Ok(mp_fit_calibration(&cal)?.convention)
        }
        c => Ok(c),
    }
}

pub fn ks_standard_normal(samples: &[f64]) -> f64 {
    let normal = Normal::standard();
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal.cdf(x);
            (c - i as f64 / k).max((i + 1) as f64 / k - c)
        })
        .fold(0.0, f64::max)
}

fn qq_pairs(samples: &[f64]) -> Vec<(f64, f64)> {
    let normal = Normal::standard();
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    (1..=QQ_POINTS)
        .map(|k| {
            let u = k as f64 / (QQ_POINTS + 1) as f64;
            let pos = u * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(v.len() - 1);
            let w = pos - lo as f64;
            (normal.inverse_cdf(u), v[lo] * (1.0 - w) + v[hi] * w)
        })
        .collect()
}

pub fn run_clt_experiment(config: &ExperimentConfig) -> Result<CltReport> {
    let start = std::time::Instant::now();
    let resolved = config.resolved()?;
    if config.replicates < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!(
            "CLT runs need at least {MIN_REPLICATES} replicates, got {}",
            config.replicates
        )));
    }
    let f = config.test_function()?;
    let convention = resolve_convention(config)?;
    let target = theory_target(config, convention, &f)?;
    if !(target.sigma2_f > 1e-8) {
        return Err(Error::DegenerateVariance(target.sigma2_f));
    }
    let (_, _, side) = reading(convention, config.n, config.p);
    let results: Vec<Result<f64>> = with_workers(config.workers, || {
        (0..config.replicates as u64)
            .into_par_iter()
            .map(|r| {
                let x = sample_matrix_replicate(&config.law, config.n, config.p, config.master_seed, r)?;
                let sn = self_normalize(&x)?;
                lss(&spectrum(&sn, side)?, &f)
            })
            .collect()
    })?;
    let mut values = Vec::with_capacity(results.len());
    let mut failed = 0;
    for r in results {
        match r {
            Ok(v) => values.push(v),
            Err(Error::Eigen(_)) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    check_failures(failed, config.replicates)?;
    let sd = target.sigma2_f.sqrt();
    let samples: Vec<f64> = values.iter().map(|v| (v - target.a_f) / sd).collect();
    let (emp_mean, emp_var) = mean_var(&samples);
    let (lss_mean, lss_var) = mean_var(&values);
    let ks = ks_standard_normal(&samples);
    Ok(CltReport {
        config: resolved,
        convention_used: convention,
        a_f: target.a_f,
        sigma2_f: target.sigma2_f,
        target,
        qq: qq_pairs(&samples),
        samples,
        lss: values,
        emp_mean,
        emp_var,
        ks_normal: ks,
        lss_mean,
        lss_var,
        failed_replicates: failed,
        pass: ks < 0.06 && (0.7..=1.3).contains(&emp_var) && emp_mean.abs() <= 0.15,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
