use serde::Serialize;

use super::config::{Convention, ExperimentConfig};
use super::with_workers;
use crate::error::{Error, Result};
use crate::mp_law::AspectRatio;
use crate::spectra::{esd_distance, spectrum, MatrixKind, Reference};
use crate::tail_sampler::{sample_matrix, self_normalize};

/// Both readings scoring above this are reported as ambiguous.
const AMBIGUOUS_KS: f64 = 0.2;

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub config: ExperimentConfig,
    pub convention: Convention,
    pub ks_phi_n_over_p: f64,
    pub ks_phi_p_over_n: f64,
    pub winner_ks: f64,
    pub margin: f64,
    pub pass: bool,
    /// Descending `p × p` spectrum that was fitted.
    #[serde(skip)]
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// Fits the `p × p` spectrum of one sample against both MP readings.
pub fn mp_fit_calibration(config: &ExperimentConfig) -> Result<CalibrationReport> {
    let start = std::time::Instant::now();
    let resolved = config.resolved()?;
    let (ks_a, ks_b, eigenvalues) = with_workers(config.workers, || -> Result<(f64, f64, Vec<f64>)> {
        let x = sample_matrix(&config.law, config.n, config.p, config.master_seed)?;
        let sn = self_normalize(&x)?;
        let sd = spectrum(&sn, MatrixKind::PbyP)?;
        let a = esd_distance(&sd, &Reference::Mp(AspectRatio::new(config.n as f64 / config.p as f64)?));
        let b = esd_distance(&sd, &Reference::Mp(AspectRatio::new(config.p as f64 / config.n as f64)?));
        Ok((a, b, sd.eigenvalues))
    })??;
    if ks_a > AMBIGUOUS_KS && ks_b > AMBIGUOUS_KS {
        return Err(Error::Ambiguous(ks_a, ks_b));
    }
    let (convention, winner, loser) = if ks_a < ks_b {
        (Convention::PhiEqualsNOverP, ks_a, ks_b)
    } else {
        (Convention::PhiEqualsPOverN, ks_b, ks_a)
    };
    Ok(CalibrationReport {
        config: resolved,
        convention,
        ks_phi_n_over_p: ks_a,
        ks_phi_p_over_n: ks_b,
        winner_ks: winner,
        margin: loser - winner,
        eigenvalues,
        pass: winner < 0.05 && loser - winner >= 0.1,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
