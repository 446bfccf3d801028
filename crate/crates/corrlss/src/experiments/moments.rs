use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::with_workers;
use crate::error::Result;
use crate::tail_sampler::{
    asymptotic_even_moment, critical_condition, monte_carlo_moments, CriticalClass, DataLaw, MomentSource, MomentTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSettings {
    pub columns: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentsReport {
    pub config: ExperimentConfig,
    pub settings: MomentSettings,
    pub table: MomentTable,
    /// Leading-order `E Y⁴`, when the law is regularly varying with `α < 4`.
    pub asymptotic_beta4: Option<f64>,
    pub beta4_ratio: Option<f64>,
    pub classification: Option<CriticalClass>,
    /// `|β̂₂ - 1/n|` in standard errors, with the error floored at rounding level.
    pub beta2_z: f64,
    pub pass: bool,
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// Monte Carlo mixed moments of self-normalized entries next to their asymptotic predictions.
pub fn moments_experiment(config: &ExperimentConfig, settings: &MomentSettings) -> Result<MomentsReport> {
    let start = std::time::Instant::now();
    let resolved = config.resolved()?;
    let table = with_workers(config.workers, || {
        monte_carlo_moments(&config.law, config.n, settings.columns, config.master_seed)
    })??;
    let (asymptotic_beta4, classification) = match &config.law {
        DataLaw::RegularlyVarying(law) => (
            asymptotic_even_moment(law.alpha, 2, config.n, law).ok(),
            Some(critical_condition(law)),
        ),
        DataLaw::Gaussian => (None, None),
    };
    let beta4 = table.beta["4"];
    let se2 = match &table.source {
        MomentSource::MonteCarlo { stderr, .. } => stderr["2"],
        MomentSource::Analytic => 0.0,
    };
    // Unit columns make every per-column β₂ equal 1/n up to rounding.
    let floor = 1e3 * f64::EPSILON / config.n as f64;
    let dev = (table.beta["2"] - 1.0 / config.n as f64).abs();
    let beta2_z = dev / se2.max(floor);
    Ok(MomentsReport {
        config: resolved,
        settings: *settings,
        beta4_ratio: asymptotic_beta4.map(|a| beta4 / a),
        asymptotic_beta4,
        classification,
        beta2_z,
        pass: beta2_z <= 5.0,
        table,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
