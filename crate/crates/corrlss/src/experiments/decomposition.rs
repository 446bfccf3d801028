use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::with_workers;
use crate::error::Result;
use crate::resampling::{
    decompose, decompose_diag, diag_s_diagnostics, well_configured, Configuration, TraceDiagnostic, DEFAULT_TRACE_SLACK,
};
use crate::tail_sampler::{sample_matrix_replicate, self_normalize};

/// Well-configured events must hold at least this often.
pub const MIN_WELL_CONFIGURED: f64 = 0.95;

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionSummary {
    pub replicate: u64,
    pub thresholds: (f64, f64),
    pub diag_thresholds: (f64, f64),
    pub psi_count: usize,
    pub chi_count: usize,
    pub configuration: Configuration,
    pub exact_reconstruction: bool,
    pub supports_disjoint: bool,
    pub t_estimate: f64,
    pub trace: Vec<TraceDiagnostic>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub config: ExperimentConfig,
    pub replicates: Vec<DecompositionSummary>,
    pub well_configured_frequency: f64,
    pub all_exact: bool,
    pub trace_pass_frequency: f64,
    pub pass: bool,
    #[serde(skip)]
    pub runtime_secs: f64,
}

pub fn decomposition_experiment(config: &ExperimentConfig) -> Result<DecompositionReport> {
    let start = std::time::Instant::now();
    let resolved = config.resolved()?;
    let params = resolved.control_params()?;
    let alpha = config.law.alpha();
    let replicates: Vec<DecompositionSummary> = with_workers(config.workers, || {
        (0..config.replicates as u64)
            .into_par_iter()
            .map(|r| -> Result<DecompositionSummary> {
                let x = sample_matrix_replicate(&config.law, config.n, config.p, config.master_seed, r)?;
                let sn = self_normalize(&x)?;
                let dec = decompose(&x, &params)?;
                let diag = decompose_diag(&sn.rho, config.n, &params);
                let trace = (1..=3)
                    .map(|s| diag_s_diagnostics(&x, s, alpha, DEFAULT_TRACE_SLACK))
                    .collect::<Result<Vec<_>>>()?;
                Ok(DecompositionSummary {
                    replicate: r,
                    thresholds: dec.thresholds,
                    diag_thresholds: diag.thresholds,
                    psi_count: dec.psi_count(),
                    chi_count: dec.chi_count(),
                    configuration: well_configured(&dec, &diag, &params)?,
                    exact_reconstruction: dec.reconstruct() == x.data,
                    supports_disjoint: dec.supports_disjoint(),
                    t_estimate: dec.t_estimate(&sn.rho),
                    trace,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let total = replicates.len() as f64;
    let well = replicates.iter().filter(|s| s.configuration.psi_ok && s.configuration.pi_ok).count() as f64 / total;
    let all_exact = replicates.iter().all(|s| s.exact_reconstruction && s.supports_disjoint);
    let trace_ok = replicates.iter().filter(|s| s.trace.iter().all(|t| t.pass)).count() as f64 / total;
    Ok(DecompositionReport {
        config: resolved,
        pass: well >= MIN_WELL_CONFIGURED && all_exact && trace_ok == 1.0,
        replicates,
        well_configured_frequency: well,
        all_exact,
        trace_pass_frequency: trace_ok,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
