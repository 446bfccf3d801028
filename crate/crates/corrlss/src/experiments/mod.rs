//! Monte Carlo harnesses. Every experiment takes a resolved
//! [`ExperimentConfig`], runs its replicates on a private worker pool and
//! returns a serializable report that embeds the config it ran with.

pub mod calibration;
pub mod clt;
pub mod config;
pub mod decomposition;
pub mod gdm;
pub mod local_law;
pub mod moments;
pub mod quadratic;
pub mod sweep;

pub use calibration::{mp_fit_calibration, CalibrationReport};
pub use clt::{run_clt_experiment, CltReport};
pub use config::{Convention, ExperimentConfig};
pub use decomposition::{decomposition_experiment, DecompositionReport};
pub use gdm::{gdm_experiment, GdmReport};
pub use local_law::{local_law_experiment, DiagnosticGrid, LocalLawReport};
pub use moments::{moments_experiment, MomentsReport};
pub use quadratic::{quadratic_concentration_experiment, QuadraticKind, QuadraticReport};
pub use sweep::{phase_transition_sweep, SweepReport};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Runs `f` on a pool of `workers` threads with sequential dense kernels, so
/// floating-point results do not depend on the pool size.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    faer::set_global_parallelism(faer::Par::Seq);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// First 12 hex digits of the SHA-256 of the canonical JSON of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// `{experiment}-{seed}-{hash}`.
pub fn artifact_stem<T: Serialize>(experiment: &str, seed: u64, config: &T) -> String {
    format!("{experiment}-{seed}-{}", config_hash(config))
}

pub fn to_json<T: Serialize>(report: &T) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

/// Sample mean and unbiased variance.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    (mean, var)
}

/// Least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Fails the run when too many replicates were skipped.
pub(crate) fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed * 100 >= total && failed > 0 {
        return Err(Error::FailedReplicates { failed, total });
    }
    Ok(())
}
