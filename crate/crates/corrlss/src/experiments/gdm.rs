use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::with_workers;
use crate::error::{Error, Result};
use crate::free_conv::{GdmEdge, GdmModel, DEFAULT_ETA0};
use crate::resampling::{decompose, decompose_diag, well_configured, Configuration};
use crate::rng::{derive_seed, stream};
use crate::spectra::{esd_distance, ks_two_sample, symmetric_eigenvalues, MatrixKind, Reference, SpectralData, TabulatedCdf};
use crate::tail_sampler::{sample_matrix_replicate, self_normalize};

const NOISE_TAG: u64 = 0x6D3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdmSettings {
    pub t: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
}

fn default_grid_points() -> usize {
    2000
}

fn default_eta0() -> f64 {
    DEFAULT_ETA0
}

impl GdmSettings {
    pub fn new(t: f64) -> Self {
        Self { t, grid_points: default_grid_points(), eta0: default_eta0() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GdmReport {
    pub config: ExperimentConfig,
    pub settings: GdmSettings,
    pub t_estimate: f64,
    pub configuration: Configuration,
    /// KS between the spectrum of `Y_t*Y_t` and the free-convolution density.
    pub ks: f64,
    /// Two-sample KS between the spectra of `Y_t*Y_t` and of the base matrix.
    pub ks_base: f64,
    pub lambda1: f64,
    pub edge: GdmEdge,
    pub edge_gap: f64,
    pub edge_tolerance: f64,
    pub density_mass: f64,
    /// `(E, ρ_t(E))`.
    pub density: Vec<(f64, f64)>,
    pub pass: bool,
    #[serde(skip)]
    pub runtime_secs: f64,
}

fn gram_eigenvalues(v: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let p = v.ncols();
    let mut g = Mat::<f64>::zeros(p, p);
    matmul(g.as_mut(), Accum::Replace, v.transpose(), v, 1.0, Par::Seq);
    Ok(symmetric_eigenvalues(g.as_ref())?.into_iter().map(|x| x.max(0.0)).collect())
}

/// Simulates `Y_t = √t W + H̃(diag S)^{-1/2}` and compares its spectrum with the solver.
pub fn gdm_experiment(config: &ExperimentConfig, settings: &GdmSettings) -> Result<GdmReport> {
    let start = std::time::Instant::now();
    let resolved = config.resolved()?;
    let t = settings.t;
    if !(0.01..0.5).contains(&t) {
        return Err(Error::InvalidArgument(format!("t must lie in [0.01, 0.5), got {t}")));
    }
    if settings.grid_points < 100 {
        return Err(Error::InvalidArgument("density grid needs at least 100 points".into()));
    }
    let params = resolved.control_params()?;
    let (n, p) = (config.n, config.p);
    let phi = p as f64 / n as f64;
    with_workers(config.workers, || -> Result<GdmReport> {
        let x = sample_matrix_replicate(&config.law, n, p, config.master_seed, 0)?;
        let sn = self_normalize(&x)?;
        let dec = decompose(&x, &params)?;
        let configuration = well_configured(&dec, &decompose_diag(&sn.rho, n, &params), &params)?;
        let heavy = dec.heavy_part();
        let v = Mat::<f64>::from_fn(n, p, |i, j| heavy[j * n + i] / sn.rho[j]);
        let base = gram_eigenvalues(v.as_ref())?;
        let noise_seed = derive_seed(config.master_seed, NOISE_TAG);
        let scale = (t / n as f64).sqrt();
        let mut yt = v.clone();
        for j in 0..p {
            let mut rng = stream(noise_seed, 0, j as u64);
            for i in 0..n {
                let w: f64 = StandardNormal.sample(&mut rng);
                yt[(i, j)] += scale * w;
            }
        }
        let spec = gram_eigenvalues(yt.as_ref())?;
        let model = GdmModel::new(t, base.clone(), phi)?;
        let edge = model.gdm_edge()?;
        let top = edge.lambda_plus_t.max(spec[0]) + 0.5;
        let grid: Vec<f64> = (0..settings.grid_points).map(|k| top * k as f64 / (settings.grid_points - 1) as f64).collect();
        let rho = model.gdm_density(&grid, settings.eta0)?;
        let table = TabulatedCdf::from_density(&grid, &rho, 0.0)?;
        let sd = SpectralData { eigenvalues: spec.clone(), n, p, matrix_kind: MatrixKind::PbyP };
        let ks = esd_distance(&sd, &Reference::Tabulated(table.clone()));
        let ks_base = ks_two_sample(&spec, &base);
        let lambda1 = spec[0];
        let edge_gap = (lambda1 - edge.lambda_plus_t).abs();
        let edge_tolerance = 0.05f64.max(10.0 * t);
        Ok(GdmReport {
            config: resolved.clone(),
            settings: *settings,
            t_estimate: dec.t_estimate(&sn.rho),
            configuration,
            ks,
            ks_base,
            lambda1,
            edge,
            edge_gap,
            edge_tolerance,
            density_mass: table.raw_mass,
            density: grid.into_iter().zip(rho).collect(),
            pass: ks < 0.08 && edge_gap <= edge_tolerance,
            runtime_secs: start.elapsed().as_secs_f64(),
        })
    })?
}
