use num_complex::Complex64;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{median, slope, with_workers};
use crate::error::{Error, Result};
use crate::mp_law::{mp_edges, mp_stieltjes, AspectRatio};
use crate::rng::{derive_seed, stream};
use crate::spectra::{correlation_matrix, eigenvalues, empirical_stieltjes, green_entries, MatrixKind};
use crate::tail_sampler::{sample_matrix_replicate, self_normalize};

const DELTA: f64 = 0.1;
const OUTSIDE_GAP: f64 = 0.1;
const PAIR_COLS: usize = 20;
const PAIR_ROWS: usize = 10;
const PAIR_BLOCK: u64 = u64::MAX - 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    Bulk,
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticPoint {
    pub re: f64,
    pub im: f64,
    pub class: PointClass,
}

impl DiagnosticPoint {
    pub fn z(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticGrid {
    pub points: Vec<DiagnosticPoint>,
}

impl DiagnosticGrid {
    /// One bulk point at the middle of the support and one point right of it.
    pub fn default_for(ratio: &AspectRatio) -> Self {
        let (lo, hi) = mp_edges(ratio);
        Self {
            points: vec![
                DiagnosticPoint { re: 0.5 * (lo + hi), im: 0.3, class: PointClass::Bulk },
                DiagnosticPoint { re: hi + 0.5, im: 0.1, class: PointClass::Outside },
            ],
        }
    }

    /// Bulk points need `Im z ≥ n^{-1+δ}`; outside points keep `Re z` at least 0.1 from the support.
    pub fn validate(&self, n: usize, ratio: &AspectRatio) -> Result<()> {
        let (lo, hi) = mp_edges(ratio);
        for pt in &self.points {
            if !(pt.im > 0.0) {
                return Err(Error::InvalidArgument(format!("diagnostic point {} needs Im z > 0", pt.z())));
            }
            match pt.class {
                PointClass::Bulk if pt.im < (n as f64).powf(-1.0 + DELTA) => {
                    return Err(Error::InvalidArgument(format!("bulk point {} too close to the axis", pt.z())));
                }
                PointClass::Outside if pt.re > lo - OUTSIDE_GAP && pt.re < hi + OUTSIDE_GAP => {
                    return Err(Error::InvalidArgument(format!("outside point {} too close to the support", pt.z())));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalLawSettings {
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub grid: Option<DiagnosticGrid>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub n: usize,
    pub p: usize,
    pub median_avg_dev: f64,
    pub median_offdiag: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointDecay {
    pub point: DiagnosticPoint,
    pub rows: Vec<DecayRow>,
    pub avg_slope: f64,
    pub offdiag_slope: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalLawReport {
    pub config: ExperimentConfig,
    /// Settings with the diagnostic grid filled in.
    pub settings: LocalLawSettings,
    pub points: Vec<PointDecay>,
    pub pass: bool,
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// Per point: `|m_n(z) - m(z)|` and the largest sampled `|G_ij(z)|`, `i ≠ j`.
fn replicate(config: &ExperimentConfig, n: usize, p: usize, seed: u64, r: u64, points: &[DiagnosticPoint]) -> Result<Vec<(f64, f64)>> {
    let sn = self_normalize(&sample_matrix_replicate(&config.law, n, p, seed, r)?)?;
    let rt = correlation_matrix(&sn, MatrixKind::PbyP)?;
    let sd = eigenvalues(rt.as_ref(), n, p, MatrixKind::PbyP)?;
    let ratio = AspectRatio::new(p as f64 / n as f64)?;
    let mut rng = stream(seed, r, PAIR_BLOCK);
    let picked = sample(&mut rng, p, (PAIR_COLS + PAIR_ROWS).min(p)).into_vec();
    let split = PAIR_COLS.min(picked.len() / 2);
    let (cols, rows) = picked.split_at(split);
    points
        .iter()
        .map(|pt| {
            let z = pt.z();
            let dev = (empirical_stieltjes(&sd, z)? - mp_stieltjes(z, &ratio)?.m).norm();
            let g = green_entries(rt.as_ref(), z, rows, cols)?;
            let off = g.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max);
            Ok((dev, off))
        })
        .collect()
}

/// Decay of the averaged and entrywise resolvent deviations in `n` on the `p × p` side.
pub fn local_law_experiment(config: &ExperimentConfig, settings: &LocalLawSettings) -> Result<LocalLawReport> {
    let start = std::time::Instant::now();
    let resolved = config.resolved()?;
    if settings.n_grid.len() < 3 {
        return Err(Error::InvalidArgument("the local-law experiment needs at least three sizes".into()));
    }
    let aspect = config.p as f64 / config.n as f64;
    let grid = match &settings.grid {
        Some(g) => g.clone(),
        None => DiagnosticGrid::default_for(&AspectRatio::new(aspect)?),
    };
    let mut per_n: Vec<(usize, usize, Vec<Vec<(f64, f64)>>)> = Vec::new();
    for (k, &n) in settings.n_grid.iter().enumerate() {
        let p = ((n as f64) * aspect).round() as usize;
        let ratio = AspectRatio::new(p as f64 / n as f64)?;
        grid.validate(n, &ratio)?;
        let seed = derive_seed(config.master_seed, k as u64);
        let reps: Vec<Vec<(f64, f64)>> = with_workers(config.workers, || {
            (0..config.replicates as u64)
                .into_par_iter()
                .map(|r| replicate(config, n, p, seed, r, &grid.points))
                .collect::<Result<Vec<_>>>()
        })??;
        per_n.push((n, p, reps));
    }
    let log_n: Vec<f64> = settings.n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let mut points = Vec::new();
    for (idx, pt) in grid.points.iter().enumerate() {
        let rows: Vec<DecayRow> = per_n
            .iter()
            .map(|(n, p, reps)| DecayRow {
                n: *n,
                p: *p,
                median_avg_dev: median(&reps.iter().map(|v| v[idx].0).collect::<Vec<_>>()),
                median_offdiag: median(&reps.iter().map(|v| v[idx].1).collect::<Vec<_>>()),
            })
            .collect();
        let avg_slope = slope(&log_n, &rows.iter().map(|r| r.median_avg_dev.ln()).collect::<Vec<_>>());
        let offdiag_slope = slope(&log_n, &rows.iter().map(|r| r.median_offdiag.ln()).collect::<Vec<_>>());
        let pass = (-1.3..=-0.7).contains(&avg_slope) && (-0.7..=-0.2).contains(&offdiag_slope);
        points.push(PointDecay { point: *pt, rows, avg_slope, offdiag_slope, pass });
    }
    let pass = points.iter().filter(|p| p.point.class == PointClass::Bulk).all(|p| p.pass);
    Ok(LocalLawReport {
        config: resolved,
        settings: LocalLawSettings { n_grid: settings.n_grid.clone(), grid: Some(grid) },
        points,
        pass,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
