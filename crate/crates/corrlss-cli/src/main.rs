mod document;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use corrlss::clt_target::{clt_target, TestFunction};
use corrlss::experiments::{
    artifact_stem, decomposition_experiment, gdm_experiment, local_law_experiment, moments_experiment,
    mp_fit_calibration, phase_transition_sweep, run_clt_experiment, to_json,
};
use corrlss::mp_law::{mp_cdf, mp_density, AspectRatio};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "corrlss", version, about = "Linear spectral statistics of sample correlation matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Marchenko-Pastur density, atom and CDF at a point.
    Mp {
        #[arg(long)]
        phi: f64,
        #[arg(long)]
        x: f64,
    },
    /// Centering and variance of tr f(R) for the Gaussian limit.
    CltTarget {
        #[arg(long)]
        phi: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "x^2")]
        f: String,
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
    },
    /// Monte Carlo check of the central limit theorem.
    Simulate(RunArgs),
    /// Variance of tr R² across tail indices.
    Sweep(RunArgs),
    /// Spectrum of a heavy-tailed matrix plus a small Gaussian component.
    Gdm(RunArgs),
    /// Decay of resolvent deviations in n.
    Locallaw(RunArgs),
    /// Mixed moments of self-normalized entries.
    Moments(RunArgs),
    /// Light, moderate and heavy split of the data matrix.
    Decompose(RunArgs),
    /// Which aspect-ratio convention fits a simulated spectrum.
    Calibrate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config, or a JSON report whose config is re-run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override; dotted keys reach settings tables.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
}

struct Outcome {
    summary: String,
    pass: bool,
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

struct Output {
    dir: PathBuf,
    stem: String,
}

impl Output {
    fn new<T: Serialize>(dir: &Path, experiment: &str, seed: u64, key: &T) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), stem: artifact_stem(experiment, seed, key) })
    }

    fn json<T: Serialize>(&self, report: &T) -> Result<PathBuf> {
        let path = self.dir.join(format!("{}.json", self.stem));
        std::fs::write(&path, to_json(report)).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    fn csv<R: Serialize>(&self, suffix: &str, rows: impl IntoIterator<Item = R>) -> Result<PathBuf> {
        let path = self.dir.join(format!("{}-{suffix}.csv", self.stem));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

#[derive(Serialize)]
struct SampleRow {
    replicate: usize,
    lss: f64,
    standardized: f64,
}

#[derive(Serialize)]
struct DensityRow {
    #[serde(rename = "E")]
    e: f64,
    rho: f64,
}

#[derive(Serialize)]
struct SweepCsvRow {
    alpha: f64,
    l: String,
    n: usize,
    emp_var: f64,
    universal: f64,
    excess: f64,
    ratio: f64,
    classification: String,
}

#[derive(Serialize)]
struct EigenRow {
    eigenvalue: f64,
}

fn run_mp(phi: f64, x: f64) -> Result<Outcome> {
    let ratio = AspectRatio::new(phi)?;
    let d = mp_density(x, &ratio)?;
    let cdf = mp_cdf(x, &ratio);
    Ok(Outcome { summary: format!("mp density={:.6} atom={:.6} cdf={:.6}", d.density, d.atom_mass, cdf), pass: true })
}

fn run_clt_target(phi: f64, n: usize, f: &str, dir: &Path) -> Result<Outcome> {
    let p = ((n as f64) / phi).round() as usize;
    let ratio = AspectRatio::with_dims(phi, n, p)?;
    let target = clt_target(&TestFunction::parse(f)?, &ratio)?;
    let out = Output::new(dir, "clt-target", 0, &(phi, n, f))?;
    let path = out.json(&target)?;
    let residual = target.diagnostics.mean_residual.max(target.diagnostics.variance_residual);
    Ok(Outcome {
        summary: format!(
            "clt-target a_f={:.6} sigma2_f={:.6} residual={residual:.1e} -> {}",
            target.a_f,
            target.sigma2_f,
            path.display()
        ),
        pass: residual < 1e-6,
    })
}

fn run(command: &str, args: &RunArgs) -> Result<Outcome> {
    let doc = document::build(command, args.config.as_deref(), &args.overrides, args.seed, args.workers)?;
    let config = &doc.experiment;
    let seed = config.master_seed;
    let resolved = config.resolved()?;
    let dir = args.output_dir.as_path();
    let (path, summary, pass) = match command {
        "simulate" => {
            let r = run_clt_experiment(config)?;
            let out = Output::new(dir, "simulate", seed, &resolved)?;
            let path = out.json(&r)?;
            let sd = r.target.sigma2_f.sqrt();
            out.csv(
                "samples",
                r.lss.iter().enumerate().map(|(replicate, &lss)| SampleRow {
                    replicate,
                    lss,
                    standardized: (lss - r.target.a_f) / sd,
                }),
            )?;
            let s = format!("simulate ks={:.4} mean={:.4} var={:.4}", r.ks_normal, r.emp_mean, r.emp_var);
            (path, s, r.pass)
        }
        "sweep" => {
            let settings = doc.sweep.context("sweep needs a [sweep] table")?;
            let r = phase_transition_sweep(config, &settings)?;
            let out = Output::new(dir, "sweep", seed, &(&resolved, &settings))?;
            let path = out.json(&r)?;
            out.csv(
                "table",
                r.rows.iter().map(|row| SweepCsvRow {
                    alpha: row.alpha,
                    l: serde_json::to_string(&row.l).unwrap_or_default(),
                    n: row.n,
                    emp_var: row.emp_var,
                    universal: row.universal,
                    excess: row.excess,
                    ratio: row.ratio,
                    classification: serde_json::to_string(&row.classification).unwrap_or_default(),
                }),
            )?;
            let worst = r.rows.iter().map(|row| row.ratio).fold(f64::NAN, f64::max);
            (path, format!("sweep rows={} max_ratio={worst:.4}", r.rows.len()), true)
        }
        "gdm" => {
            let settings = doc.gdm.context("gdm needs a [gdm] table")?;
            let r = gdm_experiment(config, &settings)?;
            let out = Output::new(dir, "gdm", seed, &(&resolved, &settings))?;
            let path = out.json(&r)?;
            out.csv("density", r.density.iter().map(|&(e, rho)| DensityRow { e, rho }))?;
            let s = format!("gdm ks={:.4} edge_gap={:.4} lambda1={:.4}", r.ks, r.edge_gap, r.lambda1);
            (path, s, r.pass)
        }
        "locallaw" => {
            let settings = doc.locallaw.context("locallaw needs a [locallaw] table")?;
            let r = local_law_experiment(config, &settings)?;
            let out = Output::new(dir, "locallaw", seed, &(&resolved, &settings))?;
            let path = out.json(&r)?;
            let slopes: Vec<String> = r.points.iter().map(|p| format!("{:.3}", p.avg_slope)).collect();
            (path, format!("locallaw avg_slopes=[{}]", slopes.join(",")), r.pass)
        }
        "moments" => {
            let settings = doc.moments.context("moments needs a [moments] table")?;
            let r = moments_experiment(config, &settings)?;
            let out = Output::new(dir, "moments", seed, &(&resolved, &settings))?;
            let path = out.json(&r)?;
            let ratio = r.beta4_ratio.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            let s = format!("moments beta4={:.4e} ratio={ratio} beta2_z={:.2}", r.table.beta["4"], r.beta2_z);
            (path, s, r.pass)
        }
        "decompose" => {
            let r = decomposition_experiment(config)?;
            let out = Output::new(dir, "decompose", seed, &resolved)?;
            let path = out.json(&r)?;
            let s = format!("decompose well_configured={:.3} exact={}", r.well_configured_frequency, r.all_exact);
            (path, s, r.pass)
        }
        "calibrate" => {
            let r = mp_fit_calibration(config)?;
            let out = Output::new(dir, "calibrate", seed, &resolved)?;
            let path = out.json(&r)?;
            out.csv("eigenvalues", r.eigenvalues.iter().map(|&eigenvalue| EigenRow { eigenvalue }))?;
            let s = format!("calibrate winner={:?} ks={:.4} margin={:.4}", r.convention, r.winner_ks, r.margin);
            (path, s, r.pass)
        }
        other => unreachable!("unknown command {other}"),
    };
    Ok(Outcome { summary: format!("{summary} -> {}", path.display()), pass })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Mp { phi, x } => run_mp(*phi, *x),
        Command::CltTarget { phi, n, f, output_dir } => run_clt_target(*phi, *n, f, output_dir),
        Command::Simulate(a) => run("simulate", a),
        Command::Sweep(a) => run("sweep", a),
        Command::Gdm(a) => run("gdm", a),
        Command::Locallaw(a) => run("locallaw", a),
        Command::Moments(a) => run("moments", a),
        Command::Decompose(a) => run("decompose", a),
        Command::Calibrate(a) => run("calibrate", a),
    };
    match result {
        Ok(o) => {
            println!("{} {}", o.summary, verdict(o.pass));
            if o.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
