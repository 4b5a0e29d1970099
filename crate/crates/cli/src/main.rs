use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cst_core::forward::Spectrum;
use cst_core::io::{
    read_image, read_operator, read_spectrum, write_image, write_operator, write_pgm16, write_spectrum,
    write_spectrum_csv,
};
use cst_core::metrics::{compare, ImageMetrics};
use cst_core::pipeline::{assemble, cst_lcurve, cst_reconstruct, ct_prior, simulate, PipelineConfig, Setup, Variant};
use cst_core::solver::{LCurvePoint, SolveReport, SolveStatus};
use cst_core::sparse::SparseOperator;
use cst_core::{DensityImage, Error};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "cst",
    version,
    about = "Joint sparse-view CT and Compton scattering tomography pipeline"
)]
struct Cli {
    /// Pipeline configuration (TOML); desk-scale defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Derivative filter scale, MeV.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// TV weight for the scatter reconstruction.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// TV smoothing parameter.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// g1-only, full-spectrum or full-spectrum+derivative.
    #[arg(long, global = true)]
    variant: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the effective configuration as TOML.
    Config {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rasterize the configured phantom.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Simulate the measured spectrum (ballistic + first + second order,
    /// with noise) of a density image.
    Forward {
        #[arg(long)]
        phantom: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the noise-free first-order spectrum.
        #[arg(long)]
        g1: Option<PathBuf>,
        /// Also write the noise-free second-order spectrum.
        #[arg(long)]
        g2: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sparse-view CT prior from the ballistic channel.
    ReconCt {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// First-order operator linearized around a prior.
    Assemble {
        #[arg(long)]
        prior: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scatter reconstruction of the selected variant.
    ReconCst {
        #[command(flatten)]
        inputs: CstInputs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        pgm: Option<PathBuf>,
        /// Ground truth for metrics and the data residual at the truth.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// λ sweep with L-curve selection.
    Lcurve {
        #[command(flatten)]
        inputs: CstInputs,
        /// Table of the sweep (TOML).
        #[arg(long)]
        out: PathBuf,
        /// Reconstruction at the selected λ.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Relative RMSE and PSNR of an image against a ground truth.
    Metrics {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CstInputs {
    #[arg(long)]
    operator: PathBuf,
    /// First-order spectrum for g1-only, measured spectrum otherwise.
    #[arg(long)]
    spectrum: PathBuf,
    #[arg(long)]
    prior: PathBuf,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            Error::Fingerprint { .. } => 3,
            Error::MissingChannel(_) => 5,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.noise.seed = s;
    }
    if let Some(g) = cli.gamma {
        cfg.recon.gamma = Some(g);
    }
    if let Some(l) = cli.lambda {
        cfg.recon.lambda = l;
    }
    if let Some(b) = cli.beta {
        cfg.recon.beta = b;
    }
    if let Some(v) = &cli.variant {
        cfg.recon.variant = Variant::parse(v)?;
    }
    // Level spacing against the detector resolution.
    cfg.energy_grid()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Outcome {
    let cfg = load_config(&cli)?;
    let dir = &cfg.paths.out_dir;
    fs::create_dir_all(dir).map_err(Error::from)?;
    let at = |p: &Path| dir.join(p);
    match &cli.command {
        Command::Config { out } => {
            let text = cfg.to_toml()?;
            match out {
                Some(p) => write_text(&at(p), &text)?,
                None => print!("{text}"),
            }
        }
        Command::Phantom { out, pgm } => {
            let img = cfg.phantom_image()?;
            write_image(&at(out), &img)?;
            if let Some(p) = pgm {
                write_pgm16(&at(p), &img, None)?;
            }
        }
        Command::Forward {
            phantom,
            out,
            g1,
            g2,
            csv,
        } => {
            let truth = read_image(&at(phantom))?;
            let setup = setup_for(&cfg, truth.n, truth.fov)?;
            let sim = simulate(&cfg, &setup, &truth)?;
            write_spectrum(&at(out), &sim.measured)?;
            if let Some(p) = g1 {
                write_spectrum(&at(p), &sim.g1)?;
            }
            if let Some(p) = g2 {
                write_spectrum(&at(p), &sim.g2)?;
            }
            if let Some(p) = csv {
                write_spectrum_csv(&at(p), &sim.measured)?;
            }
        }
        Command::ReconCt {
            spectrum,
            out,
            report,
            pgm,
        } => {
            let measured = read_spectrum(&at(spectrum))?;
            let setup = setup_for(&cfg, cfg.phantom.n, cfg.fov()?)?;
            let (prior, rep) = ct_prior(&cfg, &setup, &measured)?;
            write_image(&at(out), &prior)?;
            if let Some(p) = pgm {
                write_pgm16(&at(p), &prior, None)?;
            }
            let summary = SolveSummary::new("ct", cfg.ct.lambda, cfg.ct.beta, None, &rep);
            finish_solve(report.as_deref().map(at).as_deref(), &summary, &rep)?;
        }
        Command::Assemble { prior, out } => {
            let prior = read_image(&at(prior))?;
            let setup = setup_for(&cfg, prior.n, prior.fov)?;
            write_operator(&at(out), &assemble(&cfg, &setup, &prior)?)?;
        }
        Command::ReconCst {
            inputs,
            out,
            report,
            pgm,
            truth,
        } => {
            let (op, data, prior) = inputs.load(at)?;
            let variant = cfg.recon.variant;
            let (image, rep) = cst_reconstruct(&cfg, &op, &data, &prior, variant, cfg.recon.lambda)?;
            write_image(&at(out), &image)?;
            if let Some(p) = pgm {
                write_pgm16(&at(p), &image, None)?;
            }
            let mut summary =
                SolveSummary::new(variant.name(), cfg.recon.lambda, cfg.recon.beta, cfg.recon.gamma, &rep);
            if let Some(t) = truth {
                let truth = read_image(&at(t))?;
                summary.metrics = Some(compare(&image, &truth)?);
                let predicted = op.apply(&truth.values)?;
                summary.relative_residual_at_truth = Some(relative_l2(&predicted, &data.counts));
            }
            finish_solve(report.as_deref().map(at).as_deref(), &summary, &rep)?;
        }
        Command::Lcurve { inputs, out, image } => {
            let (op, data, prior) = inputs.load(at)?;
            let variant = cfg.recon.variant;
            let (res, mut solutions) = cst_lcurve(&cfg, &op, &data, &prior, variant, &cfg.recon.lcurve)?;
            if let Some(w) = &res.warning {
                eprintln!("warning: {w}");
            }
            let table = LCurveTable {
                variant: variant.name(),
                selected_lambda: res.lambda,
                selected_index: res.index,
                warning: res.warning.clone(),
                points: res.points.clone(),
            };
            write_text(&at(out), &to_toml(&table)?)?;
            if let Some(p) = image {
                write_image(&at(p), &prior.with_values(solutions.swap_remove(res.index))?)?;
            }
        }
        Command::Metrics { image, truth, out } => {
            let m = compare(&read_image(&at(image))?, &read_image(&at(truth))?)?;
            let text = to_toml(&m)?;
            match out {
                Some(p) => write_text(&at(p), &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

/// Geometry and grid of `cfg` for an image of side `n` and the given field
/// of view.
fn setup_for(cfg: &PipelineConfig, n: usize, fov: f64) -> Result<Setup, Error> {
    let mut setup = Setup::new(cfg, fov)?;
    setup.n = n;
    Ok(setup)
}

impl CstInputs {
    fn load(&self, at: impl Fn(&Path) -> PathBuf) -> Result<(SparseOperator, Spectrum, DensityImage), Error> {
        Ok((
            read_operator(&at(&self.operator))?,
            read_spectrum(&at(&self.spectrum))?,
            read_image(&at(&self.prior))?,
        ))
    }
}

/// Solver outcome as written to report files. Wall time is left out so
/// reports are reproducible byte for byte.
#[derive(Serialize)]
struct SolveSummary {
    problem: String,
    lambda: f64,
    beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma_mev: Option<f64>,
    status: SolveStatus,
    iterations: usize,
    objective: f64,
    grad_norm: f64,
    evaluations: usize,
    restarts: usize,
    line_search_failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    relative_residual_at_truth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<ImageMetrics>,
}

impl SolveSummary {
    fn new(problem: &str, lambda: f64, beta: f64, gamma_mev: Option<f64>, r: &SolveReport) -> Self {
        SolveSummary {
            problem: problem.into(),
            lambda,
            beta,
            gamma_mev,
            status: r.status,
            iterations: r.iterations,
            objective: r.objective.last().copied().unwrap_or(f64::NAN),
            grad_norm: r.grad_norm,
            evaluations: r.evaluations,
            restarts: r.restarts,
            line_search_failures: r.line_search_failures,
            relative_residual_at_truth: None,
            metrics: None,
        }
    }
}

#[derive(Serialize)]
struct LCurveTable {
    variant: &'static str,
    selected_lambda: f64,
    selected_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
    points: Vec<LCurvePoint>,
}

fn finish_solve(path: Option<&Path>, summary: &SolveSummary, rep: &SolveReport) -> Outcome {
    let text = to_toml(summary)?;
    match path {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    eprintln!(
        "{}: {:?} after {} iterations in {:.2}s",
        summary.problem, rep.status, rep.iterations, rep.wall_time_s
    );
    if rep.status == SolveStatus::Stagnated {
        return Err(Failure {
            code: 4,
            message: format!(
                "{} solver stagnated after {} iterations",
                summary.problem, rep.iterations
            ),
        });
    }
    Ok(())
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    let norm: f64 = b.iter().map(|v| v * v).sum();
    (diff / norm).sqrt()
}

fn to_toml<T: Serialize>(value: &T) -> Result<String, Error> {
    toml::to_string(value).map_err(|e| Error::Format(e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    Ok(fs::write(path, text)?)
}
