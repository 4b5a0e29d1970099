//! End-to-end stages: phantom, simulated measurement, CT prior, operator
//! assembly and the three scatter reconstructions.
//!
//! Every stage is a plain function of in-memory values so the command-line
//! tool and the tests drive exactly the same code.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_l1_poly, assemble_xray, L1Options};
use crate::error::{Error, Result};
use crate::forward::{add_poisson_noise, forward_poly, unattenuated, EnergyGrid, ForwardOptions, Spectrum};
use crate::geometry::ScanGeometry;
use crate::image::DensityImage;
use crate::metrics::relative_rmse;
use crate::phantom::{ring_phantom, thorax_phantom, Metal, PhantomSpec, RING_FOV, THORAX_FOV};
use crate::physics::{mu_water, PolySource};
use crate::solver::{fletcher_reeves, lcurve_select, LCurveResult, ReconProblem, SolveReport, SolverOptions, TVParams};
use crate::sparse::{image_fingerprint, Fingerprints, SparseOperator};
use crate::spectral::{apply_to_spectrum, Composed, DerivativeConfig, LinearOperator};

/// Metadata keys stamped on spectra so operators can be checked against them.
pub const META_GEOMETRY: &str = "geometry_fingerprint";
pub const META_GRID: &str = "grid_fingerprint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub sources: usize,
    pub detectors: usize,
    pub bins: usize,
    /// Lower end of the measured energy range, MeV.
    pub e_min: f64,
    /// Upper end; defaults to the highest source level.
    pub e_max: Option<f64>,
    /// cm per geometry unit; defaults to half the field of view.
    pub scale: Option<f64>,
    pub support_radius: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            sources: 8,
            detectors: 16,
            bins: 64,
            e_min: 0.355,
            e_max: None,
            scale: None,
            support_radius: 0.95,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    Thorax,
    RingAluminium,
    RingIron,
    /// Shapes read from `spec_path`.
    Spec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub kind: PhantomKind,
    pub n: usize,
    pub spec_path: Option<PathBuf>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            kind: PhantomKind::Thorax,
            n: 64,
            spec_path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// `[energy MeV, weight]` pairs.
    pub levels: Vec<[f64; 2]>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            levels: vec![[1.173, 1.0]],
        }
    }
}

impl SourceConfig {
    pub fn cobalt60() -> Self {
        SourceConfig {
            levels: vec![[1.173, 0.5], [1.332, 0.5]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Detected photons per source position; `None` keeps the data clean.
    pub photons_per_source: Option<f64>,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            photons_per_source: Some(5e7),
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtConfig {
    pub lambda: f64,
    pub beta: f64,
    pub max_iters: usize,
}

impl Default for CtConfig {
    fn default() -> Self {
        CtConfig {
            lambda: 3e-3,
            beta: 1e-6,
            max_iters: 400,
        }
    }
}

/// Which data and operator the scatter reconstruction uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Noise-free first-order data against the linearized operator.
    #[serde(rename = "g1-only")]
    G1Only,
    /// Measured scatter (all orders, noisy) against the linearized operator.
    #[serde(rename = "full-spectrum")]
    FullSpectrum,
    /// Both sides differentiated along the energy axis first.
    #[serde(rename = "full-spectrum+derivative")]
    FullSpectrumDerivative,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::G1Only, Variant::FullSpectrum, Variant::FullSpectrumDerivative];

    pub fn name(self) -> &'static str {
        match self {
            Variant::G1Only => "g1-only",
            Variant::FullSpectrum => "full-spectrum",
            Variant::FullSpectrumDerivative => "full-spectrum+derivative",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub variant: Variant,
    pub lambda: f64,
    pub beta: f64,
    /// Derivative filter scale in MeV; defaults to three bin widths.
    pub gamma: Option<f64>,
    pub max_iters: usize,
    /// First-order samples per pixel side in the operator.
    pub subsampling: usize,
    /// Gaussian blur of the prior (pixels) before assembly; zero disables.
    pub prior_blur: f64,
    /// λ values for the L-curve sweep.
    pub lcurve: Vec<f64>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            variant: Variant::G1Only,
            lambda: 1e-3,
            beta: 1e-6,
            gamma: None,
            max_iters: 1000,
            subsampling: 2,
            prior_blur: 0.0,
            lcurve: (0..11).map(|k| 1e-6 * 10f64.powf(0.5 * k as f64)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory relative file arguments are resolved against.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out_dir: PathBuf::from("."),
        }
    }
}

/// Everything one run needs; read from TOML. Missing tables take the
/// desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub geometry: GeometryConfig,
    pub phantom: PhantomConfig,
    pub source: SourceConfig,
    pub noise: NoiseConfig,
    pub forward: ForwardOptions,
    pub ct: CtConfig,
    pub recon: ReconConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl PipelineConfig {
    /// Desk-scale defaults: 8 sources × 16 detectors × 64 bins, 64×64
    /// thorax, second order on every other pixel with 128 angle nodes.
    pub fn desk() -> Self {
        PipelineConfig {
            geometry: GeometryConfig::default(),
            phantom: PhantomConfig::default(),
            source: SourceConfig::default(),
            noise: NoiseConfig::default(),
            forward: ForwardOptions {
                n_omega1: 128,
                radial_step: 0.5,
                first_site_stride: 2,
                ..ForwardOptions::default()
            },
            ct: CtConfig::default(),
            recon: ReconConfig::default(),
            paths: PathsConfig::default(),
        }
    }

    /// Full scale: 16 × 32 × 256 on a 256×256 image. Long-running.
    pub fn full_scale() -> Self {
        let mut c = Self::desk();
        c.geometry.sources = 16;
        c.geometry.detectors = 32;
        c.geometry.bins = 256;
        c.phantom.n = 256;
        c.noise.photons_per_source = Some(5e8);
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn poly_source(&self) -> Result<PolySource> {
        PolySource::new(self.source.levels.iter().map(|l| (l[0], l[1])).collect(), 1.0)
    }

    pub fn phantom_image(&self) -> Result<DensityImage> {
        let n = self.phantom.n;
        match self.phantom.kind {
            PhantomKind::Thorax => thorax_phantom(n),
            PhantomKind::RingAluminium => ring_phantom(n, Metal::Aluminium),
            PhantomKind::RingIron => ring_phantom(n, Metal::Iron),
            PhantomKind::Spec => {
                let path = self
                    .phantom
                    .spec_path
                    .as_ref()
                    .ok_or_else(|| Error::config("phantom kind 'spec' needs spec_path"))?;
                PhantomSpec::load(path)?.rasterize(n)
            }
        }
    }

    /// Field of view of the configured phantom, cm.
    pub fn fov(&self) -> Result<f64> {
        Ok(match self.phantom.kind {
            PhantomKind::Thorax => THORAX_FOV,
            PhantomKind::RingAluminium | PhantomKind::RingIron => RING_FOV,
            PhantomKind::Spec => self.phantom_image()?.fov,
        })
    }

    pub fn scan_geometry(&self, fov: f64) -> Result<ScanGeometry> {
        let g = &self.geometry;
        ScanGeometry::circular(g.sources, g.detectors, g.scale.unwrap_or(0.5 * fov), g.support_radius)
    }

    pub fn energy_grid(&self) -> Result<EnergyGrid> {
        let src = self.poly_source()?;
        let g = &self.geometry;
        let grid = EnergyGrid::uniform(g.e_min, g.e_max.unwrap_or(src.max_energy()), g.bins)?;
        src.check_resolution(grid.uniform_width().unwrap_or(0.0))?;
        Ok(grid)
    }

    pub fn derivative(&self, grid: &EnergyGrid) -> Result<DerivativeConfig> {
        let mut d = DerivativeConfig::default_for(grid)?;
        if let Some(g) = self.recon.gamma {
            d.gamma = g;
        }
        Ok(d)
    }
}

/// Geometry, grid and source of one run.
#[derive(Clone, Debug)]
pub struct Setup {
    pub geometry: ScanGeometry,
    pub grid: EnergyGrid,
    pub source: PolySource,
    /// Image side and field of view the operators are built for.
    pub n: usize,
    pub fov: f64,
}

impl Setup {
    pub fn new(cfg: &PipelineConfig, fov: f64) -> Result<Self> {
        Ok(Setup {
            geometry: cfg.scan_geometry(fov)?,
            grid: cfg.energy_grid()?,
            source: cfg.poly_source()?,
            n: cfg.phantom.n,
            fov,
        })
    }

    pub fn fingerprints(&self) -> Fingerprints {
        Fingerprints {
            geometry: self.geometry.fingerprint(),
            grid: self.grid.fingerprint(),
            image: image_fingerprint(self.n, self.fov),
            sampling: String::new(),
        }
    }

    fn stamp(&self, s: &mut Spectrum) {
        s.metadata.insert(META_GEOMETRY.into(), self.geometry.fingerprint());
        s.metadata.insert(META_GRID.into(), self.grid.fingerprint());
    }
}

/// Fingerprints a spectrum was stamped with.
pub fn spectrum_fingerprints(s: &Spectrum) -> Fingerprints {
    Fingerprints {
        geometry: s.metadata.get(META_GEOMETRY).cloned().unwrap_or_default(),
        grid: s.metadata.get(META_GRID).cloned().unwrap_or_default(),
        ..Default::default()
    }
}

/// Simulated data of one run.
#[derive(Clone, Debug)]
pub struct Simulation {
    /// Noise-free first-order scatter.
    pub g1: Spectrum,
    /// Noise-free second-order scatter.
    pub g2: Spectrum,
    /// Ballistic channel plus all scatter orders, with Poisson noise if
    /// configured.
    pub measured: Spectrum,
}

pub fn simulate(cfg: &PipelineConfig, setup: &Setup, truth: &DensityImage) -> Result<Simulation> {
    let f = |order| forward_poly(truth, &setup.geometry, &setup.grid, &setup.source, order, &cfg.forward);
    let g0 = f(0)?;
    let mut g1 = f(1)?;
    let mut g2 = f(2)?;
    let mut clean = g0;
    clean.add_scaled(&g1, 1.0)?;
    clean.add_scaled(&g2, 1.0)?;
    clean.metadata.insert("order".into(), "0+1+2".into());
    let mut measured = match cfg.noise.photons_per_source {
        Some(p) => add_poisson_noise(&clean, p, cfg.noise.seed)?,
        None => clean,
    };
    for s in [&mut g1, &mut g2, &mut measured] {
        setup.stamp(s);
    }
    Ok(Simulation { g1, g2, measured })
}

/// `Σ_k c_k ∫ n_e` estimates from the ballistic blocks, in cm.
pub fn log_projections(setup: &Setup, measured: &Spectrum, cfg: &PipelineConfig) -> Result<Vec<f64>> {
    let g = &setup.geometry;
    if measured.n_levels != setup.source.levels.len() || measured.ballistic.len() != measured.n_levels * g.n_pairs() {
        return Err(Error::MissingChannel(
            "spectrum has no ballistic channel for every source level".into(),
        ));
    }
    if measured.ballistic.iter().all(|&v| v == 0.0) {
        return Err(Error::MissingChannel("ballistic channel is empty".into()));
    }
    let nd = g.n_detectors();
    let mut out = vec![0.0; g.n_pairs()];
    for (k, &(e0, c)) in setup.source.levels.iter().enumerate() {
        let mu = mu_water(e0);
        for (idx, (&v, o)) in measured.ballistic_level(k).iter().zip(out.iter_mut()).enumerate() {
            let i0 = c * unattenuated(g, idx / nd, idx % nd, &cfg.forward.scaling);
            *o += c * -(v.max(1e-12 * i0) / i0).ln() / mu;
        }
    }
    Ok(out)
}

/// `A / ‖A‖` so that TV weights are comparable across operators.
pub struct Normalized<'a> {
    pub op: &'a dyn LinearOperator,
    pub scale: f64,
}

impl<'a> Normalized<'a> {
    pub fn new(op: &'a dyn LinearOperator) -> Result<Self> {
        let norm = operator_norm(op)?;
        if !(norm > 0.0) {
            return Err(Error::singular("operator is zero"));
        }
        Ok(Normalized { op, scale: 1.0 / norm })
    }
}

impl LinearOperator for Normalized<'_> {
    fn n_rows(&self) -> usize {
        self.op.n_rows()
    }

    fn n_cols(&self) -> usize {
        self.op.n_cols()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.op.apply(x)?.into_iter().map(|v| v * self.scale).collect())
    }

    fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.op.apply_adjoint(y)?.into_iter().map(|v| v * self.scale).collect())
    }

    fn fingerprints(&self) -> &Fingerprints {
        self.op.fingerprints()
    }
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn operator_norm(op: &dyn LinearOperator) -> Result<f64> {
    let n = op.n_cols();
    let mut x: Vec<f64> = (0..n).map(|k| 1.0 + 0.01 * (k % 7) as f64).collect();
    let mut sigma = 0.0;
    for _ in 0..30 {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        x.iter_mut().for_each(|v| *v /= norm);
        let y = op.apply(&x)?;
        sigma = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = op.apply_adjoint(&y)?;
    }
    Ok(sigma)
}

fn solve(
    op: &dyn LinearOperator,
    data: &[f64],
    init: &[f64],
    tv: TVParams,
    max_iters: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    with_normalized(op, data, init, tv, max_iters, fletcher_reeves)
}

/// Runs `f` on the problem for `A / ‖A‖` and correspondingly scaled data.
fn with_normalized<T>(
    op: &dyn LinearOperator,
    data: &[f64],
    init: &[f64],
    tv: TVParams,
    max_iters: usize,
    f: impl FnOnce(&ReconProblem<'_>) -> Result<T>,
) -> Result<T> {
    let normalized = Normalized::new(op)?;
    let scaled: Vec<f64> = data.iter().map(|v| v * normalized.scale).collect();
    let mut problem = ReconProblem::new(&normalized, scaled, tv)?;
    problem.init = init.to_vec();
    problem.options = SolverOptions {
        max_iters,
        grad_tol: 1e-10,
        ..SolverOptions::default()
    };
    f(&problem)
}

/// Sparse-view CT from the ballistic channel; the result is clamped at zero
/// and to the support disk so it can serve as an attenuation prior.
pub fn ct_prior(cfg: &PipelineConfig, setup: &Setup, measured: &Spectrum) -> Result<(DensityImage, SolveReport)> {
    check_spectrum(setup, measured)?;
    let proj = log_projections(setup, measured, cfg)?;
    let xray = assemble_xray(&setup.geometry, setup.n, setup.fov)?;
    let tv = TVParams {
        lambda: cfg.ct.lambda,
        beta: cfg.ct.beta,
    };
    let (x, report) = solve(&xray, &proj, &vec![0.0; setup.n * setup.n], tv, cfg.ct.max_iters)?;
    let mut prior = DensityImage::from_values(setup.n, setup.fov, x.into_iter().map(|v| v.max(0.0)).collect())?;
    prior.mask_disk(setup.geometry.support_radius * setup.geometry.physical_scale);
    Ok((prior, report))
}

pub fn assemble(cfg: &PipelineConfig, setup: &Setup, prior: &DensityImage) -> Result<SparseOperator> {
    let opts = L1Options {
        subsampling: cfg.recon.subsampling,
        prior_blur: cfg.recon.prior_blur,
        scaling: cfg.forward.scaling,
    };
    assemble_l1_poly(prior, &setup.geometry, &setup.grid, &setup.source, &opts)
}

fn check_spectrum(setup: &Setup, s: &Spectrum) -> Result<()> {
    setup.fingerprints().check(&spectrum_fingerprints(s))?;
    if s.grid != setup.grid
        || s.n_sources != setup.geometry.n_sources()
        || s.n_detectors != setup.geometry.n_detectors()
    {
        return Err(Error::shape("spectrum does not match the configured geometry and grid"));
    }
    Ok(())
}

/// Operator and data of `variant`: as given, or both differentiated along
/// the energy axis.
fn with_variant<T>(
    cfg: &PipelineConfig,
    op: &SparseOperator,
    data: &Spectrum,
    variant: Variant,
    f: impl FnOnce(&dyn LinearOperator, &[f64]) -> Result<T>,
) -> Result<T> {
    spectrum_fingerprints(data).check(&op.fingerprints)?;
    match variant {
        Variant::G1Only | Variant::FullSpectrum => f(op, &data.counts),
        Variant::FullSpectrumDerivative => {
            let d = cfg.derivative(&data.grid)?;
            let composed = Composed::new(op, &data.grid, &d)?;
            f(&composed, &apply_to_spectrum(data, &d)?.counts)
        }
    }
}

/// Scatter reconstruction of `variant` from `data` (the first-order
/// spectrum for g1-only, the measured spectrum otherwise), started at the
/// prior.
pub fn cst_reconstruct(
    cfg: &PipelineConfig,
    op: &SparseOperator,
    data: &Spectrum,
    prior: &DensityImage,
    variant: Variant,
    lambda: f64,
) -> Result<(DensityImage, SolveReport)> {
    let tv = TVParams {
        lambda,
        beta: cfg.recon.beta,
    };
    let (x, report) = with_variant(cfg, op, data, variant, |a, g| {
        solve(a, g, &prior.values, tv, cfg.recon.max_iters)
    })?;
    Ok((prior.with_values(x)?, report))
}

/// L-curve sweep of `variant` over `lambdas`; returns the table and the
/// reconstruction for every λ.
pub fn cst_lcurve(
    cfg: &PipelineConfig,
    op: &SparseOperator,
    data: &Spectrum,
    prior: &DensityImage,
    variant: Variant,
    lambdas: &[f64],
) -> Result<(LCurveResult, Vec<Vec<f64>>)> {
    let tv = TVParams {
        lambda: 0.0,
        beta: cfg.recon.beta,
    };
    with_variant(cfg, op, data, variant, |a, g| {
        with_normalized(a, g, &prior.values, tv, cfg.recon.max_iters, |p| {
            lcurve_select(p, lambdas)
        })
    })
}

/// One variant of a full run, at its L-curve λ.
#[derive(Clone, Debug)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub lcurve: LCurveResult,
    pub image: DensityImage,
    pub relative_rmse: f64,
}

/// Every stage of a run, from phantom to the three reconstructions.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub truth: DensityImage,
    pub simulation: Simulation,
    pub prior: DensityImage,
    pub prior_rmse: f64,
    pub operator: SparseOperator,
    pub variants: Vec<VariantOutcome>,
}

impl Evaluation {
    pub fn outcome(&self, v: Variant) -> &VariantOutcome {
        self.variants
            .iter()
            .find(|o| o.variant == v)
            .expect("every variant is evaluated")
    }
}

/// Runs the whole chain on the configured phantom; each variant picks λ
/// from `cfg.recon.lcurve` by the L-curve.
pub fn evaluate(cfg: &PipelineConfig) -> Result<Evaluation> {
    let truth = cfg.phantom_image()?;
    let setup = Setup::new(cfg, truth.fov)?;
    let simulation = simulate(cfg, &setup, &truth)?;
    let (prior, _) = ct_prior(cfg, &setup, &simulation.measured)?;
    let operator = assemble(cfg, &setup, &prior)?;
    let mut variants = Vec::new();
    for variant in Variant::ALL {
        let data = match variant {
            Variant::G1Only => &simulation.g1,
            _ => &simulation.measured,
        };
        let (lcurve, mut solutions) = cst_lcurve(cfg, &operator, data, &prior, variant, &cfg.recon.lcurve)?;
        let image = prior.with_values(solutions.swap_remove(lcurve.index))?;
        variants.push(VariantOutcome {
            variant,
            relative_rmse: relative_rmse(&image.values, &truth.values),
            lcurve,
            image,
        });
    }
    Ok(Evaluation {
        prior_rmse: relative_rmse(&prior.values, &truth.values),
        truth,
        simulation,
        prior,
        operator,
        variants,
    })
}
