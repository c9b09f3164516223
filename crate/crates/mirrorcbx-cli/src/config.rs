//! Strict JSON experiment configuration.
//!
//! Every kind (optimizer, mirror map, constraint set, problem, init) is
//! spelled as a kind string mapping to its parameter object, for example
//! `"optimizer": {"mirror": {"map": {"elastic_net": {"lambda": 1.0}}}}`.
//! Parameterless kinds are plain strings (`"optimizer": "cbo"`). Unknown
//! keys anywhere are rejected, and load errors carry the field path.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use mirrorcbx::constraints::ConstraintSet;
use mirrorcbx::diagnostics::{SuccessCriterion, SuccessNorm};
use mirrorcbx::dynamics::{
    AlphaSchedule, DiscrepancyConfig, NoiseModel, RecordSpec, ResampleConfig,
};
use mirrorcbx::ensemble::{flatten_column_major, make_ensemble, InitSpec};
use mirrorcbx::mirror_maps::MirrorMap;
use mirrorcbx::objective::{Objective, Scaled};
use mirrorcbx::objectives::{
    l0_penalized, l1_residual, make_deconvolution, make_phase_retrieval, make_simplex_regression,
    quadratic_fidelity, sample_stiefel_uniform, Ackley, PhaseRetrievalProblem,
};
use mirrorcbx::rng::{stream_rng, Band};
use mirrorcbx::{OptimizerKind, OptimizerParams};

use crate::{HarnessError, Result};

// ---- Top level ----

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name used for output files; [A-Za-z0-9_-] only.
    pub experiment: String,
    pub seed: u64,
    pub n_runs: usize,
    pub n_particles: usize,
    pub dim: usize,
    pub k_max: usize,
    /// Record every k-th iteration; 0 or 1 records all of them.
    #[serde(default)]
    pub record_stride: usize,
    pub problem: ProblemSpec,
    pub optimizer: OptimizerSpec,
    pub params: ParamsSpec,
    pub init: InitConfig,
    /// Read the initial ensemble as dual points (mirror optimizers only).
    #[serde(default)]
    pub init_in_dual: bool,
    #[serde(default)]
    pub success: Option<SuccessSpec>,
    #[serde(default)]
    pub record: Option<RecordConfig>,
    /// Directory CSV references resolve against; set by the loader.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Parse and fully validate a config file. The returned config has already
/// resolved every kind, so `run_experiment` only hits runtime errors.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| HarnessError::Config(format!("{} (at {})", e.inner(), e.path())))?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.validate()?;
    Ok(cfg)
}

/// Same strict parse from an in-memory JSON tree (used by sweeps).
pub fn config_from_value(value: serde_json::Value, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(value)
        .map_err(|e| HarnessError::Config(format!("{} (at {})", e.inner(), e.path())))?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Static validation: every referenced kind must build, dimensions must
    /// agree, and the run-0 problem instance must be constructible.
    pub fn validate(&self) -> Result<()> {
        if self.experiment.is_empty()
            || !self.experiment.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(HarnessError::Config(format!(
                "experiment name {:?} must be non-empty [A-Za-z0-9_-]",
                self.experiment
            )));
        }
        if self.n_runs == 0 {
            return Err(HarnessError::Config("n_runs must be at least 1".into()));
        }
        let kind = self.optimizer.build()?;
        let params = self.params.build()?;
        params.validate(self.n_particles).map_err(config_err)?;
        if self.init_in_dual && kind.mirror_map().is_none() {
            return Err(HarnessError::Config(
                "init_in_dual requires a mirror optimizer".into(),
            ));
        }
        let init = self.init.build()?;
        make_ensemble(&init, self.n_particles, self.dim, self.seed, 0).map_err(config_err)?;
        let problem = self.problem.build(self.dim, &self.base_dir, self.seed, 0)?;
        if let Some(s) = &self.success {
            let criterion = s.criterion(&problem)?;
            let cmp_dim = problem.phase.as_ref().map_or(self.dim, |p| p.dim());
            if criterion.target.len() != cmp_dim {
                return Err(HarnessError::Config(format!(
                    "success target has {} entries, comparison points have {cmp_dim}",
                    criterion.target.len()
                )));
            }
        }
        if let Some(r) = &self.record {
            r.record_spec(self.record_stride, self.dim, &problem)?;
        }
        Ok(())
    }
}

pub(crate) fn config_err(e: mirrorcbx::Error) -> HarnessError {
    HarnessError::Config(e.to_string())
}

// ---- Matrices and vectors ----

/// A matrix given inline as rows, or as a CSV file path relative to the
/// config file (comma-separated rows, no header).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Inline(Vec<Vec<f64>>),
    Csv(CsvRef),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvRef {
    pub csv: PathBuf,
}

impl MatrixSpec {
    pub fn build(&self, base_dir: &Path) -> Result<DMatrix<f64>> {
        let rows: Vec<Vec<f64>> = match self {
            MatrixSpec::Inline(rows) => rows.clone(),
            MatrixSpec::Csv(r) => {
                let path = base_dir.join(&r.csv);
                let text = fs::read_to_string(&path).map_err(|e| {
                    HarnessError::Config(format!("cannot read matrix {}: {e}", path.display()))
                })?;
                let mut rows = Vec::new();
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let row: std::result::Result<Vec<f64>, _> =
                        line.split(',').map(|t| t.trim().parse::<f64>()).collect();
                    rows.push(row.map_err(|e| {
                        HarnessError::Config(format!(
                            "{} line {}: {e}",
                            path.display(),
                            i + 1
                        ))
                    })?);
                }
                rows
            }
        };
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if nrows == 0 || ncols == 0 {
            return Err(HarnessError::Config("matrix must be non-empty".into()));
        }
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(HarnessError::Config("matrix rows have unequal lengths".into()));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

// ---- Problems ----

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Shifted Ackley benchmark; defaults are the standard preset.
    Ackley {
        #[serde(default = "ackley_a")]
        a: f64,
        #[serde(default = "ackley_b")]
        b: f64,
        #[serde(default = "ackley_c")]
        c: f64,
        shift: ShiftSpec,
    },
    /// Ackley with a fresh shift drawn uniformly on St(n, p) every run, so
    /// the constrained minimizer is the (known) random frame itself.
    AckleyStiefel {
        n: usize,
        p: usize,
        #[serde(default = "ackley_a")]
        a: f64,
        #[serde(default = "ackley_b")]
        b: f64,
        #[serde(default = "ackley_c")]
        c: f64,
    },
    /// J(x) = scale/2 |Ax - b|^2.
    QuadraticFidelity {
        a: MatrixSpec,
        b: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
    /// J(x) = |Ax - b|_1.
    L1Residual { a: MatrixSpec, b: Vec<f64> },
    /// Fresh convolution instance per run: random peak signal, Gaussian
    /// kernel, noise of norm noise_factor * d. J = scale/2 |Ax-b|^2
    /// (+ l0_weight * |x|_0 when set).
    Deconvolution {
        kernel_size: usize,
        kernel_variance: f64,
        n_peaks: usize,
        noise_factor: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        l0_weight: Option<f64>,
    },
    /// Fresh robust regression instance per run: Gaussian d_tilde x dim
    /// matrix, simplex ground truth, J = |Ax - b|_1.
    SimplexRegression { d_tilde: usize, noise_factor: f64 },
    /// Fresh phase retrieval instance per run, posed in lifted form: the
    /// config dim must be d + 1 and the dynamic runs on the unit sphere.
    PhaseRetrieval { d: usize, m: usize, noise_factor: f64 },
}

fn ackley_a() -> f64 {
    20.0
}
fn ackley_b() -> f64 {
    0.1
}
fn ackley_c() -> f64 {
    1.0
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ShiftSpec {
    /// The same value in every coordinate.
    Constant(f64),
    Vector(Vec<f64>),
}

impl ShiftSpec {
    fn build(&self, dim: usize) -> Result<DVector<f64>> {
        match self {
            ShiftSpec::Constant(c) => Ok(DVector::from_element(dim, *c)),
            ShiftSpec::Vector(v) if v.len() == dim => Ok(dvec(v)),
            ShiftSpec::Vector(v) => Err(HarnessError::Config(format!(
                "shift has {} entries, dim is {dim}",
                v.len()
            ))),
        }
    }
}

/// One run's concrete problem: the objective plus whatever is needed to
/// judge the result (ground truth, and the lifting for phase retrieval).
pub struct BuiltProblem {
    pub objective: Box<dyn Objective>,
    pub ground_truth: Option<DVector<f64>>,
    pub phase: Option<PhaseRetrievalProblem>,
}

impl BuiltProblem {
    /// Map a raw consensus point into comparison space (unlift when lifted).
    pub fn comparison_point(&self, raw: &DVector<f64>) -> DVector<f64> {
        match &self.phase {
            Some(p) => p.unlift(raw),
            None => raw.clone(),
        }
    }
}

impl ProblemSpec {
    /// Instantiate the problem for one run. Stochastic builders draw from
    /// the problem band of the (seed, run) stream; deterministic problems
    /// ignore it.
    pub fn build(&self, dim: usize, base_dir: &Path, seed: u64, run: u64) -> Result<BuiltProblem> {
        let mut rng = stream_rng(seed, Band::Problem, run, 0, 0);
        match self {
            ProblemSpec::Ackley { a, b, c, shift } => {
                let shift = shift.build(dim)?;
                let f = Ackley::new(*a, *b, *c, shift.clone());
                Ok(BuiltProblem {
                    objective: Box::new(f),
                    ground_truth: Some(shift),
                    phase: None,
                })
            }
            ProblemSpec::AckleyStiefel { n, p, a, b, c } => {
                if n * p != dim {
                    return Err(HarnessError::Config(format!(
                        "stiefel frame is {n}x{p}, dim must be {}",
                        n * p
                    )));
                }
                let frame = sample_stiefel_uniform(*n, *p, &mut rng).map_err(config_err)?;
                let shift = flatten_column_major(&frame);
                let f = Ackley::new(*a, *b, *c, shift.clone());
                Ok(BuiltProblem {
                    objective: Box::new(f),
                    ground_truth: Some(shift),
                    phase: None,
                })
            }
            ProblemSpec::QuadraticFidelity { a, b, scale } => {
                let a = a.build(base_dir)?;
                if a.ncols() != dim {
                    return Err(HarnessError::Config(format!(
                        "matrix has {} columns, dim is {dim}",
                        a.ncols()
                    )));
                }
                let f = quadratic_fidelity(a, dvec(b)).map_err(config_err)?;
                Ok(BuiltProblem {
                    objective: Box::new(Scaled { inner: f, factor: *scale }),
                    ground_truth: None,
                    phase: None,
                })
            }
            ProblemSpec::L1Residual { a, b } => {
                let a = a.build(base_dir)?;
                if a.ncols() != dim {
                    return Err(HarnessError::Config(format!(
                        "matrix has {} columns, dim is {dim}",
                        a.ncols()
                    )));
                }
                let f = l1_residual(a, dvec(b)).map_err(config_err)?;
                Ok(BuiltProblem { objective: Box::new(f), ground_truth: None, phase: None })
            }
            ProblemSpec::Deconvolution {
                kernel_size,
                kernel_variance,
                n_peaks,
                noise_factor,
                scale,
                l0_weight,
            } => {
                let problem = make_deconvolution(
                    dim,
                    *kernel_size,
                    *kernel_variance,
                    *n_peaks,
                    *noise_factor,
                    &mut rng,
                )
                .map_err(config_err)?;
                let fidelity = Scaled { inner: problem.quadratic_objective(), factor: *scale };
                let objective: Box<dyn Objective> = match l0_weight {
                    Some(w) => Box::new(l0_penalized(fidelity, *w)),
                    None => Box::new(fidelity),
                };
                Ok(BuiltProblem { objective, ground_truth: problem.ground_truth, phase: None })
            }
            ProblemSpec::SimplexRegression { d_tilde, noise_factor } => {
                let problem = make_simplex_regression(dim, *d_tilde, *noise_factor, &mut rng)
                    .map_err(config_err)?;
                Ok(BuiltProblem {
                    objective: Box::new(problem.l1_objective()),
                    ground_truth: problem.ground_truth,
                    phase: None,
                })
            }
            ProblemSpec::PhaseRetrieval { d, m, noise_factor } => {
                if d + 1 != dim {
                    return Err(HarnessError::Config(format!(
                        "lifted phase retrieval runs in d+1 = {} dimensions, dim is {dim}",
                        d + 1
                    )));
                }
                let problem =
                    make_phase_retrieval(*d, *m, *noise_factor, &mut rng).map_err(config_err)?;
                Ok(BuiltProblem {
                    objective: Box::new(problem.lifted_objective()),
                    ground_truth: Some(problem.ground_truth.clone()),
                    phase: Some(problem),
                })
            }
        }
    }
}

// ---- Optimizers ----

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Mirror { map: MapSpec },
    Cbo,
    Projected { set: SetSpec },
    Penalized {
        set: SetSpec,
        power: u32,
        lambda0: f64,
        #[serde(default)]
        eta_pen: Option<f64>,
        #[serde(default)]
        violation_tol: Option<f64>,
        #[serde(default)]
        lambda_cap: Option<f64>,
    },
    DriftConstrained { set: SetSpec, lambda: f64 },
    Combination { set: SetSpec, lambda1: f64, lambda2: f64 },
    HypersurfaceSphere,
    HypersurfaceStiefel { n: usize, p: usize },
}

impl OptimizerSpec {
    pub fn build(&self) -> Result<OptimizerKind> {
        let kind = match self {
            OptimizerSpec::Mirror { map } => OptimizerKind::Mirror { map: map.build()? },
            OptimizerSpec::Cbo => OptimizerKind::Cbo,
            OptimizerSpec::Projected { set } => OptimizerKind::Projected { set: set.build()? },
            OptimizerSpec::Penalized { set, power, lambda0, eta_pen, violation_tol, lambda_cap } => {
                let mut kind =
                    OptimizerKind::penalized(set.build()?, *power, *lambda0).map_err(config_err)?;
                if let OptimizerKind::Penalized {
                    eta_pen: e, violation_tol: v, lambda_cap: c, ..
                } = &mut kind
                {
                    *e = eta_pen.unwrap_or(*e);
                    *v = violation_tol.unwrap_or(*v);
                    *c = lambda_cap.unwrap_or(*c);
                }
                kind
            }
            OptimizerSpec::DriftConstrained { set, lambda } => {
                OptimizerKind::drift_constrained(set.build()?, *lambda).map_err(config_err)?
            }
            OptimizerSpec::Combination { set, lambda1, lambda2 } => {
                OptimizerKind::combination(set.build()?, *lambda1, *lambda2).map_err(config_err)?
            }
            OptimizerSpec::HypersurfaceSphere => OptimizerKind::HypersurfaceSphere,
            OptimizerSpec::HypersurfaceStiefel { n, p } => {
                OptimizerKind::HypersurfaceStiefel { n: *n, p: *p }
            }
        };
        kind.validate().map_err(config_err)?;
        Ok(kind)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    Quadratic,
    Preconditioned { h: MatrixSpec },
    ElasticNet { lambda: f64 },
    NegLogEntropySimplex,
    IndicatorProjection { set: SetSpec },
    Ball,
}

impl MapSpec {
    pub fn build(&self) -> Result<MirrorMap> {
        match self {
            MapSpec::Quadratic => Ok(MirrorMap::Quadratic),
            MapSpec::Preconditioned { h } => {
                // Preconditioner matrices are small; inline form only.
                let h = h.build(Path::new("")).map_err(|e| match e {
                    HarnessError::Config(m) => HarnessError::Config(format!(
                        "preconditioner must be inline: {m}"
                    )),
                    other => other,
                })?;
                MirrorMap::preconditioned(h).map_err(config_err)
            }
            MapSpec::ElasticNet { lambda } => MirrorMap::elastic_net(*lambda).map_err(config_err),
            MapSpec::NegLogEntropySimplex => Ok(MirrorMap::NegLogEntropySimplex),
            MapSpec::IndicatorProjection { set } => {
                Ok(MirrorMap::IndicatorProjection { set: set.build()? })
            }
            MapSpec::Ball => Ok(MirrorMap::Ball),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    Hyperplane { n: Vec<f64>, d_h: f64 },
    Sphere,
    Quadric { q: MatrixSpec, n_q: Vec<f64>, c_q: f64 },
    LinfSphere,
    Stiefel { n: usize, p: usize },
    Ball,
}

impl SetSpec {
    pub fn build(&self) -> Result<ConstraintSet> {
        match self {
            SetSpec::Hyperplane { n, d_h } => {
                ConstraintSet::hyperplane(dvec(n), *d_h).map_err(config_err)
            }
            SetSpec::Sphere => Ok(ConstraintSet::Sphere),
            SetSpec::Quadric { q, n_q, c_q } => {
                let q = q.build(Path::new(""))?;
                ConstraintSet::quadric(q, dvec(n_q), *c_q).map_err(config_err)
            }
            SetSpec::LinfSphere => Ok(ConstraintSet::LinfSphere),
            SetSpec::Stiefel { n, p } => Ok(ConstraintSet::Stiefel { n: *n, p: *p }),
            SetSpec::Ball => Ok(ConstraintSet::Ball),
        }
    }
}

// ---- Step parameters ----

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub tau: f64,
    pub sigma: f64,
    pub alpha0: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub alpha_schedule: ScheduleSpec,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub polarized_kernel_width: Option<f64>,
    #[serde(default)]
    pub argmin_threshold: Option<f64>,
    #[serde(default)]
    pub resample: Option<ResampleSpec>,
    #[serde(default)]
    pub discrepancy: Option<DiscrepancySpec>,
}

impl ParamsSpec {
    pub fn build(&self) -> Result<OptimizerParams> {
        let mut p = OptimizerParams::new(self.tau, self.sigma, self.alpha0);
        p.noise = match self.noise {
            NoiseSpec::Isotropic => NoiseModel::Isotropic,
            NoiseSpec::Anisotropic => NoiseModel::Anisotropic,
        };
        p.alpha_schedule = self.alpha_schedule.build();
        p.batch_size = self.batch_size;
        p.polarized_kernel_width = self.polarized_kernel_width;
        p.argmin_threshold = self.argmin_threshold;
        p.resample = self.resample.as_ref().map(|r| ResampleConfig {
            patience: r.patience,
            tol: r.tol,
            sigma_indep: r.sigma_indep,
            eta_indep: r.eta_indep,
        });
        p.discrepancy = self.discrepancy.as_ref().map(|d| DiscrepancyConfig {
            delta: d.delta,
            eta_incr: d.eta_incr,
            eta_decr: d.eta_decr,
            lambda_min: d.lambda_min,
            lambda_max: d.lambda_max,
        });
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    Isotropic,
    Anisotropic,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    #[default]
    Constant,
    Multiply {
        factor: f64,
        alpha_max: f64,
    },
    EffectiveSampleSize {
        eta: f64,
        alpha_max: f64,
    },
}

impl ScheduleSpec {
    fn build(&self) -> AlphaSchedule {
        match *self {
            ScheduleSpec::Constant => AlphaSchedule::Constant,
            ScheduleSpec::Multiply { factor, alpha_max } => {
                AlphaSchedule::Multiply { factor, alpha_max }
            }
            ScheduleSpec::EffectiveSampleSize { eta, alpha_max } => {
                AlphaSchedule::EffectiveSampleSize { eta, alpha_max }
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResampleSpec {
    pub patience: usize,
    /// Consensus movement below this counts as stalled; defaults to
    /// infinity (kick on a fixed cadence).
    #[serde(default = "infinity")]
    pub tol: f64,
    pub sigma_indep: f64,
    #[serde(default = "one")]
    pub eta_indep: f64,
}

fn infinity() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscrepancySpec {
    pub delta: f64,
    pub eta_incr: f64,
    pub eta_decr: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

// ---- Init ----

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    Normal {
        mean: f64,
        std: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Simplex,
    Sphere {
        #[serde(default)]
        center: Option<Vec<f64>>,
        radius: f64,
    },
    Stiefel {
        n: usize,
        p: usize,
    },
    AnnulusSymmetric {
        r_min: f64,
        r_max: f64,
    },
}

impl InitConfig {
    pub fn build(&self) -> Result<InitSpec> {
        Ok(match self {
            InitConfig::Normal { mean, std } => InitSpec::Normal { mean: *mean, std: *std },
            InitConfig::Uniform { lo, hi } => InitSpec::Uniform { lo: *lo, hi: *hi },
            InitConfig::Simplex => InitSpec::Simplex,
            InitConfig::Sphere { center, radius } => InitSpec::Sphere {
                center: center.as_ref().map(|c| dvec(c)),
                radius: *radius,
            },
            InitConfig::Stiefel { n, p } => InitSpec::Stiefel { n: *n, p: *p },
            InitConfig::AnnulusSymmetric { r_min, r_max } => {
                InitSpec::AnnulusSymmetric { r_min: *r_min, r_max: *r_max }
            }
        })
    }
}

// ---- Success and recording ----

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// The run's own ground truth (stochastic problem builders).
    GroundTruth,
    Point(Vec<f64>),
}

impl TargetSpec {
    fn resolve(&self, problem: &BuiltProblem) -> Result<DVector<f64>> {
        match self {
            TargetSpec::Point(v) => Ok(dvec(v)),
            TargetSpec::GroundTruth => problem.ground_truth.clone().ok_or_else(|| {
                HarnessError::Config("this problem has no ground truth to compare against".into())
            }),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessSpec {
    pub target: TargetSpec,
    pub norm: NormSpec,
    pub tol: f64,
    /// Accept either sign of the comparison point (phase retrieval).
    #[serde(default)]
    pub sign_aligned: bool,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSpec {
    L2,
    Linf,
}

impl SuccessSpec {
    /// The concrete criterion for one run's problem instance.
    pub fn criterion(&self, problem: &BuiltProblem) -> Result<SuccessCriterion> {
        let target = self.target.resolve(problem)?;
        let norm = match self.norm {
            NormSpec::L2 => SuccessNorm::L2,
            NormSpec::Linf => SuccessNorm::Linf,
        };
        SuccessCriterion::new(target, norm, self.tol).map_err(config_err)
    }

    pub fn is_success(&self, problem: &BuiltProblem, raw_final: &DVector<f64>) -> Result<bool> {
        let criterion = self.criterion(problem)?;
        let point = problem.comparison_point(raw_final);
        if point.len() != criterion.target.len() {
            return Err(HarnessError::Config(format!(
                "success target has {} entries, comparison point has {}",
                criterion.target.len(),
                point.len()
            )));
        }
        Ok(criterion.is_success(&point)
            || (self.sign_aligned && criterion.is_success(&(-&point))))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordConfig {
    /// Reference point for the consensus_dist column.
    #[serde(default)]
    pub target: Option<TargetSpec>,
    /// Record the mean Bregman distance of the dual ensemble to this point.
    #[serde(default)]
    pub lyapunov_target: Option<Vec<f64>>,
    /// Record the fraction of dual particles inside the unit ball.
    #[serde(default)]
    pub dual_ball_mass: bool,
}

impl RecordConfig {
    pub fn record_spec(
        &self,
        stride: usize,
        dim: usize,
        problem: &BuiltProblem,
    ) -> Result<RecordSpec> {
        let target = match &self.target {
            Some(t) => {
                let t = t.resolve(problem)?;
                if t.len() != dim {
                    return Err(HarnessError::Config(format!(
                        "record target has {} entries, dim is {dim}",
                        t.len()
                    )));
                }
                Some(t)
            }
            None => None,
        };
        let lyapunov_target = match &self.lyapunov_target {
            Some(v) if v.len() == dim => Some(dvec(v)),
            Some(v) => {
                return Err(HarnessError::Config(format!(
                    "lyapunov target has {} entries, dim is {dim}",
                    v.len()
                )))
            }
            None => None,
        };
        Ok(RecordSpec {
            stride,
            target,
            lyapunov_target,
            dual_ball_mass: self.dual_ball_mass,
        })
    }
}

/// The default record spec when the config has no `record` block.
pub fn default_record(stride: usize) -> RecordSpec {
    RecordSpec { stride, target: None, lyapunov_target: None, dual_ball_mass: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "experiment": "smoke",
            "seed": 7,
            "n_runs": 2,
            "n_particles": 10,
            "dim": 2,
            "k_max": 5,
            "problem": {"ackley": {"shift": {"constant": 0.4}}},
            "optimizer": "cbo",
            "params": {"tau": 0.1, "sigma": 0.5, "alpha0": 10.0},
            "init": {"normal": {"mean": 0.0, "std": 1.0}}
        })
    }

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg = config_from_value(minimal(), Path::new(".")).unwrap();
        assert_eq!(cfg.experiment, "smoke");
        assert_eq!(cfg.record_stride, 0);
        assert!(cfg.success.is_none());
    }

    #[test]
    fn unknown_key_is_rejected_with_its_path() {
        let mut v = minimal();
        v["params"]["sigma_"] = serde_json::json!(1.0);
        let err = config_from_value(v, Path::new(".")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sigma_"), "{msg}");
        assert!(msg.contains("params"), "{msg}");
    }

    #[test]
    fn negative_tau_fails_validation() {
        let mut v = minimal();
        v["params"]["tau"] = serde_json::json!(-0.1);
        let err = config_from_value(v, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("tau"), "{err}");
    }

    #[test]
    fn round_trip_through_serialization() {
        let text = serde_json::to_string(&minimal()).unwrap();
        let mut de = serde_json::Deserializer::from_str(&text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de).unwrap();
        cfg.validate().unwrap();
    }

    #[test]
    fn stochastic_builders_are_run_keyed() {
        let spec = ProblemSpec::Deconvolution {
            kernel_size: 3,
            kernel_variance: 2.5,
            n_peaks: 2,
            noise_factor: 0.0,
            scale: 1.0,
            l0_weight: None,
        };
        let base = Path::new(".");
        let a = spec.build(10, base, 5, 0).unwrap();
        let b = spec.build(10, base, 5, 0).unwrap();
        let c = spec.build(10, base, 5, 1).unwrap();
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_ne!(a.ground_truth, c.ground_truth);
    }

    #[test]
    fn csv_matrix_reference_loads_relative_to_the_config() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "2.0, 1.0\n0.0, 3.0\n").unwrap();
        let spec = MatrixSpec::Csv(CsvRef { csv: PathBuf::from("a.csv") });
        let m = spec.build(dir.path()).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]));
    }

    #[test]
    fn ragged_inline_matrix_is_rejected()
    {
        let spec = MatrixSpec::Inline(vec![vec![1.0, 2.0], vec![3.0]]);
        assert!(spec.build(Path::new(".")).is_err());
    }

    #[test]
    fn phase_retrieval_dim_must_be_lifted() {
        let mut v = minimal();
        v["problem"] = serde_json::json!({"phase_retrieval": {"d": 4, "m": 16, "noise_factor": 0.0}});
        v["dim"] = serde_json::json!(4);
        let err = config_from_value(v.clone(), Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("d+1"), "{err}");
        v["dim"] = serde_json::json!(5);
        v["n_particles"] = serde_json::json!(8);
        config_from_value(v, Path::new(".")).unwrap();
    }

    #[test]
    fn dual_init_needs_a_mirror_optimizer() {
        let mut v = minimal();
        v["init_in_dual"] = serde_json::json!(true);
        let err = config_from_value(v.clone(), Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("mirror"), "{err}");
        v["optimizer"] = serde_json::json!({"mirror": {"map": "quadratic"}});
        config_from_value(v, Path::new(".")).unwrap();
    }
}
