//! The dual-space consensus optimizer and its shared stepping machinery.
//!
//! One iteration evaluates all particle energies, forms a consensus point,
//! moves every dual point toward it with drift-scaled noise, and maps back
//! to primal space. Post-step routines run in a fixed order: alpha schedule,
//! then the discrepancy update of the mirror map's elastic weight, then
//! stall-triggered resampling. All random draws are keyed by
//! (seed, band, run, particle, iter), so a step is reproducible regardless
//! of thread count or evaluation order.

pub mod consensus;
pub mod noise;
pub mod resample;
pub mod schedule;

pub use consensus::{
    compute_consensus, compute_consensus_partial, compute_consensus_subset,
    compute_polarized_consensus, log_sum_exp, BatchState,
};
pub use noise::{anisotropic_noise, isotropic_noise, NoiseModel};
pub use resample::{apply_resample_kick, stall_detected, ResampleConfig};
pub use schedule::{
    discrepancy_update, ess_alpha, multiply_alpha, AlphaSchedule, DiscrepancyConfig,
};

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::mirror_maps::MirrorMap;
use crate::objective::Objective;
use crate::rng::{gaussian_draw, Band, RngStream};
use crate::variants::OptimizerKind;

// ---- Parameters ----

#[derive(Debug, Clone)]
pub struct OptimizerParams {
    pub tau: f64,
    pub sigma: f64,
    pub alpha0: f64,
    pub noise: NoiseModel,
    pub alpha_schedule: AlphaSchedule,
    /// Consensus over a random batch of this size, applied to all particles.
    pub batch_size: Option<usize>,
    /// Per-particle consensus with this Gaussian kernel width.
    pub polarized_kernel_width: Option<f64>,
    /// Replace the weighted consensus by the best particle once alpha
    /// exceeds this threshold (off by default).
    pub argmin_threshold: Option<f64>,
    pub resample: Option<ResampleConfig>,
    pub discrepancy: Option<DiscrepancyConfig>,
}

impl OptimizerParams {
    pub fn new(tau: f64, sigma: f64, alpha0: f64) -> Self {
        OptimizerParams {
            tau,
            sigma,
            alpha0,
            noise: NoiseModel::Isotropic,
            alpha_schedule: AlphaSchedule::Constant,
            batch_size: None,
            polarized_kernel_width: None,
            argmin_threshold: None,
            resample: None,
            discrepancy: None,
        }
    }

    pub fn validate(&self, n_particles: usize) -> Result<()> {
        if !(self.tau >= 0.0) {
            return Err(Error::config("step size tau must be nonnegative"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::config("noise strength sigma must be non-negative"));
        }
        if !(self.alpha0 > 0.0) {
            return Err(Error::config("alpha must be positive"));
        }
        if let Some(b) = self.batch_size {
            if b == 0 || b > n_particles {
                return Err(Error::config(format!(
                    "batch size {b} outside 1..={n_particles}"
                )));
            }
            if self.polarized_kernel_width.is_some() {
                return Err(Error::config("batched and polarized consensus are exclusive"));
            }
        }
        if let Some(w) = self.polarized_kernel_width {
            if !(w > 0.0) {
                return Err(Error::config("polarized kernel width must be positive"));
            }
        }
        if let Some(r) = &self.resample {
            if !(r.sigma_indep >= 0.0) || !(r.eta_indep > 0.0) {
                return Err(Error::config("resampling needs sigma_indep >= 0, eta_indep > 0"));
            }
        }
        if let Some(d) = &self.discrepancy {
            if !(d.delta > 0.0) || d.eta_incr > 1.0 || d.eta_decr < 1.0 || d.lambda_min > d.lambda_max
            {
                return Err(Error::config(
                    "discrepancy schedule needs delta > 0, eta_incr <= 1 <= eta_decr, lambda_min <= lambda_max",
                ));
            }
        }
        Ok(())
    }

    fn history_capacity(&self) -> usize {
        self.resample.as_ref().map_or(2, |r| r.patience + 2)
    }
}

// ---- Consensus point ----

/// Consensus as seen by each particle: one shared point, or one column per
/// particle (polarized dynamics).
#[derive(Debug, Clone)]
pub enum ConsensusPoint {
    Shared(DVector<f64>),
    PerParticle(DMatrix<f64>),
}

impl ConsensusPoint {
    pub fn for_particle(&self, i: usize) -> nalgebra::DVectorView<'_, f64> {
        match self {
            ConsensusPoint::Shared(m) => m.column(0),
            ConsensusPoint::PerParticle(m) => m.column(i),
        }
    }

    /// One representative point: the shared value, or the column mean.
    pub fn summary(&self) -> DVector<f64> {
        match self {
            ConsensusPoint::Shared(m) => m.clone(),
            ConsensusPoint::PerParticle(m) => {
                let mut s = DVector::zeros(m.nrows());
                for j in 0..m.ncols() {
                    s += m.column(j);
                }
                s / m.ncols() as f64
            }
        }
    }
}

// ---- State ----

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub primal: Ensemble,
    /// Dual points for mirror dynamics; None when the update lives entirely
    /// in primal space.
    pub dual: Option<Ensemble>,
    /// Energies of the current primal ensemble under the consensus
    /// objective (including any active penalty term).
    pub energies: Vec<f64>,
    /// Most recent consensus summary.
    pub consensus: DVector<f64>,
    pub best_point: DVector<f64>,
    pub best_energy: f64,
    pub iter: usize,
    pub alpha: f64,
    pub sigma_indep: f64,
    /// Adaptive weight of penalty-based variants.
    pub penalty_lambda: f64,
    pub history: VecDeque<DVector<f64>>,
    pub batch: Option<BatchState>,
    pub seed: u64,
    pub run: u64,
}

impl OptimizerState {
    /// Build the starting state. `init` is read as primal positions unless
    /// `init_in_dual` is set (mirror kinds only).
    pub fn init(
        kind: &OptimizerKind,
        init: Ensemble,
        init_in_dual: bool,
        objective: &dyn Objective,
        params: &OptimizerParams,
        seed: u64,
        run: u64,
    ) -> Result<Self> {
        let n = init.n_particles();
        params.validate(n)?;
        let (primal, dual) = match kind.mirror_map() {
            Some(map) => {
                if init_in_dual {
                    let mut primal = init.clone();
                    map_columns(&mut primal, &init, |y| map.inverse(y))?;
                    (primal, Some(init))
                } else {
                    let mut dual = init.clone();
                    map_columns(&mut dual, &init, |x| map.forward(x))?;
                    (init, Some(dual))
                }
            }
            None => {
                if init_in_dual {
                    return Err(Error::config(
                        "dual-space initialization requires a mirror optimizer",
                    ));
                }
                (init, None)
            }
        };

        let penalty_lambda = kind.initial_penalty_lambda();
        let mut energies = vec![0.0; n];
        crate::variants::eval_energies(kind, objective, &primal, penalty_lambda, &mut energies, 0)?;
        let best_idx = argmin(&energies);
        let best_point = primal.particle_owned(best_idx);
        let best_energy = energies[best_idx];

        // History seeded with the initial consensus so resampling cannot
        // fire before patience+1 real steps.
        let m0 = compute_consensus(&primal, &energies, params.alpha0);
        let mut history = VecDeque::with_capacity(params.history_capacity());
        history.push_back(m0.clone());

        let batch = match params.batch_size {
            Some(b) => Some(BatchState::new(n, b)?),
            None => None,
        };

        Ok(OptimizerState {
            primal,
            dual,
            energies,
            consensus: m0,
            best_point,
            best_energy,
            iter: 0,
            alpha: params.alpha0,
            sigma_indep: params.resample.as_ref().map_or(0.0, |r| r.sigma_indep),
            penalty_lambda,
            history,
            batch,
            seed,
            run,
        })
    }

    /// Keep best_point/best_energy consistent with the current energies.
    pub fn update_best(&mut self) {
        let i = argmin(&self.energies);
        if self.energies[i] < self.best_energy {
            self.best_energy = self.energies[i];
            self.best_point = self.primal.particle_owned(i);
        }
    }

    /// The ensemble diagnostics should read as the dual measure.
    pub fn dual_view(&self) -> &Ensemble {
        self.dual.as_ref().unwrap_or(&self.primal)
    }
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

fn map_columns(
    out: &mut Ensemble,
    input: &Ensemble,
    f: impl Fn(&DVector<f64>) -> Result<DVector<f64>>,
) -> Result<()> {
    for i in 0..input.n_particles() {
        let mapped = f(&input.particle_owned(i))?;
        out.set_particle(i, &mapped);
    }
    Ok(())
}

// ---- Shared step machinery ----

/// Consensus for the current step, honoring the argmin switch, polarized
/// kernel, and mini-batching (in that precedence), and record it in the
/// state (summary + history ring).
pub fn consensus_for_step(
    state: &mut OptimizerState,
    params: &OptimizerParams,
) -> ConsensusPoint {
    let point = if params.argmin_threshold.is_some_and(|th| state.alpha > th) {
        ConsensusPoint::Shared(state.primal.particle_owned(argmin(&state.energies)))
    } else if let Some(width) = params.polarized_kernel_width {
        ConsensusPoint::PerParticle(compute_polarized_consensus(
            &state.primal,
            &state.energies,
            state.alpha,
            width,
        ))
    } else if let Some(batch) = state.batch.as_mut() {
        ConsensusPoint::Shared(compute_consensus_partial(
            &state.primal,
            &state.energies,
            state.alpha,
            batch,
            state.seed,
            state.run,
        ))
    } else {
        ConsensusPoint::Shared(compute_consensus(&state.primal, &state.energies, state.alpha))
    };

    let m = point.summary();
    state.consensus = m.clone();
    if state.history.len() == params.history_capacity() {
        state.history.pop_front();
    }
    state.history.push_back(m);
    point
}

/// Canonical per-component move (a_j - tau r_j) + sigma n_j. Every update
/// rule routes through this expression so that variants with their
/// constraint machinery switched off reproduce plain CBO bit for bit.
pub(crate) fn drift_noise_update(
    out: &mut [f64],
    r: &DVector<f64>,
    scaled_noise: &DVector<f64>,
    tau: f64,
    sigma: f64,
) {
    for j in 0..out.len() {
        out[j] = (out[j] - tau * r[j]) + sigma * scaled_noise[j];
    }
}

/// The Gaussian attached to this particle's step, or zeros when sigma = 0
/// (zero-noise runs make no step-band draws at all).
pub(crate) fn step_draw(
    sigma: f64,
    d: usize,
    seed: u64,
    run: u64,
    particle: usize,
    iter: usize,
) -> DVector<f64> {
    if sigma == 0.0 {
        DVector::zeros(d)
    } else {
        gaussian_draw(&RngStream::new(seed, run, particle as u64, iter as u64), Band::Step, d)
    }
}

/// Run a fallible worker over the particles (columns) of one ensemble.
pub(crate) fn for_each_particle<W>(data: &mut Ensemble, worker: W) -> Result<()>
where
    W: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let d = data.dim();
    let slice = data.data_mut().as_mut_slice();
    #[cfg(feature = "parallel")]
    {
        slice.par_chunks_mut(d).enumerate().try_for_each(|(i, x)| worker(i, x))
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, x) in slice.chunks_mut(d).enumerate() {
            worker(i, x)?;
        }
        Ok(())
    }
}

/// Same, walking primal and dual columns in lockstep.
pub(crate) fn for_each_particle_pair<W>(
    primal: &mut Ensemble,
    dual: &mut Ensemble,
    worker: W,
) -> Result<()>
where
    W: Fn(usize, &mut [f64], &mut [f64]) -> Result<()> + Sync,
{
    let d = primal.dim();
    let ps = primal.data_mut().as_mut_slice();
    let ds = dual.data_mut().as_mut_slice();
    #[cfg(feature = "parallel")]
    {
        ps.par_chunks_mut(d)
            .zip(ds.par_chunks_mut(d))
            .enumerate()
            .try_for_each(|(i, (x, y))| worker(i, x, y))
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, (x, y)) in ps.chunks_mut(d).zip(ds.chunks_mut(d)).enumerate() {
            worker(i, x, y)?;
        }
        Ok(())
    }
}

// ---- The mirror step ----

/// Common step prologue: evaluate energies of the current primal ensemble
/// under the given (possibly penalty-wrapped) objective, refresh the best
/// particle, and form this step's consensus.
pub(crate) fn begin_step(
    state: &mut OptimizerState,
    objective: &dyn Objective,
    params: &OptimizerParams,
) -> Result<ConsensusPoint> {
    objective.batch_eval(&state.primal, &mut state.energies);
    check_finite(&state.energies, state.iter)?;
    state.update_best();
    Ok(consensus_for_step(state, params))
}

/// One iteration of the dual-space dynamic:
/// y_i <- y_i - tau (x_i - m) + sigma Noise(x_i - m, tau), x_i <- inverse(y_i),
/// followed by the post-step routines.
pub fn mirrorcbo_step(
    state: &mut OptimizerState,
    map: &mut MirrorMap,
    objective: &dyn Objective,
    params: &OptimizerParams,
) -> Result<()> {
    let point = begin_step(state, objective, params)?;

    let (d, tau, sigma) = (state.primal.dim(), params.tau, params.sigma);
    let (seed, run, iter, noise) = (state.seed, state.run, state.iter, params.noise);
    let dual = state
        .dual
        .as_mut()
        .ok_or_else(|| Error::numerical("mirror step requires a dual ensemble"))?;
    let map_ref: &MirrorMap = map;
    for_each_particle_pair(&mut state.primal, dual, |i, x, y| {
        let m = point.for_particle(i);
        let r = DVector::from_fn(d, |j, _| x[j] - m[j]);
        let draw = step_draw(sigma, d, seed, run, i, iter);
        let scaled = noise.sample(&r, tau, &draw);
        drift_noise_update(y, &r, &scaled, tau, sigma);
        let x_new = map_ref.inverse(&DVector::from_column_slice(y))?;
        x.copy_from_slice(x_new.as_slice());
        Ok(())
    })?;

    post_step(state, Some(map), objective, params)
}

pub(crate) fn check_finite(energies: &[f64], iter: usize) -> Result<()> {
    for (particle, &e) in energies.iter().enumerate() {
        if !e.is_finite() {
            return Err(Error::NonFiniteEnergy { particle, iter });
        }
    }
    Ok(())
}

/// Post-step routines in their fixed order: alpha schedule, discrepancy
/// update of the elastic-net weight, stall-triggered resampling.
pub(crate) fn post_step(
    state: &mut OptimizerState,
    mut map: Option<&mut MirrorMap>,
    objective: &dyn Objective,
    params: &OptimizerParams,
) -> Result<()> {
    state.alpha = params.alpha_schedule.next_alpha(state.alpha, &state.energies);

    if let Some(cfg) = &params.discrepancy {
        if let Some(m) = map.as_deref_mut() {
            if let Some(lambda) = m.elastic_lambda() {
                let j_m = objective.eval(state.consensus.column(0));
                let next = discrepancy_update(lambda, j_m, cfg);
                if next != lambda {
                    m.set_elastic_lambda(next)?;
                    // The inverse changed under the particles; restore
                    // primal == inverse(dual).
                    refresh_primal_from_dual(state, m)?;
                }
            }
        }
    }

    if let Some(cfg) = &params.resample {
        if stall_detected(&state.history, cfg.patience, cfg.tol) {
            let iter = state.iter as u64;
            match map {
                Some(m) => {
                    let dual = state
                        .dual
                        .as_mut()
                        .ok_or_else(|| Error::numerical("mirror resampling needs a dual ensemble"))?;
                    apply_resample_kick(dual, state.sigma_indep, params.tau, state.seed, state.run, iter);
                    refresh_primal_from_dual(state, m)?;
                }
                None => {
                    apply_resample_kick(
                        &mut state.primal,
                        state.sigma_indep,
                        params.tau,
                        state.seed,
                        state.run,
                        iter,
                    );
                }
            }
            state.sigma_indep *= cfg.eta_indep;
        }
    }
    Ok(())
}

fn refresh_primal_from_dual(state: &mut OptimizerState, map: &MirrorMap) -> Result<()> {
    let dual = state
        .dual
        .as_ref()
        .ok_or_else(|| Error::numerical("no dual ensemble to map from"))?;
    for i in 0..dual.n_particles() {
        let x = map.inverse(&dual.particle_owned(i))?;
        state.primal.set_particle(i, &x);
    }
    Ok(())
}

// ---- Traces and the run driver ----

/// What to record along a run.
#[derive(Debug, Clone, Default)]
pub struct RecordSpec {
    /// Record every `stride`-th iteration (0 or 1 = every iteration). The
    /// initial state and the final iteration are always recorded.
    pub stride: usize,
    /// Distance reference for the consensus_dist column.
    pub target: Option<DVector<f64>>,
    /// Record the mean Bregman distance of the dual ensemble to this point.
    pub lyapunov_target: Option<DVector<f64>>,
    /// Record the fraction of dual particles inside the unit ball.
    pub dual_ball_mass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub best_energy: f64,
    pub consensus_dist: Option<f64>,
    pub alpha: f64,
    pub lyapunov: Option<f64>,
    pub mass_fraction: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// Full-ensemble consensus of the final primal positions.
    pub final_consensus: DVector<f64>,
    pub final_best_point: DVector<f64>,
    pub final_best_energy: f64,
    /// Filled by the harness when the experiment defines success.
    pub success: Option<bool>,
    pub wall_time: Duration,
}

/// Drive `k_max` iterations of the given optimizer. The trace holds one row
/// for the initial state plus every recorded iteration; the terminal
/// summary re-evaluates the final ensemble (full consensus, final best).
pub fn run(
    kind: &OptimizerKind,
    objective: &dyn Objective,
    init: Ensemble,
    init_in_dual: bool,
    params: &OptimizerParams,
    record: &RecordSpec,
    k_max: usize,
    seed: u64,
    run_index: u64,
) -> Result<RunTrace> {
    let start = Instant::now();
    let mut kind = kind.clone();
    let mut state =
        OptimizerState::init(&kind, init, init_in_dual, objective, params, seed, run_index)?;
    let mut rows = Vec::new();
    push_row(&mut rows, &state, &kind, record)?;

    let stride = record.stride.max(1);
    for k in 1..=k_max {
        crate::variants::step_once(&mut kind, &mut state, objective, params)
            .map_err(|e| e.at_iter(k))?;
        if k % stride == 0 || k == k_max {
            push_row(&mut rows, &state, &kind, record)?;
        }
    }

    // Terminal summary from the final positions (the in-loop energies
    // always describe the ensemble at the start of a step).
    crate::variants::eval_energies(
        &kind,
        objective,
        &state.primal,
        state.penalty_lambda,
        &mut state.energies,
        state.iter,
    )?;
    state.update_best();
    let final_consensus = compute_consensus(&state.primal, &state.energies, state.alpha);

    Ok(RunTrace {
        rows,
        final_consensus,
        final_best_point: state.best_point.clone(),
        final_best_energy: state.best_energy,
        success: None,
        wall_time: start.elapsed(),
    })
}

fn push_row(
    rows: &mut Vec<TraceRow>,
    state: &OptimizerState,
    kind: &OptimizerKind,
    record: &RecordSpec,
) -> Result<()> {
    let consensus_dist = record.target.as_ref().map(|t| (&state.consensus - t).norm());
    let lyapunov = match &record.lyapunov_target {
        Some(x_hat) => Some(crate::diagnostics::lyapunov_v(
            state.dual_view(),
            kind.mirror_map().unwrap_or(&MirrorMap::Quadratic),
            x_hat,
        )?),
        None => None,
    };
    let mass_fraction = record
        .dual_ball_mass
        .then(|| crate::diagnostics::mass_fraction(state.dual_view(), |y| y.norm() <= 1.0));
    rows.push(TraceRow {
        iter: state.iter,
        best_energy: state.best_energy,
        consensus_dist,
        alpha: state.alpha,
        lyapunov,
        mass_fraction,
    });
    Ok(())
}
