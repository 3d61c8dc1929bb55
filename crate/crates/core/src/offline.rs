//! Offline policy iteration with implicit secant (discrete Fréchet) updates.
//!
//! Each outer iteration rolls the current policy out over a fixed batch of
//! initial states, then sweeps the stages backwards. At stage `t` the
//! coefficients are moved so that the stacked sample controls `Δπ` satisfy
//!
//! ```text
//! Δπ = -δ · D,    D = Δπ · (Ĵ_t(new) - Ĵ_t(old)) / ‖Δπ‖²
//! ```
//!
//! where the new policy appears on both sides. Because `D` is parallel to
//! `Δπ`, the equation fixes the direction only up to the ray chosen by the
//! predictor and reduces to a scalar root problem along it. Every accepted step
//! therefore satisfies `Ĵ_t(new) - Ĵ_t(old) = -‖Δπ‖² / δ`, which gives exact
//! monotone descent of the horizon cost.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::cost::{controls_from_coefficients, evaluate_cost_to_go, Continuation, CostSpec, StageObjective};
use crate::dynamics::{rollout, LinearSystem};
use crate::error::{check_dim, Error, Result};
use crate::kernel::{median_heuristic, Dictionary, GramPair, KernelPolicy, KernelSpec};
use crate::sampling::{substream, InitialStateSampler, Stream};
use crate::{lit, to_f64, Real};

/// Scalar root finder used for the implicit update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerSolver {
    /// Damped fixed-point iteration with a bracketing safeguard.
    #[default]
    FixedPoint,
    /// Plain bracketing and bisection.
    Bisection,
}

/// Kernel family as configured; an omitted RBF length scale is set from the
/// initial-state batch by the median heuristic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelChoice {
    GaussianRbf {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        length_scale: Option<f64>,
    },
    Linear,
    Polynomial {
        degree: u32,
        offset: f64,
    },
}

impl Default for KernelChoice {
    fn default() -> Self {
        KernelChoice::GaussianRbf { length_scale: None }
    }
}

impl KernelChoice {
    pub fn resolve<T: Real>(&self, batch: &[DVector<T>]) -> Result<KernelSpec> {
        let spec = match *self {
            KernelChoice::GaussianRbf { length_scale: Some(l) } => KernelSpec::gaussian(l),
            KernelChoice::GaussianRbf { length_scale: None } => KernelSpec::gaussian(median_heuristic(batch)?),
            KernelChoice::Linear => KernelSpec::Linear,
            KernelChoice::Polynomial { degree, offset } => KernelSpec::Polynomial { degree, offset },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Learning rate `δ`.
    pub delta_lr: f64,
    pub max_outer_iters: usize,
    /// Tolerance on the per-stage identity `ΔĴ + ‖Δπ‖²/δ = 0`.
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    /// Monte Carlo batch size `N`.
    pub mc_samples: usize,
    /// Dictionary points per stage `M`.
    pub dict_size: usize,
    /// Ridge added to the Gram matrix, relative to its mean diagonal.
    pub ridge: f64,
    pub seed: u64,
    /// Stop once `Σ_t ‖Δπ_t‖² < convergence_tol · (1 + Ĵ₀)`; zero disables.
    pub convergence_tol: f64,
    pub inner_solver: InnerSolver,
    pub kernel: KernelChoice,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta_lr: 1.0,
            max_outer_iters: 300,
            inner_tol: 1e-9,
            inner_max_iters: 60,
            mc_samples: 50,
            dict_size: 30,
            ridge: 1e-8,
            seed: 0,
            convergence_tol: 1e-8,
            inner_solver: InnerSolver::FixedPoint,
            kernel: KernelChoice::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_lr.is_finite() && self.delta_lr > 0.0) {
            return Err(Error::invalid("delta_lr", format!("must be > 0, got {}", self.delta_lr)));
        }
        if !(self.inner_tol.is_finite() && self.inner_tol > 0.0) {
            return Err(Error::invalid("inner_tol", "must be > 0"));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::invalid("ridge", "must be >= 0"));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol >= 0.0) {
            return Err(Error::invalid("convergence_tol", "must be >= 0"));
        }
        if self.inner_max_iters == 0 {
            return Err(Error::invalid("inner_max_iters", "must be >= 1"));
        }
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples", "must be >= 1"));
        }
        if self.dict_size == 0 {
            return Err(Error::invalid("dict_size", "must be >= 1"));
        }
        if let KernelChoice::GaussianRbf { length_scale: Some(l) } = self.kernel {
            KernelSpec::gaussian(l).validate()?;
        }
        if let KernelChoice::Polynomial { degree, offset } = self.kernel {
            KernelSpec::Polynomial { degree, offset }.validate()?;
        }
        Ok(())
    }
}

/// Secant derivative `Δπ · ΔJ / ‖Δπ‖²`, or zero when `Δπ = 0`.
pub fn discrete_frechet_derivative<T: Real>(
    pi_new: &DVector<T>,
    pi_old: &DVector<T>,
    j_new: T,
    j_old: T,
) -> Result<DVector<T>> {
    check_dim("frechet derivative", pi_old.len(), pi_new.len())?;
    let dpi = pi_new - pi_old;
    let sq = dpi.norm_squared();
    if sq == T::zero() {
        return Ok(DVector::zeros(dpi.len()));
    }
    Ok(dpi * ((j_new - j_old) / sq))
}

/// Stacks per-sample controls sample-major into one vector of length `N·m`.
pub fn stack_controls<T: Real>(controls: &[DVector<T>]) -> DVector<T> {
    DVector::from_iterator(
        controls.iter().map(DVector::len).sum(),
        controls.iter().flat_map(|u| u.iter().copied()),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateStatus {
    Accepted,
    /// The predictor direction vanished; the coefficients are kept.
    Stationary,
    /// The inner solve did not meet its tolerance; the coefficients are kept.
    Fallback,
}

/// Outcome of one stage update.
#[derive(Clone, Debug)]
pub struct ImplicitUpdate<T: Real> {
    pub coefficients: DMatrix<T>,
    pub objective_old: T,
    pub objective_new: T,
    /// `‖Δπ‖²` over stacked sample controls.
    pub step_norm_sq: T,
    /// `‖Δπ + δ·D‖` at the returned coefficients.
    pub residual: T,
    /// `|ΔĴ + ‖Δπ‖²/δ|`.
    pub identity_error: T,
    pub inner_iterations: usize,
    pub status: UpdateStatus,
}

/// Scalar reduction of the implicit equation along `c_old + α d`.
struct RayProblem<'a, T: Real> {
    objective: StageObjective<'a, T>,
    grams: &'a GramPair<T>,
    c_old: &'a DMatrix<T>,
    direction: DMatrix<T>,
    losses_old: Vec<T>,
    /// `‖K_s d‖²`
    q: T,
    delta: T,
}

impl<T: Real> RayProblem<'_, T> {
    fn coefficients(&self, alpha: T) -> DMatrix<T> {
        self.c_old + &self.direction * alpha
    }

    /// `ΔĴ(α)`, or `None` if the tail re-simulation diverges.
    fn decrease(&self, alpha: T) -> Result<Option<T>> {
        let controls = controls_from_coefficients(self.grams, &self.coefficients(alpha));
        match self.objective.sample_losses(&controls) {
            Ok(losses) => {
                let n = lit::<T>(losses.len() as f64);
                let diff = losses
                    .iter()
                    .zip(&self.losses_old)
                    .fold(T::zero(), |acc, (&a, &b)| acc + (a - b));
                let d = diff / n;
                Ok(d.is_finite().then_some(d))
            }
            Err(Error::Divergence { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn predicted(&self, alpha: T) -> T {
        alpha * alpha * self.q / self.delta
    }
}

/// Solves the implicit stage update at stage `t`.
///
/// `states` are the sample states at stage `t`, `continuation` carries the
/// already-updated tail policy. The predictor direction is the kernel
/// projection of the stage gradient, `d = -K_t⁻¹ K_sᵀ ∇_π Ĵ_t`; the step
/// length solves `ΔĴ(α) + α²‖K_s d‖²/δ = 0`.
pub fn solve_implicit_update<T: Real>(
    t: usize,
    c_old: &DMatrix<T>,
    states: &[DVector<T>],
    continuation: Continuation<'_, T>,
    grams: &GramPair<T>,
    cfg: &SolverConfig,
) -> Result<ImplicitUpdate<T>> {
    check_dim("implicit update coefficient rows", grams.gram.nrows(), c_old.nrows())?;
    check_dim("implicit update samples", grams.cross.nrows(), states.len())?;
    let objective = StageObjective {
        stage: t,
        states,
        continuation,
    };
    let u_old = controls_from_coefficients(grams, c_old);
    let (losses_old, grads) = objective.losses_and_gradient(&u_old)?;
    let n = states.len();
    let objective_old = losses_old.iter().fold(T::zero(), |a, &b| a + b) / lit(n as f64);

    let keep = |status, iters| ImplicitUpdate {
        coefficients: c_old.clone(),
        objective_old,
        objective_new: objective_old,
        step_norm_sq: T::zero(),
        residual: T::zero(),
        identity_error: T::zero(),
        inner_iterations: iters,
        status,
    };

    let m = c_old.ncols();
    let g = DMatrix::from_fn(n, m, |i, a| grads[i][a]);
    let chol = grams
        .gram
        .clone()
        .cholesky()
        .ok_or(Error::Singular("stage gram matrix"))?;
    let direction = -chol.solve(&grams.cross.tr_mul(&g));
    let p = &grams.cross * &direction;
    let q = p.norm_squared();
    let slope = g.dot(&p);
    if !(q > T::zero()) || !(slope < T::zero()) || !q.is_finite() {
        return Ok(keep(UpdateStatus::Stationary, 0));
    }

    let delta: T = lit(cfg.delta_lr);
    let tol: T = lit(cfg.inner_tol);
    let eps = T::default_epsilon();
    let scale = losses_old.iter().fold(T::zero(), |a, &b| a + b.abs()) / lit(n as f64);
    let noise_floor = lit::<T>(64.0) * eps * (scale + T::one());

    let ray = RayProblem {
        objective,
        grams,
        c_old,
        direction,
        losses_old,
        q,
        delta,
    };
    let two: T = lit(2.0);
    let half: T = lit(0.5);

    // Work with g(α) = f(α)/α = ΔĴ(α)/α + αq/δ. Its positive root is the
    // step length and g(0⁺) is the (negative) directional slope, so (0, slope)
    // seeds the bracket. Fixed-point steps leaving the bracket are replaced by
    // Illinois regula falsi, or by bisection after a diverged evaluation.
    let mut lo = T::zero();
    let mut g_lo = slope;
    let mut hi: Option<(T, Option<T>)> = None;
    let mut last_side = 0i8;
    let mut alpha = delta;
    let mut beta = T::one();
    let mut prev_abs: Option<T> = None;
    let mut best: Option<(T, T, T)> = None; // (alpha, f, decrease) with smallest |f|
    let mut iters = 0;
    let mut converged = false;

    while iters < cfg.inner_max_iters {
        iters += 1;
        let Some(dj) = ray.decrease(alpha)? else {
            hi = Some((alpha, None));
            alpha = (lo + alpha) * half;
            continue;
        };
        let g_val = dj / alpha + alpha * q / delta;
        let fv = alpha * g_val;
        if best.is_none_or(|(_, bf, _)| fv.abs() < bf.abs()) {
            best = Some((alpha, fv, dj));
        }
        let target = (tol * ray.predicted(alpha).min(T::one())).max(noise_floor);
        if fv.abs() <= target && fv.abs() <= tol {
            converged = true;
            break;
        }
        if g_val < T::zero() {
            lo = alpha;
            g_lo = g_val;
            if last_side == -1 {
                if let Some((_, Some(gh))) = hi.as_mut() {
                    *gh *= half;
                }
            }
            last_side = -1;
        } else {
            hi = Some((alpha, Some(g_val)));
            if last_side == 1 {
                g_lo *= half;
            }
            last_side = 1;
        }
        if let Some((h, _)) = hi {
            if h - lo <= eps * lit::<T>(4.0) * h {
                break;
            }
        }
        let proposal = match cfg.inner_solver {
            InnerSolver::FixedPoint => {
                if prev_abs.is_some_and(|p| fv.abs() > p) {
                    beta *= half;
                }
                alpha - beta * delta * g_val / q
            }
            InnerSolver::Bisection => match hi {
                Some((h, _)) => (lo + h) * half,
                None => alpha * two,
            },
        };
        prev_abs = Some(fv.abs());
        let inside = proposal > lo && hi.is_none_or(|(h, _)| proposal < h) && proposal.is_finite();
        alpha = if inside {
            proposal
        } else {
            match hi {
                Some((h, Some(gh))) if cfg.inner_solver == InnerSolver::FixedPoint && gh > g_lo => {
                    let rf = lo - g_lo * (h - lo) / (gh - g_lo);
                    if rf > lo && rf < h {
                        rf
                    } else {
                        (lo + h) * half
                    }
                }
                Some((h, _)) => (lo + h) * half,
                None => alpha.max(lo) * two,
            }
        };
        if alpha <= eps * delta {
            return Ok(keep(UpdateStatus::Stationary, iters));
        }
    }

    let Some((alpha, fv, dj)) = best else {
        return Ok(keep(UpdateStatus::Fallback, iters));
    };
    if !(converged || fv.abs() <= tol) || dj > tol {
        return Ok(keep(UpdateStatus::Fallback, iters));
    }

    let coefficients = ray.coefficients(alpha);
    let u_new = controls_from_coefficients(grams, &coefficients);
    let (pi_new, pi_old) = (stack_controls(&u_new), stack_controls(&u_old));
    let objective_new = objective_old + dj;
    let d = discrete_frechet_derivative(&pi_new, &pi_old, objective_new, objective_old)?;
    let dpi = &pi_new - &pi_old;
    let residual = (&dpi + &d * delta).norm();
    Ok(ImplicitUpdate {
        coefficients,
        objective_old,
        objective_new,
        step_norm_sq: dpi.norm_squared(),
        residual,
        identity_error: fv.abs(),
        inner_iterations: iters,
        status: UpdateStatus::Accepted,
    })
}

/// Diagnostics of one outer iteration. `cost` is the batch cost of the policy
/// at the start of the iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    /// `Σ_t ‖Δπ_t‖²`
    pub sum_dpi_sq: f64,
    /// `‖Δπ_t‖` per stage, in stage order.
    pub stage_step_norms: Vec<f64>,
    /// `Σ_a c_aᵀ K_t c_a` per stage after the update.
    pub rkhs_norms_sq: Vec<f64>,
    pub inner_iterations: Vec<usize>,
    pub fallbacks: usize,
    pub max_identity_error: f64,
    pub max_residual: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Converged,
    MaxIterations,
    Diverged(String),
}

impl RunStatus {
    pub fn is_diverged(&self) -> bool {
        matches!(self, RunStatus::Diverged(_))
    }
}

/// Result of repeated improvement sweeps on a fixed batch.
#[derive(Clone, Debug)]
pub struct Improvement<T: Real> {
    pub policy: KernelPolicy<T>,
    pub history: Vec<IterationRecord>,
    /// Batch cost of the returned policy (the initial cost if nothing ran).
    pub final_cost: T,
    pub initial_cost: T,
    pub status: RunStatus,
}

/// One backward sweep over every stage of `policy`, using states from a
/// rollout of the same policy on `batch`.
fn improvement_sweep<T: Real>(
    sys: &LinearSystem<T>,
    spec: &CostSpec<T>,
    batch: &crate::dynamics::TrajectoryBatch<T>,
    policy: &mut KernelPolicy<T>,
    cfg: &SolverConfig,
    record: &mut IterationRecord,
) -> Result<()> {
    let (start, end) = (policy.start, policy.end());
    let len = end - start;
    record.stage_step_norms = vec![0.0; len];
    record.rkhs_norms_sq = vec![0.0; len];
    record.inner_iterations = vec![0; len];
    for t in (start..end).rev() {
        let states = batch.states_at(t);
        let grams = GramPair::build(&policy.kernel, &states, &policy.stage(t)?.dictionary, cfg.ridge)?;
        let c_old = policy.stage(t)?.coefficients.clone();
        let upd = {
            let continuation = Continuation {
                sys,
                spec,
                policy,
                end,
            };
            solve_implicit_update(t, &c_old, &states, continuation, &grams, cfg)?
        };
        let k = t - start;
        record.stage_step_norms[k] = to_f64(upd.step_norm_sq).sqrt();
        record.sum_dpi_sq += to_f64(upd.step_norm_sq);
        record.inner_iterations[k] = upd.inner_iterations;
        record.max_identity_error = record.max_identity_error.max(to_f64(upd.identity_error));
        record.max_residual = record.max_residual.max(to_f64(upd.residual));
        if upd.status == UpdateStatus::Fallback {
            record.fallbacks += 1;
        }
        let stage = policy.stage_mut(t)?;
        stage.coefficients = upd.coefficients;
        record.rkhs_norms_sq[k] = to_f64(stage.rkhs_norm_sq(&grams.gram));
    }
    Ok(())
}

/// Runs improvement sweeps on the fixed batch `x_batch` starting from
/// `policy`, whose stage range defines the horizon.
pub fn improve_policy<T: Real>(
    sys: &LinearSystem<T>,
    spec: &CostSpec<T>,
    x_batch: &[DVector<T>],
    mut policy: KernelPolicy<T>,
    cfg: &SolverConfig,
) -> Result<Improvement<T>> {
    cfg.validate()?;
    check_dim("policy input dimension", sys.input_dim(), policy.input_dim())?;
    let mut history = Vec::new();
    let mut status = RunStatus::MaxIterations;
    let mut initial_cost = None;
    let mut final_cost = None;
    for k in 0..cfg.max_outer_iters {
        let clock = Instant::now();
        let batch = match rollout(sys, &policy, x_batch) {
            Ok(b) => b,
            Err(e @ Error::Divergence { .. }) => {
                status = RunStatus::Diverged(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let cost = evaluate_cost_to_go(&batch, spec)?.total();
        initial_cost.get_or_insert(cost);
        final_cost = Some(cost);
        let mut record = IterationRecord {
            iteration: k,
            cost: to_f64(cost),
            sum_dpi_sq: 0.0,
            stage_step_norms: Vec::new(),
            rkhs_norms_sq: Vec::new(),
            inner_iterations: Vec::new(),
            fallbacks: 0,
            max_identity_error: 0.0,
            max_residual: 0.0,
            wall_time_s: 0.0,
        };
        let backup = policy.clone();
        match improvement_sweep(sys, spec, &batch, &mut policy, cfg, &mut record) {
            Ok(()) => {}
            Err(e @ Error::Divergence { .. }) => {
                policy = backup;
                status = RunStatus::Diverged(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
        record.wall_time_s = clock.elapsed().as_secs_f64();
        let done = record.sum_dpi_sq < cfg.convergence_tol * (1.0 + record.cost.abs());
        history.push(record);
        final_cost = None;
        if done {
            status = RunStatus::Converged;
            break;
        }
    }
    let final_cost = match final_cost {
        Some(c) => c,
        None => match rollout(sys, &policy, x_batch) {
            Ok(b) => evaluate_cost_to_go(&b, spec)?.total(),
            Err(e @ Error::Divergence { .. }) => {
                status = RunStatus::Diverged(e.to_string());
                lit(f64::NAN)
            }
            Err(e) => return Err(e),
        },
    };
    Ok(Improvement {
        policy,
        history,
        final_cost,
        initial_cost: initial_cost.unwrap_or(final_cost),
        status,
    })
}

/// Dictionaries built from an uncontrolled rollout: per stage, `M` of the
/// `N` sample states drawn without replacement, duplicates dropped.
pub fn build_dictionaries<T: Real>(
    sys: &LinearSystem<T>,
    x_batch: &[DVector<T>],
    start: usize,
    horizon: usize,
    dict_size: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<Vec<Dictionary<T>>> {
    if x_batch.is_empty() {
        return Err(Error::Empty("dictionary source batch"));
    }
    let mut states: Vec<DVector<T>> = x_batch.to_vec();
    let mut out = Vec::with_capacity(horizon);
    let take = dict_size.min(states.len());
    for t in start..start + horizon {
        let mut picks = index::sample(rng, states.len(), take).into_vec();
        picks.sort_unstable();
        let points = picks.iter().map(|&i| states[i].clone()).collect();
        out.push(Dictionary::new_dedup(points, t)?);
        for x in &mut states {
            *x = &sys.a * &*x;
        }
    }
    Ok(out)
}

/// Full offline result: the learned policy, history and the batch it was
/// trained on.
#[derive(Clone, Debug)]
pub struct OfflineResult<T: Real> {
    pub improvement: Improvement<T>,
    pub x0_batch: Vec<DVector<T>>,
    pub kernel: KernelSpec,
}

/// Offline policy iteration over stages `0..horizon` from a zero initial
/// policy.
pub fn policy_iteration<T: Real>(
    sys: &LinearSystem<T>,
    spec: &CostSpec<T>,
    sampler: &dyn InitialStateSampler<T>,
    horizon: usize,
    cfg: &SolverConfig,
) -> Result<OfflineResult<T>> {
    cfg.validate()?;
    check_dim("sampler state dimension", sys.state_dim(), sampler.state_dim())?;
    check_dim("cost state dimension", sys.state_dim(), spec.state_dim())?;
    check_dim("cost input dimension", sys.input_dim(), spec.input_dim())?;
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be >= 1"));
    }
    let x0_batch = sampler.sample(&mut substream(cfg.seed, Stream::InitialStates), cfg.mc_samples)?;
    let kernel = cfg.kernel.resolve(&x0_batch)?;
    let dictionaries = build_dictionaries(
        sys,
        &x0_batch,
        0,
        horizon,
        cfg.dict_size,
        &mut substream(cfg.seed, Stream::Dictionary),
    )?;
    let policy = KernelPolicy::zeros(kernel, 0, sys.input_dim(), dictionaries)?;
    let improvement = improve_policy(sys, spec, &x0_batch, policy, cfg)?;
    Ok(OfflineResult {
        improvement,
        x0_batch,
        kernel,
    })
}

/// Grid of problem sizes for the per-iteration timing probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeGrid {
    pub mc_samples: Vec<usize>,
    pub dict_size: Vec<usize>,
    pub horizon: Vec<usize>,
    /// Timed outer iterations per grid point.
    pub iterations: usize,
    /// Repetitions per grid point; the fastest is reported.
    pub repeats: usize,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self {
            mc_samples: vec![10, 20],
            dict_size: vec![10],
            horizon: vec![10, 20],
            iterations: 2,
            repeats: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub mc_samples: usize,
    pub dict_size: usize,
    pub horizon: usize,
    pub seconds_per_iteration: f64,
    pub inner_iterations_per_stage: f64,
}

/// Per-iteration wall time over the grid (Cartesian product, row-major in
/// `mc_samples`, `dict_size`, `horizon`).
pub fn complexity_probe<T: Real>(
    sys: &LinearSystem<T>,
    spec: &CostSpec<T>,
    sampler: &dyn InitialStateSampler<T>,
    base: &SolverConfig,
    grid: &ProbeGrid,
) -> Result<Vec<ProbeRow>> {
    if grid.iterations == 0 || grid.repeats == 0 {
        return Err(Error::invalid("probe grid", "iterations and repeats must be >= 1"));
    }
    let mut rows = Vec::new();
    for &n in &grid.mc_samples {
        for &m in &grid.dict_size {
            for &h in &grid.horizon {
                let cfg = SolverConfig {
                    mc_samples: n,
                    dict_size: m,
                    max_outer_iters: grid.iterations,
                    convergence_tol: 0.0,
                    ..base.clone()
                };
                let mut best = f64::INFINITY;
                let mut inner = 0.0;
                for _ in 0..grid.repeats {
                    let res = policy_iteration(sys, spec, sampler, h, &cfg)?;
                    let hist = &res.improvement.history;
                    if hist.is_empty() {
                        return Err(Error::Divergence {
                            sample: 0,
                            stage: 0,
                            norm: f64::INFINITY,
                        });
                    }
                    let secs = hist.iter().map(|r| r.wall_time_s).sum::<f64>() / hist.len() as f64;
                    if secs < best {
                        best = secs;
                        let total: usize = hist.iter().flat_map(|r| r.inner_iterations.iter()).sum();
                        inner = total as f64 / (hist.len() * h) as f64;
                    }
                }
                rows.push(ProbeRow {
                    mc_samples: n,
                    dict_size: m,
                    horizon: h,
                    seconds_per_iteration: best,
                    inner_iterations_per_stage: inner,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{assemble_team_system, discretize_double_integrator};
    use crate::kernel::StagePolicy;
    use crate::sampling::{BoxSampler, FixedBatch};
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn scalar_problem() -> (LinearSystem<f64>, CostSpec<f64>) {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sys = LinearSystem::from_matrices(one.clone(), one.clone()).unwrap();
        let spec = CostSpec::new(one.clone(), one.clone(), one).unwrap();
        (sys, spec)
    }

    #[test]
    fn frechet_derivative_examples() {
        let z = discrete_frechet_derivative(&v(&[1.0, 2.0]), &v(&[1.0, 2.0]), 3.0, 1.0).unwrap();
        assert_eq!(z, v(&[0.0, 0.0]));
        let d = discrete_frechet_derivative(&v(&[1.0, 0.0]), &v(&[0.0, 0.0]), 0.5, 0.0).unwrap();
        assert_abs_diff_eq!(d, v(&[0.5, 0.0]), epsilon = 1e-15);
        let d = discrete_frechet_derivative(&v(&[1.0, 1.0]), &v(&[0.0, 0.0]), 4.0, 0.0).unwrap();
        assert_abs_diff_eq!(d, v(&[2.0, 2.0]), epsilon = 1e-15);
        assert_abs_diff_eq!(d.dot(&v(&[1.0, 1.0])), 4.0, epsilon = 1e-15);
        assert!(discrete_frechet_derivative(&v(&[1.0]), &v(&[1.0, 2.0]), 0.0, 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        for bad in [0.0, -1.0, f64::NAN] {
            let cfg = SolverConfig {
                delta_lr: bad,
                ..Default::default()
            };
            assert!(cfg.validate().is_err());
        }
        let cfg = SolverConfig {
            inner_tol: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig {
            kernel: KernelChoice::GaussianRbf { length_scale: Some(-1.0) },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    /// Scalar toy with one linear-kernel dictionary point `x̄ = 1`: the policy
    /// is `u = c·x`, the stage objective is `x²(1 + c² + (1 + c)²)` and the
    /// implicit equation is a scalar root problem in `c`.
    #[test]
    fn scalar_update_matches_bisection_oracle() {
        let (sys, spec) = scalar_problem();
        let x0 = 0.8;
        let dict = Dictionary::new(vec![v(&[1.0])], 0).unwrap();
        let policy = KernelPolicy::zeros(KernelSpec::Linear, 0, 1, vec![dict.clone()]).unwrap();
        let states = vec![v(&[x0])];
        let grams = GramPair::build(&KernelSpec::Linear, &states, &dict, 0.0).unwrap();
        let j = |c: f64| x0 * x0 * (1.0 + c * c + (1.0 + c) * (1.0 + c));
        for (delta, c0) in [(0.1, 0.0), (1.0, 0.0), (3.0, 0.3), (0.5, -1.5)] {
            let cfg = SolverConfig {
                delta_lr: delta,
                inner_tol: 1e-12,
                inner_max_iters: 200,
                ..Default::default()
            };
            let c_old = DMatrix::from_element(1, 1, c0);
            let cont = Continuation {
                sys: &sys,
                spec: &spec,
                policy: &policy,
                end: 1,
            };
            let upd = solve_implicit_update(0, &c_old, &states, cont, &grams, &cfg).unwrap();
            assert_eq!(upd.status, UpdateStatus::Accepted);
            // bisection on g(c) = J(c) - J(c0) + (x0 (c - c0))² / δ over c on
            // the descent side of c0
            let g = |c: f64| j(c) - j(c0) + (x0 * (c - c0)).powi(2) / delta;
            let slope = x0 * x0 * (2.0 * c0 + 2.0 * (1.0 + c0));
            let (mut a, mut b) = if slope < 0.0 { (c0 + 1e-9, c0 + 10.0) } else { (c0 - 10.0, c0 - 1e-9) };
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if (g(mid) < 0.0) == (g(a) < 0.0) {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let c_star = 0.5 * (a + b);
            assert_abs_diff_eq!(upd.coefficients[(0, 0)], c_star, epsilon = 1e-8);
            let dpi = x0 * (upd.coefficients[(0, 0)] - c0);
            assert_abs_diff_eq!(upd.objective_new - upd.objective_old, -dpi * dpi / delta, epsilon = 1e-11);
        }
    }

    #[test]
    fn bisection_mode_agrees_with_fixed_point() {
        let (sys, spec) = scalar_problem();
        let dict = Dictionary::new(vec![v(&[1.0])], 0).unwrap();
        let policy = KernelPolicy::zeros(KernelSpec::Linear, 0, 1, vec![dict.clone()]).unwrap();
        let states = vec![v(&[1.3]), v(&[-0.4])];
        let grams = GramPair::build(&KernelSpec::Linear, &states, &dict, 0.0).unwrap();
        let c_old = DMatrix::from_element(1, 1, 0.2);
        let run = |solver| {
            let cfg = SolverConfig {
                delta_lr: 2.0,
                inner_tol: 1e-12,
                inner_max_iters: 300,
                inner_solver: solver,
                ..Default::default()
            };
            let cont = Continuation {
                sys: &sys,
                spec: &spec,
                policy: &policy,
                end: 1,
            };
            solve_implicit_update(0, &c_old, &states, cont, &grams, &cfg).unwrap()
        };
        let a = run(InnerSolver::FixedPoint);
        let b = run(InnerSolver::Bisection);
        assert_eq!(a.status, UpdateStatus::Accepted);
        assert_eq!(b.status, UpdateStatus::Accepted);
        assert_abs_diff_eq!(a.coefficients, b.coefficients, epsilon = 1e-8);
    }

    #[test]
    fn stationary_point_is_fixed() {
        let (sys, spec) = scalar_problem();
        let dict = Dictionary::new(vec![v(&[1.0])], 0).unwrap();
        let policy = KernelPolicy::zeros(KernelSpec::Linear, 0, 1, vec![dict.clone()]).unwrap();
        let states = vec![v(&[2.0])];
        let grams = GramPair::build(&KernelSpec::Linear, &states, &dict, 0.0).unwrap();
        let c_old = DMatrix::from_element(1, 1, -0.5);
        let cont = Continuation {
            sys: &sys,
            spec: &spec,
            policy: &policy,
            end: 1,
        };
        let upd = solve_implicit_update(0, &c_old, &states, cont, &grams, &SolverConfig::default()).unwrap();
        assert_eq!(upd.status, UpdateStatus::Stationary);
        assert_eq!(upd.coefficients, c_old);
    }

    #[test]
    fn scalar_policy_iteration_recovers_riccati_gain() {
        let (sys, spec) = scalar_problem();
        let cfg = SolverConfig {
            kernel: KernelChoice::Linear,
            mc_samples: 4,
            dict_size: 1,
            delta_lr: 2.0,
            max_outer_iters: 200,
            ..Default::default()
        };
        let sampler = BoxSampler::new(vec![-1.0], vec![1.0]).unwrap();
        let res = policy_iteration(&sys, &spec, &sampler, 1, &cfg).unwrap();
        let stage = &res.improvement.policy.stages[0];
        let gain = stage.coefficients[(0, 0)] * stage.dictionary.points[0][0];
        assert_abs_diff_eq!(gain, -0.5, epsilon = 1e-3);
        assert_eq!(res.improvement.status, RunStatus::Converged);
    }

    #[test]
    fn history_is_monotone_with_rbf_kernel() {
        let s = discretize_double_integrator::<f64>(0.1).unwrap();
        let sys = assemble_team_system(&[s.clone(), s]).unwrap();
        let q = DMatrix::from_diagonal(&v(&[1.0, 1.0, 1.0, 1.0]));
        let spec = CostSpec::new(q.clone(), DMatrix::identity(2, 2), q * 5.0).unwrap();
        let sampler = BoxSampler::new(vec![-1.0; 4], vec![1.0; 4]).unwrap();
        let cfg = SolverConfig {
            mc_samples: 12,
            dict_size: 6,
            max_outer_iters: 15,
            delta_lr: 5.0,
            ..Default::default()
        };
        let res = policy_iteration(&sys, &spec, &sampler, 8, &cfg).unwrap();
        let hist = &res.improvement.history;
        assert!(!hist.is_empty());
        for w in hist.windows(2) {
            assert!(w[1].cost <= w[0].cost + cfg.inner_tol * 8.0, "{} > {}", w[1].cost, w[0].cost);
        }
        assert!(res.improvement.final_cost <= hist.last().unwrap().cost + 1e-12);
        assert!(res.improvement.final_cost < hist[0].cost);
        // summability: partial sums of step norms bounded by δ times the decrease
        let total: f64 = hist.iter().map(|r| r.sum_dpi_sq).sum();
        let drop = hist[0].cost - res.improvement.final_cost;
        assert!(total <= cfg.delta_lr * drop + 1e-9 * hist.len() as f64 * 8.0);
    }

    #[test]
    fn fixed_batch_and_seed_are_deterministic() {
        let (sys, spec) = scalar_problem();
        let cfg = SolverConfig {
            mc_samples: 3,
            dict_size: 3,
            max_outer_iters: 5,
            kernel: KernelChoice::GaussianRbf { length_scale: Some(1.0) },
            ..Default::default()
        };
        let sampler = FixedBatch(vec![v(&[1.0]), v(&[-0.5]), v(&[0.25])]);
        let a = policy_iteration(&sys, &spec, &sampler, 3, &cfg).unwrap();
        let b = policy_iteration(&sys, &spec, &sampler, 3, &cfg).unwrap();
        assert_eq!(a.improvement.policy, b.improvement.policy);
        let ca: Vec<f64> = a.improvement.history.iter().map(|r| r.cost).collect();
        let cb: Vec<f64> = b.improvement.history.iter().map(|r| r.cost).collect();
        assert_eq!(ca, cb);
    }

    #[test]
    fn single_point_probe_grid() {
        let (sys, spec) = scalar_problem();
        let grid = ProbeGrid {
            mc_samples: vec![4],
            dict_size: vec![2],
            horizon: vec![3],
            iterations: 1,
            repeats: 1,
        };
        let cfg = SolverConfig {
            kernel: KernelChoice::Linear,
            ..Default::default()
        };
        let sampler = BoxSampler::new(vec![-1.0], vec![1.0]).unwrap();
        let rows = complexity_probe(&sys, &spec, &sampler, &cfg, &grid).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].seconds_per_iteration >= 0.0);
    }

    #[test]
    fn works_in_single_precision() {
        let one = DMatrix::<f32>::from_element(1, 1, 1.0);
        let sys = LinearSystem::from_matrices(one.clone(), one.clone()).unwrap();
        let spec = CostSpec::new(one.clone(), one.clone(), one).unwrap();
        let cfg = SolverConfig {
            kernel: KernelChoice::Linear,
            mc_samples: 4,
            dict_size: 1,
            delta_lr: 2.0,
            inner_tol: 1e-4,
            max_outer_iters: 100,
            ..Default::default()
        };
        let sampler = BoxSampler::new(vec![-1.0], vec![1.0]).unwrap();
        let res = policy_iteration::<f32>(&sys, &spec, &sampler, 1, &cfg).unwrap();
        let stage: &StagePolicy<f32> = &res.improvement.policy.stages[0];
        let gain = stage.coefficients[(0, 0)] * stage.dictionary.points[0][0];
        assert!((gain + 0.5).abs() < 1e-3, "gain {gain}");
    }
}
