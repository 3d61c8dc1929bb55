//! Online learning: excitation and RLS identification, then receding-horizon
//! planning on the identified model.
//!
//! For `s < N_id` the plant is driven by Gaussian excitation and every data
//! triple updates the RLS estimate. From `s = N_id` on the estimate is frozen;
//! each step plans the window `s..min(T, s + H)` from the observed state with
//! the offline improvement routine, applies the first control only and shifts
//! the window.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cost::{evaluate_cost_to_go, stage_cost, terminal_cost, CostSpec};
use crate::dynamics::{rollout, step, LinearSystem};
use crate::error::{check_dim, Error, Result};
use crate::kernel::{Dictionary, KernelPolicy, KernelSpec, StagePolicy};
use crate::offline::{improve_policy, KernelChoice, RunStatus, SolverConfig};
use crate::rls::{pe_check, rls_init, PeStatus, PeWindow, RlsState};
use crate::sampling::{substream, Stream};
use crate::scenario::{pairwise_distances, Scenario};
use crate::{lit, to_f64, Real};

/// Initial RLS estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialModel {
    /// `Θ̂₀ = 0`.
    #[default]
    Zero,
    /// The nominal (learner-view) model.
    Nominal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    /// Window length `H`.
    pub window: usize,
    /// Identification length `N_id`.
    pub n_id: usize,
    /// Excitation standard deviation (m/s²).
    pub sigma_exc: f64,
    /// Stability margin; carried for completeness, not used by the algorithm.
    pub gamma: f64,
    /// RLS forgetting factor `λ`.
    pub forgetting: f64,
    /// Initial covariance `M₀ = m0_scale · I`.
    pub m0_scale: f64,
    pub initial_model: InitialModel,
    /// Excitation level `α` of the persistent-excitation check.
    pub pe_alpha: f64,
    /// Settings of each window solve; `mc_samples` and `dict_size` are ignored
    /// because windows plan from the single observed state with one dictionary
    /// point per stage.
    pub window_solver: SolverConfig,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            window: 4,
            n_id: 40,
            sigma_exc: 1.5,
            gamma: 0.9,
            forgetting: 1.0,
            m0_scale: 1e10,
            initial_model: InitialModel::Zero,
            pe_alpha: 1e-3,
            window_solver: SolverConfig {
                max_outer_iters: 30,
                mc_samples: 1,
                dict_size: 1,
                kernel: KernelChoice::GaussianRbf { length_scale: Some(5.0) },
                ..SolverConfig::default()
            },
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.window == 0 || self.window > horizon {
            return Err(Error::invalid("window", format!("need 1 <= H <= T = {horizon}")));
        }
        if self.n_id >= horizon {
            return Err(Error::invalid("n_id", format!("need N_id < T = {horizon}")));
        }
        if !(self.sigma_exc.is_finite() && self.sigma_exc >= 0.0) {
            return Err(Error::invalid("sigma_exc", "must be >= 0"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid("gamma", "must lie in (0, 1)"));
        }
        if !(self.forgetting > 0.0 && self.forgetting <= 1.0) {
            return Err(Error::invalid("forgetting", "must lie in (0, 1]"));
        }
        if !(self.m0_scale.is_finite() && self.m0_scale > 0.0) {
            return Err(Error::invalid("m0_scale", "must be > 0"));
        }
        if !(self.pe_alpha.is_finite() && self.pe_alpha > 0.0) {
            return Err(Error::invalid("pe_alpha", "must be > 0"));
        }
        if let KernelChoice::GaussianRbf { length_scale: None } = self.window_solver.kernel {
            return Err(Error::invalid(
                "window_solver.kernel.length_scale",
                "must be given explicitly for window planning",
            ));
        }
        self.window_solver.validate()
    }
}

/// `base + N(0, σ²)` independently per input channel.
pub fn excitation_input<T: Real>(rng: &mut dyn RngCore, sigma_exc: f64, base: &DVector<T>) -> Result<DVector<T>> {
    if !(sigma_exc.is_finite() && sigma_exc >= 0.0) {
        return Err(Error::invalid("sigma_exc", "must be >= 0"));
    }
    if sigma_exc == 0.0 {
        return Ok(base.clone());
    }
    let normal = Normal::new(0.0, sigma_exc).map_err(|e| Error::invalid("sigma_exc", e.to_string()))?;
    Ok(base.map(|b| b + lit::<T>(normal.sample(rng))))
}

/// Boundary to the controlled system: apply a control, observe the next state.
pub trait Plant<T: Real> {
    fn state(&self) -> DVector<T>;
    fn apply(&mut self, u: &DVector<T>) -> Result<DVector<T>>;
}

/// Simulated linear plant.
#[derive(Clone, Debug)]
pub struct LinearPlant<T: Real> {
    pub sys: LinearSystem<T>,
    pub x: DVector<T>,
}

impl<T: Real> Plant<T> for LinearPlant<T> {
    fn state(&self) -> DVector<T> {
        self.x.clone()
    }

    fn apply(&mut self, u: &DVector<T>) -> Result<DVector<T>> {
        let next = step(&self.sys, &self.x, u)?;
        let norm = to_f64(next.norm());
        if !(norm <= crate::dynamics::DIVERGENCE_LIMIT) {
            return Err(Error::Divergence { sample: 0, stage: 0, norm });
        }
        self.x = next.clone();
        Ok(next)
    }
}

/// Zero-coefficient window policy whose stage dictionaries are the states
/// predicted from `x` under zero input.
fn initial_window<T: Real>(
    model: &LinearSystem<T>,
    kernel: KernelSpec,
    x: &DVector<T>,
    start: usize,
    end: usize,
) -> Result<KernelPolicy<T>> {
    let mut dicts = Vec::with_capacity(end - start);
    let mut xp = x.clone();
    for t in start..end {
        dicts.push(Dictionary::new(vec![xp.clone()], t)?);
        xp = &model.a * &xp;
    }
    KernelPolicy::zeros(kernel, start, model.input_dim(), dicts)
}

/// Result of one window solve.
#[derive(Clone, Debug)]
pub struct WindowPlan<T: Real> {
    pub candidate: KernelPolicy<T>,
    pub cost_before: T,
    pub cost_after: T,
    pub outer_iterations: usize,
    pub fallbacks: usize,
    /// The candidate was rejected and the warm start returned.
    pub rejected: bool,
}

/// Plans the window covered by `warm_start` (or `s..min(T, s + H)` when
/// absent) from the single state `x_s` on the estimated model.
#[allow(clippy::too_many_arguments)]
pub fn plan_window<T: Real>(
    x_s: &DVector<T>,
    model: &LinearSystem<T>,
    warm_start: Option<KernelPolicy<T>>,
    s: usize,
    window: usize,
    horizon: usize,
    cfg: &SolverConfig,
    spec: &CostSpec<T>,
) -> Result<WindowPlan<T>> {
    check_dim("window state", model.state_dim(), x_s.len())?;
    let end = horizon.min(s + window);
    if s >= end {
        return Err(Error::StageOutOfRange { stage: s, start: s, end });
    }
    let warm = match warm_start {
        Some(p) => {
            if p.start != s || p.end() != end {
                return Err(Error::invalid(
                    "warm_start",
                    format!("covers {}..{}, window is {s}..{end}", p.start, p.end()),
                ));
            }
            p
        }
        None => initial_window(model, cfg.kernel.resolve(std::slice::from_ref(x_s))?, x_s, s, end)?,
    };
    let batch = std::slice::from_ref(x_s);
    let cost_before = match rollout(model, &warm, batch) {
        Ok(b) => evaluate_cost_to_go(&b, spec)?.total(),
        Err(e @ Error::Divergence { .. }) => return Err(e),
        Err(e) => return Err(e),
    };
    let solver = SolverConfig {
        mc_samples: 1,
        dict_size: 1,
        ..cfg.clone()
    };
    let imp = improve_policy(model, spec, batch, warm.clone(), &solver)?;
    let fallbacks = imp.history.iter().map(|r| r.fallbacks).sum();
    let outer_iterations = imp.history.len();
    // accepted sweeps never raise the cost beyond rounding; anything worse than
    // the warm start (or a diverged prediction) keeps the warm start
    if imp.status.is_diverged() || !(imp.final_cost <= cost_before) {
        return Ok(WindowPlan {
            candidate: warm,
            cost_before,
            cost_after: cost_before,
            outer_iterations,
            fallbacks,
            rejected: true,
        });
    }
    Ok(WindowPlan {
        candidate: imp.policy,
        cost_before,
        cost_after: imp.final_cost,
        outer_iterations,
        fallbacks,
        rejected: false,
    })
}

/// Initializer for the next window: drops stage `s`, copies the overlapping
/// stages and appends a zero stage when the window end moves, with its
/// dictionary point predicted from `x_next` under the shifted policy.
/// Returns `None` when no stage remains.
pub fn shift_warm_start<T: Real>(
    prev: &KernelPolicy<T>,
    new_end: usize,
    model: &LinearSystem<T>,
    x_next: &DVector<T>,
) -> Result<Option<KernelPolicy<T>>> {
    let start = prev.start + 1;
    if new_end <= start {
        return Ok(None);
    }
    if new_end < prev.end() || new_end > prev.end() + 1 {
        return Err(Error::invalid(
            "new_end",
            format!("window end may only stay or advance by one, {} -> {new_end}", prev.end()),
        ));
    }
    let mut stages: Vec<StagePolicy<T>> = prev.stages[1..].to_vec();
    if new_end == prev.end() + 1 {
        let mut xp = x_next.clone();
        for st in &stages {
            let u = st.eval_unchecked(&prev.kernel, xp.as_slice());
            xp = model.step_unchecked(&xp, &u);
        }
        if xp.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predicted dictionary point"));
        }
        stages.push(StagePolicy::zeros(Dictionary::new(vec![xp], prev.end())?, prev.input_dim()));
    }
    Ok(Some(KernelPolicy::new(prev.kernel, start, prev.input_dim(), stages)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Identification,
    Control,
}

/// Record of one real-time step `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineStep {
    pub step: usize,
    pub phase: Phase,
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub next_state: Vec<f64>,
    pub window_end: Option<usize>,
    pub window_cost_before: Option<f64>,
    pub window_cost_after: Option<f64>,
    pub window_iterations: usize,
    pub window_fallbacks: usize,
    pub window_rejected: bool,
    /// `‖Θ̂ - Θ‖_F` after this step, when the truth is known.
    pub id_error: Option<f64>,
    pub rls_residual: Option<f64>,
    pub pe_satisfied: Option<bool>,
    /// Smallest pairwise distance at `state`, when a scenario is attached.
    pub min_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineLog {
    pub steps: Vec<OnlineStep>,
    /// Observed states `x_0 … x_{T}` (shorter on abort).
    pub states: Vec<Vec<f64>>,
    pub status: RunStatus,
    pub final_estimate: (Vec<f64>, Vec<f64>),
}

impl OnlineLog {
    /// Closed-loop cost of the logged trajectory from stage `from` on.
    pub fn closed_loop_cost<T: Real>(&self, spec: &CostSpec<T>, from: usize) -> Result<f64> {
        let vec = |v: &Vec<f64>| DVector::from_iterator(v.len(), v.iter().map(|&x| lit::<T>(x)));
        let mut total = 0.0;
        for s in self.steps.iter().filter(|s| s.step >= from) {
            total += to_f64(stage_cost(s.step, &vec(&s.state), &vec(&s.control), spec)?);
        }
        let last = self.states.len() - 1;
        total += to_f64(terminal_cost(last, &vec(&self.states[last]), spec)?);
        Ok(total)
    }

    /// Smallest pairwise distance over states at times `>= from`.
    pub fn min_distance_from(&self, scenario: &Scenario, from: usize) -> f64 {
        let states: Vec<DVector<f64>> = self.states[from.min(self.states.len())..]
            .iter()
            .map(|v| DVector::from_column_slice(v))
            .collect();
        pairwise_distances(scenario, from, &states)
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Static inputs of an online run.
#[derive(Clone, Debug)]
pub struct OnlineProblem<'a, T: Real> {
    pub cost: &'a CostSpec<T>,
    pub horizon: usize,
    /// Learner-view model; supplies `Θ̂₀` for [`InitialModel::Nominal`] and the
    /// input block structure.
    pub nominal: &'a LinearSystem<T>,
    /// True `[A B]` for error logging, if known.
    pub truth: Option<&'a LinearSystem<T>>,
    pub scenario: Option<&'a Scenario>,
    /// Overrides `Θ̂₀` when set.
    pub theta0: Option<DMatrix<T>>,
}

fn to_vec<T: Real>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|&x| to_f64(x)).collect()
}

fn min_distance<T: Real>(scenario: Option<&Scenario>, t: usize, x: &DVector<T>) -> Option<f64> {
    scenario.map(|sc| {
        pairwise_distances(sc, t, std::slice::from_ref(x))[0]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    })
}

/// Runs identification and receding-horizon control against `plant`.
pub fn run_online<T: Real>(plant: &mut dyn Plant<T>, problem: &OnlineProblem<'_, T>, cfg: &OnlineConfig, seed: u64) -> Result<OnlineLog> {
    let horizon = problem.horizon;
    cfg.validate(horizon)?;
    let nominal = problem.nominal;
    let (n, m) = (nominal.state_dim(), nominal.input_dim());
    check_dim("online cost state", n, problem.cost.state_dim())?;
    check_dim("online cost input", m, problem.cost.input_dim())?;
    let theta0 = match (&problem.theta0, cfg.initial_model) {
        (Some(t), _) => Some(t.clone()),
        (None, InitialModel::Zero) => None,
        (None, InitialModel::Nominal) => {
            let mut t = DMatrix::zeros(n, n + m);
            t.columns_mut(0, n).copy_from(&nominal.a);
            t.columns_mut(n, m).copy_from(&nominal.b);
            Some(t)
        }
    };
    let mut rls: RlsState<T> = rls_init(n, m, cfg.forgetting, cfg.m0_scale, theta0)?;
    let mut pe = PeWindow::<T>::new(2 * (n + m), cfg.pe_alpha)?;
    let truth = problem.truth.map(|sys| {
        let mut t = DMatrix::zeros(n, n + m);
        t.columns_mut(0, n).copy_from(&sys.a);
        t.columns_mut(n, m).copy_from(&sys.b);
        t
    });
    let id_error = |rls: &RlsState<T>| truth.as_ref().map(|t| to_f64((&rls.theta_hat - t).norm()));
    let mut rng = substream(seed, Stream::Excitation);

    let mut x = plant.state();
    check_dim("plant state", n, x.len())?;
    let mut states = vec![to_vec(&x)];
    let mut steps = Vec::with_capacity(horizon);
    let mut status = RunStatus::MaxIterations;
    let mut model: Option<LinearSystem<T>> = None;
    let mut warm: Option<KernelPolicy<T>> = None;

    for s in 0..horizon {
        let dist = min_distance(problem.scenario, s, &x);
        if s < cfg.n_id {
            let u = excitation_input(&mut rng, cfg.sigma_exc, &DVector::zeros(m))?;
            let next = match plant.apply(&u) {
                Ok(v) => v,
                Err(e @ Error::Divergence { .. }) => {
                    status = RunStatus::Diverged(e.to_string());
                    break;
                }
                Err(e) => return Err(e),
            };
            let residual = rls.update(&x, &u, &next)?;
            pe.push_pair(&x, &u);
            let pe_ok = match pe_check(&pe) {
                PeStatus::InsufficientData { .. } => None,
                st => Some(st.is_satisfied()),
            };
            steps.push(OnlineStep {
                step: s,
                phase: Phase::Identification,
                state: to_vec(&x),
                control: to_vec(&u),
                next_state: to_vec(&next),
                window_end: None,
                window_cost_before: None,
                window_cost_after: None,
                window_iterations: 0,
                window_fallbacks: 0,
                window_rejected: false,
                id_error: id_error(&rls),
                rls_residual: Some(to_f64(residual.norm())),
                pe_satisfied: pe_ok,
                min_distance: dist,
            });
            x = next;
            states.push(to_vec(&x));
            continue;
        }

        let sys = match &model {
            Some(sys) => sys,
            None => {
                let (a, b) = rls.estimate();
                model = Some(LinearSystem::new(a, b, nominal.input_blocks.clone())?);
                model.as_ref().unwrap()
            }
        };
        let end = horizon.min(s + cfg.window);
        let plan = match plan_window(&x, sys, warm.take(), s, cfg.window, horizon, &cfg.window_solver, problem.cost) {
            Ok(p) => p,
            Err(e @ Error::Divergence { .. }) => {
                status = RunStatus::Diverged(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let u = plan.candidate.eval(s, &x)?;
        let next = match plant.apply(&u) {
            Ok(v) => v,
            Err(e @ Error::Divergence { .. }) => {
                status = RunStatus::Diverged(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        steps.push(OnlineStep {
            step: s,
            phase: Phase::Control,
            state: to_vec(&x),
            control: to_vec(&u),
            next_state: to_vec(&next),
            window_end: Some(end),
            window_cost_before: Some(to_f64(plan.cost_before)),
            window_cost_after: Some(to_f64(plan.cost_after)),
            window_iterations: plan.outer_iterations,
            window_fallbacks: plan.fallbacks,
            window_rejected: plan.rejected,
            id_error: id_error(&rls),
            rls_residual: None,
            pe_satisfied: None,
            min_distance: dist,
        });
        let next_end = horizon.min(s + 1 + cfg.window);
        warm = shift_warm_start(&plan.candidate, next_end, sys, &next)?;
        x = next;
        states.push(to_vec(&x));
    }

    let (a, b) = rls.estimate();
    Ok(OnlineLog {
        steps,
        states,
        status,
        final_estimate: (a.iter().map(|&v| to_f64(v)).collect(), b.iter().map(|&v| to_f64(v)).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{assemble_team_system, discretize_double_integrator};
    use crate::oracle::riccati_backward;
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn excitation_statistics() {
        let mut rng = substream(5, Stream::Excitation);
        let base = v(&[1.0, -2.0]);
        assert_eq!(excitation_input(&mut rng, 0.0, &base).unwrap(), base);
        let zero = DVector::<f64>::zeros(1);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| excitation_input(&mut rng, 1.5, &zero).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
        assert!((1.4..=1.6).contains(&sd), "sd {sd}");
        assert!(mean.abs() < 0.1);
        assert!(excitation_input(&mut rng, -1.0, &zero).is_err());
    }

    fn lqr_pair() -> (LinearSystem<f64>, CostSpec<f64>) {
        let s = discretize_double_integrator::<f64>(0.1).unwrap();
        let sys = assemble_team_system(&[s.clone(), s]).unwrap();
        let q = DMatrix::from_diagonal(&v(&[1.0, 0.5, 2.0, 1.0]));
        let spec = CostSpec::new(q.clone(), DMatrix::identity(2, 2) * 0.1, q * 4.0).unwrap();
        (sys, spec)
    }

    fn linear_window_cfg() -> SolverConfig {
        SolverConfig {
            kernel: KernelChoice::Linear,
            max_outer_iters: 400,
            delta_lr: 20.0,
            inner_tol: 1e-12,
            convergence_tol: 1e-14,
            ..OnlineConfig::default().window_solver
        }
    }

    #[test]
    fn single_stage_window_matches_one_step_riccati() {
        let (sys, spec) = lqr_pair();
        let x = v(&[1.0, -0.5, 2.0, 0.3]);
        let plan = plan_window(&x, &sys, None, 3, 1, 10, &linear_window_cfg(), &spec).unwrap();
        let u = plan.candidate.eval(3, &x).unwrap();
        let sol = riccati_backward(&sys, &spec.q, &spec.r, &spec.qf, 1).unwrap();
        assert_abs_diff_eq!(u, sol.control(0, &x), epsilon = 1e-6);
        assert!(plan.cost_after <= plan.cost_before);
    }

    #[test]
    fn optimal_warm_start_is_a_fixed_point() {
        let (sys, spec) = lqr_pair();
        let x = v(&[1.0, -0.5, 2.0, 0.3]);
        let cfg = linear_window_cfg();
        let first = plan_window(&x, &sys, None, 0, 3, 10, &cfg, &spec).unwrap();
        let again = plan_window(&x, &sys, Some(first.candidate.clone()), 0, 3, 10, &cfg, &spec).unwrap();
        assert!(again.cost_after <= again.cost_before);
        assert_abs_diff_eq!(again.cost_after, first.cost_after, epsilon = 1e-9);
        for (a, b) in again.candidate.stages.iter().zip(&first.candidate.stages) {
            assert_abs_diff_eq!(a.coefficients, b.coefficients, epsilon = 1e-5);
        }
    }

    #[test]
    fn shift_semantics() {
        let (sys, _) = lqr_pair();
        let x = v(&[1.0, -0.5, 2.0, 0.3]);
        let kernel = KernelSpec::gaussian(2.0);
        let mut p = initial_window(&sys, kernel, &x, 2, 5).unwrap();
        for (k, st) in p.stages.iter_mut().enumerate() {
            st.coefficients = DMatrix::from_element(1, 2, 0.1 * (k + 1) as f64);
        }
        // window end advances: one stage dropped, one appended
        let sh = shift_warm_start(&p, 6, &sys, &x).unwrap().unwrap();
        assert_eq!((sh.start, sh.end()), (3, 6));
        assert_eq!(sh.stages[..2], p.stages[1..]);
        assert_eq!(sh.stages[2].coefficients, DMatrix::zeros(1, 2));
        assert_eq!(sh.stages[2].dictionary.stage, 5);
        // window pinned at the horizon end: strictly shorter
        let sh = shift_warm_start(&p, 5, &sys, &x).unwrap().unwrap();
        assert_eq!((sh.start, sh.end()), (3, 5));
        assert_eq!(sh.stages[..], p.stages[1..]);
        // last stage executed: nothing left
        let one = initial_window(&sys, kernel, &x, 4, 5).unwrap();
        assert!(shift_warm_start(&one, 5, &sys, &x).unwrap().is_none());
    }

    #[test]
    fn config_validation() {
        let cfg = OnlineConfig::default();
        assert!(cfg.validate(50).is_ok());
        assert!(cfg.validate(40).is_err());
        assert!(OnlineConfig { window: 0, ..cfg.clone() }.validate(50).is_err());
        assert!(OnlineConfig { gamma: 1.0, ..cfg.clone() }.validate(50).is_err());
        let mut no_scale = cfg.clone();
        no_scale.window_solver.kernel = KernelChoice::GaussianRbf { length_scale: None };
        assert!(no_scale.validate(50).is_err());
    }

    #[test]
    fn perfect_model_without_identification() {
        let (sys, spec) = lqr_pair();
        let x0 = v(&[1.0, -0.5, 2.0, 0.3]);
        let mut plant = LinearPlant { sys: sys.clone(), x: x0.clone() };
        let mut theta = DMatrix::zeros(4, 6);
        theta.columns_mut(0, 4).copy_from(&sys.a);
        theta.columns_mut(4, 2).copy_from(&sys.b);
        let problem = OnlineProblem {
            cost: &spec,
            horizon: 8,
            nominal: &sys,
            truth: Some(&sys),
            scenario: None,
            theta0: Some(theta),
        };
        let cfg = OnlineConfig {
            n_id: 0,
            window: 8,
            window_solver: linear_window_cfg(),
            ..OnlineConfig::default()
        };
        let log = run_online(&mut plant, &problem, &cfg, 0).unwrap();
        assert_eq!(log.steps.len(), 8);
        assert_eq!(log.states.len(), 9);
        for st in &log.steps {
            assert!(st.window_cost_after.unwrap() <= st.window_cost_before.unwrap() + 1e-12 * 8.0);
            assert_eq!(st.id_error, Some(0.0));
        }
        let sol = riccati_backward(&sys, &spec.q, &spec.r, &spec.qf, 8).unwrap();
        let oracle = x0.dot(&(&sol.p[0] * &x0));
        let cl = log.closed_loop_cost(&spec, 0).unwrap();
        assert!(cl >= oracle - 1e-9);
        assert!((cl - oracle) / oracle < 0.02, "closed loop {cl} vs oracle {oracle}");
    }
}
