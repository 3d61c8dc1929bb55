//! Stage, terminal and collision costs; cost-to-go evaluation; the empirical
//! stage objective used by the policy improvement step.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{LinearSystem, TrajectoryBatch, DIVERGENCE_LIMIT};
use crate::error::{check_dim, Error, Result};
use crate::kernel::{GramPair, KernelPolicy};
use crate::{lit, to_f64, Real};

/// Nonlinear state penalty `ψ(t, x)`; stage dependence enters through
/// time-varying reference trajectories.
pub trait Penalty<T: Real>: Send + Sync + Debug {
    fn value(&self, t: usize, x: &DVector<T>) -> T;
    fn gradient(&self, t: usize, x: &DVector<T>) -> DVector<T>;
}

/// Maps a stacked state to per-vehicle planar positions.
pub trait PositionMap<T: Real>: Send + Sync + Debug {
    fn positions(&self, t: usize, x: &DVector<T>) -> Vec<[T; 2]>;
    /// Chain rule: given `∂f/∂p_i` per vehicle, returns `∂f/∂x`.
    fn pullback(&self, t: usize, x: &DVector<T>, position_grads: &[[T; 2]]) -> DVector<T>;
}

/// Stacked state `(p_1x, p_1y, p_2x, p_2y, ...)` read directly as positions.
#[derive(Clone, Copy, Debug, Default)]
pub struct PlanarPositions;

impl<T: Real> PositionMap<T> for PlanarPositions {
    fn positions(&self, _t: usize, x: &DVector<T>) -> Vec<[T; 2]> {
        x.as_slice().chunks_exact(2).map(|c| [c[0], c[1]]).collect()
    }

    fn pullback(&self, _t: usize, x: &DVector<T>, g: &[[T; 2]]) -> DVector<T> {
        DVector::from_iterator(x.len(), g.iter().flat_map(|p| p.iter().copied()))
    }
}

/// Parameters of the soft pairwise collision penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionSpec {
    /// Desired safety distance (m).
    pub d_d: f64,
    /// Softening constant (m²).
    pub delta_soft: f64,
}

impl CollisionSpec {
    pub fn new(d_d: f64, delta_soft: f64) -> Result<Self> {
        if !(d_d > 0.0 && d_d.is_finite()) {
            return Err(Error::invalid("d_d", "must be > 0"));
        }
        if !(delta_soft > 0.0 && delta_soft.is_finite()) {
            return Err(Error::invalid("delta_soft", "must be > 0"));
        }
        Ok(Self { d_d, delta_soft })
    }
}

impl Default for CollisionSpec {
    fn default() -> Self {
        Self {
            d_d: 2.0,
            delta_soft: 0.1,
        }
    }
}

/// `Σ_{i<j} d_d² / (d_ij² + δ)`.
pub fn collision_penalty<T: Real>(positions: &[[T; 2]], spec: &CollisionSpec) -> T {
    let dd2: T = lit(spec.d_d * spec.d_d);
    let delta: T = lit(spec.delta_soft);
    let mut total = T::zero();
    for (i, p) in positions.iter().enumerate() {
        for q in &positions[i + 1..] {
            let dx = p[0] - q[0];
            let dy = p[1] - q[1];
            total += dd2 / (dx * dx + dy * dy + delta);
        }
    }
    total
}

/// Gradient of [`collision_penalty`] with respect to each position.
pub fn collision_penalty_gradient<T: Real>(positions: &[[T; 2]], spec: &CollisionSpec) -> Vec<[T; 2]> {
    let dd2: T = lit(spec.d_d * spec.d_d);
    let delta: T = lit(spec.delta_soft);
    let two: T = lit(2.0);
    let mut grads = vec![[T::zero(); 2]; positions.len()];
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let dx = positions[i][0] - positions[j][0];
            let dy = positions[i][1] - positions[j][1];
            let den = dx * dx + dy * dy + delta;
            let f = -dd2 * two / (den * den);
            grads[i][0] += f * dx;
            grads[i][1] += f * dy;
            grads[j][0] -= f * dx;
            grads[j][1] -= f * dy;
        }
    }
    grads
}

/// Collision penalty composed with a state-to-position map.
#[derive(Clone, Debug)]
pub struct CollisionPenalty<T: Real> {
    pub spec: CollisionSpec,
    pub positions: Arc<dyn PositionMap<T>>,
}

impl<T: Real> Penalty<T> for CollisionPenalty<T> {
    fn value(&self, t: usize, x: &DVector<T>) -> T {
        collision_penalty(&self.positions.positions(t, x), &self.spec)
    }

    fn gradient(&self, t: usize, x: &DVector<T>) -> DVector<T> {
        let p = self.positions.positions(t, x);
        let g = collision_penalty_gradient(&p, &self.spec);
        self.positions.pullback(t, x, &g)
    }
}

/// Quadratic weights plus optional nonlinear stage and terminal penalties.
#[derive(Clone, Debug)]
pub struct CostSpec<T: Real> {
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub qf: DMatrix<T>,
    pub stage_penalty: Option<Arc<dyn Penalty<T>>>,
    pub terminal_penalty: Option<Arc<dyn Penalty<T>>>,
}

fn check_symmetric<T: Real>(name: &'static str, m: &DMatrix<T>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(name, "must be square"));
    }
    let scale = m.amax().max(T::one());
    if (m - m.transpose()).amax() > lit::<T>(1e-12) * scale {
        return Err(Error::invalid(name, "must be symmetric"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name));
    }
    Ok(())
}

fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(T::max_value().unwrap_or(T::one()), |a, b| a.min(b))
}

impl<T: Real> CostSpec<T> {
    /// Validates shapes; `R` must be positive definite, `Q` and `Q_F` positive
    /// semidefinite (zero state weights are admitted for oracle checks).
    pub fn new(q: DMatrix<T>, r: DMatrix<T>, qf: DMatrix<T>) -> Result<Self> {
        check_symmetric("Q", &q)?;
        check_symmetric("R", &r)?;
        check_symmetric("Q_F", &qf)?;
        check_dim("Q_F size", q.nrows(), qf.nrows())?;
        if r.nrows() > 0 && r.clone().cholesky().is_none() {
            return Err(Error::invalid("R", "must be positive definite"));
        }
        let tol = lit::<T>(-1e-12);
        if min_eigenvalue(&q) < tol * q.amax().max(T::one()) {
            return Err(Error::invalid("Q", "must be positive semidefinite"));
        }
        if min_eigenvalue(&qf) < tol * qf.amax().max(T::one()) {
            return Err(Error::invalid("Q_F", "must be positive semidefinite"));
        }
        Ok(Self {
            q,
            r,
            qf,
            stage_penalty: None,
            terminal_penalty: None,
        })
    }

    pub fn with_penalties(
        mut self,
        stage: Option<Arc<dyn Penalty<T>>>,
        terminal: Option<Arc<dyn Penalty<T>>>,
    ) -> Self {
        self.stage_penalty = stage;
        self.terminal_penalty = terminal;
        self
    }

    pub fn has_penalties(&self) -> bool {
        self.stage_penalty.is_some() || self.terminal_penalty.is_some()
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    fn stage_unchecked(&self, t: usize, x: &DVector<T>, u: &DVector<T>) -> T {
        let mut c = x.dot(&(&self.q * x)) + u.dot(&(&self.r * u));
        if let Some(p) = &self.stage_penalty {
            c += p.value(t, x);
        }
        c
    }

    fn terminal_unchecked(&self, t: usize, x: &DVector<T>) -> T {
        let mut c = x.dot(&(&self.qf * x));
        if let Some(p) = &self.terminal_penalty {
            c += p.value(t, x);
        }
        c
    }
}

/// `xᵀQx + uᵀRu + ψ(t, x)`.
pub fn stage_cost<T: Real>(t: usize, x: &DVector<T>, u: &DVector<T>, spec: &CostSpec<T>) -> Result<T> {
    check_dim("stage_cost state", spec.state_dim(), x.len())?;
    check_dim("stage_cost control", spec.input_dim(), u.len())?;
    Ok(spec.stage_unchecked(t, x, u))
}

/// `xᵀQ_Fx + ψ_F(t, x)` evaluated at terminal stage `t`.
pub fn terminal_cost<T: Real>(t: usize, x: &DVector<T>, spec: &CostSpec<T>) -> Result<T> {
    check_dim("terminal_cost state", spec.state_dim(), x.len())?;
    Ok(spec.terminal_unchecked(t, x))
}

/// Per-sample cost-to-go along a trajectory batch.
#[derive(Clone, Debug, PartialEq)]
pub struct CostToGoTable<T: Real> {
    /// `values[i][k] = V_{start+k}(x^{(i)}_{start+k})`
    pub values: Vec<Vec<T>>,
    /// Batch mean of each column of `values`.
    pub stage_means: Vec<T>,
    pub start: usize,
}

impl<T: Real> CostToGoTable<T> {
    /// Empirical horizon cost, the mean of the first column.
    pub fn total(&self) -> T {
        self.stage_means.first().copied().unwrap_or_else(T::zero)
    }
}

fn ordered_mean<T: Real>(values: impl Iterator<Item = T>) -> T {
    let mut n = 0usize;
    let sum = values.fold(T::zero(), |acc, v| {
        n += 1;
        acc + v
    });
    if n == 0 {
        T::zero()
    } else {
        sum / lit(n as f64)
    }
}

/// Backward recursion `V_t = stage_cost + V_{t+1}` per trajectory.
pub fn evaluate_cost_to_go<T: Real>(batch: &TrajectoryBatch<T>, spec: &CostSpec<T>) -> Result<CostToGoTable<T>> {
    let horizon = batch.horizon();
    let end = batch.start + horizon;
    let mut values = Vec::with_capacity(batch.sample_count());
    for (xs, us) in batch.states.iter().zip(&batch.controls) {
        let mut v = vec![T::zero(); horizon + 1];
        v[horizon] = terminal_cost(end, &xs[horizon], spec)?;
        for k in (0..horizon).rev() {
            v[k] = stage_cost(batch.start + k, &xs[k], &us[k], spec)? + v[k + 1];
        }
        values.push(v);
    }
    let stage_means = (0..=horizon)
        .map(|k| ordered_mean(values.iter().map(|v| v[k])))
        .collect();
    Ok(CostToGoTable {
        values,
        stage_means,
        start: batch.start,
    })
}

/// Cost-to-go of the tail policy: re-simulates stages `from..end` and adds the
/// terminal cost at `end`.
#[derive(Clone, Copy, Debug)]
pub struct Continuation<'a, T: Real> {
    pub sys: &'a LinearSystem<T>,
    pub spec: &'a CostSpec<T>,
    pub policy: &'a KernelPolicy<T>,
    /// Terminal stage index.
    pub end: usize,
}

impl<T: Real> Continuation<'_, T> {
    fn guard(x: &DVector<T>, stage: usize) -> Result<()> {
        let norm = x.norm();
        if !norm.is_finite() || norm > lit(DIVERGENCE_LIMIT) {
            return Err(Error::Divergence {
                sample: 0,
                stage,
                norm: to_f64(norm),
            });
        }
        Ok(())
    }

    /// `V_from(x)` under the tail policy.
    pub fn value(&self, from: usize, x: &DVector<T>) -> Result<T> {
        let mut x = x.clone();
        let mut total = T::zero();
        for t in from..self.end {
            let u = self.policy.eval(t, &x)?;
            total += self.spec.stage_unchecked(t, &x, &u);
            x = self.sys.step_unchecked(&x, &u);
            Self::guard(&x, t + 1)?;
        }
        Ok(total + self.spec.terminal_unchecked(self.end, &x))
    }

    /// `V_from(x)` and its state gradient, by a reverse (adjoint) sweep over the
    /// re-simulated tail.
    pub fn value_and_gradient(&self, from: usize, x: &DVector<T>) -> Result<(T, DVector<T>)> {
        let two: T = lit(2.0);
        let len = self.end - from;
        let mut xs = Vec::with_capacity(len + 1);
        let mut us = Vec::with_capacity(len);
        let mut total = T::zero();
        let mut cur = x.clone();
        for t in from..self.end {
            let u = self.policy.eval(t, &cur)?;
            total += self.spec.stage_unchecked(t, &cur, &u);
            let next = self.sys.step_unchecked(&cur, &u);
            Self::guard(&next, t + 1)?;
            xs.push(cur);
            us.push(u);
            cur = next;
        }
        total += self.spec.terminal_unchecked(self.end, &cur);

        let mut lambda = &self.spec.qf * &cur * two;
        if let Some(p) = &self.spec.terminal_penalty {
            lambda += p.gradient(self.end, &cur);
        }
        for k in (0..len).rev() {
            let t = from + k;
            let (xk, uk) = (&xs[k], &us[k]);
            let jac = self.policy.jacobian(t, xk)?;
            // d/dx [xᵀQx + πᵀRπ + ψ + V(Ax + Bπ)]
            let mut g = &self.spec.q * xk * two;
            if let Some(p) = &self.spec.stage_penalty {
                g += p.gradient(t, xk);
            }
            let du = &self.spec.r * uk * two + self.sys.b.tr_mul(&lambda);
            g += self.sys.a.tr_mul(&lambda);
            g += jac.tr_mul(&du);
            lambda = g;
        }
        Ok((total, lambda))
    }
}

/// Per-sample pieces of the empirical stage objective for fixed sample states.
#[derive(Clone, Copy, Debug)]
pub struct StageObjective<'a, T: Real> {
    pub stage: usize,
    pub states: &'a [DVector<T>],
    pub continuation: Continuation<'a, T>,
}

impl<T: Real> StageObjective<'_, T> {
    /// Per-sample losses `ℓ_i(u_i)` for stage controls `u_i`.
    pub fn sample_losses(&self, controls: &[DVector<T>]) -> Result<Vec<T>> {
        let spec = self.continuation.spec;
        let sys = self.continuation.sys;
        self.states
            .iter()
            .zip(controls)
            .enumerate()
            .map(|(i, (x, u))| {
                let next = sys.step_unchecked(x, u);
                Continuation::<T>::guard(&next, self.stage + 1).map_err(|e| with_sample(e, i))?;
                let tail = self
                    .continuation
                    .value(self.stage + 1, &next)
                    .map_err(|e| with_sample(e, i))?;
                Ok(spec.stage_unchecked(self.stage, x, u) + tail)
            })
            .collect()
    }

    /// Empirical objective: fixed-order mean of the sample losses.
    pub fn value(&self, controls: &[DVector<T>]) -> Result<T> {
        Ok(ordered_mean(self.sample_losses(controls)?.into_iter()))
    }

    /// Losses and gradients `∂Ĵ/∂u_i = (2Ru_i + Bᵀ∇V(x⁺_i)) / N`.
    pub fn losses_and_gradient(&self, controls: &[DVector<T>]) -> Result<(Vec<T>, Vec<DVector<T>>)> {
        let spec = self.continuation.spec;
        let sys = self.continuation.sys;
        let inv_n = T::one() / lit(self.states.len() as f64);
        let two: T = lit(2.0);
        let mut losses = Vec::with_capacity(self.states.len());
        let mut grads = Vec::with_capacity(self.states.len());
        for (i, (x, u)) in self.states.iter().zip(controls).enumerate() {
            let next = sys.step_unchecked(x, u);
            Continuation::<T>::guard(&next, self.stage + 1).map_err(|e| with_sample(e, i))?;
            let (tail, lambda) = self
                .continuation
                .value_and_gradient(self.stage + 1, &next)
                .map_err(|e| with_sample(e, i))?;
            losses.push(spec.stage_unchecked(self.stage, x, u) + tail);
            grads.push((&spec.r * u * two + sys.b.tr_mul(&lambda)) * inv_n);
        }
        Ok((losses, grads))
    }
}

fn with_sample(e: Error, sample: usize) -> Error {
    match e {
        Error::Divergence { stage, norm, .. } => Error::Divergence { sample, stage, norm },
        other => other,
    }
}

/// Stage controls `π(x_i)` read from the cross-Gram matrix times the coefficients.
pub fn controls_from_coefficients<T: Real>(grams: &GramPair<T>, coeffs: &DMatrix<T>) -> Vec<DVector<T>> {
    let stacked = &grams.cross * coeffs;
    stacked.row_iter().map(|r| r.transpose()).collect()
}

/// Empirical stage objective `Ĵ_t` for candidate stage coefficients, with the
/// continuation evaluated by re-simulating the tail policy.
pub fn empirical_stage_objective<T: Real>(
    t: usize,
    candidate_coeffs: &DMatrix<T>,
    batch_states_at_t: &[DVector<T>],
    continuation: Continuation<'_, T>,
    grams: &GramPair<T>,
) -> Result<T> {
    check_dim("candidate coefficient rows", grams.gram.nrows(), candidate_coeffs.nrows())?;
    check_dim("cross-gram rows", batch_states_at_t.len(), grams.cross.nrows())?;
    let controls = controls_from_coefficients(grams, candidate_coeffs);
    StageObjective {
        stage: t,
        states: batch_states_at_t,
        continuation,
    }
    .value(&controls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{assemble_team_system, discretize_double_integrator, rollout};
    use crate::kernel::{Dictionary, KernelSpec, StagePolicy};
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn collision_examples() {
        let spec = CollisionSpec::new(1.0, 0.1).unwrap();
        assert_eq!(collision_penalty(&[[3.0, 4.0]], &spec), 0.0);
        assert_abs_diff_eq!(collision_penalty(&[[1.0, 1.0], [1.0, 1.0]], &spec), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            collision_penalty(&[[0.0, 0.0], [2.0, 0.0]], &spec),
            1.0 / 4.1,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(1.0 / 4.1, 0.243902, epsilon = 1e-6);
        assert!(CollisionSpec::new(0.0, 0.1).is_err());
        assert!(CollisionSpec::new(1.0, 0.0).is_err());
    }

    #[test]
    fn collision_gradient_matches_finite_differences() {
        let spec = CollisionSpec::new(2.0, 0.1).unwrap();
        let pts = [[0.0, 1.0], [1.5, -0.5], [-2.0, 0.3]];
        let g = collision_penalty_gradient(&pts, &spec);
        let h = 1e-6;
        for i in 0..3 {
            for k in 0..2 {
                let mut p = pts;
                let mut m = pts;
                p[i][k] += h;
                m[i][k] -= h;
                let fd = (collision_penalty(&p, &spec) - collision_penalty(&m, &spec)) / (2.0 * h);
                assert_abs_diff_eq!(g[i][k], fd, epsilon = 1e-7);
            }
        }
    }

    fn quad_spec(n: usize, m: usize) -> CostSpec<f64> {
        CostSpec::new(DMatrix::identity(n, n), DMatrix::identity(m, m), DMatrix::identity(n, n) * 2.0).unwrap()
    }

    #[test]
    fn stage_and_terminal_examples() {
        let spec = quad_spec(2, 1);
        assert_eq!(stage_cost(0, &v(&[0.0, 0.0]), &v(&[0.0]), &spec).unwrap(), 0.0);
        assert_eq!(stage_cost(0, &v(&[1.0, 2.0]), &v(&[3.0]), &spec).unwrap(), 14.0);
        assert_eq!(terminal_cost(5, &v(&[0.0, 0.0]), &spec).unwrap(), 0.0);
        assert_eq!(terminal_cost(5, &v(&[1.0, 1.0]), &spec).unwrap(), 4.0);
        assert!(stage_cost(0, &v(&[1.0]), &v(&[0.0]), &spec).is_err());

        let coll = CollisionSpec::new(1.0, 0.1).unwrap();
        let pen: Arc<dyn Penalty<f64>> = Arc::new(CollisionPenalty {
            spec: coll,
            positions: Arc::new(PlanarPositions),
        });
        let spec4 = quad_spec(4, 1).with_penalties(Some(pen.clone()), Some(pen));
        let x = v(&[1.0, 1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(stage_cost(0, &x, &v(&[0.0]), &spec4).unwrap(), 4.0 + 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(terminal_cost(1, &x, &spec4).unwrap(), 8.0 + 10.0, epsilon = 1e-12);
    }

    #[test]
    fn cost_spec_validation() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!(CostSpec::new(i2.clone(), DMatrix::zeros(1, 1), i2.clone()).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CostSpec::new(asym, DMatrix::identity(1, 1), i2.clone()).is_err());
        assert!(CostSpec::new(-i2.clone(), DMatrix::<f64>::identity(1, 1), i2.clone()).is_err());
        assert!(CostSpec::new(DMatrix::<f64>::zeros(2, 2), DMatrix::identity(1, 1), DMatrix::zeros(2, 2)).is_ok());
    }

    fn linear_policy(gains: &[f64], n: usize) -> KernelPolicy<f64> {
        // linear kernel with a single dictionary point e_0 gives π(x) = x_0 * c
        let stages = gains
            .iter()
            .enumerate()
            .map(|(t, &g)| {
                let mut p = DVector::zeros(n);
                p[0] = 1.0;
                StagePolicy::new(Dictionary::new(vec![p], t).unwrap(), DMatrix::from_element(1, 1, g)).unwrap()
            })
            .collect();
        KernelPolicy::new(KernelSpec::Linear, 0, 1, stages).unwrap()
    }

    #[test]
    fn cost_to_go_backward_equals_forward_sum() {
        let sys = assemble_team_system(&[discretize_double_integrator::<f64>(0.1).unwrap()]).unwrap();
        let spec = quad_spec(2, 1);
        let pol = linear_policy(&[-0.5, 0.3, -1.1], 2);
        let x0s = vec![v(&[0.7, -0.2]), v(&[-1.0, 0.4])];
        let batch = rollout(&sys, &pol, &x0s).unwrap();
        let table = evaluate_cost_to_go(&batch, &spec).unwrap();
        let mut forward_mean = 0.0;
        for i in 0..2 {
            let mut sum = 0.0;
            for t in 0..3 {
                let (x, u) = (&batch.states[i][t], &batch.controls[i][t]);
                sum += x.dot(x) + u.dot(u);
            }
            let xt = &batch.states[i][3];
            sum += 2.0 * xt.dot(xt);
            assert_abs_diff_eq!(table.values[i][0], sum, epsilon = 1e-12);
            assert_eq!(table.values[i][3], terminal_cost(3, xt, &spec).unwrap());
            forward_mean += sum / 2.0;
        }
        assert_abs_diff_eq!(table.total(), forward_mean, epsilon = 1e-12);
        assert!(table.values.iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn cost_to_go_trivia() {
        let sys = assemble_team_system(&[discretize_double_integrator::<f64>(0.1).unwrap()]).unwrap();
        let spec = quad_spec(2, 1);
        let pol = linear_policy(&[0.0, 0.0], 2);
        let batch = rollout(&sys, &pol, &[v(&[0.0, 0.0])]).unwrap();
        let table = evaluate_cost_to_go(&batch, &spec).unwrap();
        assert!(table.values[0].iter().all(|&v| v == 0.0));

        let pol1 = linear_policy(&[0.4], 2);
        let x0 = v(&[1.0, -1.0]);
        let b1 = rollout(&sys, &pol1, std::slice::from_ref(&x0)).unwrap();
        let t1 = evaluate_cost_to_go(&b1, &spec).unwrap();
        let expect = stage_cost(0, &x0, &b1.controls[0][0], &spec).unwrap()
            + terminal_cost(1, &b1.states[0][1], &spec).unwrap();
        assert_eq!(t1.values[0][0], expect);
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let sys = assemble_team_system(&[
            discretize_double_integrator::<f64>(0.1).unwrap(),
            discretize_double_integrator::<f64>(0.1).unwrap(),
        ])
        .unwrap();
        let pen: Arc<dyn Penalty<f64>> = Arc::new(CollisionPenalty {
            spec: CollisionSpec::new(2.0, 0.1).unwrap(),
            positions: Arc::new(PlanarPositions),
        });
        let spec = CostSpec::new(DMatrix::identity(4, 4), DMatrix::identity(2, 2) * 0.5, DMatrix::identity(4, 4))
            .unwrap()
            .with_penalties(Some(pen.clone()), Some(pen));
        let k = KernelSpec::gaussian(1.3);
        let stages = (0..4)
            .map(|t| {
                let d = Dictionary::new(
                    vec![v(&[0.1, 0.2, -0.3, 0.4]), v(&[-0.5, 0.1, 0.2, 0.0]), v(&[0.3, -0.2, 0.6, -0.1])],
                    t,
                )
                .unwrap();
                let c = DMatrix::from_fn(3, 2, |i, j| 0.1 * (i as f64 + 1.0) * if j == 0 { 1.0 } else { -0.7 } + 0.05 * t as f64);
                StagePolicy::new(d, c).unwrap()
            })
            .collect();
        let pol = KernelPolicy::new(k, 0, 2, stages).unwrap();
        let cont = Continuation {
            sys: &sys,
            spec: &spec,
            policy: &pol,
            end: 4,
        };
        let x = v(&[0.3, -0.4, 0.8, 0.1]);
        let (val, grad) = cont.value_and_gradient(1, &x).unwrap();
        assert_abs_diff_eq!(val, cont.value(1, &x).unwrap(), epsilon = 1e-12);
        let h = 1e-6;
        for b in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[b] += h;
            xm[b] -= h;
            let fd = (cont.value(1, &xp).unwrap() - cont.value(1, &xm).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(grad[b], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn empirical_objective_examples() {
        // scalar system, T = 1, objective is x² + u² + (x + u)²
        let sys = LinearSystem::from_matrices(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let spec = CostSpec::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let dict = Dictionary::new(vec![v(&[1.0])], 0).unwrap();
        let pol = KernelPolicy::zeros(KernelSpec::Linear, 0, 1, vec![dict.clone()]).unwrap();
        let cont = Continuation {
            sys: &sys,
            spec: &spec,
            policy: &pol,
            end: 1,
        };
        let zero_states = vec![v(&[0.0])];
        let grams = GramPair::build(&KernelSpec::Linear, &zero_states, &dict, 0.0).unwrap();
        let j = empirical_stage_objective(0, &DMatrix::zeros(1, 1), &zero_states, cont, &grams).unwrap();
        assert_eq!(j, 0.0);

        let states = vec![v(&[2.0])];
        let grams = GramPair::build(&KernelSpec::Linear, &states, &dict, 0.0).unwrap();
        for c in [-1.0, -0.5, 0.0, 0.3, 2.0] {
            let j = empirical_stage_objective(0, &DMatrix::from_element(1, 1, c), &states, cont, &grams).unwrap();
            let u = 2.0 * c;
            assert_abs_diff_eq!(j, 4.0 + u * u + (2.0 + u) * (2.0 + u), epsilon = 1e-12);
        }
    }
}
