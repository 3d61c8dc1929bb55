//! Stacked discrete-time team dynamics `x⁺ = A x + B u` and Monte Carlo rollouts.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::kernel::KernelPolicy;
use crate::{lit, to_f64, Real};

/// Rollouts abort once a state norm exceeds this bound.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Discrete-time model of a single team member.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
}

impl<T: Real> StateSpace<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        check_dim("state space A columns", a.nrows(), a.ncols())?;
        check_dim("state space B rows", a.nrows(), b.nrows())?;
        Ok(Self { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Exact zero-order-hold discretization of `ṗ = v, v̇ = u` on state `(p, v)`.
pub fn discretize_double_integrator<T: Real>(dt: f64) -> Result<StateSpace<T>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
    }
    let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]).map(lit::<T>);
    let b = DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]).map(lit::<T>);
    StateSpace::new(a, b)
}

/// Stacked team system with per-member input widths.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub input_blocks: Vec<usize>,
}

impl<T: Real> LinearSystem<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, input_blocks: Vec<usize>) -> Result<Self> {
        check_dim("system A columns", a.nrows(), a.ncols())?;
        check_dim("system B rows", a.nrows(), b.nrows())?;
        check_dim("system input blocks", b.ncols(), input_blocks.iter().sum())?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("system matrices"));
        }
        Ok(Self { a, b, input_blocks })
    }

    /// Single-member system with all inputs in one block.
    pub fn from_matrices(a: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        let m = b.ncols();
        Self::new(a, b, vec![m])
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `A x + B u` without dimension checks.
    pub(crate) fn step_unchecked(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let mut next = &self.a * x;
        next.gemv(T::one(), &self.b, u, T::one());
        next
    }
}

/// Block-diagonal assembly of member models into the team system.
pub fn assemble_team_system<T: Real>(subsystems: &[StateSpace<T>]) -> Result<LinearSystem<T>> {
    if subsystems.is_empty() {
        return Err(Error::Empty("subsystem list"));
    }
    let n: usize = subsystems.iter().map(StateSpace::state_dim).sum();
    let m: usize = subsystems.iter().map(StateSpace::input_dim).sum();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let (mut row, mut col) = (0, 0);
    for s in subsystems {
        let (ni, mi) = (s.state_dim(), s.input_dim());
        a.view_mut((row, row), (ni, ni)).copy_from(&s.a);
        b.view_mut((row, col), (ni, mi)).copy_from(&s.b);
        row += ni;
        col += mi;
    }
    LinearSystem::new(a, b, subsystems.iter().map(StateSpace::input_dim).collect())
}

fn check_finite_state<T: Real>(x: &DVector<T>, sample: usize, stage: usize) -> Result<()> {
    let norm = x.norm();
    if !norm.is_finite() || norm > lit(DIVERGENCE_LIMIT) {
        return Err(Error::Divergence {
            sample,
            stage,
            norm: to_f64(norm),
        });
    }
    Ok(())
}

/// One step of the team dynamics.
pub fn step<T: Real>(sys: &LinearSystem<T>, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
    check_dim("step state", sys.state_dim(), x.len())?;
    check_dim("step control", sys.input_dim(), u.len())?;
    let next = sys.step_unchecked(x, u);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            sample: 0,
            stage: 0,
            norm: f64::INFINITY,
        });
    }
    Ok(next)
}

/// Monte Carlo ensemble of closed-loop trajectories.
///
/// `states[i][k]` is the state of sample `i` at absolute stage `start + k`;
/// `controls[i][k]` is the control applied there.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch<T: Real> {
    pub states: Vec<Vec<DVector<T>>>,
    pub controls: Vec<Vec<DVector<T>>>,
    pub start: usize,
}

impl<T: Real> TrajectoryBatch<T> {
    pub fn horizon(&self) -> usize {
        self.controls.first().map_or(0, Vec::len)
    }

    pub fn sample_count(&self) -> usize {
        self.states.len()
    }

    /// States of every sample at absolute stage `t`.
    pub fn states_at(&self, t: usize) -> Vec<DVector<T>> {
        self.states.iter().map(|s| s[t - self.start].clone()).collect()
    }
}

/// Simulates every initial state under the policy over its full stage range.
pub fn rollout<T: Real>(
    sys: &LinearSystem<T>,
    policy: &KernelPolicy<T>,
    x0_batch: &[DVector<T>],
) -> Result<TrajectoryBatch<T>> {
    if x0_batch.is_empty() {
        return Err(Error::Empty("rollout initial states"));
    }
    check_dim("rollout policy inputs", sys.input_dim(), policy.input_dim())?;
    let mut states = Vec::with_capacity(x0_batch.len());
    let mut controls = Vec::with_capacity(x0_batch.len());
    for (i, x0) in x0_batch.iter().enumerate() {
        check_dim("rollout initial state", sys.state_dim(), x0.len())?;
        check_finite_state(x0, i, policy.start)?;
        let mut xs = Vec::with_capacity(policy.horizon() + 1);
        let mut us = Vec::with_capacity(policy.horizon());
        let mut x = x0.clone();
        for t in policy.start..policy.end() {
            let u = policy.eval(t, &x)?;
            let next = sys.step_unchecked(&x, &u);
            check_finite_state(&next, i, t + 1)?;
            xs.push(std::mem::replace(&mut x, next));
            us.push(u);
        }
        xs.push(x);
        states.push(xs);
        controls.push(us);
    }
    Ok(TrajectoryBatch {
        states,
        controls,
        start: policy.start,
    })
}
