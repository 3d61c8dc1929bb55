//! Recursive least-squares identification of `Θ = [A B]` from `(x_s, u_s, x_{s+1})`.
//!
//! With regressor `φ_s = [x_s; u_s]` the recursion is
//!
//! ```text
//! L_s     = M_s φ_s / (1 + φ_sᵀ M_s φ_s)
//! ε_s     = x_{s+1} - Θ̂_s φ_s
//! Θ̂_{s+1} = Θ̂_s + ε_s L_sᵀ
//! M_{s+1} = (M_s - L_s φ_sᵀ M_s) / λ
//! ```

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::{lit, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct RlsState<T: Real> {
    /// `[Â B̂]`, `n × (n + m)`.
    pub theta_hat: DMatrix<T>,
    /// Covariance `M`, symmetric positive definite.
    pub covariance: DMatrix<T>,
    pub lambda: T,
    pub step_count: usize,
    n: usize,
    m: usize,
}

pub fn rls_init<T: Real>(
    n: usize,
    m: usize,
    lambda: f64,
    m0_scale: f64,
    theta0: Option<DMatrix<T>>,
) -> Result<RlsState<T>> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::invalid("lambda", format!("must lie in (0, 1], got {lambda}")));
    }
    if !(m0_scale > 0.0 && m0_scale.is_finite()) {
        return Err(Error::invalid("m0_scale", "must be > 0"));
    }
    let theta_hat = match theta0 {
        Some(t) => {
            check_dim("theta0 rows", n, t.nrows())?;
            check_dim("theta0 columns", n + m, t.ncols())?;
            t
        }
        None => DMatrix::zeros(n, n + m),
    };
    Ok(RlsState {
        theta_hat,
        covariance: DMatrix::identity(n + m, n + m) * lit::<T>(m0_scale),
        lambda: lit(lambda),
        step_count: 0,
        n,
        m,
    })
}

impl<T: Real> RlsState<T> {
    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    /// Applies one update in place and returns the a priori residual `ε_s`.
    pub fn update(&mut self, x: &DVector<T>, u: &DVector<T>, x_next: &DVector<T>) -> Result<DVector<T>> {
        check_dim("rls state", self.n, x.len())?;
        check_dim("rls input", self.m, u.len())?;
        check_dim("rls next state", self.n, x_next.len())?;
        if x.iter().chain(u.iter()).chain(x_next.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rls data"));
        }
        let mut phi = DVector::zeros(self.n + self.m);
        phi.rows_mut(0, self.n).copy_from(x);
        phi.rows_mut(self.n, self.m).copy_from(u);

        let m_phi = &self.covariance * &phi;
        let gain = &m_phi / (T::one() + phi.dot(&m_phi));
        let residual = x_next - &self.theta_hat * &phi;
        self.theta_hat.ger(T::one(), &residual, &gain, T::one());
        // M φ φᵀ M is symmetric, so L φᵀ M = L (Mφ)ᵀ
        self.covariance.ger(-T::one(), &gain, &m_phi, T::one());
        self.covariance /= self.lambda;
        let sym = (&self.covariance + self.covariance.transpose()) * lit::<T>(0.5);
        self.covariance = sym;
        self.step_count += 1;
        Ok(residual)
    }

    /// `(Â, B̂)` partition of the estimate.
    pub fn estimate(&self) -> (DMatrix<T>, DMatrix<T>) {
        (
            self.theta_hat.columns(0, self.n).into_owned(),
            self.theta_hat.columns(self.n, self.m).into_owned(),
        )
    }
}

/// Functional form of [`RlsState::update`].
pub fn rls_update<T: Real>(
    state: &RlsState<T>,
    x: &DVector<T>,
    u: &DVector<T>,
    x_next: &DVector<T>,
) -> Result<(RlsState<T>, DVector<T>)> {
    let mut next = state.clone();
    let residual = next.update(x, u, x_next)?;
    Ok((next, residual))
}

pub fn estimate<T: Real>(state: &RlsState<T>) -> (DMatrix<T>, DMatrix<T>) {
    state.estimate()
}

/// Sliding window of the most recent regressors for the excitation check.
#[derive(Clone, Debug)]
pub struct PeWindow<T: Real> {
    buffer: VecDeque<DVector<T>>,
    capacity: usize,
    pub alpha: f64,
}

impl<T: Real> PeWindow<T> {
    pub fn new(capacity: usize, alpha: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("n_pe", "window length must be positive"));
        }
        if !(alpha > 0.0) {
            return Err(Error::invalid("alpha", "must be > 0"));
        }
        Ok(Self {
            buffer: VecDeque::with_capacity(capacity),
            capacity,
            alpha,
        })
    }

    /// Defaults `N_PE = 2(n + m)`, `α = 1e-3`.
    pub fn with_defaults(n: usize, m: usize) -> Self {
        Self::new(2 * (n + m), 1e-3).expect("positive defaults")
    }

    pub fn push(&mut self, phi: DVector<T>) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(phi);
    }

    /// Pushes `[x; u]`.
    pub fn push_pair(&mut self, x: &DVector<T>, u: &DVector<T>) {
        let phi = DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied());
        self.push(phi);
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PeStatus<T> {
    /// Fewer than `N_PE` regressors collected so far.
    InsufficientData { have: usize, need: usize },
    Checked { satisfied: bool, min_eigenvalue: T },
}

impl<T> PeStatus<T> {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, PeStatus::Checked { satisfied: true, .. })
    }
}

/// Smallest eigenvalue of `Σ φφᵀ` over the window compared against `α`.
pub fn pe_check<T: Real>(window: &PeWindow<T>) -> PeStatus<T> {
    if window.len() < window.capacity {
        return PeStatus::InsufficientData {
            have: window.len(),
            need: window.capacity,
        };
    }
    let dim = window.buffer[0].len();
    let mut info = DMatrix::zeros(dim, dim);
    for phi in &window.buffer {
        info.ger(T::one(), phi, phi, T::one());
    }
    let min_eigenvalue = info
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(T::max_value().unwrap_or(T::one()), |a, b| a.min(b));
    PeStatus::Checked {
        satisfied: min_eigenvalue >= lit(window.alpha),
        min_eigenvalue,
    }
}
