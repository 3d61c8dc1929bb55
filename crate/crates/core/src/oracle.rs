//! Finite-horizon LQR by backward Riccati recursion.
//!
//! With the nonlinear penalties switched off the team problem is a plain LQR
//! problem, so this module serves as ground truth for the learners.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::LinearSystem;
use crate::error::{check_dim, Error, Result};
use crate::{lit, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSolution<T: Real> {
    /// `P_0 … P_T`, with `P_T = Q_F`.
    pub p: Vec<DMatrix<T>>,
    /// `K_0 … K_{T-1}`; the optimal control is `u_t = -K_t x_t`.
    pub k: Vec<DMatrix<T>>,
}

impl<T: Real> RiccatiSolution<T> {
    pub fn horizon(&self) -> usize {
        self.k.len()
    }

    pub fn control(&self, t: usize, x: &DVector<T>) -> DVector<T> {
        -(&self.k[t] * x)
    }
}

pub fn riccati_backward<T: Real>(
    sys: &LinearSystem<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    qf: &DMatrix<T>,
    horizon: usize,
) -> Result<RiccatiSolution<T>> {
    let (n, m) = (sys.state_dim(), sys.input_dim());
    check_dim("riccati Q", n, q.nrows())?;
    check_dim("riccati Q_F", n, qf.nrows())?;
    check_dim("riccati R", m, r.nrows())?;
    if r.clone().cholesky().is_none() {
        return Err(Error::invalid("R", "must be positive definite"));
    }
    let (a, b) = (&sys.a, &sys.b);
    let mut p = vec![qf.clone()];
    let mut k = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next = p.last().unwrap();
        let pb = next * b;
        let pa = next * a;
        let s = r + b.tr_mul(&pb);
        let rhs = b.tr_mul(&pa);
        let gain = s
            .cholesky()
            .ok_or(Error::Singular("R + BᵀPB"))?
            .solve(&rhs);
        let mut cur = q + a.tr_mul(&pa) - a.tr_mul(&pb) * &gain;
        // keep P exactly symmetric
        cur = (&cur + cur.transpose()) * lit::<T>(0.5);
        p.push(cur);
        k.push(gain);
    }
    p.reverse();
    k.reverse();
    Ok(RiccatiSolution { p, k })
}

/// Mean of `x₀ᵀ P₀ x₀` over the batch.
pub fn lqr_cost<T: Real>(sol: &RiccatiSolution<T>, x0_batch: &[DVector<T>]) -> Result<T> {
    if x0_batch.is_empty() {
        return Err(Error::Empty("lqr_cost batch"));
    }
    let p0 = &sol.p[0];
    let mut sum = T::zero();
    for x in x0_batch {
        check_dim("lqr_cost state", p0.nrows(), x.len())?;
        sum += x.dot(&(p0 * x));
    }
    Ok(sum / lit(x0_batch.len() as f64))
}

/// Simulated quadratic cost of an arbitrary gain sequence `u_t = -K_t x_t`.
pub fn simulate_gain_cost<T: Real>(
    sys: &LinearSystem<T>,
    gains: &[DMatrix<T>],
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    qf: &DMatrix<T>,
    x0: &DVector<T>,
) -> T {
    let mut x = x0.clone();
    let mut cost = T::zero();
    for k in gains {
        let u = -(k * &x);
        cost += x.dot(&(q * &x)) + u.dot(&(r * &u));
        x = sys.step_unchecked(&x, &u);
    }
    cost + x.dot(&(qf * &x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{assemble_team_system, discretize_double_integrator};
    use approx::assert_abs_diff_eq;

    fn scalar() -> LinearSystem<f64> {
        LinearSystem::from_matrices(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap()
    }

    #[test]
    fn zero_horizon() {
        let one = DMatrix::from_element(1, 1, 3.0);
        let sol = riccati_backward(&scalar(), &one, &one, &one, 0).unwrap();
        assert_eq!(sol.p, vec![one]);
        assert!(sol.k.is_empty());
    }

    #[test]
    fn scalar_hand_recursion() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sol = riccati_backward(&scalar(), &one, &one, &one, 1).unwrap();
        assert_abs_diff_eq!(sol.k[0][(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.p[0][(0, 0)], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(lqr_cost(&sol, &[DVector::from_element(1, 1.0)]).unwrap(), 1.5, epsilon = 1e-15);
        assert_eq!(lqr_cost(&sol, &[DVector::zeros(1)]).unwrap(), 0.0);
    }

    #[test]
    fn zero_state_cost_gives_zero_gains() {
        let s = discretize_double_integrator::<f64>(0.1).unwrap();
        let sys = assemble_team_system(&[s.clone(), s]).unwrap();
        let z = DMatrix::zeros(4, 4);
        let sol = riccati_backward(&sys, &z, &DMatrix::identity(2, 2), &z, 6).unwrap();
        assert!(sol.k.iter().all(|k| k.amax() == 0.0));
        assert!(sol.p.iter().all(|p| p.amax() == 0.0));
    }

    #[test]
    fn rejects_indefinite_r() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!(riccati_backward(&scalar(), &one, &DMatrix::from_element(1, 1, 0.0), &one, 2).is_err());
    }

    #[test]
    fn value_matches_simulated_cost_and_is_optimal() {
        let s = discretize_double_integrator::<f64>(0.1).unwrap();
        let sys = assemble_team_system(&[s.clone(), s]).unwrap();
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.1, 1.0, 0.2, 2.0]));
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.5, 1.5]));
        let qf = &q * 3.0;
        let sol = riccati_backward(&sys, &q, &r, &qf, 12).unwrap();
        let x0s = [
            DVector::from_column_slice(&[1.0, -0.5, 2.0, 0.3]),
            DVector::from_column_slice(&[-3.0, 1.5, 0.2, -1.0]),
        ];
        for x0 in &x0s {
            let sim = simulate_gain_cost(&sys, &sol.k, &q, &r, &qf, x0);
            let val = x0.dot(&(&sol.p[0] * x0));
            assert_abs_diff_eq!(sim, val, epsilon = 1e-9 * val.abs());
        }
        let mean = lqr_cost(&sol, &x0s).unwrap();
        let sim_mean = x0s.iter().map(|x| simulate_gain_cost(&sys, &sol.k, &q, &r, &qf, x)).sum::<f64>() / 2.0;
        assert_abs_diff_eq!(mean, sim_mean, epsilon = 1e-9);

        // perturbing any single gain never lowers the cost
        for t in 0..12 {
            for sign in [-1.0, 1.0] {
                let mut gains = sol.k.clone();
                gains[t] += DMatrix::from_fn(2, 4, |i, j| sign * 1e-2 * (((i * 4 + j) % 3) as f64 - 0.7) / 2.0);
                for x0 in &x0s {
                    let base = simulate_gain_cost(&sys, &sol.k, &q, &r, &qf, x0);
                    let pert = simulate_gain_cost(&sys, &gains, &q, &r, &qf, x0);
                    assert!(pert >= base - 1e-12, "stage {t}: {pert} < {base}");
                }
            }
        }
    }
}
