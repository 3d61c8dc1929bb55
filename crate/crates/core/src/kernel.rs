//! Kernels, Gram matrices and kernel-expanded stage policies.
//!
//! A stage policy is `π_t(x) = Σ_j k(x, x̄_{t,j}) c_{t,j}` with a fixed
//! dictionary `{x̄_{t,j}}` and an `M × m` coefficient matrix whose row `j` is
//! `c_{t,j}`. Evaluating it on a batch of states is the matrix product of the
//! cross-Gram matrix with the coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::{lit, Real};

/// Kernel family and its hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `exp(-‖x - y‖² / (2ℓ²))`
    GaussianRbf { length_scale: f64 },
    /// `xᵀy`
    Linear,
    /// `(xᵀy + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
}

impl KernelSpec {
    pub fn gaussian(length_scale: f64) -> Self {
        KernelSpec::GaussianRbf { length_scale }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::GaussianRbf { length_scale } => {
                if !(length_scale.is_finite() && length_scale > 0.0) {
                    return Err(Error::invalid(
                        "length_scale",
                        format!("must be finite and > 0, got {length_scale}"),
                    ));
                }
            }
            KernelSpec::Linear => {}
            KernelSpec::Polynomial { degree, offset } => {
                if degree == 0 {
                    return Err(Error::invalid("degree", "must be a positive integer"));
                }
                if !offset.is_finite() {
                    return Err(Error::invalid("offset", "must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Unchecked kernel value; callers guarantee equal lengths.
    pub(crate) fn value<T: Real>(&self, x: &[T], y: &[T]) -> T {
        match *self {
            KernelSpec::GaussianRbf { length_scale } => {
                let ell: T = lit(length_scale);
                let sq = x
                    .iter()
                    .zip(y)
                    .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
                (-sq / (lit::<T>(2.0) * ell * ell)).exp()
            }
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Polynomial { degree, offset } => {
                (dot(x, y) + lit(offset)).powi(degree as i32)
            }
        }
    }

    /// Gradient of `k(x, y)` with respect to `x`, accumulated as `out += scale * ∇ₓk`.
    pub(crate) fn accumulate_grad_x<T: Real>(&self, x: &[T], y: &[T], scale: T, out: &mut [T]) {
        match *self {
            KernelSpec::GaussianRbf { length_scale } => {
                let ell: T = lit(length_scale);
                let k = self.value(x, y);
                let f = -scale * k / (ell * ell);
                for ((o, &a), &b) in out.iter_mut().zip(x).zip(y) {
                    *o += f * (a - b);
                }
            }
            KernelSpec::Linear => {
                for (o, &b) in out.iter_mut().zip(y) {
                    *o += scale * b;
                }
            }
            KernelSpec::Polynomial { degree, offset } => {
                let base = dot(x, y) + lit(offset);
                let d: T = lit(degree as f64);
                let f = scale * d * base.powi(degree as i32 - 1);
                for (o, &b) in out.iter_mut().zip(y) {
                    *o += f * b;
                }
            }
        }
    }
}

fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Evaluates `k(x, y)` with dimension and finiteness checks.
pub fn eval_kernel<T: Real>(spec: &KernelSpec, x: &DVector<T>, y: &DVector<T>) -> Result<T> {
    spec.validate()?;
    check_dim("eval_kernel", x.len(), y.len())?;
    if !all_finite(x.as_slice()) || !all_finite(y.as_slice()) {
        return Err(Error::NonFinite("eval_kernel input"));
    }
    Ok(spec.value(x.as_slice(), y.as_slice()))
}

/// Median pairwise Euclidean distance of a point set.
pub fn median_heuristic<T: Real>(points: &[DVector<T>]) -> Result<f64> {
    let mut dists = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            dists.push(crate::to_f64((a - b).norm()));
        }
    }
    if dists.is_empty() {
        return Err(Error::Empty("median heuristic needs at least two points"));
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if !(median > 0.0 && median.is_finite()) {
        return Err(Error::invalid(
            "length_scale",
            format!("median heuristic produced {median}"),
        ));
    }
    Ok(median)
}

/// Fixed expansion points of one stage policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary<T: Real> {
    pub points: Vec<DVector<T>>,
    pub stage: usize,
}

impl<T: Real> Dictionary<T> {
    pub fn new(points: Vec<DVector<T>>, stage: usize) -> Result<Self> {
        let first = points.first().ok_or(Error::Empty("dictionary"))?;
        let n = first.len();
        for p in &points {
            check_dim("dictionary point", n, p.len())?;
            if !all_finite(p.as_slice()) {
                return Err(Error::NonFinite("dictionary point"));
            }
        }
        Ok(Self { points, stage })
    }

    /// Builds a dictionary keeping only the first occurrence of repeated points.
    pub fn new_dedup(points: Vec<DVector<T>>, stage: usize) -> Result<Self> {
        let mut unique: Vec<DVector<T>> = Vec::with_capacity(points.len());
        for p in points {
            if !unique.iter().any(|q| *q == p) {
                unique.push(p);
            }
        }
        Self::new(unique, stage)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn has_duplicates(&self) -> bool {
        self.points
            .iter()
            .enumerate()
            .any(|(i, p)| self.points[i + 1..].iter().any(|q| q == p))
    }

    /// Kernel values `k(x, x̄_j)` for every dictionary point.
    pub(crate) fn kernel_row(&self, spec: &KernelSpec, x: &[T]) -> DVector<T> {
        DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| spec.value(x, p.as_slice())),
        )
    }
}

/// Gram matrix `K_t` over dictionary points plus `ridge · I`.
///
/// Duplicate points with zero ridge make the matrix singular and are reported
/// as [`Error::Singular`].
pub fn gram_matrix<T: Real>(spec: &KernelSpec, dict: &Dictionary<T>, ridge: T) -> Result<DMatrix<T>> {
    spec.validate()?;
    if ridge < T::zero() {
        return Err(Error::invalid("ridge", "must be nonnegative"));
    }
    if ridge == T::zero() && dict.has_duplicates() {
        return Err(Error::Singular("gram matrix: duplicate dictionary points with zero ridge"));
    }
    let mut k = raw_gram(spec, dict);
    for i in 0..dict.len() {
        k[(i, i)] += ridge;
    }
    Ok(k)
}

fn raw_gram<T: Real>(spec: &KernelSpec, dict: &Dictionary<T>) -> DMatrix<T> {
    let m = dict.len();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = spec.value(dict.points[i].as_slice(), dict.points[j].as_slice());
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cross-Gram matrix `(K_s)_{ij} = k(sample_i, x̄_j)`.
pub fn cross_gram<T: Real>(
    spec: &KernelSpec,
    samples: &[DVector<T>],
    dict: &Dictionary<T>,
) -> Result<DMatrix<T>> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("cross_gram samples"));
    }
    let n = dict.dim();
    let mut out = DMatrix::zeros(samples.len(), dict.len());
    for (i, s) in samples.iter().enumerate() {
        check_dim("cross_gram sample", n, s.len())?;
        for (j, p) in dict.points.iter().enumerate() {
            out[(i, j)] = spec.value(s.as_slice(), p.as_slice());
        }
    }
    Ok(out)
}

/// Gram and cross-Gram matrices for one stage.
#[derive(Clone, Debug)]
pub struct GramPair<T: Real> {
    pub gram: DMatrix<T>,
    pub cross: DMatrix<T>,
}

impl<T: Real> GramPair<T> {
    /// Builds both matrices; `relative_ridge` is scaled by the mean Gram diagonal.
    pub fn build(
        spec: &KernelSpec,
        samples: &[DVector<T>],
        dict: &Dictionary<T>,
        relative_ridge: f64,
    ) -> Result<Self> {
        spec.validate()?;
        let raw = raw_gram(spec, dict);
        let mean_diag = raw.diagonal().sum() / lit(dict.len() as f64);
        let ridge = lit::<T>(relative_ridge) * mean_diag;
        if !(ridge > T::zero()) && (dict.has_duplicates() || mean_diag <= T::zero()) {
            return Err(Error::Singular("stage gram matrix"));
        }
        let mut gram = raw;
        for i in 0..dict.len() {
            gram[(i, i)] += ridge;
        }
        Ok(Self {
            gram,
            cross: cross_gram(spec, samples, dict)?,
        })
    }
}

/// Policy of one stage: dictionary and `M × m` coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePolicy<T: Real> {
    pub dictionary: Dictionary<T>,
    pub coefficients: DMatrix<T>,
}

impl<T: Real> StagePolicy<T> {
    pub fn new(dictionary: Dictionary<T>, coefficients: DMatrix<T>) -> Result<Self> {
        check_dim("stage coefficients rows", dictionary.len(), coefficients.nrows())?;
        Ok(Self {
            dictionary,
            coefficients,
        })
    }

    pub fn zeros(dictionary: Dictionary<T>, m: usize) -> Self {
        let rows = dictionary.len();
        Self {
            dictionary,
            coefficients: DMatrix::zeros(rows, m),
        }
    }

    pub(crate) fn eval_unchecked(&self, spec: &KernelSpec, x: &[T]) -> DVector<T> {
        let row = self.dictionary.kernel_row(spec, x);
        self.coefficients.tr_mul(&row)
    }

    /// `∂π/∂x`, an `m × n` matrix.
    pub(crate) fn jacobian_unchecked(&self, spec: &KernelSpec, x: &[T]) -> DMatrix<T> {
        let n = x.len();
        let m = self.coefficients.ncols();
        let mut jac = DMatrix::zeros(m, n);
        let mut grad = vec![T::zero(); n];
        for (j, p) in self.dictionary.points.iter().enumerate() {
            grad.iter_mut().for_each(|g| *g = T::zero());
            spec.accumulate_grad_x(x, p.as_slice(), T::one(), &mut grad);
            for a in 0..m {
                let c = self.coefficients[(j, a)];
                if c != T::zero() {
                    for (b, &g) in grad.iter().enumerate() {
                        jac[(a, b)] += c * g;
                    }
                }
            }
        }
        jac
    }

    /// Squared RKHS norm `Σ_a c_aᵀ K c_a` over the output columns.
    pub fn rkhs_norm_sq(&self, gram: &DMatrix<T>) -> T {
        let kc = gram * &self.coefficients;
        self.coefficients.component_mul(&kc).sum()
    }
}

/// Sequence of kernel-expanded stage policies covering stages `start..start + len`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelPolicy<T: Real> {
    pub kernel: KernelSpec,
    pub start: usize,
    pub stages: Vec<StagePolicy<T>>,
    input_dim: usize,
}

impl<T: Real> KernelPolicy<T> {
    pub fn new(
        kernel: KernelSpec,
        start: usize,
        input_dim: usize,
        stages: Vec<StagePolicy<T>>,
    ) -> Result<Self> {
        kernel.validate()?;
        if let Some(first) = stages.first() {
            let n = first.dictionary.dim();
            for s in &stages {
                check_dim("policy state dimension", n, s.dictionary.dim())?;
                check_dim("policy input dimension", input_dim, s.coefficients.ncols())?;
                check_dim("policy coefficient rows", s.dictionary.len(), s.coefficients.nrows())?;
            }
        }
        Ok(Self {
            kernel,
            start,
            stages,
            input_dim,
        })
    }

    /// Zero-coefficient policy over the given per-stage dictionaries.
    pub fn zeros(kernel: KernelSpec, start: usize, input_dim: usize, dictionaries: Vec<Dictionary<T>>) -> Result<Self> {
        let stages = dictionaries
            .into_iter()
            .map(|d| StagePolicy::zeros(d, input_dim))
            .collect();
        Self::new(kernel, start, input_dim, stages)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// One past the last covered stage.
    pub fn end(&self) -> usize {
        self.start + self.stages.len()
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, t: usize) -> Result<&StagePolicy<T>> {
        if t < self.start || t >= self.end() {
            return Err(Error::StageOutOfRange {
                stage: t,
                start: self.start,
                end: self.end(),
            });
        }
        Ok(&self.stages[t - self.start])
    }

    pub fn stage_mut(&mut self, t: usize) -> Result<&mut StagePolicy<T>> {
        let (start, end) = (self.start, self.end());
        if t < start || t >= end {
            return Err(Error::StageOutOfRange { stage: t, start, end });
        }
        Ok(&mut self.stages[t - start])
    }

    /// `π_t(x) = Σ_j k(x, x̄_{t,j}) c_{t,j}`.
    pub fn eval(&self, t: usize, x: &DVector<T>) -> Result<DVector<T>> {
        let stage = self.stage(t)?;
        check_dim("eval_policy state", stage.dictionary.dim(), x.len())?;
        Ok(stage.eval_unchecked(&self.kernel, x.as_slice()))
    }

    pub fn jacobian(&self, t: usize, x: &DVector<T>) -> Result<DMatrix<T>> {
        let stage = self.stage(t)?;
        check_dim("policy jacobian state", stage.dictionary.dim(), x.len())?;
        Ok(stage.jacobian_unchecked(&self.kernel, x.as_slice()))
    }
}

/// Free-function form of [`KernelPolicy::eval`].
pub fn eval_policy<T: Real>(policy: &KernelPolicy<T>, t: usize, x: &DVector<T>) -> Result<DVector<T>> {
    policy.eval(t, x)
}
