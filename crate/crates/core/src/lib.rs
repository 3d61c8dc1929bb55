//! Kernel-based policy iteration for finite-horizon team-optimal control.
//!
//! The crate covers two learning modes for a multi-agent discrete-time linear
//! system `x⁺ = A x + B u` with quadratic regulation costs and a nonlinear
//! collision penalty:
//!
//! * **offline** ([`offline`]): full-horizon policy iteration over a Monte Carlo
//!   batch, where each stage policy is a finite kernel expansion and the
//!   improvement step is an implicit secant ("discrete Fréchet") update;
//! * **online** ([`online`]): recursive least-squares identification of
//!   `[A B]` ([`rls`]) followed by receding-horizon planning on the estimate.
//!
//! Supporting modules provide the kernels ([`kernel`]), the plant
//! ([`dynamics`]), costs ([`cost`]), an LQR ground truth ([`oracle`]), the
//! intersection scenario ([`scenario`]) and configuration/export plumbing
//! ([`io`]).
//!
//! All numerical code is generic over the scalar type through [`Real`];
//! `f64` aliases are exported at the crate root for everyday use.

pub mod cost;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod kernel;
pub mod offline;
pub mod online;
pub mod oracle;
pub mod rls;
pub mod sampling;
pub mod scenario;

pub use error::{Error, Result};

/// Floating-point scalar the numerical core is generic over (`f32` or `f64`).
pub trait Real:
    nalgebra::RealField + Copy + num_traits::ToPrimitive + std::fmt::Debug + std::fmt::Display
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal or configuration value into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts a working scalar back to `f64` (export, logging, timing tables).
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).unwrap_or(f64::NAN)
}

pub type KernelPolicy = kernel::KernelPolicy<f64>;
pub type Dictionary = kernel::Dictionary<f64>;
pub type LinearSystem = dynamics::LinearSystem<f64>;
pub type StateSpace = dynamics::StateSpace<f64>;
pub type TrajectoryBatch = dynamics::TrajectoryBatch<f64>;
pub type CostSpec = cost::CostSpec<f64>;
pub type CostToGoTable = cost::CostToGoTable<f64>;
pub type RiccatiSolution = oracle::RiccatiSolution<f64>;
pub type RlsState = rls::RlsState<f64>;
pub type PeWindow = rls::PeWindow<f64>;
pub type ImplicitUpdate = offline::ImplicitUpdate<f64>;
pub type Improvement = offline::Improvement<f64>;
pub type OfflineResult = offline::OfflineResult<f64>;

pub use offline::{IterationRecord, SolverConfig};
