#![allow(dead_code)]

use std::path::PathBuf;

use kpi_core::cost::{Continuation, CostSpec};
use kpi_core::dynamics::LinearSystem;
use kpi_core::io::{Mode, RunConfig};
use kpi_core::kernel::{Dictionary, KernelPolicy, KernelSpec, StagePolicy};
use kpi_core::scenario::{build_intersection, IntersectionModel, ScenarioConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn shipped(name: &str, mode: Mode) -> RunConfig {
    RunConfig::load(&config_path(name))
        .and_then(|c| c.resolve(mode, None))
        .unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Short two-CAV intersection with the collision penalty switched on.
pub fn small_intersection(horizon: usize) -> IntersectionModel<f64> {
    let mut cfg = ScenarioConfig::with_counts(2, 0);
    cfg.horizon = horizon;
    build_intersection(&cfg).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Random RBF policy over `start..end` with `m` dictionary points per stage.
pub fn random_policy(
    rng: &mut ChaCha8Rng,
    sys: &LinearSystem<f64>,
    start: usize,
    end: usize,
    m: usize,
    coeff_scale: f64,
) -> KernelPolicy<f64> {
    let n = sys.state_dim();
    let stages = (start..end)
        .map(|t| {
            let pts = (0..m).map(|_| random_vec(rng, n, 3.0)).collect();
            let dict = Dictionary::new(pts, t).unwrap();
            let c = DMatrix::from_fn(m, sys.input_dim(), |_, _| rng.random_range(-coeff_scale..coeff_scale));
            StagePolicy::new(dict, c).unwrap()
        })
        .collect();
    KernelPolicy::new(KernelSpec::gaussian(2.5), start, sys.input_dim(), stages).unwrap()
}

pub fn continuation<'a>(
    sys: &'a LinearSystem<f64>,
    spec: &'a CostSpec<f64>,
    policy: &'a KernelPolicy<f64>,
) -> Continuation<'a, f64> {
    Continuation {
        sys,
        spec,
        policy,
        end: policy.end(),
    }
}
