//! Signal-free intersection scenarios.
//!
//! Every vehicle follows a straight path `p(s) = s·e + w·n` with unit heading
//! `e`, right-hand normal `n` and lane offset `w`; `s = 0` is the point of the
//! path closest to the intersection centre. The per-vehicle state is the
//! deviation `(s - s_ref(t), v - v_d)` from a constant-speed reference
//! `s_ref(t) = s_nom + v_d·Δt·t`, which keeps the dynamics linear and makes the
//! speed weight in `Q` a tracking cost. Positions, and with them the collision
//! penalty, depend on the stage index through the reference.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::{CollisionPenalty, CollisionSpec, CostSpec, Penalty, PositionMap};
use crate::dynamics::{assemble_team_system, discretize_double_integrator, LinearSystem, StateSpace};
use crate::error::{check_dim, Error, Result};
use crate::sampling::BoxSampler;
use crate::{lit, to_f64, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Cav,
    Hdv,
}

/// One vehicle as configured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub role: Role,
    /// Travel direction, degrees counter-clockwise from east.
    pub heading_deg: f64,
    /// Lateral offset to the right of the travel direction (m).
    #[serde(default)]
    pub lane_offset: f64,
    /// Initial distance upstream of the conflict region, `[low, high]` (m).
    pub entry_distance: [f64; 2],
    /// Initial speed, `[low, high]` (m/s).
    pub speed: [f64; 2],
}

/// Quadratic weights per vehicle on `(position deviation, speed deviation)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub q_position: f64,
    pub q_speed: f64,
    pub r: f64,
    pub qf_position: f64,
    pub qf_speed: f64,
    /// Include the collision penalty in stage and terminal costs.
    pub collision: bool,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            q_position: 0.0,
            q_speed: 1.0,
            r: 1.0,
            qf_position: 0.0,
            qf_speed: 1.0,
            collision: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dt: f64,
    pub horizon: usize,
    /// Side of the square conflict region centred at the origin (m).
    pub intersection_length: f64,
    pub desired_speed: f64,
    pub d_d: f64,
    pub delta_soft: f64,
    /// Speed feedback gain of the human driver (1/s); unknown to the learner.
    pub hdv_gain: f64,
    pub weights: Weights,
    pub vehicles: Vec<VehicleSpec>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::with_counts(2, 0)
    }
}

impl ScenarioConfig {
    /// Default layout: CAV-1 eastbound, CAV-2 northbound, further CAVs
    /// alternate; HDVs westbound then southbound. With more than one approach
    /// direction in use every vehicle drives in the right-hand lane.
    pub fn with_counts(n_cav: usize, n_hdv: usize) -> Self {
        let cav_headings = [0.0, 90.0, 180.0, 270.0];
        let hdv_headings = [180.0, 270.0, 0.0, 90.0];
        let lane = if n_hdv > 0 { 1.75 } else { 0.0 };
        let mut vehicles = Vec::new();
        for i in 0..n_cav {
            vehicles.push(VehicleSpec {
                role: Role::Cav,
                heading_deg: cav_headings[i % 4],
                lane_offset: lane,
                entry_distance: [18.0, 22.0],
                speed: [8.0, 12.0],
            });
        }
        for i in 0..n_hdv {
            vehicles.push(VehicleSpec {
                role: Role::Hdv,
                heading_deg: hdv_headings[i % 4],
                lane_offset: lane,
                entry_distance: [18.0, 22.0],
                speed: [8.0, 12.0],
            });
        }
        Self {
            dt: 0.1,
            horizon: 50,
            intersection_length: 10.0,
            desired_speed: 10.0,
            d_d: 2.0,
            delta_soft: 0.1,
            hdv_gain: 0.5,
            weights: Weights::default(),
            vehicles,
        }
    }

    pub fn n_cav(&self) -> usize {
        self.vehicles.iter().filter(|v| v.role == Role::Cav).count()
    }

    pub fn n_hdv(&self) -> usize {
        self.vehicles.len() - self.n_cav()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be > 0, got {v}")))
            }
        };
        let nonneg = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be >= 0, got {v}")))
            }
        };
        positive("dt", self.dt)?;
        positive("intersection_length", self.intersection_length)?;
        CollisionSpec::new(self.d_d, self.delta_soft)?;
        nonneg("desired_speed", self.desired_speed)?;
        nonneg("hdv_gain", self.hdv_gain)?;
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be >= 1"));
        }
        let w = &self.weights;
        positive("weights.r", w.r)?;
        for (name, v) in [
            ("weights.q_position", w.q_position),
            ("weights.q_speed", w.q_speed),
            ("weights.qf_position", w.qf_position),
            ("weights.qf_speed", w.qf_speed),
        ] {
            nonneg(name, v)?;
        }
        if self.n_cav() == 0 {
            return Err(Error::invalid("vehicles", "at least one CAV is required"));
        }
        for v in &self.vehicles {
            if !v.heading_deg.is_finite() || !v.lane_offset.is_finite() {
                return Err(Error::NonFinite("vehicle geometry"));
            }
            let [lo, hi] = v.entry_distance;
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::invalid(
                    "vehicles.entry_distance",
                    format!("need 0 < low <= high, got [{lo}, {hi}]"),
                ));
            }
            let [lo, hi] = v.speed;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid("vehicles.speed", format!("need low <= high, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Straight path `p(s) = s·direction + offset·normal`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Path {
    pub direction: [f64; 2],
    pub normal: [f64; 2],
    pub offset: f64,
}

impl Path {
    pub fn from_heading(heading_deg: f64, lane_offset: f64) -> Self {
        let (s, c) = heading_deg.to_radians().sin_cos();
        // snap to exact axes so that axis-aligned paths reconstruct exactly
        let snap = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
        let direction = [snap(c), snap(s)];
        Self {
            direction,
            normal: [direction[1], -direction[0]],
            offset: lane_offset,
        }
    }

    pub fn point(&self, s: f64) -> [f64; 2] {
        [
            s * self.direction[0] + self.offset * self.normal[0],
            s * self.direction[1] + self.offset * self.normal[1],
        ]
    }

    /// Arc-length interval inside the axis-aligned square of half-side `h`.
    pub fn square_crossing(&self, h: f64) -> Option<(f64, f64)> {
        let base = self.point(0.0);
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..2 {
            let d = self.direction[k];
            if d == 0.0 {
                if base[k].abs() > h {
                    return None;
                }
            } else {
                let a = (-h - base[k]) / d;
                let b = (h - base[k]) / d;
                lo = lo.max(a.min(b));
                hi = hi.min(a.max(b));
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// Arc lengths `(s_self, s_other)` of the crossing point, if not parallel.
    pub fn crossing(&self, other: &Path) -> Option<(f64, f64)> {
        let (d1, d2) = (self.direction, other.direction);
        let det = d1[0] * (-d2[1]) - d1[1] * (-d2[0]);
        if det.abs() < 1e-12 {
            return None;
        }
        let (p1, p2) = (self.point(0.0), other.point(0.0));
        let r = [p2[0] - p1[0], p2[1] - p1[1]];
        let s1 = (r[0] * (-d2[1]) - r[1] * (-d2[0])) / det;
        let s2 = (d1[0] * r[1] - d1[1] * r[0]) / det;
        Some((s1, s2))
    }
}

/// Resolved vehicle: path, conflict-region entry and reference origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Vehicle {
    pub role: Role,
    pub path: Path,
    /// Arc length at which the path enters the conflict region.
    pub entry_arc: f64,
    pub exit_arc: f64,
    /// Reference arc length at stage 0.
    pub nominal_arc: f64,
    pub entry_distance: [f64; 2],
    pub speed: [f64; 2],
}

/// Resolved intersection geometry shared by dynamics, costs and metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub vehicles: Vec<Vehicle>,
    pub intersection_length: f64,
    pub d_d: f64,
    pub delta_soft: f64,
    pub dt: f64,
    pub desired_speed: f64,
    pub horizon: usize,
}

impl Scenario {
    pub fn state_dim(&self) -> usize {
        2 * self.vehicles.len()
    }

    /// Reference arc length of vehicle `i` at stage `t`.
    pub fn reference_arc(&self, i: usize, t: usize) -> f64 {
        self.vehicles[i].nominal_arc + self.desired_speed * self.dt * t as f64
    }

    /// Absolute arc length and speed of every vehicle.
    pub fn arc_and_speed<T: Real>(&self, t: usize, x: &DVector<T>) -> Vec<(f64, f64)> {
        (0..self.vehicles.len())
            .map(|i| {
                (
                    to_f64(x[2 * i]) + self.reference_arc(i, t),
                    to_f64(x[2 * i + 1]) + self.desired_speed,
                )
            })
            .collect()
    }

    /// Deviation state placing every vehicle at the given arc length and speed
    /// at stage `t`.
    pub fn state_from_arcs<T: Real>(&self, t: usize, arcs_speeds: &[(f64, f64)]) -> Result<DVector<T>> {
        check_dim("state_from_arcs vehicles", self.vehicles.len(), arcs_speeds.len())?;
        Ok(DVector::from_iterator(
            self.state_dim(),
            arcs_speeds.iter().enumerate().flat_map(|(i, &(s, v))| {
                [lit::<T>(s - self.reference_arc(i, t)), lit::<T>(v - self.desired_speed)]
            }),
        ))
    }

    /// Planar position of every vehicle at stage `t`.
    pub fn positions<T: Real>(&self, t: usize, x: &DVector<T>) -> Vec<[f64; 2]> {
        self.arc_and_speed(t, x)
            .iter()
            .zip(&self.vehicles)
            .map(|(&(s, _), v)| v.path.point(s))
            .collect()
    }

    /// Uniform initial-state box in deviation coordinates.
    pub fn initial_state_sampler(&self) -> BoxSampler {
        let mut low = Vec::with_capacity(self.state_dim());
        let mut high = Vec::with_capacity(self.state_dim());
        for v in &self.vehicles {
            // distance d upstream of entry maps to deviation entry - d - nominal
            low.push(v.entry_arc - v.entry_distance[1] - v.nominal_arc);
            high.push(v.entry_arc - v.entry_distance[0] - v.nominal_arc);
            low.push(v.speed[0] - self.desired_speed);
            high.push(v.speed[1] - self.desired_speed);
        }
        BoxSampler { low, high }
    }

    /// Vehicle pairs `(i, j)`, `i < j`, in the order used by distance tables.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.vehicles.len();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }

    pub fn collision_spec(&self) -> CollisionSpec {
        CollisionSpec {
            d_d: self.d_d,
            delta_soft: self.delta_soft,
        }
    }
}

/// Pairwise distances `d_ij(t)` along one trajectory whose first state is at
/// stage `start`; rows follow time, columns follow [`Scenario::pairs`].
pub fn pairwise_distances<T: Real>(scenario: &Scenario, start: usize, states: &[DVector<T>]) -> Vec<Vec<f64>> {
    let pairs = scenario.pairs();
    states
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let p = scenario.positions(start + k, x);
            pairs
                .iter()
                .map(|&(i, j)| ((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)).sqrt())
                .collect()
        })
        .collect()
}

/// Smallest pairwise distance along a trajectory; infinite without pairs.
pub fn min_pairwise_distance<T: Real>(scenario: &Scenario, start: usize, states: &[DVector<T>]) -> f64 {
    pairwise_distances(scenario, start, states)
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// State-to-position map through the paths and the moving reference.
#[derive(Clone, Debug)]
pub struct ArcLengthPositions {
    scenario: Arc<Scenario>,
}

impl<T: Real> PositionMap<T> for ArcLengthPositions {
    fn positions(&self, t: usize, x: &DVector<T>) -> Vec<[T; 2]> {
        let sc = &self.scenario;
        sc.vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let s = x[2 * i] + lit::<T>(sc.reference_arc(i, t));
                let e = v.path.direction;
                let w = v.path.offset;
                let nrm = v.path.normal;
                [
                    s * lit::<T>(e[0]) + lit::<T>(w * nrm[0]),
                    s * lit::<T>(e[1]) + lit::<T>(w * nrm[1]),
                ]
            })
            .collect()
    }

    fn pullback(&self, _t: usize, x: &DVector<T>, g: &[[T; 2]]) -> DVector<T> {
        let mut out = DVector::zeros(x.len());
        for (i, v) in self.scenario.vehicles.iter().enumerate() {
            let e = v.path.direction;
            out[2 * i] = g[i][0] * lit::<T>(e[0]) + g[i][1] * lit::<T>(e[1]);
        }
        out
    }
}

/// Everything needed to run the intersection problem.
#[derive(Clone, Debug)]
pub struct IntersectionModel<T: Real> {
    pub scenario: Arc<Scenario>,
    /// Nominal model: every vehicle a free double integrator, inputs on CAVs.
    pub learner: LinearSystem<T>,
    /// True plant: HDVs additionally close their hidden speed loop.
    pub plant: LinearSystem<T>,
    pub cost: CostSpec<T>,
    pub warnings: Vec<String>,
}

/// HDV block under `a = -k (v - v_d)` held over one step.
fn hdv_block<T: Real>(dt: f64, k: f64) -> StateSpace<T> {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, dt - 0.5 * k * dt * dt, 0.0, 1.0 - k * dt]).map(lit::<T>);
    StateSpace {
        a,
        b: DMatrix::zeros(2, 0),
    }
}

/// Assembles geometry, learner and plant dynamics and the team cost.
pub fn build_intersection<T: Real>(cfg: &ScenarioConfig) -> Result<IntersectionModel<T>> {
    cfg.validate()?;
    let half = 0.5 * cfg.intersection_length;
    let mut vehicles = Vec::with_capacity(cfg.vehicles.len());
    for (idx, spec) in cfg.vehicles.iter().enumerate() {
        let path = Path::from_heading(spec.heading_deg, spec.lane_offset);
        let (entry_arc, exit_arc) = path.square_crossing(half).ok_or_else(|| {
            Error::invalid(
                "vehicles",
                format!("vehicle {idx} path misses the conflict region"),
            )
        })?;
        let mid = 0.5 * (spec.entry_distance[0] + spec.entry_distance[1]);
        vehicles.push(Vehicle {
            role: spec.role,
            path,
            entry_arc,
            exit_arc,
            nominal_arc: entry_arc - mid,
            entry_distance: spec.entry_distance,
            speed: spec.speed,
        });
    }

    let mut warnings = Vec::new();
    if vehicles.len() >= 2 {
        let conflicting = (0..vehicles.len()).any(|i| {
            (i + 1..vehicles.len()).any(|j| {
                vehicles[i].path.crossing(&vehicles[j].path).is_some_and(|(s, _)| {
                    let p = vehicles[i].path.point(s);
                    p[0].abs() <= half + 1e-9 && p[1].abs() <= half + 1e-9
                })
            })
        });
        if !conflicting {
            warnings.push("no pair of vehicle paths crosses inside the conflict region".to_string());
        }
    }

    let scenario = Arc::new(Scenario {
        vehicles,
        intersection_length: cfg.intersection_length,
        d_d: cfg.d_d,
        delta_soft: cfg.delta_soft,
        dt: cfg.dt,
        desired_speed: cfg.desired_speed,
        horizon: cfg.horizon,
    });

    let di = discretize_double_integrator::<T>(cfg.dt)?;
    let free = StateSpace {
        a: di.a.clone(),
        b: DMatrix::zeros(2, 0),
    };
    let mut learner_blocks = Vec::new();
    let mut plant_blocks = Vec::new();
    for v in &scenario.vehicles {
        match v.role {
            Role::Cav => {
                learner_blocks.push(di.clone());
                plant_blocks.push(di.clone());
            }
            Role::Hdv => {
                learner_blocks.push(free.clone());
                plant_blocks.push(hdv_block(cfg.dt, cfg.hdv_gain));
            }
        }
    }
    let strip = |sys: LinearSystem<T>| {
        let blocks = sys.input_blocks.iter().copied().filter(|&w| w > 0).collect();
        LinearSystem::new(sys.a, sys.b, blocks)
    };
    let learner = strip(assemble_team_system(&learner_blocks)?)?;
    let plant = strip(assemble_team_system(&plant_blocks)?)?;

    let w = &cfg.weights;
    let nv = scenario.vehicles.len();
    let diag = |p: f64, v: f64| {
        DMatrix::from_diagonal(&DVector::from_iterator(
            2 * nv,
            (0..nv).flat_map(|_| [lit::<T>(p), lit::<T>(v)]),
        ))
    };
    let q = diag(w.q_position, w.q_speed);
    let qf = diag(w.qf_position, w.qf_speed);
    let r = DMatrix::identity(cfg.n_cav(), cfg.n_cav()) * lit::<T>(w.r);
    let mut cost = CostSpec::new(q, r, qf)?;
    if w.collision && nv >= 2 {
        let penalty: Arc<dyn Penalty<T>> = Arc::new(CollisionPenalty {
            spec: scenario.collision_spec(),
            positions: Arc::new(ArcLengthPositions {
                scenario: Arc::clone(&scenario),
            }),
        });
        cost = cost.with_penalties(Some(Arc::clone(&penalty)), Some(penalty));
    }

    Ok(IntersectionModel {
        scenario,
        learner,
        plant,
        cost,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::collision_penalty;
    use crate::sampling::{substream, InitialStateSampler, Stream};
    use approx::assert_abs_diff_eq;

    #[test]
    fn offline_and_online_shapes() {
        let m = build_intersection::<f64>(&ScenarioConfig::with_counts(2, 0)).unwrap();
        assert_eq!((m.learner.state_dim(), m.learner.input_dim()), (4, 2));
        assert_eq!(m.learner, m.plant);
        assert!(m.cost.has_penalties());
        assert!(m.warnings.is_empty());

        let m = build_intersection::<f64>(&ScenarioConfig::with_counts(2, 1)).unwrap();
        assert_eq!((m.plant.state_dim(), m.plant.input_dim()), (6, 2));
        assert_eq!(m.learner.input_blocks, vec![1, 1]);
        assert_ne!(m.learner.a, m.plant.a);
        // HDV rows carry no input
        assert_eq!(m.plant.b.rows(4, 2).amax(), 0.0);
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn single_vehicle_has_no_collision_term() {
        let m = build_intersection::<f64>(&ScenarioConfig::with_counts(1, 0)).unwrap();
        assert_eq!((m.learner.state_dim(), m.learner.input_dim()), (2, 1));
        assert!(!m.cost.has_penalties());
        assert!(m.scenario.pairs().is_empty());
    }

    #[test]
    fn hdv_plant_tracks_desired_speed() {
        let cfg = ScenarioConfig::with_counts(1, 1);
        let m = build_intersection::<f64>(&cfg).unwrap();
        let x = DVector::from_column_slice(&[0.0, 0.0, 0.0, -2.0]);
        let next = m.plant.step_unchecked(&x, &DVector::zeros(1));
        assert_abs_diff_eq!(next[3], -2.0 * (1.0 - cfg.hdv_gain * cfg.dt), epsilon = 1e-15);
        let nominal = m.learner.step_unchecked(&x, &DVector::zeros(1));
        assert_abs_diff_eq!(nominal[3], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn parallel_paths_warn() {
        let mut cfg = ScenarioConfig::with_counts(2, 0);
        cfg.vehicles[1].heading_deg = 0.0;
        cfg.vehicles[1].lane_offset = 3.0;
        let m = build_intersection::<f64>(&cfg).unwrap();
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ScenarioConfig::with_counts(0, 1);
        assert!(build_intersection::<f64>(&cfg).is_err());
        cfg = ScenarioConfig::with_counts(2, 0);
        cfg.vehicles[0].entry_distance = [-1.0, 5.0];
        assert!(build_intersection::<f64>(&cfg).is_err());
        cfg = ScenarioConfig::with_counts(2, 0);
        cfg.vehicles[0].lane_offset = 50.0;
        assert!(build_intersection::<f64>(&cfg).is_err());
    }

    fn orthogonal() -> Arc<Scenario> {
        build_intersection::<f64>(&ScenarioConfig::with_counts(2, 0)).unwrap().scenario
    }

    #[test]
    fn distance_examples() {
        let sc = orthogonal();
        for t in [0, 7] {
            let x = sc.state_from_arcs::<f64>(t, &[(0.0, 10.0), (0.0, 10.0)]).unwrap();
            assert_abs_diff_eq!(pairwise_distances(&sc, t, &[x])[0][0], 0.0, epsilon = 1e-12);
            let x = sc.state_from_arcs::<f64>(t, &[(0.0, 10.0), (-3.0, 10.0)]).unwrap();
            assert_abs_diff_eq!(pairwise_distances(&sc, t, &[x])[0][0], 3.0, epsilon = 1e-12);
            let x = sc.state_from_arcs::<f64>(t, &[(-3.0, 10.0), (-4.0, 10.0)]).unwrap();
            assert_abs_diff_eq!(pairwise_distances(&sc, t, &[x])[0][0], 5.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn positions_lie_on_paths_and_match_penalty_map() {
        let m = build_intersection::<f64>(&ScenarioConfig::with_counts(2, 1)).unwrap();
        let sc = &m.scenario;
        let x = DVector::from_column_slice(&[1.5, 0.3, -2.0, 0.1, 0.7, -1.0]);
        let t = 12;
        let map = ArcLengthPositions { scenario: Arc::clone(sc) };
        let via_map: Vec<[f64; 2]> = PositionMap::<f64>::positions(&map, t, &x);
        let direct = sc.positions(t, &x);
        for (v, (a, b)) in sc.vehicles.iter().zip(via_map.iter().zip(&direct)) {
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-12);
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-12);
            // lateral coordinate along the normal equals the lane offset
            let lateral = b[0] * v.path.normal[0] + b[1] * v.path.normal[1];
            assert_abs_diff_eq!(lateral, v.path.offset, epsilon = 1e-12);
        }
        let d = pairwise_distances(&sc, t, std::slice::from_ref(&x));
        assert_eq!(d[0].len(), 3);
        let expected = collision_penalty(&direct, &sc.collision_spec());
        let pen = m.cost.stage_penalty.as_ref().unwrap();
        assert_abs_diff_eq!(pen.value(t, &x), expected, epsilon = 1e-12);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let m = build_intersection::<f64>(&ScenarioConfig::with_counts(2, 1)).unwrap();
        let pen = m.cost.stage_penalty.clone().unwrap();
        let x = DVector::from_column_slice(&[12.0, 0.3, 14.0, 0.1, 11.0, -1.0]);
        let t = 20;
        let g = pen.gradient(t, &x);
        for k in 0..6 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (pen.value(t, &xp) - pen.value(t, &xm)) / (2.0 * h);
            assert_abs_diff_eq!(g[k], fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn samples_start_upstream_and_are_reproducible() {
        let m = build_intersection::<f64>(&ScenarioConfig::with_counts(2, 1)).unwrap();
        let sc = &m.scenario;
        let sampler = sc.initial_state_sampler();
        let a: Vec<DVector<f64>> = sampler.sample(&mut substream(11, Stream::InitialStates), 100).unwrap();
        let b: Vec<DVector<f64>> = sampler.sample(&mut substream(11, Stream::InitialStates), 100).unwrap();
        assert_eq!(a, b);
        for x in &a {
            for (v, (s, speed)) in sc.vehicles.iter().zip(sc.arc_and_speed(0, x)) {
                assert!(s < v.entry_arc);
                assert!(v.entry_arc - s >= v.entry_distance[0] - 1e-12);
                assert!(v.entry_arc - s <= v.entry_distance[1] + 1e-12);
                assert!((v.speed[0] - 1e-12..=v.speed[1] + 1e-12).contains(&speed));
            }
        }
        let point = BoxSampler::point(&[1.0, -2.0, 0.5, 0.0]);
        let one: Vec<DVector<f64>> = point.sample(&mut substream(0, Stream::InitialStates), 1).unwrap();
        assert_eq!(one[0], DVector::from_column_slice(&[1.0, -2.0, 0.5, 0.0]));
    }

    #[test]
    fn distances_are_symmetric() {
        let sc = orthogonal();
        let x = sc.state_from_arcs::<f64>(3, &[(-6.0, 9.0), (-2.5, 11.0)]).unwrap();
        let p = sc.positions(3, &x);
        let dij = ((p[0][0] - p[1][0]).powi(2) + (p[0][1] - p[1][1]).powi(2)).sqrt();
        let dji = ((p[1][0] - p[0][0]).powi(2) + (p[1][1] - p[0][1]).powi(2)).sqrt();
        assert_eq!(dij, dji);
        assert_abs_diff_eq!(pairwise_distances(&sc, 3, &[x])[0][0], dij, epsilon = 1e-15);
    }
}
