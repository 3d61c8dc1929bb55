//! Run configuration, command drivers and table export.
//!
//! A run is described by one TOML file ([`RunConfig`]). Every driver returns a
//! plain result struct; the `write_*` functions turn it into CSV tables plus a
//! `metadata.toml` that re-loads as the resolved configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout, LinearSystem, TrajectoryBatch};
use crate::error::{Error, Result};
use crate::kernel::KernelPolicy;
use crate::offline::{complexity_probe, policy_iteration, KernelChoice, OfflineResult, ProbeGrid, ProbeRow, RunStatus, SolverConfig};
use crate::online::{run_online, LinearPlant, OnlineConfig, OnlineLog, OnlineProblem, Phase};
use crate::oracle::{lqr_cost, riccati_backward};
use crate::sampling::{substream, BoxSampler, InitialStateSampler, Stream};
use crate::scenario::{build_intersection, pairwise_distances, IntersectionModel, Role, Scenario, ScenarioConfig};
use crate::cost::CostSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Offline,
    Online,
    OracleCompare,
    ComplexityProbe,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Offline => "offline",
            Mode::Online => "online",
            Mode::OracleCompare => "oracle-compare",
            Mode::ComplexityProbe => "complexity-probe",
        }
    }
}

/// Explicit quadratic problem for `oracle-compare`; matrices are row lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub qf: Vec<Vec<f64>>,
    pub horizon: usize,
    /// Initial states are uniform on `[x0_low, x0_high]`.
    pub x0_low: Vec<f64>,
    pub x0_high: Vec<f64>,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(Error::Config(format!("lqr.{name}: matrix is empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("lqr.{name}: rows have different lengths")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

impl LqrConfig {
    pub fn system(&self) -> Result<(LinearSystem<f64>, CostSpec<f64>, BoxSampler)> {
        let sys = LinearSystem::from_matrices(matrix("a", &self.a)?, matrix("b", &self.b)?)
            .map_err(|e| Error::Config(format!("lqr: {e}")))?;
        let spec = CostSpec::new(matrix("q", &self.q)?, matrix("r", &self.r)?, matrix("qf", &self.qf)?)
            .map_err(|e| Error::Config(format!("lqr: {e}")))?;
        let sampler = BoxSampler::new(self.x0_low.clone(), self.x0_high.clone())
            .map_err(|e| Error::Config(format!("lqr.x0: {e}")))?;
        if sampler.low.len() != sys.state_dim() {
            return Err(Error::Config(format!(
                "lqr.x0_low: expected {} entries, found {}",
                sys.state_dim(),
                sampler.low.len()
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("lqr.horizon: must be >= 1".into()));
        }
        Ok((sys, spec, sampler))
    }
}

/// Provenance appended to exported metadata; ignored when loading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub status: String,
    pub wall_time_s: f64,
    #[serde(default)]
    pub iteration_wall_times_s: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_cost: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Must match the subcommand when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Single run seed; copied into every solver section on resolution.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scenario: ScenarioConfig,
    pub solver: SolverConfig,
    pub online: OnlineConfig,
    pub probe: ProbeGrid,
    /// Explicit problem for `oracle-compare`; the scenario is used otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lqr: Option<LqrConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunRecord>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            seed: 0,
            output_dir: PathBuf::from("out"),
            scenario: ScenarioConfig::default(),
            solver: SolverConfig::default(),
            online: OnlineConfig::default(),
            probe: ProbeGrid::default(),
            lqr: None,
            run: None,
        }
    }
}

fn ctx(section: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::Config(format!("{section}: {e}"))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fixes the mode and seed and checks the sections the mode uses.
    pub fn resolve(mut self, mode: Mode, seed: Option<u64>) -> Result<Self> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(Error::Config(format!(
                    "mode: config is for `{}`, command is `{}`",
                    m.name(),
                    mode.name()
                )));
            }
        }
        self.mode = Some(mode);
        if let Some(s) = seed {
            self.seed = s;
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed: must be <= {}", i64::MAX)));
        }
        self.solver.seed = self.seed;
        self.online.window_solver.seed = self.seed;
        self.run = None;
        self.validate(mode)?;
        Ok(self)
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        let scenario_needed = !(mode == Mode::OracleCompare && self.lqr.is_some());
        if scenario_needed {
            self.scenario.validate().map_err(ctx("scenario"))?;
        }
        match mode {
            Mode::Online => self.online.validate(self.scenario.horizon).map_err(ctx("online"))?,
            Mode::ComplexityProbe => {
                self.solver.validate().map_err(ctx("solver"))?;
                let g = &self.probe;
                if g.mc_samples.is_empty() || g.dict_size.is_empty() || g.horizon.is_empty() {
                    return Err(Error::Config("probe: every grid axis needs at least one value".into()));
                }
                if g.iterations == 0 || g.repeats == 0 {
                    return Err(Error::Config("probe: iterations and repeats must be >= 1".into()));
                }
                if g.horizon.contains(&0) || g.mc_samples.contains(&0) || g.dict_size.contains(&0) {
                    return Err(Error::Config("probe: grid values must be >= 1".into()));
                }
            }
            Mode::Offline | Mode::OracleCompare => self.solver.validate().map_err(ctx("solver"))?,
        }
        if let (Mode::OracleCompare, Some(lqr)) = (mode, &self.lqr) {
            lqr.system()?;
        }
        Ok(())
    }

    pub fn with_record(&self, record: RunRecord) -> Self {
        Self {
            run: Some(record),
            ..self.clone()
        }
    }
}

fn record(status: &RunStatus, wall: f64, iters: Vec<f64>, final_cost: Option<f64>, warnings: Vec<String>) -> RunRecord {
    RunRecord {
        status: match status {
            RunStatus::Converged => "converged".into(),
            RunStatus::MaxIterations => "max-iterations".into(),
            RunStatus::Diverged(msg) => format!("diverged: {msg}"),
        },
        wall_time_s: wall,
        iteration_wall_times_s: iters,
        final_cost,
        warnings,
        version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

fn scenario_model(cfg: &RunConfig) -> Result<IntersectionModel<f64>> {
    build_intersection::<f64>(&cfg.scenario).map_err(|e| Error::Config(format!("scenario: {e}")))
}

pub struct OfflineRun {
    pub config: RunConfig,
    pub model: IntersectionModel<f64>,
    pub result: OfflineResult<f64>,
    /// Final policy rolled out from the training batch.
    pub trajectories: TrajectoryBatch<f64>,
    pub wall_time_s: f64,
}

impl OfflineRun {
    pub fn diverged(&self) -> bool {
        self.result.improvement.status.is_diverged()
    }
}

pub fn run_offline(cfg: &RunConfig) -> Result<OfflineRun> {
    let clock = Instant::now();
    let model = scenario_model(cfg)?;
    let sampler = model.scenario.initial_state_sampler();
    let result = policy_iteration(&model.learner, &model.cost, &sampler, cfg.scenario.horizon, &cfg.solver)?;
    let trajectories = rollout(&model.learner, &result.improvement.policy, &result.x0_batch)?;
    Ok(OfflineRun {
        config: cfg.clone(),
        model,
        result,
        trajectories,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}

pub struct OnlineRun {
    pub config: RunConfig,
    pub model: IntersectionModel<f64>,
    pub log: OnlineLog,
    pub wall_time_s: f64,
}

impl OnlineRun {
    pub fn diverged(&self) -> bool {
        self.log.status.is_diverged()
    }
}

/// One closed-loop run from an initial state drawn from the scenario box.
pub fn run_online_scenario(cfg: &RunConfig) -> Result<OnlineRun> {
    let clock = Instant::now();
    let model = scenario_model(cfg)?;
    let sampler = model.scenario.initial_state_sampler();
    let x0 = InitialStateSampler::<f64>::sample(&sampler, &mut substream(cfg.seed, Stream::InitialStates), 1)?.remove(0);
    let mut plant = LinearPlant {
        sys: model.plant.clone(),
        x: x0,
    };
    let problem = OnlineProblem {
        cost: &model.cost,
        horizon: cfg.scenario.horizon,
        nominal: &model.learner,
        truth: Some(&model.plant),
        scenario: Some(&model.scenario),
        theta0: None,
    };
    let log = run_online(&mut plant, &problem, &cfg.online, cfg.seed)?;
    Ok(OnlineRun {
        config: cfg.clone(),
        model,
        log,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}

/// Learned policy against the Riccati solution on the same batch.
pub struct OracleReport {
    pub learned_cost: f64,
    pub oracle_cost: f64,
    /// `(learned - oracle) / oracle`; zero when both vanish.
    pub relative_gap: f64,
    /// Linear gain `G_t = Σ_j c_{t,j} x̄_{t,j}ᵀ` of the learned policy.
    pub learned_gains: Vec<DMatrix<f64>>,
    pub riccati_gains: Vec<DMatrix<f64>>,
    /// `‖G_t + K_t‖_F` per stage.
    pub gain_errors: Vec<f64>,
    pub result: OfflineResult<f64>,
}

pub struct OracleRun {
    pub config: RunConfig,
    pub report: OracleReport,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

/// Gain of a linear-kernel policy stage.
pub fn linear_gain(policy: &KernelPolicy<f64>, t: usize) -> Result<DMatrix<f64>> {
    let stage = policy.stage(t)?;
    let pts = &stage.dictionary.points;
    let n = stage.dictionary.dim();
    let x = DMatrix::from_fn(pts.len(), n, |j, k| pts[j][k]);
    Ok(stage.coefficients.tr_mul(&x))
}

pub fn oracle_compare(
    sys: &LinearSystem<f64>,
    spec: &CostSpec<f64>,
    sampler: &dyn InitialStateSampler<f64>,
    horizon: usize,
    solver: &SolverConfig,
) -> Result<OracleReport> {
    if spec.has_penalties() {
        return Err(Error::Config(
            "oracle-compare needs a cost without penalty terms (set scenario.weights.collision = false)".into(),
        ));
    }
    if solver.kernel != KernelChoice::Linear {
        return Err(Error::Config("oracle-compare needs solver.kernel.family = \"linear\"".into()));
    }
    let result = policy_iteration(sys, spec, sampler, horizon, solver)?;
    let riccati = riccati_backward(sys, &spec.q, &spec.r, &spec.qf, horizon)?;
    let oracle_cost = lqr_cost(&riccati, &result.x0_batch)?;
    let learned_cost = result.improvement.final_cost;
    let relative_gap = if oracle_cost == 0.0 {
        if learned_cost == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (learned_cost - oracle_cost) / oracle_cost
    };
    let policy = &result.improvement.policy;
    let learned_gains = (0..horizon).map(|t| linear_gain(policy, t)).collect::<Result<Vec<_>>>()?;
    let gain_errors = learned_gains
        .iter()
        .zip(&riccati.k)
        .map(|(g, k)| (g + k).norm())
        .collect();
    Ok(OracleReport {
        learned_cost,
        oracle_cost,
        relative_gap,
        learned_gains,
        riccati_gains: riccati.k,
        gain_errors,
        result,
    })
}

pub fn run_oracle(cfg: &RunConfig) -> Result<OracleRun> {
    let clock = Instant::now();
    let report;
    let mut warnings = Vec::new();
    if let Some(lqr) = &cfg.lqr {
        let (sys, spec, sampler) = lqr.system()?;
        report = oracle_compare(&sys, &spec, &sampler, lqr.horizon, &cfg.solver)?;
    } else {
        let model = scenario_model(cfg)?;
        warnings = model.warnings.clone();
        let sampler = model.scenario.initial_state_sampler();
        report = oracle_compare(&model.plant, &model.cost, &sampler, cfg.scenario.horizon, &cfg.solver)?;
    }
    Ok(OracleRun {
        config: cfg.clone(),
        report,
        warnings,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}

/// Outcome of one size-doubling comparison in a probe table.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingCheck {
    /// `"mc_samples"` or `"horizon"`.
    pub axis: &'static str,
    pub from: ProbeRow,
    pub to: ProbeRow,
    pub ratio: f64,
    pub within_band: bool,
}

/// Doubling `N` should cost a factor in `[1.5, 3]`; doubling `T` more than 2.
pub fn scaling_checks(rows: &[ProbeRow]) -> Vec<ScalingCheck> {
    let mut out = Vec::new();
    for a in rows {
        for b in rows {
            let ratio = b.seconds_per_iteration / a.seconds_per_iteration;
            if b.mc_samples == 2 * a.mc_samples && b.dict_size == a.dict_size && b.horizon == a.horizon {
                out.push(ScalingCheck {
                    axis: "mc_samples",
                    from: a.clone(),
                    to: b.clone(),
                    ratio,
                    within_band: (1.5..=3.0).contains(&ratio),
                });
            }
            if b.horizon == 2 * a.horizon && b.dict_size == a.dict_size && b.mc_samples == a.mc_samples {
                out.push(ScalingCheck {
                    axis: "horizon",
                    from: a.clone(),
                    to: b.clone(),
                    ratio,
                    within_band: ratio > 2.0,
                });
            }
        }
    }
    out
}

pub struct ProbeRun {
    pub config: RunConfig,
    pub rows: Vec<ProbeRow>,
    pub checks: Vec<ScalingCheck>,
    pub wall_time_s: f64,
}

pub fn run_probe(cfg: &RunConfig) -> Result<ProbeRun> {
    let clock = Instant::now();
    let sc = &cfg.scenario;
    let mut rows = Vec::new();
    // the scenario horizon is part of the problem, so rebuild it per grid value
    for &h in &cfg.probe.horizon {
        let scenario = ScenarioConfig { horizon: h, ..sc.clone() };
        let model = build_intersection::<f64>(&scenario).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        let sampler = model.scenario.initial_state_sampler();
        let grid = ProbeGrid {
            horizon: vec![h],
            ..cfg.probe.clone()
        };
        rows.extend(complexity_probe(&model.learner, &model.cost, &sampler, &cfg.solver, &grid)?);
    }
    rows.sort_by_key(|r| (r.mc_samples, r.dict_size, r.horizon));
    let checks = scaling_checks(&rows);
    Ok(ProbeRun {
        config: cfg.clone(),
        rows,
        checks,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// tables

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn table(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn pair_label(i: usize, j: usize) -> String {
    format!("{}-{}", i + 1, j + 1)
}

fn trajectory_header(scenario: &Scenario) -> Vec<String> {
    let mut h = strings(&["sample", "time"]);
    for i in 1..=scenario.vehicles.len() {
        for c in ["s", "x", "y", "v", "a"] {
            h.push(format!("{c}_{i}"));
        }
    }
    h
}

/// Rows of one trajectory; CAV accelerations are the applied inputs, HDV
/// accelerations are speed differences. The last row has no acceleration.
fn trajectory_rows(
    scenario: &Scenario,
    sample: usize,
    start: usize,
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
) -> Vec<Vec<String>> {
    let mut input_of = Vec::new();
    let mut k = 0;
    for v in &scenario.vehicles {
        input_of.push((v.role == Role::Cav).then(|| {
            k += 1;
            k - 1
        }));
    }
    states
        .iter()
        .enumerate()
        .map(|(step, x)| {
            let t = start + step;
            let mut row = vec![sample.to_string(), num(t as f64 * scenario.dt)];
            let arcs = scenario.arc_and_speed(t, x);
            let pos = scenario.positions(t, x);
            for (i, &(s, v)) in arcs.iter().enumerate() {
                let a = match (controls.get(step), input_of[i]) {
                    (Some(u), Some(k)) => u[k],
                    (Some(_), None) => (states[step + 1][2 * i + 1] - x[2 * i + 1]) / scenario.dt,
                    (None, _) => f64::NAN,
                };
                row.extend([num(s), num(pos[i][0]), num(pos[i][1]), num(v), num(a)]);
            }
            row
        })
        .collect()
}

fn distance_rows(scenario: &Scenario, sample: usize, start: usize, states: &[DVector<f64>]) -> Vec<Vec<String>> {
    let pairs = scenario.pairs();
    pairwise_distances(scenario, start, states)
        .into_iter()
        .enumerate()
        .flat_map(|(step, ds)| {
            let time = num((start + step) as f64 * scenario.dt);
            pairs
                .iter()
                .zip(ds)
                .map(|(&(i, j), d)| vec![sample.to_string(), time.clone(), pair_label(i, j), num(d)])
                .collect::<Vec<_>>()
        })
        .collect()
}

fn distance_header() -> Vec<String> {
    strings(&["sample", "time", "pair", "d_ij"])
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_metadata(dir: &Path, cfg: &RunConfig, rec: RunRecord) -> Result<()> {
    write_file(dir, "metadata.toml", &cfg.with_record(rec).to_toml_string()?)
}

pub fn write_offline(run: &OfflineRun, dir: &Path) -> Result<()> {
    prepare(dir)?;
    let imp = &run.result.improvement;
    let costs = table(
        &strings(&["index", "cost", "sum_dpi_sq", "fallbacks", "inner_iterations", "max_identity_error"]),
        imp.history.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                num(r.cost),
                num(r.sum_dpi_sq),
                r.fallbacks.to_string(),
                r.inner_iterations.iter().sum::<usize>().to_string(),
                num(r.max_identity_error),
            ]
        }),
    );
    write_file(dir, "costs.csv", &costs)?;

    let sc = &run.model.scenario;
    let batch = &run.trajectories;
    let mut traj = Vec::new();
    let mut dist = Vec::new();
    for (i, (xs, us)) in batch.states.iter().zip(&batch.controls).enumerate() {
        traj.extend(trajectory_rows(sc, i, batch.start, xs, us));
        dist.extend(distance_rows(sc, i, batch.start, xs));
    }
    write_file(dir, "trajectory.csv", &table(&trajectory_header(sc), traj))?;
    write_file(dir, "distances.csv", &table(&distance_header(), dist))?;
    write_metadata(
        dir,
        &run.config,
        record(
            &imp.status,
            run.wall_time_s,
            imp.history.iter().map(|r| r.wall_time_s).collect(),
            Some(imp.final_cost),
            run.model.warnings.clone(),
        ),
    )
}

pub fn write_online(run: &OnlineRun, dir: &Path) -> Result<()> {
    prepare(dir)?;
    let log = &run.log;
    let costs = table(
        &strings(&[
            "index",
            "phase",
            "window_cost_before",
            "window_cost_after",
            "window_iterations",
            "window_rejected",
            "id_error",
            "min_distance",
        ]),
        log.steps.iter().map(|s| {
            vec![
                s.step.to_string(),
                match s.phase {
                    Phase::Identification => "identification".into(),
                    Phase::Control => "control".into(),
                },
                opt(s.window_cost_before),
                opt(s.window_cost_after),
                s.window_iterations.to_string(),
                s.window_rejected.to_string(),
                opt(s.id_error),
                opt(s.min_distance),
            ]
        }),
    );
    write_file(dir, "costs.csv", &costs)?;

    let sc = &run.model.scenario;
    let states: Vec<DVector<f64>> = log.states.iter().map(|v| DVector::from_column_slice(v)).collect();
    let controls: Vec<DVector<f64>> = log.steps.iter().map(|s| DVector::from_column_slice(&s.control)).collect();
    write_file(dir, "trajectory.csv", &table(&trajectory_header(sc), trajectory_rows(sc, 0, 0, &states, &controls)))?;
    write_file(dir, "distances.csv", &table(&distance_header(), distance_rows(sc, 0, 0, &states)))?;
    let cost = log.closed_loop_cost(&run.model.cost, 0).ok();
    write_metadata(dir, &run.config, record(&log.status, run.wall_time_s, Vec::new(), cost, run.model.warnings.clone()))
}

fn matrix_cell(m: &DMatrix<f64>) -> String {
    // row-major, `;` between rows
    let mut s = String::new();
    for i in 0..m.nrows() {
        if i > 0 {
            s.push(';');
        }
        for j in 0..m.ncols() {
            if j > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{}", num(m[(i, j)]));
        }
    }
    s
}

pub fn write_oracle(run: &OracleRun, dir: &Path) -> Result<()> {
    prepare(dir)?;
    let rep = &run.report;
    let imp = &rep.result.improvement;
    let costs = table(
        &strings(&["index", "cost", "sum_dpi_sq"]),
        imp.history.iter().map(|r| vec![r.iteration.to_string(), num(r.cost), num(r.sum_dpi_sq)]),
    );
    write_file(dir, "costs.csv", &costs)?;
    let gains = table(
        &strings(&["stage", "gain_error", "learned_gain", "riccati_gain"]),
        (0..rep.gain_errors.len()).map(|t| {
            vec![
                t.to_string(),
                num(rep.gain_errors[t]),
                matrix_cell(&rep.learned_gains[t]),
                matrix_cell(&(-&rep.riccati_gains[t])),
            ]
        }),
    );
    write_file(dir, "gains.csv", &gains)?;
    write_file(
        dir,
        "oracle.csv",
        &table(
            &strings(&["learned_cost", "oracle_cost", "relative_gap"]),
            [vec![num(rep.learned_cost), num(rep.oracle_cost), num(rep.relative_gap)]],
        ),
    )?;
    write_metadata(
        dir,
        &run.config,
        record(
            &imp.status,
            run.wall_time_s,
            imp.history.iter().map(|r| r.wall_time_s).collect(),
            Some(rep.learned_cost),
            run.warnings.clone(),
        ),
    )
}

pub fn write_probe(run: &ProbeRun, dir: &Path) -> Result<()> {
    prepare(dir)?;
    let rows = table(
        &strings(&["mc_samples", "dict_size", "horizon", "seconds_per_iteration", "inner_iterations_per_stage"]),
        run.rows.iter().map(|r| {
            vec![
                r.mc_samples.to_string(),
                r.dict_size.to_string(),
                r.horizon.to_string(),
                num(r.seconds_per_iteration),
                num(r.inner_iterations_per_stage),
            ]
        }),
    );
    write_file(dir, "probe.csv", &rows)?;
    let warnings = run
        .checks
        .iter()
        .filter(|c| !c.within_band)
        .map(|c| format!("{} doubling ratio {:.3} outside expected band", c.axis, c.ratio))
        .collect();
    write_metadata(dir, &run.config, record(&RunStatus::MaxIterations, run.wall_time_s, Vec::new(), None, warnings))
}

/// What the command line reports after a run.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub summary: String,
    /// Nonzero exit requested (divergence).
    pub failed: bool,
}

/// Runs `mode` on a resolved configuration and writes its tables to `dir`.
pub fn execute(mode: Mode, cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    match mode {
        Mode::Offline => {
            let run = run_offline(cfg)?;
            write_offline(&run, dir)?;
            let imp = &run.result.improvement;
            let mut summary = format!(
                "offline: {} iterations, cost {:.6} -> {:.6}, status {:?}",
                imp.history.len(),
                imp.initial_cost,
                imp.final_cost,
                imp.status
            );
            for w in &run.model.warnings {
                let _ = write!(summary, "\nwarning: {w}");
            }
            Ok(Outcome {
                summary,
                failed: run.diverged(),
            })
        }
        Mode::Online => {
            let run = run_online_scenario(cfg)?;
            write_online(&run, dir)?;
            let log = &run.log;
            let min_after = log.min_distance_from(&run.model.scenario, cfg.online.n_id);
            let id = log.steps.iter().rev().find_map(|s| s.id_error);
            let mut summary = format!(
                "online: {} steps, closed-loop cost {:.6}, min distance after identification {:.4} (d_d = {}), {}",
                log.steps.len(),
                log.closed_loop_cost(&run.model.cost, 0).unwrap_or(f64::NAN),
                min_after,
                cfg.scenario.d_d,
                match &log.status {
                    RunStatus::Diverged(msg) => format!("diverged: {msg}"),
                    _ => "completed".to_string(),
                }
            );
            if let Some(e) = id {
                let _ = write!(summary, "\nidentification error {e:.3e}");
            }
            for w in &run.model.warnings {
                let _ = write!(summary, "\nwarning: {w}");
            }
            Ok(Outcome {
                summary,
                failed: run.diverged(),
            })
        }
        Mode::OracleCompare => {
            let run = run_oracle(cfg)?;
            write_oracle(&run, dir)?;
            let rep = &run.report;
            let worst = rep.gain_errors.iter().copied().fold(0.0, f64::max);
            let summary = format!(
                "oracle-compare: learned cost {:.10}, Riccati cost {:.10}, relative gap {:.3e}, max gain error {:.3e}",
                rep.learned_cost, rep.oracle_cost, rep.relative_gap, worst
            );
            Ok(Outcome {
                summary,
                failed: rep.result.improvement.status.is_diverged(),
            })
        }
        Mode::ComplexityProbe => {
            let run = run_probe(cfg)?;
            write_probe(&run, dir)?;
            let mut summary = String::from("complexity-probe:");
            for r in &run.rows {
                let _ = write!(
                    summary,
                    "\n  N={} M={} T={}: {:.4e} s/iteration",
                    r.mc_samples, r.dict_size, r.horizon, r.seconds_per_iteration
                );
            }
            for c in &run.checks {
                let _ = write!(
                    summary,
                    "\n  {} doubling: ratio {:.3} {}",
                    c.axis,
                    c.ratio,
                    if c.within_band { "ok" } else { "WARN outside band" }
                );
            }
            Ok(Outcome { summary, failed: false })
        }
    }
}
