//! Configuration-driven experiments: convergence studies, layer runs with
//! field snapshots, and limiter diagnostics.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{fill_orders, h1_error, l2_error, oscillation_indicator, write_error_csv, ErrorRecord};
use crate::assembly::FemOperators;
use crate::error::{Error, Result};
use crate::limiter::{
    fluxes_adjoint_diffusion, fluxes_mass, fluxes_state_diffusion, kuzmin_factors, q_coefficients, write_factors_csv,
    EdgeWeights, FluxKind,
};
use crate::mesh::Mesh;
use crate::ocp::{solve_ocp, InitialState, OcpConfig, OuterReport, Trajectory};
use crate::problems::{builtin_problem, Coefficients, ProblemSpec};
use crate::sparse::SolverOptions;
use crate::stepper::Limiting;

/// Environment variable holding the number of worker threads.
pub const WORKERS_ENV: &str = "AFC_OCP_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Afc,
    Galerkin,
    LowOrder,
}

impl Scheme {
    pub fn limiting(self) -> Limiting {
        match self {
            Scheme::Afc => Limiting::Afc,
            Scheme::Galerkin => Limiting::Galerkin,
            Scheme::LowOrder => Limiting::LowOrder,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Afc => "afc",
            Scheme::Galerkin => "galerkin",
            Scheme::LowOrder => "low_order",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// `convergence`, `interior_layer`, `boundary_layer`, `traveling_wave` or `custom`.
    pub name: String,
    /// Final time; defaults to the problem's own horizon.
    pub horizon: Option<f64>,
    // Coefficients of a custom problem.
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub velocity: Option<[f64; 2]>,
    pub bounds: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    /// Number of intervals per side, `h₀ = 1/M`.
    pub sizes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    /// Fixed time step.
    pub k: Option<f64>,
    /// Time step proportional to the mesh size, `k = k_factor · h₀`.
    pub k_factor: Option<f64>,
}

fn default_outer_tol() -> f64 {
    1e-6
}
fn default_max_outer() -> usize {
    100
}
fn default_inner_tol() -> f64 {
    1e-10
}
fn default_max_inner() -> usize {
    50
}
fn default_linear_tol() -> f64 {
    1e-10
}
fn default_load_degree() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_outer_tol")]
    pub outer_tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "default_max_inner")]
    pub max_inner: usize,
    #[serde(default = "default_linear_tol")]
    pub linear_tol: f64,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default = "default_load_degree")]
    pub load_degree: usize,
    /// Quadrature degree of the error norms; 7 for layer problems, 4 otherwise.
    pub error_degree: Option<usize>,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            scheme: Scheme::Afc,
            outer_tol: default_outer_tol(),
            max_outer: default_max_outer(),
            inner_tol: default_inner_tol(),
            max_inner: default_max_inner(),
            linear_tol: default_linear_tol(),
            initial_state: InitialState::Ritz,
            load_degree: default_load_degree(),
            error_degree: None,
        }
    }
}

fn default_directory() -> PathBuf {
    PathBuf::from("output")
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_true")]
    pub vtk: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            vtk: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub mesh: MeshSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh.sizes.is_empty() {
            return Err(Error::Config("mesh.sizes must not be empty".into()));
        }
        if let Some(m) = self.mesh.sizes.iter().find(|&&m| m < 2) {
            return Err(Error::Config(format!("mesh size {m} is below 2")));
        }
        match (self.time.k, self.time.k_factor) {
            (Some(k), None) if k > 0.0 => {}
            (None, Some(f)) if f > 0.0 => {}
            (Some(_), Some(_)) => return Err(Error::Config("set only one of time.k and time.k_factor".into())),
            (None, None) => return Err(Error::Config("one of time.k or time.k_factor is required".into())),
            _ => return Err(Error::Config("time step must be positive".into())),
        }
        let s = &self.solver;
        if !(s.outer_tol > 0.0 && s.inner_tol > 0.0 && s.linear_tol > 0.0) || s.max_outer == 0 || s.max_inner == 0 {
            return Err(Error::Config("solver tolerances and iteration caps must be positive".into()));
        }
        self.problem().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        if p.name == "custom" {
            let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::Config(format!("custom problem needs problem.{key}")));
            let bounds = p.bounds.ok_or_else(|| Error::Config("custom problem needs problem.bounds".into()))?;
            return ProblemSpec::custom(Coefficients {
                mu: need(p.mu, "mu")?,
                lambda: need(p.lambda, "lambda")?,
                velocity: p.velocity.ok_or_else(|| Error::Config("custom problem needs problem.velocity".into()))?,
                bounds: (bounds[0], bounds[1]),
                horizon: need(p.horizon, "horizon")?,
            });
        }
        if p.mu.is_some() || p.lambda.is_some() || p.velocity.is_some() || p.bounds.is_some() {
            return Err(Error::Config(format!(
                "coefficients can only be set for the custom problem, not '{}'",
                p.name
            )));
        }
        builtin_problem(&p.name, p.horizon)
    }

    pub fn time_step(&self, m: usize) -> f64 {
        match (self.time.k, self.time.k_factor) {
            (Some(k), _) => k,
            (None, Some(f)) => f / m as f64,
            (None, None) => unreachable!("validated"),
        }
    }

    pub fn error_degree(&self) -> usize {
        self.solver.error_degree.unwrap_or(match self.problem.name.as_str() {
            "interior_layer" | "boundary_layer" | "traveling_wave" => 7,
            _ => 4,
        })
    }

    pub fn ocp_config(&self, m: usize) -> OcpConfig {
        let s = &self.solver;
        OcpConfig {
            k: self.time_step(m),
            inner_tol: s.inner_tol,
            max_inner: s.max_inner,
            solver: SolverOptions {
                tol: s.linear_tol,
                ..SolverOptions::default()
            },
            limiting: s.scheme.limiting(),
            outer_tol: s.outer_tol,
            max_outer: s.max_outer,
            initial_state: s.initial_state,
            load_degree: s.load_degree,
            track_cost: false,
        }
    }
}

/// Runs `f` on a pool sized by [`WORKERS_ENV`], or rayon's default.
fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelSummary {
    pub m: usize,
    pub h0: f64,
    pub k: f64,
    pub report: OuterReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceStudy {
    pub problem: String,
    pub scheme: Scheme,
    pub state: Vec<ErrorRecord>,
    pub costate: Vec<ErrorRecord>,
    /// `‖P⁰ - p̄(·, t₁)‖`; the first backward step pairs `P⁰` with the data at `t₁`.
    pub costate_first_step: Vec<ErrorRecord>,
    pub control: Vec<ErrorRecord>,
    pub levels: Vec<LevelSummary>,
}

struct LevelResult {
    state: ErrorRecord,
    costate: ErrorRecord,
    costate_first_step: ErrorRecord,
    control: ErrorRecord,
    summary: LevelSummary,
}

fn solve_level(cfg: &ExperimentConfig, problem: &ProblemSpec, m: usize) -> Result<(Mesh, Trajectory, OuterReport)> {
    let mesh = Mesh::unit_square(m)?;
    let (traj, report) = solve_ocp(problem, &mesh, &cfg.ocp_config(m))?;
    log::info!(
        "M = {m}: {} outer iterations, {:.1} s",
        report.iterations,
        report.wall_clock_seconds
    );
    Ok((mesh, traj, report))
}

fn level_errors(cfg: &ExperimentConfig, problem: &ProblemSpec, m: usize) -> Result<LevelResult> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::Config(format!("problem '{}' has no exact solution", problem.name)))?;
    let (mesh, traj, report) = solve_level(cfg, problem, m)?;
    let deg = cfg.error_degree();
    let h0 = 1.0 / m as f64;
    let n0 = traj.num_steps();
    let (tn, k) = (traj.times[n0], report.k);
    let (y, p) = (&exact.state, &exact.costate);
    let state = ErrorRecord::new(
        h0,
        k,
        l2_error(&mesh, &traj.state[n0], |x| y.value(x, tn), deg),
        h1_error(&mesh, &traj.state[n0], |x| y.value(x, tn), |x| y.grad(x, tn), deg),
        deg,
    );
    let costate = ErrorRecord::new(
        h0,
        k,
        l2_error(&mesh, &traj.costate[0], |x| p.value(x, 0.0), deg),
        h1_error(&mesh, &traj.costate[0], |x| p.value(x, 0.0), |x| p.grad(x, 0.0), deg),
        deg,
    );
    let t1 = traj.times[1];
    let costate_first_step = ErrorRecord::new(
        h0,
        k,
        l2_error(&mesh, &traj.costate[0], |x| p.value(x, t1), deg),
        h1_error(&mesh, &traj.costate[0], |x| p.value(x, t1), |x| p.grad(x, t1), deg),
        deg,
    );
    let control = ErrorRecord::new(
        h0,
        k,
        l2_error(&mesh, traj.control_at(1), |x| exact.control(x, t1), deg),
        h1_error(&mesh, traj.control_at(1), |x| exact.control(x, t1), |x| exact.control_grad(x, t1), deg),
        deg,
    );
    Ok(LevelResult {
        state,
        costate,
        costate_first_step,
        control,
        summary: LevelSummary { m, h0, k, report },
    })
}

/// Solves every configured mesh level and evaluates the errors of
/// `Y^{N₀}`, `P⁰` and `U¹` against the exact solution.
pub fn convergence_study(cfg: &ExperimentConfig) -> Result<ConvergenceStudy> {
    let problem = cfg.problem()?;
    let mut sizes = cfg.mesh.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let results: Vec<Result<LevelResult>> =
        with_pool(|| sizes.par_iter().map(|&m| level_errors(cfg, &problem, m)).collect())?;
    let mut study = ConvergenceStudy {
        problem: problem.name.clone(),
        scheme: cfg.solver.scheme,
        state: Vec::new(),
        costate: Vec::new(),
        costate_first_step: Vec::new(),
        control: Vec::new(),
        levels: Vec::new(),
    };
    for r in results {
        let r = r?;
        study.state.push(r.state);
        study.costate.push(r.costate);
        study.costate_first_step.push(r.costate_first_step);
        study.control.push(r.control);
        study.levels.push(r.summary);
    }
    fill_orders(&mut study.state);
    fill_orders(&mut study.costate);
    fill_orders(&mut study.costate_first_step);
    fill_orders(&mut study.control);
    Ok(study)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes `state.csv`, `costate.csv`, `costate_first_step.csv`, `control.csv`
/// and `summary.json`.
pub fn write_convergence_outputs(study: &ConvergenceStudy, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_error_csv(&study.state, create(&dir.join("state.csv"))?)?;
    write_error_csv(&study.costate, create(&dir.join("costate.csv"))?)?;
    write_error_csv(&study.costate_first_step, create(&dir.join("costate_first_step.csv"))?)?;
    write_error_csv(&study.control, create(&dir.join("control.csv"))?)?;
    fs::write(dir.join("summary.json"), to_json(study))?;
    Ok(())
}

pub fn run_convergence_study(cfg: &ExperimentConfig) -> Result<ConvergenceStudy> {
    let study = convergence_study(cfg)?;
    write_convergence_outputs(&study, &cfg.output.directory)?;
    Ok(study)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

/// Undershoot and overshoot of a field sequence against exact ranges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Oscillation {
    pub undershoot: f64,
    pub overshoot: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerRun {
    pub m: usize,
    pub h0: f64,
    pub k: f64,
    pub scheme: Scheme,
    /// Against the exact state at every time level; `None` without an exact solution.
    pub state: Option<Oscillation>,
    pub costate: Option<Oscillation>,
    pub state_l2_error: Option<f64>,
    pub costate_l2_error: Option<f64>,
    pub report: OuterReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerReport {
    pub problem: String,
    pub runs: Vec<LayerRun>,
}

/// Range of `f` sampled on a lattice four times finer than the mesh.
fn exact_range(m: usize, f: impl Fn([f64; 2]) -> f64) -> (f64, f64) {
    let n = 4 * m;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..=n {
        for j in 0..=n {
            let v = f([j as f64 / n as f64, i as f64 / n as f64]);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

fn oscillation(m: usize, fields: &[Vec<f64>], times: &[f64], exact: impl Fn([f64; 2], f64) -> f64) -> Oscillation {
    let mut o = Oscillation {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        ..Oscillation::default()
    };
    for (f, &t) in fields.iter().zip(times) {
        let (lo, hi) = exact_range(m, |x| exact(x, t));
        let (u, v) = oscillation_indicator(f, lo, hi);
        o.undershoot = o.undershoot.max(u);
        o.overshoot = o.overshoot.max(v);
        o.min = f.iter().copied().fold(o.min, f64::min);
        o.max = f.iter().copied().fold(o.max, f64::max);
    }
    o
}

/// One solve per configured mesh size, with oscillation diagnostics.
pub fn layer_runs(cfg: &ExperimentConfig) -> Result<(ProblemSpec, Vec<(Mesh, Trajectory, LayerRun)>)> {
    let problem = cfg.problem()?;
    let results: Vec<Result<(Mesh, Trajectory, LayerRun)>> = with_pool(|| {
        cfg.mesh
            .sizes
            .par_iter()
            .map(|&m| {
                let (mesh, traj, report) = solve_level(cfg, &problem, m)?;
                let deg = cfg.error_degree();
                let n0 = traj.num_steps();
                let (state, costate, se, ce) = match &problem.exact {
                    Some(ex) => {
                        // skip the fixed initial and terminal levels
                        let s = oscillation(m, &traj.state[1..], &traj.times[1..], |x, t| ex.state.value(x, t));
                        let c = oscillation(m, &traj.costate[..n0], &traj.times[..n0], |x, t| ex.costate.value(x, t));
                        let tn = traj.times[n0];
                        let se = l2_error(&mesh, &traj.state[n0], |x| ex.state.value(x, tn), deg);
                        let ce = l2_error(&mesh, &traj.costate[0], |x| ex.costate.value(x, 0.0), deg);
                        (Some(s), Some(c), Some(se), Some(ce))
                    }
                    None => (None, None, None, None),
                };
                let run = LayerRun {
                    m,
                    h0: 1.0 / m as f64,
                    k: report.k,
                    scheme: cfg.solver.scheme,
                    state,
                    costate,
                    state_l2_error: se,
                    costate_l2_error: ce,
                    report,
                };
                Ok((mesh, traj, run))
            })
            .collect()
    })?;
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((problem, runs))
}

/// Writes snapshots of `(Y, P, U)` at the initial and final time levels.
pub fn write_snapshots(dir: &Path, scheme: Scheme, problem: &ProblemSpec, mesh: &Mesh, traj: &Trajectory, m: usize) -> Result<()> {
    let n0 = traj.num_steps();
    let tag = format!("{}_m{m}", scheme.name());
    let snaps = [
        ("initial", &traj.state[0], &traj.costate[0], traj.control_at(1)),
        ("final", &traj.state[n0], &traj.costate[n0], traj.control_at(n0)),
    ];
    for (when, y, p, u) in snaps {
        let path = dir.join(format!("{tag}_{when}.vtk"));
        crate::vtk::write_vtk(
            mesh,
            &format!("{} {tag} {when}", problem.name),
            &[("state", y), ("costate", p), ("control", u)],
            create(&path)?,
        )?;
    }
    if let Some(ex) = &problem.exact {
        for (when, ty, tu) in [("initial", 0.0, traj.times[1]), ("final", traj.times[n0], traj.times[n0])] {
            let y = mesh.interpolate(|x| ex.state.value(x, ty));
            let p = mesh.interpolate(|x| ex.costate.value(x, ty));
            let u = mesh.interpolate(|x| ex.control(x, tu));
            let path = dir.join(format!("exact_m{m}_{when}.vtk"));
            crate::vtk::write_vtk(mesh, &format!("{} exact {when}", problem.name), &[("state", &y), ("costate", &p), ("control", &u)], create(&path)?)?;
        }
    }
    Ok(())
}

/// Solves each configured level, writes VTK snapshots and `layer_report.json`.
pub fn run_layer_experiment(cfg: &ExperimentConfig) -> Result<LayerReport> {
    let (problem, runs) = layer_runs(cfg)?;
    let dir = &cfg.output.directory;
    fs::create_dir_all(dir)?;
    let mut report = LayerReport {
        problem: problem.name.clone(),
        runs: Vec::new(),
    };
    for (mesh, traj, run) in runs {
        if cfg.output.vtk {
            write_snapshots(dir, cfg.solver.scheme, &problem, &mesh, &traj, run.m)?;
        }
        report.runs.push(run);
    }
    fs::write(dir.join("layer_report.json"), to_json(&report))?;
    Ok(report)
}

/// Solves on the first configured mesh and writes the correction factors of
/// all four flux families at the converged trajectory:
///
/// - state diffusion and mass fluxes at `Y^{N₀}` (mass against `Y^{N₀-1}`),
/// - co-state diffusion and mass fluxes at `P⁰` (mass against `P¹`).
pub fn run_limiter_dump(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let problem = cfg.problem()?;
    let m = cfg.mesh.sizes[0];
    let (mesh, traj, report) = solve_level(cfg, &problem, m)?;
    let n0 = traj.num_steps();
    let b = &problem.velocity;
    let ops = FemOperators::assemble(&mesh, |x, t| b(x, t), traj.times[n0]);
    let d = EdgeWeights::from_operator(&mesh, &ops.diffusion);
    let dh = EdgeWeights::from_operator(&mesh, &ops.diffusion_hat);
    let mw = EdgeWeights::from_operator(&mesh, &ops.mass);
    let (qd, qdh, qm) = (q_coefficients(&mesh, &d), q_coefficients(&mesh, &dh), q_coefficients(&mesh, &mw));
    let y = &traj.state[n0];
    let y_prev = &traj.state[n0 - 1];
    let p = &traj.costate[0];
    let p_next = &traj.costate[1];
    let sets = [
        (fluxes_state_diffusion(&mesh, &d, y), y, &qd),
        (fluxes_mass(&mesh, &mw, FluxKind::StateMass, y, y_prev), y, &qm),
        (fluxes_adjoint_diffusion(&mesh, &dh, p), p, &qdh),
        (fluxes_mass(&mesh, &mw, FluxKind::AdjointMass, p, p_next), p, &qm),
    ];
    let dir = &cfg.output.directory;
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (fluxes, data, q) in sets {
        let factors = kuzmin_factors(&mesh, &fluxes, data, q)?;
        let name = serde_json::to_value(fluxes.kind())
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let path = dir.join(format!("factors_{name}.csv"));
        write_factors_csv(&mesh, &fluxes, &factors, create(&path)?)?;
        paths.push(path);
    }
    fs::write(dir.join("outer_report.json"), report.to_json())?;
    Ok(paths)
}
