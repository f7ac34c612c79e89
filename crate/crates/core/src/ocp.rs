//! The outer fixed-point loop: full forward state sweeps alternating with
//! full backward co-state sweeps and control updates.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{l2_error, ritz_projection};
use crate::assembly::{load_vector, FemOperators};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::problems::ProblemSpec;
use crate::sparse::{norm_max, SolverOptions};
use crate::stepper::{adjoint_forcing, adjoint_step, clamp_control, state_forcing, state_step, LevelOperators, Limiting, PicardReport, StepConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Ritz projection of the initial datum.
    #[default]
    Ritz,
    /// Nodal interpolation with zero boundary values.
    Interpolation,
}

#[derive(Clone, Copy, Debug)]
pub struct OcpConfig {
    /// Requested time step; rounded down so that it divides the horizon.
    pub k: f64,
    pub inner_tol: f64,
    pub max_inner: usize,
    pub solver: SolverOptions,
    pub limiting: Limiting,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub initial_state: InitialState,
    /// Quadrature degree for the load vectors of the source and desired state.
    pub load_degree: usize,
    /// Evaluate the cost functional after every outer iteration.
    pub track_cost: bool,
}

impl OcpConfig {
    pub fn new(k: f64) -> Self {
        Self {
            k,
            inner_tol: 1e-10,
            max_inner: 50,
            solver: SolverOptions::default(),
            limiting: Limiting::Afc,
            outer_tol: 1e-6,
            max_outer: 100,
            initial_state: InitialState::Ritz,
            load_degree: 4,
            track_cost: false,
        }
    }
}

/// Number of steps and the adjusted step for horizon `t` and requested `k`.
pub fn time_grid(horizon: f64, k: f64) -> Result<(usize, f64)> {
    if !(k > 0.0 && horizon > 0.0) {
        return Err(Error::invalid(format!("need positive horizon and time step, got T = {horizon}, k = {k}")));
    }
    let n0 = ((horizon / k) - 1e-9).ceil().max(1.0) as usize;
    Ok((n0, horizon / n0 as f64))
}

/// Discrete state, co-state and control over the uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `Y⁰ … Y^{N₀}`
    pub state: Vec<Vec<f64>>,
    /// `P⁰ … P^{N₀}`
    pub costate: Vec<Vec<f64>>,
    /// `U¹ … U^{N₀}`; `control[n - 1]` is `Uⁿ`.
    pub control: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn zeros(num_nodes: usize, times: Vec<f64>) -> Self {
        let n0 = times.len() - 1;
        Self {
            state: vec![vec![0.0; num_nodes]; n0 + 1],
            costate: vec![vec![0.0; num_nodes]; n0 + 1],
            control: vec![vec![0.0; num_nodes]; n0],
            times,
        }
    }

    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// `Uⁿ` for `1 ≤ n ≤ N₀`.
    pub fn control_at(&self, n: usize) -> &[f64] {
        &self.control[n - 1]
    }

    /// Checks the terminal condition and the control bounds.
    pub fn check(&self, bounds: (f64, f64)) -> Result<()> {
        if self.costate.last().is_some_and(|p| p.iter().any(|&v| v != 0.0)) {
            return Err(Error::invalid("terminal co-state is not zero"));
        }
        if self.control.iter().flatten().any(|&u| u < bounds.0 || u > bounds.1) {
            return Err(Error::invalid("control violates its bounds"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PicardStats {
    pub state_iterations: usize,
    pub adjoint_iterations: usize,
    pub max_state_iterations: usize,
    pub max_adjoint_iterations: usize,
    pub max_residual: f64,
}

impl PicardStats {
    fn add_state(&mut self, r: &PicardReport) {
        self.state_iterations += r.iterations;
        self.max_state_iterations = self.max_state_iterations.max(r.iterations);
        self.max_residual = self.max_residual.max(r.residual);
    }

    fn add_adjoint(&mut self, r: &PicardReport) {
        self.adjoint_iterations += r.iterations;
        self.max_adjoint_iterations = self.max_adjoint_iterations.max(r.iterations);
        self.max_residual = self.max_residual.max(r.residual);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OuterIteration {
    /// Relative change of the state.
    pub a: f64,
    /// Relative change of the co-state.
    pub b: f64,
    /// Relative change of the control.
    pub gamma: f64,
    pub cost: Option<f64>,
    pub picard: PicardStats,
}

impl OuterIteration {
    pub fn max_metric(&self) -> f64 {
        self.a.max(self.b).max(self.gamma)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OuterReport {
    pub iterations: usize,
    pub converged: bool,
    pub tolerance: f64,
    pub time_steps: usize,
    pub k: f64,
    pub history: Vec<OuterIteration>,
    pub wall_clock_seconds: f64,
}

impl OuterReport {
    pub fn last_max_metric(&self) -> f64 {
        self.history.last().map_or(f64::NAN, OuterIteration::max_metric)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

const FLOOR: f64 = 1e-14;

fn relative_change(new: &[Vec<f64>], old: &[Vec<f64>]) -> f64 {
    new.iter()
        .zip(old)
        .map(|(a, b)| {
            let d = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            d / norm_max(a).max(FLOOR)
        })
        .fold(0.0, f64::max)
}

/// Operators for every time level, built once when the velocity is autonomous.
enum Levels<'a> {
    Fixed(Box<LevelOperators>),
    Varying {
        mesh: &'a Mesh,
        problem: &'a ProblemSpec,
        base: FemOperators,
        cfg: StepConfig,
    },
}

impl Levels<'_> {
    fn at(&self, t: f64) -> Result<std::borrow::Cow<'_, LevelOperators>> {
        match self {
            Levels::Fixed(l) => Ok(std::borrow::Cow::Borrowed(l.as_ref())),
            Levels::Varying {
                mesh,
                problem,
                base,
                cfg,
            } => {
                let b = &problem.velocity;
                let ops = base.at_time(mesh, |x, s| b(x, s), t);
                Ok(std::borrow::Cow::Owned(LevelOperators::new(mesh, ops, problem.mu, cfg)?))
            }
        }
    }
}

/// Solves the discrete optimality system starting from the zero control.
pub fn solve_ocp(problem: &ProblemSpec, mesh: &Mesh, cfg: &OcpConfig) -> Result<(Trajectory, OuterReport)> {
    solve_ocp_inner(problem, mesh, cfg, None)
}

/// Solves starting from a previous trajectory: its control is the initial
/// guess and its fields are the reference for the first metrics.
pub fn solve_ocp_from(problem: &ProblemSpec, mesh: &Mesh, cfg: &OcpConfig, warm: &Trajectory) -> Result<(Trajectory, OuterReport)> {
    solve_ocp_inner(problem, mesh, cfg, Some(warm))
}

fn solve_ocp_inner(problem: &ProblemSpec, mesh: &Mesh, cfg: &OcpConfig, warm: Option<&Trajectory>) -> Result<(Trajectory, OuterReport)> {
    problem.validate()?;
    let start = Instant::now();
    let (n0, k) = time_grid(problem.horizon, cfg.k)?;
    let times: Vec<f64> = (0..=n0).map(|n| n as f64 * k).collect();
    let step = StepConfig {
        k,
        inner_tol: cfg.inner_tol,
        max_inner: cfg.max_inner,
        solver: cfg.solver,
        limiting: cfg.limiting,
    };
    step.validate()?;
    if let Some(w) = warm {
        if w.times.len() != n0 + 1 || w.state.iter().any(|v| v.len() != mesh.num_nodes()) {
            return Err(Error::invalid("warm-start trajectory does not match the time grid or mesh"));
        }
    }
    let (ua, ub) = problem.bounds;
    let b = &problem.velocity;
    let base = FemOperators::assemble(mesh, |x, s| b(x, s), 0.0);
    let levels = if problem.autonomous {
        Levels::Fixed(Box::new(LevelOperators::new(mesh, base, problem.mu, &step)?))
    } else {
        Levels::Varying {
            mesh,
            problem,
            base,
            cfg: step,
        }
    };

    let mut source_loads = vec![Vec::new(); n0 + 1];
    let mut desired_loads = vec![Vec::new(); n0 + 1];
    for n in 1..=n0 {
        let t = times[n];
        source_loads[n] = load_vector(mesh, |x| (problem.source)(x, t), cfg.load_degree);
        desired_loads[n] = load_vector(mesh, |x| (problem.desired)(x, t), cfg.load_degree);
    }
    let y0 = match (cfg.initial_state, &problem.initial_grad) {
        (InitialState::Ritz, Some(g)) => ritz_projection(mesh, |x| g(x), cfg.load_degree, cfg.solver.tol)?,
        (InitialState::Ritz, None) => {
            log::warn!("no initial gradient available; interpolating the initial state");
            mesh.interpolate_homogeneous(|x| (problem.initial)(x))
        }
        (InitialState::Interpolation, _) => mesh.interpolate_homogeneous(|x| (problem.initial)(x)),
    };

    let mut old = warm.cloned().unwrap_or_else(|| Trajectory::zeros(mesh.num_nodes(), times.clone()));
    let mut cur = old.clone();
    cur.state[0] = y0;
    cur.costate[n0] = vec![0.0; mesh.num_nodes()];
    if warm.is_none() {
        cur.control.iter_mut().for_each(|u| u.fill(0.0));
    }

    let mut history = Vec::new();
    for it in 1..=cfg.max_outer {
        let mut stats = PicardStats::default();
        for n in 1..=n0 {
            let level = levels.at(times[n])?;
            let forcing = state_forcing(&level.ops, k, &cur.control[n - 1], &source_loads[n])?;
            let (alpha, rep) = state_step(mesh, &level, &cur.state[n - 1], &forcing, &step, n)?;
            stats.add_state(&rep);
            cur.state[n] = alpha;
        }
        for n in (1..=n0).rev() {
            let level = levels.at(times[n - 1])?;
            let forcing = adjoint_forcing(level.lumped(), k, &cur.state[n], &desired_loads[n]);
            let (beta, rep) = adjoint_step(mesh, &level, &cur.costate[n], &forcing, &step, n)?;
            stats.add_adjoint(&rep);
            cur.control[n - 1] = clamp_control(&beta, problem.lambda, ua, ub)?;
            cur.costate[n - 1] = beta;
        }
        let record = OuterIteration {
            a: relative_change(&cur.state, &old.state),
            b: relative_change(&cur.costate, &old.costate),
            gamma: relative_change(&cur.control, &old.control),
            cost: cfg.track_cost.then(|| cost_functional(&cur, problem, mesh, cfg.load_degree)),
            picard: stats,
        };
        log::info!(
            "outer iteration {it}: A = {:.3e}, B = {:.3e}, Γ = {:.3e}",
            record.a,
            record.b,
            record.gamma
        );
        let done = record.max_metric() <= cfg.outer_tol;
        history.push(record);
        if done {
            let report = OuterReport {
                iterations: it,
                converged: true,
                tolerance: cfg.outer_tol,
                time_steps: n0,
                k,
                history,
                wall_clock_seconds: start.elapsed().as_secs_f64(),
            };
            cur.check(problem.bounds)?;
            return Ok((cur, report));
        }
        old.clone_from(&cur);
    }
    Err(Error::OuterNonConvergence {
        report: Box::new(OuterReport {
            iterations: cfg.max_outer,
            converged: false,
            tolerance: cfg.outer_tol,
            time_steps: n0,
            k,
            history,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        }),
    })
}

/// `½ Σₙ k (‖Yⁿ - y_d(tⁿ)‖² + λ ‖Uⁿ‖²)`, right-endpoint rule in time.
pub fn cost_functional(traj: &Trajectory, problem: &ProblemSpec, mesh: &Mesh, degree: usize) -> f64 {
    let mut j = 0.0;
    for n in 1..traj.times.len() {
        let t = traj.times[n];
        let k = t - traj.times[n - 1];
        let ey = l2_error(mesh, &traj.state[n], |x| (problem.desired)(x, t), degree);
        let eu = l2_error(mesh, &traj.control[n - 1], |_| 0.0, degree);
        j += k * (ey * ey + problem.lambda * eu * eu);
    }
    0.5 * j
}
