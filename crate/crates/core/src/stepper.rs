//! One forward state step and one backward co-state step of the stabilized
//! scheme, each resolved by a Picard iteration on the correction factors.
//!
//! Vectors passed in and out are all-node fields whose Dirichlet entries are
//! zero. The linear systems act on interior unknowns only.

use serde::{Deserialize, Serialize};

use crate::assembly::FemOperators;
use crate::error::{Error, Result, StepKind};
use crate::limiter::{
    correction_term, fluxes_adjoint_diffusion, fluxes_mass, fluxes_state_diffusion, kuzmin_factors, q_coefficients,
    CorrectionFactors, EdgeWeights, FluxKind, FluxSet,
};
use crate::mesh::Mesh;
use crate::sparse::{norm2, norm_max, LinearSystem, SolverOptions, SparseOperator};

/// How correction factors are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Limiting {
    /// Kuzmin limiter, recomputed every Picard iteration.
    #[default]
    Afc,
    /// All factors pinned to 1: the consistent-mass Galerkin scheme.
    Galerkin,
    /// All factors 0: the low-order scheme.
    LowOrder,
}

#[derive(Clone, Copy, Debug)]
pub struct StepConfig {
    pub k: f64,
    /// Relative max-norm increment at which the Picard iteration stops.
    pub inner_tol: f64,
    pub max_inner: usize,
    pub solver: SolverOptions,
    pub limiting: Limiting,
}

impl StepConfig {
    pub fn new(k: f64) -> Self {
        Self {
            k,
            inner_tol: 1e-10,
            max_inner: 50,
            solver: SolverOptions::default(),
            limiting: Limiting::Afc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {}", self.k)));
        }
        if !(self.inner_tol > 0.0) {
            return Err(Error::invalid("inner tolerance must be positive"));
        }
        if self.max_inner == 0 {
            return Err(Error::invalid("at least one inner iteration is required"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PicardReport {
    pub iterations: usize,
    /// Final relative max-norm increment.
    pub increment: f64,
    /// Relative 2-norm residual of the nonlinear equation at the returned iterate.
    pub residual: f64,
}

const FLOOR: f64 = 1e-14;

/// Everything a time level needs: operators, factorized systems, edge
/// weights and limiter coefficients.
#[derive(Clone, Debug)]
pub struct LevelOperators {
    pub ops: FemOperators,
    pub k: f64,
    pub mu: f64,
    state: LinearSystem,
    adjoint: LinearSystem,
    state_galerkin: Option<LinearSystem>,
    adjoint_galerkin: Option<LinearSystem>,
    d: EdgeWeights,
    d_hat: EdgeWeights,
    m: EdgeWeights,
    q_d: Vec<f64>,
    q_d_hat: Vec<f64>,
    q_m: Vec<f64>,
    lumped: Vec<f64>,
}

impl LevelOperators {
    pub fn new(mesh: &Mesh, ops: FemOperators, mu: f64, cfg: &StepConfig) -> Result<Self> {
        cfg.validate()?;
        if !(mu > 0.0) {
            return Err(Error::invalid(format!("diffusion coefficient must be positive, got {mu}")));
        }
        let k = cfg.k;
        let map = mesh.interior_index_map();
        let state = SparseOperator::combine(&[
            (1.0, ops.lumped.as_ref()),
            (k * mu, ops.stiffness.as_ref()),
            (k, &ops.convection),
            (k, &ops.diffusion),
        ])?
        .restrict(map)?;
        let adjoint = SparseOperator::combine(&[
            (1.0, ops.lumped.as_ref()),
            (k * mu, ops.stiffness.as_ref()),
            (-k, &ops.convection),
            (-k, &ops.diffusion_hat),
        ])?
        .restrict(map)?;
        let (state_galerkin, adjoint_galerkin) = if cfg.limiting == Limiting::Galerkin {
            let sg = SparseOperator::combine(&[
                (1.0, ops.mass.as_ref()),
                (k * mu, ops.stiffness.as_ref()),
                (k, &ops.convection),
            ])?
            .restrict(map)?;
            let ag = SparseOperator::combine(&[
                (1.0, ops.mass.as_ref()),
                (k * mu, ops.stiffness.as_ref()),
                (-k, &ops.convection),
            ])?
            .restrict(map)?;
            (
                Some(LinearSystem::new(sg, cfg.solver)),
                Some(LinearSystem::new(ag, cfg.solver)),
            )
        } else {
            (None, None)
        };
        let d = EdgeWeights::from_operator(mesh, &ops.diffusion);
        let d_hat = EdgeWeights::from_operator(mesh, &ops.diffusion_hat);
        let m = EdgeWeights::from_operator(mesh, &ops.mass);
        let q_d = q_coefficients(mesh, &d);
        let q_d_hat = q_coefficients(mesh, &d_hat);
        let q_m = q_coefficients(mesh, &m);
        let lumped = ops.lumped.diag();
        Ok(Self {
            state: LinearSystem::new(state, cfg.solver),
            adjoint: LinearSystem::new(adjoint, cfg.solver),
            state_galerkin,
            adjoint_galerkin,
            d,
            d_hat,
            m,
            q_d,
            q_d_hat,
            q_m,
            lumped,
            ops,
            k,
            mu,
        })
    }

    /// Interior system `M_L + k(μS + T + D)`.
    pub fn state_matrix(&self) -> &SparseOperator {
        self.state.matrix()
    }

    /// Interior system `M_L + k(μS - T - D̂)`.
    pub fn adjoint_matrix(&self) -> &SparseOperator {
        self.adjoint.matrix()
    }

    pub fn lumped(&self) -> &[f64] {
        &self.lumped
    }

    fn factors(&self, mesh: &Mesh, limiting: Limiting, fluxes: &FluxSet, data: &[f64], q: &[f64]) -> Result<CorrectionFactors> {
        let ne = mesh.edges().len();
        match limiting {
            Limiting::Afc => kuzmin_factors(mesh, fluxes, data, q),
            Limiting::Galerkin => Ok(CorrectionFactors::ones(fluxes.kind(), ne)),
            Limiting::LowOrder => Ok(CorrectionFactors::zeros(fluxes.kind(), ne)),
        }
    }

    /// Right-hand side of the linearized state system at iterate `v`.
    fn state_rhs(&self, mesh: &Mesh, limiting: Limiting, v: &[f64], prev: &[f64], forcing: &[f64]) -> Result<Vec<f64>> {
        let f = fluxes_state_diffusion(mesh, &self.d, v);
        let a = self.factors(mesh, limiting, &f, v, &self.q_d)?;
        let fbar = correction_term(mesh, &f, &a);
        let g = fluxes_mass(mesh, &self.m, FluxKind::StateMass, v, prev);
        let am = self.factors(mesh, limiting, &g, v, &self.q_m)?;
        let gbar = correction_term(mesh, &g, &am);
        Ok((0..mesh.num_nodes())
            .map(|i| self.lumped[i] * prev[i] + forcing[i] + self.k * fbar[i] + gbar[i])
            .collect())
    }

    /// Right-hand side of the linearized adjoint system at iterate `w`.
    fn adjoint_rhs(&self, mesh: &Mesh, limiting: Limiting, w: &[f64], next: &[f64], forcing: &[f64]) -> Result<Vec<f64>> {
        let f = fluxes_adjoint_diffusion(mesh, &self.d_hat, w);
        let a = self.factors(mesh, limiting, &f, w, &self.q_d_hat)?;
        let fbar = correction_term(mesh, &f, &a);
        let g = fluxes_mass(mesh, &self.m, FluxKind::AdjointMass, w, next);
        let am = self.factors(mesh, limiting, &g, w, &self.q_m)?;
        let gbar = correction_term(mesh, &g, &am);
        Ok((0..mesh.num_nodes())
            .map(|i| self.lumped[i] * next[i] + forcing[i] + self.k * fbar[i] + gbar[i])
            .collect())
    }

    /// Relative residual of the nonlinear state equation at `alpha`.
    pub fn state_residual(&self, mesh: &Mesh, limiting: Limiting, alpha: &[f64], prev: &[f64], forcing: &[f64]) -> Result<f64> {
        let rhs = mesh.restrict(&self.state_rhs(mesh, limiting, alpha, prev, forcing)?);
        Ok(relative(&self.state, &mesh.restrict(alpha), &rhs))
    }

    /// Relative residual of the nonlinear adjoint equation at `beta`.
    pub fn adjoint_residual(&self, mesh: &Mesh, limiting: Limiting, beta: &[f64], next: &[f64], forcing: &[f64]) -> Result<f64> {
        let rhs = mesh.restrict(&self.adjoint_rhs(mesh, limiting, beta, next, forcing)?);
        Ok(relative(&self.adjoint, &mesh.restrict(beta), &rhs))
    }
}

fn relative(system: &LinearSystem, x: &[f64], rhs: &[f64]) -> f64 {
    let ax = system.matrix().matvec(x).expect("dimensions agree");
    let r: Vec<f64> = ax.iter().zip(rhs).map(|(a, b)| a - b).collect();
    let bn = norm2(rhs);
    if bn == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / bn
    }
}

fn increment(new: &[f64], old: &[f64]) -> f64 {
    let diff = new.iter().zip(old).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / norm_max(new).max(FLOOR)
}

fn picard(
    mesh: &Mesh,
    system: &LinearSystem,
    start: &[f64],
    cfg: &StepConfig,
    kind: StepKind,
    level: usize,
    time: f64,
    mut rhs: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<(Vec<f64>, PicardReport)> {
    let mut v = start.to_vec();
    let mut report = PicardReport::default();
    for it in 1..=cfg.max_inner {
        let b = mesh.restrict(&rhs(&v)?);
        let new = mesh.extend(&system.solve(&b)?);
        report.iterations = it;
        report.increment = increment(&new, &v);
        v = new;
        if report.increment <= cfg.inner_tol {
            return Ok((v, report));
        }
    }
    Err(Error::StepFailure {
        kind,
        level,
        time,
        report,
    })
}

/// Advances the state from `prev` = αⁿ⁻¹ to αⁿ. `forcing` is
/// `k (r(Uⁿ) + r(Gⁿ))` over all nodes; `level` = n is used for error context.
pub fn state_step(
    mesh: &Mesh,
    level_ops: &LevelOperators,
    prev: &[f64],
    forcing: &[f64],
    cfg: &StepConfig,
    level: usize,
) -> Result<(Vec<f64>, PicardReport)> {
    check_lengths(mesh, &[prev, forcing])?;
    let time = level as f64 * cfg.k;
    let (alpha, mut report) = if let (Limiting::Galerkin, Some(sys)) = (cfg.limiting, &level_ops.state_galerkin) {
        // Pinned factors make the equation linear; solve it directly.
        let mp = level_ops.ops.mass.matvec(prev)?;
        let b: Vec<f64> = mp.iter().zip(forcing).map(|(a, f)| a + f).collect();
        let alpha = mesh.extend(&sys.solve(&mesh.restrict(&b))?);
        (
            alpha,
            PicardReport {
                iterations: 1,
                increment: 0.0,
                residual: 0.0,
            },
        )
    } else {
        picard(mesh, &level_ops.state, prev, cfg, StepKind::State, level, time, |v| {
            level_ops.state_rhs(mesh, cfg.limiting, v, prev, forcing)
        })?
    };
    report.residual = level_ops.state_residual(mesh, cfg.limiting, &alpha, prev, forcing)?;
    Ok((alpha, report))
}

/// Steps the co-state backwards from `next` = βⁿ to βⁿ⁻¹. `forcing` is
/// `k (M_L αⁿ - r(y_dⁿ))` over all nodes; `level` = n.
pub fn adjoint_step(
    mesh: &Mesh,
    level_ops: &LevelOperators,
    next: &[f64],
    forcing: &[f64],
    cfg: &StepConfig,
    level: usize,
) -> Result<(Vec<f64>, PicardReport)> {
    check_lengths(mesh, &[next, forcing])?;
    let time = level.saturating_sub(1) as f64 * cfg.k;
    let (beta, mut report) = if let (Limiting::Galerkin, Some(sys)) = (cfg.limiting, &level_ops.adjoint_galerkin) {
        let mn = level_ops.ops.mass.matvec(next)?;
        let b: Vec<f64> = mn.iter().zip(forcing).map(|(a, f)| a + f).collect();
        let beta = mesh.extend(&sys.solve(&mesh.restrict(&b))?);
        (
            beta,
            PicardReport {
                iterations: 1,
                increment: 0.0,
                residual: 0.0,
            },
        )
    } else {
        picard(mesh, &level_ops.adjoint, next, cfg, StepKind::Adjoint, level, time, |w| {
            level_ops.adjoint_rhs(mesh, cfg.limiting, w, next, forcing)
        })?
    };
    report.residual = level_ops.adjoint_residual(mesh, cfg.limiting, &beta, next, forcing)?;
    Ok((beta, report))
}

/// Forcing of the state step: `k (r(U) + r(G))` with `r(U) = M U`.
pub fn state_forcing(ops: &FemOperators, k: f64, control: &[f64], source_load: &[f64]) -> Result<Vec<f64>> {
    let ru = ops.mass.matvec(control)?;
    Ok(ru.iter().zip(source_load).map(|(u, g)| k * (u + g)).collect())
}

/// Forcing of the adjoint step: `k (M_L α - r(y_d))`.
pub fn adjoint_forcing(lumped: &[f64], k: f64, alpha: &[f64], desired_load: &[f64]) -> Vec<f64> {
    lumped
        .iter()
        .zip(alpha)
        .zip(desired_load)
        .map(|((m, a), r)| k * (m * a - r))
        .collect()
}

/// Nodal control `Π_[u_a, u_b](-β / λ)`.
pub fn clamp_control(beta: &[f64], lambda: f64, ua: f64, ub: f64) -> Result<Vec<f64>> {
    if !(ua < ub) {
        return Err(Error::invalid(format!("control bounds must satisfy u_a < u_b, got ({ua}, {ub})")));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("regularization weight must be positive, got {lambda}")));
    }
    Ok(beta.iter().map(|b| (-b / lambda).clamp(ua, ub)).collect())
}

fn check_lengths(mesh: &Mesh, fields: &[&[f64]]) -> Result<()> {
    if fields.iter().any(|f| f.len() != mesh.num_nodes()) {
        return Err(Error::invalid("step input length does not match the mesh"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_mass, load_vector, FemOperators};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for j in c..n {
                    a[r][j] -= f * a[c][j];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|j| a[r][j] * x[j]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    fn interior_dense(mesh: &Mesh, op: &SparseOperator) -> Vec<Vec<f64>> {
        let full = op.to_dense();
        let idx = mesh.interior_nodes();
        idx.iter().map(|&i| idx.iter().map(|&j| full[i][j]).collect()).collect()
    }

    fn dense_matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
    }

    struct Fixture {
        mesh: Mesh,
        level: LevelOperators,
        cfg: StepConfig,
    }

    fn fixture(limiting: Limiting) -> Fixture {
        let mesh = Mesh::unit_square(4).unwrap();
        let ops = FemOperators::assemble(&mesh, |_, _| [2.0, 3.0], 0.0);
        let mut cfg = StepConfig::new(2.0 / 25.0 / 4.0);
        cfg.limiting = limiting;
        let level = LevelOperators::new(&mesh, ops, 1.0, &cfg).unwrap();
        Fixture { mesh, level, cfg }
    }

    fn random_interior(rng: &mut ChaCha8Rng, mesh: &Mesh) -> Vec<f64> {
        mesh.extend(&(0..mesh.num_interior()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    #[test]
    fn zero_data_gives_zero_steps() {
        let fx = fixture(Limiting::Afc);
        let z = vec![0.0; fx.mesh.num_nodes()];
        let (a, rep) = state_step(&fx.mesh, &fx.level, &z, &z, &fx.cfg, 1).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
        assert_eq!(rep.iterations, 1);
        let (b, rep) = adjoint_step(&fx.mesh, &fx.level, &z, &z, &fx.cfg, 1).unwrap();
        assert!(b.iter().all(|&v| v == 0.0));
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn pinned_factors_match_dense_galerkin() {
        // Run the Picard path with factors pinned to one (not the direct shortcut).
        let mesh = Mesh::unit_square(4).unwrap();
        let ops = FemOperators::assemble(&mesh, |_, _| [2.0, 3.0], 0.0);
        let mut cfg = StepConfig::new(0.02);
        cfg.max_inner = 500;
        cfg.inner_tol = 1e-13;
        let level = LevelOperators::new(&mesh, ops.clone(), 1.0, &cfg).unwrap();
        cfg.limiting = Limiting::Galerkin;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prev = random_interior(&mut rng, &mesh);
        let forcing = random_interior(&mut rng, &mesh);
        let (alpha, _) = state_step(&mesh, &level, &prev, &forcing, &cfg, 1).unwrap();

        let m = interior_dense(&mesh, &ops.mass);
        let s = interior_dense(&mesh, &ops.stiffness);
        let t = interior_dense(&mesh, &ops.convection);
        let n = m.len();
        let k = cfg.k;
        let a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[i][j] + k * (s[i][j] + t[i][j])).collect()).collect();
        let mp = dense_matvec(&m, &mesh.restrict(&prev));
        let b: Vec<f64> = mp.iter().zip(mesh.restrict(&forcing)).map(|(x, f)| x + f).collect();
        let oracle = dense_solve(a, b);
        for (x, y) in mesh.restrict(&alpha).iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-10);
        }

        let next = random_interior(&mut rng, &mesh);
        let (beta, _) = adjoint_step(&mesh, &level, &next, &forcing, &cfg, 1).unwrap();
        let a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[i][j] + k * (s[i][j] - t[i][j])).collect()).collect();
        let mn = dense_matvec(&m, &mesh.restrict(&next));
        let b: Vec<f64> = mn.iter().zip(mesh.restrict(&forcing)).map(|(x, f)| x + f).collect();
        let oracle = dense_solve(a, b);
        for (x, y) in mesh.restrict(&beta).iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn galerkin_shortcut_agrees_with_pinned_picard() {
        let fx = fixture(Limiting::Galerkin);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prev = random_interior(&mut rng, &fx.mesh);
        let forcing = random_interior(&mut rng, &fx.mesh);
        let (direct, rep) = state_step(&fx.mesh, &fx.level, &prev, &forcing, &fx.cfg, 1).unwrap();
        assert!(rep.residual < 1e-12);
        let pinned = fx.level.state_residual(&fx.mesh, Limiting::Galerkin, &direct, &prev, &forcing).unwrap();
        assert!(pinned < 1e-12);
    }

    #[test]
    fn afc_steps_converge_to_small_residual() {
        let fx = fixture(Limiting::Afc);
        let mesh = &fx.mesh;
        let f = |p: [f64; 2]| (std::f64::consts::PI * p[0]).sin() * (std::f64::consts::PI * p[1]).sin();
        let prev = mesh.interpolate_homogeneous(f);
        let load = load_vector(mesh, |p| 10.0 * f(p), 4);
        let mass = assemble_mass(mesh);
        let forcing = state_forcing(&fx.level.ops, fx.cfg.k, &vec![0.5; mesh.num_nodes()], &load).unwrap();
        let (alpha, rep) = state_step(mesh, &fx.level, &prev, &forcing, &fx.cfg, 1).unwrap();
        assert!(rep.increment <= fx.cfg.inner_tol);
        assert!(rep.residual <= 1e-8, "state residual {}", rep.residual);
        assert_eq!(mass.dim(), mesh.num_nodes());

        let forcing = adjoint_forcing(fx.level.lumped(), fx.cfg.k, &alpha, &load);
        let (_, rep) = adjoint_step(mesh, &fx.level, &prev, &forcing, &fx.cfg, 1).unwrap();
        assert!(rep.residual <= 1e-8, "adjoint residual {}", rep.residual);
    }

    #[test]
    fn low_order_step_preserves_sign() {
        let fx = fixture(Limiting::LowOrder);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let prev = fx.mesh.extend(&(0..fx.mesh.num_interior()).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>());
        let load = fx.mesh.extend(&(0..fx.mesh.num_interior()).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>());
        let (alpha, _) = state_step(&fx.mesh, &fx.level, &prev, &load, &fx.cfg, 1).unwrap();
        assert!(alpha.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_control(&[0.5], 1.0, -1.0, 1.0).unwrap(), vec![-0.5]);
        assert_eq!(clamp_control(&[-10.0], 1.0, -1.0, 1.0).unwrap(), vec![1.0]);
        assert!((clamp_control(&[0.3], 0.1, -5.0, -1.0).unwrap()[0] + 3.0).abs() < 1e-15);
        assert!(clamp_control(&[0.0], 1.0, 1.0, 1.0).is_err());
        assert!(clamp_control(&[0.0], 0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(StepConfig::new(0.0).validate().is_err());
        let mut c = StepConfig::new(0.1);
        c.max_inner = 0;
        assert!(c.validate().is_err());
    }
}
