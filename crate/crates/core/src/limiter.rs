//! Antidiffusive fluxes and the Kuzmin limiter.
//!
//! Fluxes live on the undirected edges of the mesh in the order of
//! [`Mesh::edges`]. The stored value is `p_ij` for `i < j`; the reverse
//! orientation is `p_ji = -p_ij`.

use std::io::Write;

use serde::Serialize;

use crate::assembly::FemOperators;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::SparseOperator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxKind {
    StateDiffusion,
    AdjointDiffusion,
    StateMass,
    AdjointMass,
}

/// Values of a symmetric operator on the mesh edges.
#[derive(Clone, Debug)]
pub struct EdgeWeights {
    values: Vec<f64>,
}

impl EdgeWeights {
    pub fn from_operator(mesh: &Mesh, op: &SparseOperator) -> Self {
        Self {
            values: mesh.edges().iter().map(|&(i, j)| op.get(i, j)).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Debug)]
pub struct FluxSet {
    kind: FluxKind,
    values: Vec<f64>,
}

impl FluxSet {
    pub fn new(kind: FluxKind, values: Vec<f64>) -> Self {
        Self { kind, values }
    }

    pub fn kind(&self) -> FluxKind {
        self.kind
    }

    /// Flux on edge `e` in its stored orientation (smaller index first).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `p_ij` seen from node `from` along edge `e`.
    #[inline]
    pub fn oriented(&self, mesh: &Mesh, e: usize, from: usize) -> f64 {
        if mesh.edges()[e].0 == from {
            self.values[e]
        } else {
            -self.values[e]
        }
    }
}

/// `f_ij = d_ij (α_j - α_i)`.
pub fn fluxes_state_diffusion(mesh: &Mesh, d: &EdgeWeights, alpha: &[f64]) -> FluxSet {
    let values = mesh
        .edges()
        .iter()
        .zip(&d.values)
        .map(|(&(i, j), w)| w * (alpha[j] - alpha[i]))
        .collect();
    FluxSet::new(FluxKind::StateDiffusion, values)
}

/// `f̂_ij = d̂_ij (β_i - β_j)`.
pub fn fluxes_adjoint_diffusion(mesh: &Mesh, d_hat: &EdgeWeights, beta: &[f64]) -> FluxSet {
    let values = mesh
        .edges()
        .iter()
        .zip(&d_hat.values)
        .map(|(&(i, j), w)| w * (beta[i] - beta[j]))
        .collect();
    FluxSet::new(FluxKind::AdjointDiffusion, values)
}

/// `g_ij = m_ij ((δ_i - δ_j) - (δ⁰_i - δ⁰_j))` for the current and previous fields.
pub fn fluxes_mass(mesh: &Mesh, m: &EdgeWeights, kind: FluxKind, new: &[f64], old: &[f64]) -> FluxSet {
    let values = mesh
        .edges()
        .iter()
        .zip(&m.values)
        .map(|(&(i, j), w)| w * ((new[i] - new[j]) - (old[i] - old[j])))
        .collect();
    FluxSet::new(kind, values)
}

/// `q_i = γ_i Σ_j |w_ij|` at interior nodes, zero on the boundary.
pub fn q_coefficients(mesh: &Mesh, weights: &EdgeWeights) -> Vec<f64> {
    (0..mesh.num_nodes())
        .map(|i| {
            if mesh.is_boundary(i) {
                0.0
            } else {
                mesh.gamma()[i] * mesh.neighbors(i).iter().map(|n| weights.values[n.edge].abs()).sum::<f64>()
            }
        })
        .collect()
}

/// q coefficients for the operator that generates fluxes of `kind`.
pub fn q_for_kind(mesh: &Mesh, kind: FluxKind, ops: &FemOperators) -> Vec<f64> {
    let op = match kind {
        FluxKind::StateDiffusion => &ops.diffusion,
        FluxKind::AdjointDiffusion => &ops.diffusion_hat,
        FluxKind::StateMass | FluxKind::AdjointMass => ops.mass.as_ref(),
    };
    q_coefficients(mesh, &EdgeWeights::from_operator(mesh, op))
}

#[derive(Clone, Debug)]
pub struct CorrectionFactors {
    kind: FluxKind,
    values: Vec<f64>,
}

impl CorrectionFactors {
    pub fn ones(kind: FluxKind, num_edges: usize) -> Self {
        Self {
            kind,
            values: vec![1.0; num_edges],
        }
    }

    pub fn zeros(kind: FluxKind, num_edges: usize) -> Self {
        Self {
            kind,
            values: vec![0.0; num_edges],
        }
    }

    pub fn kind(&self) -> FluxKind {
        self.kind
    }

    /// Factor per edge, symmetric by construction.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Nodal limiter sums `P_i^±`, bounds `Q_i^±` and ratios `R_i^±`.
#[derive(Clone, Debug)]
pub struct NodalLimits {
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
    pub q_plus: Vec<f64>,
    pub q_minus: Vec<f64>,
    pub r_plus: Vec<f64>,
    pub r_minus: Vec<f64>,
}

/// Steps 1 and 2 of the limiter for every interior node.
pub fn nodal_limits(mesh: &Mesh, fluxes: &FluxSet, data: &[f64], q: &[f64]) -> Result<NodalLimits> {
    let n = mesh.num_nodes();
    if data.len() != n || q.len() != n {
        return Err(Error::invalid("limiter: nodal data length does not match the mesh"));
    }
    if fluxes.values.len() != mesh.edges().len() {
        return Err(Error::invalid("limiter: flux count does not match the edge count"));
    }
    let mut lim = NodalLimits {
        p_plus: vec![0.0; n],
        p_minus: vec![0.0; n],
        q_plus: vec![0.0; n],
        q_minus: vec![0.0; n],
        r_plus: vec![1.0; n],
        r_minus: vec![1.0; n],
    };
    for &i in mesh.interior_nodes() {
        if q[i] < 0.0 {
            return Err(Error::invalid(format!("limiter: negative q at interior node {i}")));
        }
        let (mut pp, mut pm) = (0.0, 0.0);
        for nb in mesh.neighbors(i) {
            let p = fluxes.oriented(mesh, nb.edge, i);
            if p > 0.0 {
                pp += p;
            } else {
                pm += p;
            }
        }
        let (lo, hi) = mesh.patch_extrema_unchecked(data, i);
        let qp = q[i] * (hi - data[i]);
        let qm = q[i] * (lo - data[i]);
        lim.p_plus[i] = pp;
        lim.p_minus[i] = pm;
        lim.q_plus[i] = qp;
        lim.q_minus[i] = qm;
        if pp > 0.0 {
            lim.r_plus[i] = (qp / pp).min(1.0);
        }
        if pm < 0.0 {
            lim.r_minus[i] = (qm / pm).min(1.0);
        }
    }
    Ok(lim)
}

/// Correction factors of the Kuzmin limiter. `data` supplies the nodal
/// values whose local extrema bound the fluxes.
pub fn kuzmin_factors(mesh: &Mesh, fluxes: &FluxSet, data: &[f64], q: &[f64]) -> Result<CorrectionFactors> {
    let lim = nodal_limits(mesh, fluxes, data, q)?;
    let side = |node: usize, p: f64| -> f64 {
        if mesh.is_boundary(node) || p == 0.0 {
            1.0
        } else if p > 0.0 {
            lim.r_plus[node]
        } else {
            lim.r_minus[node]
        }
    };
    let values = mesh
        .edges()
        .iter()
        .zip(&fluxes.values)
        .map(|(&(i, j), &p)| side(i, p).min(side(j, -p)))
        .collect();
    Ok(CorrectionFactors {
        kind: fluxes.kind,
        values,
    })
}

/// `f̄_i = Σ_{j≠i} a_ij p_ij` at every node.
pub fn correction_term(mesh: &Mesh, fluxes: &FluxSet, factors: &CorrectionFactors) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_nodes()];
    for ((&(i, j), p), a) in mesh.edges().iter().zip(&fluxes.values).zip(&factors.values) {
        let v = a * p;
        out[i] += v;
        out[j] -= v;
    }
    out
}

/// `Σ_{i<j} w_ij (1 - a_ij) (v_i - v_j)(z_i - z_j)`.
pub fn stabilization_form(mesh: &Mesh, weights: &EdgeWeights, factors: &CorrectionFactors, v: &[f64], z: &[f64]) -> f64 {
    mesh.edges()
        .iter()
        .zip(&weights.values)
        .zip(&factors.values)
        .map(|((&(i, j), w), a)| w * (1.0 - a) * (v[i] - v[j]) * (z[i] - z[j]))
        .sum()
}

/// Writes one CSV row `i,j,flux,a_ij` per edge.
pub fn write_factors_csv<W: Write>(mesh: &Mesh, fluxes: &FluxSet, factors: &CorrectionFactors, mut w: W) -> std::io::Result<()> {
    writeln!(w, "i,j,flux,a_ij")?;
    for ((&(i, j), p), a) in mesh.edges().iter().zip(&fluxes.values).zip(&factors.values) {
        writeln!(w, "{i},{j},{p:.16e},{a:.16e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::FemOperators;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(m: usize, b: [f64; 2]) -> (Mesh, FemOperators) {
        let mesh = Mesh::unit_square(m).unwrap();
        let ops = FemOperators::assemble(&mesh, |_, _| b, 0.0);
        (mesh, ops)
    }

    fn random_field(rng: &mut ChaCha8Rng, mesh: &Mesh) -> Vec<f64> {
        (0..mesh.num_nodes())
            .map(|i| if mesh.is_boundary(i) { 0.0 } else { rng.gen_range(-1.0..1.0) })
            .collect()
    }

    #[test]
    fn fluxes_vanish_for_constant_data() {
        let (mesh, ops) = setup(4, [2.0, 3.0]);
        let c = vec![1.7; mesh.num_nodes()];
        let d = EdgeWeights::from_operator(&mesh, &ops.diffusion);
        let dh = EdgeWeights::from_operator(&mesh, &ops.diffusion_hat);
        let m = EdgeWeights::from_operator(&mesh, &ops.mass);
        assert!(fluxes_state_diffusion(&mesh, &d, &c).values().iter().all(|&v| v == 0.0));
        assert!(fluxes_adjoint_diffusion(&mesh, &dh, &c).values().iter().all(|&v| v == 0.0));
        let z = vec![0.3; mesh.num_nodes()];
        assert!(fluxes_mass(&mesh, &m, FluxKind::StateMass, &c, &z).values().iter().all(|&v| v.abs() < 1e-18));
        assert!(fluxes_mass(&mesh, &m, FluxKind::StateMass, &c, &c).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn state_flux_direct_formula() {
        let (mesh, _) = setup(2, [0.0, 0.0]);
        let w = EdgeWeights {
            values: vec![-1.0; mesh.edges().len()],
        };
        let (i, j) = mesh.edges()[0];
        let mut alpha = vec![0.0; mesh.num_nodes()];
        alpha[j] = 2.0;
        let f = fluxes_state_diffusion(&mesh, &w, &alpha);
        assert_eq!(f.oriented(&mesh, 0, i), -2.0);
        assert_eq!(f.oriented(&mesh, 0, j), 2.0);
    }

    #[test]
    fn mass_flux_uniform_entry() {
        let m = 4;
        let h0 = 1.0 / m as f64;
        let (mesh, ops) = setup(m, [0.0, 0.0]);
        let w = EdgeWeights::from_operator(&mesh, &ops.mass);
        let centre = 12;
        let e = mesh.neighbors(centre).iter().find(|n| n.node == centre + 1).unwrap().edge;
        let mut new = vec![0.0; mesh.num_nodes()];
        new[centre] = 1.0;
        let g = fluxes_mass(&mesh, &w, FluxKind::StateMass, &new, &vec![0.0; mesh.num_nodes()]);
        assert!((g.oriented(&mesh, e, centre) - h0 * h0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn row_sums_reproduce_operator_products() {
        let (mesh, ops) = setup(4, [2.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_field(&mut rng, &mesh);
        let b = random_field(&mut rng, &mesh);
        let ne = mesh.edges().len();

        let d = EdgeWeights::from_operator(&mesh, &ops.diffusion);
        let f = fluxes_state_diffusion(&mesh, &d, &a);
        let fbar = correction_term(&mesh, &f, &CorrectionFactors::ones(f.kind(), ne));
        let da = ops.diffusion.matvec(&a).unwrap();
        for (x, y) in fbar.iter().zip(&da) {
            assert!((x - y).abs() < 1e-14);
        }

        let dh = EdgeWeights::from_operator(&mesh, &ops.diffusion_hat);
        let fh = fluxes_adjoint_diffusion(&mesh, &dh, &a);
        let fbar = correction_term(&mesh, &fh, &CorrectionFactors::ones(fh.kind(), ne));
        let dha = ops.diffusion_hat.matvec(&a).unwrap();
        for (x, y) in fbar.iter().zip(&dha) {
            assert!((x + y).abs() < 1e-14);
        }

        let m = EdgeWeights::from_operator(&mesh, &ops.mass);
        let g = fluxes_mass(&mesh, &m, FluxKind::StateMass, &a, &b);
        let gbar = correction_term(&mesh, &g, &CorrectionFactors::ones(g.kind(), ne));
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let ml = ops.lumped.matvec(&diff).unwrap();
        let mm = ops.mass.matvec(&diff).unwrap();
        for i in 0..mesh.num_nodes() {
            assert!((gbar[i] - (ml[i] - mm[i])).abs() < 1e-15);
        }

        let zero = correction_term(&mesh, &g, &CorrectionFactors::zeros(g.kind(), ne));
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn q_for_mass_and_scaling() {
        let m = 8;
        let h0 = 1.0 / m as f64;
        let (mesh, ops) = setup(m, [2.0, 3.0]);
        let q = q_for_kind(&mesh, FluxKind::StateMass, &ops);
        for i in 0..mesh.num_nodes() {
            if mesh.is_boundary(i) {
                assert_eq!(q[i], 0.0);
            } else {
                assert!((q[i] - h0 * h0 / 2.0).abs() < 1e-15);
            }
        }
        let zero = EdgeWeights {
            values: vec![0.0; mesh.edges().len()],
        };
        assert!(q_coefficients(&mesh, &zero).iter().all(|&v| v == 0.0));
        let scaled = mesh.clone().with_gamma(vec![2.5; mesh.num_nodes()]).unwrap();
        let q2 = q_for_kind(&scaled, FluxKind::StateMass, &ops);
        for (a, b) in q.iter().zip(&q2) {
            assert!((2.5 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_fluxes_give_unit_factors() {
        let (mesh, ops) = setup(4, [2.0, 3.0]);
        let f = FluxSet::new(FluxKind::StateDiffusion, vec![0.0; mesh.edges().len()]);
        let q = q_for_kind(&mesh, FluxKind::StateDiffusion, &ops);
        let a = kuzmin_factors(&mesh, &f, &vec![0.0; mesh.num_nodes()], &q).unwrap();
        assert!(a.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn negative_q_is_rejected() {
        let (mesh, _) = setup(4, [2.0, 3.0]);
        let f = FluxSet::new(FluxKind::StateDiffusion, vec![0.0; mesh.edges().len()]);
        let mut q = vec![0.0; mesh.num_nodes()];
        q[12] = -1.0;
        assert!(kuzmin_factors(&mesh, &f, &vec![0.0; mesh.num_nodes()], &q).is_err());
    }

    #[test]
    fn random_inputs_satisfy_limiter_properties() {
        let (mesh, ops) = setup(8, [2.0, 3.0]);
        let d = EdgeWeights::from_operator(&mesh, &ops.diffusion);
        let q = q_for_kind(&mesh, FluxKind::StateDiffusion, &ops);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let v = random_field(&mut rng, &mesh);
            let f = fluxes_state_diffusion(&mesh, &d, &v);
            let a = kuzmin_factors(&mesh, &f, &v, &q).unwrap();
            assert!(a.values().iter().all(|&x| (0.0..=1.0).contains(&x)));
            let fbar = correction_term(&mesh, &f, &a);
            let lim = nodal_limits(&mesh, &f, &v, &q).unwrap();
            for &i in mesh.interior_nodes() {
                assert!(lim.q_minus[i] - 1e-15 <= fbar[i] && fbar[i] <= lim.q_plus[i] + 1e-15);
            }
            assert!(fbar.iter().sum::<f64>().abs() < 1e-13);
            let again = kuzmin_factors(&mesh, &f, &v, &q).unwrap();
            assert_eq!(a.values(), again.values());
        }
    }

    #[test]
    fn affine_data_is_not_limited() {
        let (mesh, ops) = setup(8, [2.0, 3.0]);
        let d = EdgeWeights::from_operator(&mesh, &ops.diffusion);
        let q = q_for_kind(&mesh, FluxKind::StateDiffusion, &ops);
        let v = mesh.interpolate(|p| p[0] + 2.0 * p[1]);
        let f = fluxes_state_diffusion(&mesh, &d, &v);
        let a = kuzmin_factors(&mesh, &f, &v, &q).unwrap();
        for (e, &(i, j)) in mesh.edges().iter().enumerate() {
            if !mesh.is_boundary(i) && !mesh.is_boundary(j) {
                assert!((a.values()[e] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spike_blocks_outgoing_fluxes() {
        let (mesh, ops) = setup(4, [2.0, 3.0]);
        let q = q_for_kind(&mesh, FluxKind::StateDiffusion, &ops);
        let spike = 12;
        let mut data = vec![0.0; mesh.num_nodes()];
        data[spike] = 1.0;
        let mut values = vec![0.0; mesh.edges().len()];
        for nb in mesh.neighbors(spike) {
            // positive flux leaving the spike
            values[nb.edge] = if mesh.edges()[nb.edge].0 == spike { 1.0 } else { -1.0 };
        }
        let f = FluxSet::new(FluxKind::StateDiffusion, values);
        let a = kuzmin_factors(&mesh, &f, &data, &q).unwrap();
        for nb in mesh.neighbors(spike) {
            assert_eq!(a.values()[nb.edge], 0.0);
        }
    }

    #[test]
    fn stabilization_form_identity_and_sign() {
        let (mesh, ops) = setup(6, [2.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = EdgeWeights::from_operator(&mesh, &ops.diffusion);
        let dh = EdgeWeights::from_operator(&mesh, &ops.diffusion_hat);
        let q = q_for_kind(&mesh, FluxKind::StateDiffusion, &ops);
        for _ in 0..10 {
            let v = random_field(&mut rng, &mesh);
            let z = random_field(&mut rng, &mesh);
            let f = fluxes_state_diffusion(&mesh, &d, &v);
            let a = kuzmin_factors(&mesh, &f, &v, &q).unwrap();
            let fbar = correction_term(&mesh, &f, &a);
            let dv = ops.diffusion.matvec(&v).unwrap();
            let lhs: f64 = dv.iter().zip(&fbar).zip(&z).map(|((x, y), w)| (x - y) * w).sum();
            let form = stabilization_form(&mesh, &d, &a, &v, &z);
            assert!((lhs + form).abs() < 1e-12);
            assert!(-stabilization_form(&mesh, &d, &a, &v, &v) >= 0.0);
            assert!(stabilization_form(&mesh, &dh, &a, &v, &v) >= 0.0);
        }
    }

    #[test]
    fn csv_dump_has_one_row_per_edge() {
        let (mesh, _) = setup(2, [0.0, 0.0]);
        let f = FluxSet::new(FluxKind::StateMass, vec![0.5; mesh.edges().len()]);
        let a = CorrectionFactors::ones(FluxKind::StateMass, mesh.edges().len());
        let mut buf = Vec::new();
        write_factors_csv(&mesh, &f, &a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), mesh.edges().len() + 1);
        assert!(text.starts_with("i,j,flux,a_ij\n"));
    }
}
