//! Assembly of the P1 finite element operators.
//!
//! All operators are assembled over every node of the mesh. Systems are
//! restricted to the interior unknowns only when they are composed, so row
//! and column sums needed by the limiter see the full stencil.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::TriangleRule;
use crate::sparse::SparseOperator;

/// Gradients of the three barycentric basis functions on a triangle.
fn basis_gradients(v: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let area2 = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        g[a] = [(v[b][1] - v[c][1]) / area2, (v[c][0] - v[b][0]) / area2];
    }
    (g, 0.5 * area2)
}

/// Consistent mass matrix `m_ij = (φ_i, φ_j)`.
pub fn assemble_mass(mesh: &Mesh) -> SparseOperator {
    let mut t = Vec::with_capacity(9 * mesh.num_triangles());
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(k);
        for a in 0..3 {
            for b in 0..3 {
                let w = if a == b { area / 6.0 } else { area / 12.0 };
                t.push((tri[a], tri[b], w));
            }
        }
    }
    SparseOperator::from_triplets(mesh.num_nodes(), t).expect("mesh indices are valid")
}

/// Diagonal operator holding the row sums of `mass`.
pub fn lump_mass(mass: &SparseOperator) -> SparseOperator {
    SparseOperator::diagonal(&mass.row_sums())
}

/// Stiffness matrix `s_ij = (∇φ_i, ∇φ_j)`.
pub fn assemble_stiffness(mesh: &Mesh) -> SparseOperator {
    let mut t = Vec::with_capacity(9 * mesh.num_triangles());
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let (g, area) = basis_gradients(&mesh.triangle_vertices(k));
        for a in 0..3 {
            for b in 0..3 {
                t.push((tri[a], tri[b], area * (g[a][0] * g[b][0] + g[a][1] * g[b][1])));
            }
        }
    }
    SparseOperator::from_triplets(mesh.num_nodes(), t).expect("mesh indices are valid")
}

/// Convection matrix `τ_ij = (b·∇φ_j, φ_i)` at time `t`, integrated with the
/// degree-2 rule (exact for affine `b`).
pub fn assemble_convection(mesh: &Mesh, velocity: impl Fn([f64; 2], f64) -> [f64; 2], t: f64) -> SparseOperator {
    let rule = TriangleRule::of_degree(2);
    let mut trip = Vec::with_capacity(9 * mesh.num_triangles());
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let v = mesh.triangle_vertices(k);
        let (g, area) = basis_gradients(&v);
        let mut local = [[0.0; 3]; 3];
        for (lam, w) in rule.iter() {
            let x = crate::quadrature::barycentric_to_cartesian(&v, lam);
            let b = velocity(x, t);
            for i in 0..3 {
                for j in 0..3 {
                    local[i][j] += area * w * (b[0] * g[j][0] + b[1] * g[j][1]) * lam[i];
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], local[i][j]));
            }
        }
    }
    SparseOperator::from_triplets(mesh.num_nodes(), trip).expect("mesh indices are valid")
}

fn diffusion_from(convection: &SparseOperator, pick: fn(f64, f64) -> f64) -> SparseOperator {
    let off = convection.map_values(|i, j, tij| {
        if i == j {
            0.0
        } else {
            pick(-tij, -convection.get(j, i))
        }
    });
    let sums = off.row_sums();
    off.map_values(|i, j, v| if i == j { -sums[i] } else { v })
}

/// Artificial diffusion `d_ij = min{-τ_ij, 0, -τ_ji}`, `d_ii = -Σ_{j≠i} d_ij`.
pub fn artificial_diffusion(convection: &SparseOperator) -> SparseOperator {
    diffusion_from(convection, |a, b| a.min(0.0).min(b))
}

/// Artificial diffusion `d̂_ij = max{-τ_ij, 0, -τ_ji}`, `d̂_ii = -Σ_{j≠i} d̂_ij`.
pub fn artificial_diffusion_hat(convection: &SparseOperator) -> SparseOperator {
    diffusion_from(convection, |a, b| a.max(0.0).max(b))
}

/// Load vector `r_i = ∫ f φ_i` with a rule of the given polynomial degree.
pub fn load_vector(mesh: &Mesh, f: impl Fn([f64; 2]) -> f64, degree: usize) -> Vec<f64> {
    let rule = TriangleRule::of_degree(degree);
    let mut r = vec![0.0; mesh.num_nodes()];
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let v = mesh.triangle_vertices(k);
        let area = mesh.triangle_area(k);
        for (lam, w) in rule.iter() {
            let fx = f(crate::quadrature::barycentric_to_cartesian(&v, lam));
            for a in 0..3 {
                r[tri[a]] += area * w * fx * lam[a];
            }
        }
    }
    r
}

/// Load vector of `∫ ∇v·∇φ_i` for a field given by its gradient.
pub fn gradient_load_vector(mesh: &Mesh, grad: impl Fn([f64; 2]) -> [f64; 2], degree: usize) -> Vec<f64> {
    let rule = TriangleRule::of_degree(degree);
    let mut r = vec![0.0; mesh.num_nodes()];
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let v = mesh.triangle_vertices(k);
        let (g, area) = basis_gradients(&v);
        for (lam, w) in rule.iter() {
            let gv = grad(crate::quadrature::barycentric_to_cartesian(&v, lam));
            for a in 0..3 {
                r[tri[a]] += area * w * (gv[0] * g[a][0] + gv[1] * g[a][1]);
            }
        }
    }
    r
}

/// Vertex-quadrature inner product `(u, v)_h = Σ_i (M_L)_ii u_i v_i`.
pub fn lumped_inner_product(lumped: &SparseOperator, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != lumped.dim() || v.len() != lumped.dim() {
        return Err(Error::invalid("lumped inner product: length mismatch"));
    }
    Ok(lumped.diag().iter().zip(u).zip(v).map(|((m, a), b)| m * a * b).sum())
}

/// Coefficients of the modified L² projection `(P̃ v, χ)_h = (v, χ)`: the
/// diagonal solve `M_L⁻¹ r(v)`.
pub fn modified_l2_projection(lumped: &SparseOperator, load: &[f64]) -> Vec<f64> {
    lumped.diag().iter().zip(load).map(|(m, r)| r / m).collect()
}

/// The operators of one time level. Mass, lumped mass and stiffness are
/// time independent and shared between levels.
#[derive(Clone, Debug)]
pub struct FemOperators {
    pub mass: Arc<SparseOperator>,
    pub lumped: Arc<SparseOperator>,
    pub stiffness: Arc<SparseOperator>,
    pub convection: SparseOperator,
    pub diffusion: SparseOperator,
    pub diffusion_hat: SparseOperator,
    /// Time at which `convection`, `diffusion` and `diffusion_hat` were built.
    pub time: f64,
}

impl FemOperators {
    pub fn assemble(mesh: &Mesh, velocity: impl Fn([f64; 2], f64) -> [f64; 2], t: f64) -> Self {
        let mass = assemble_mass(mesh);
        let lumped = lump_mass(&mass);
        let stiffness = assemble_stiffness(mesh);
        Self::with_static(mesh, Arc::new(mass), Arc::new(lumped), Arc::new(stiffness), velocity, t)
    }

    fn with_static(
        mesh: &Mesh,
        mass: Arc<SparseOperator>,
        lumped: Arc<SparseOperator>,
        stiffness: Arc<SparseOperator>,
        velocity: impl Fn([f64; 2], f64) -> [f64; 2],
        t: f64,
    ) -> Self {
        let convection = assemble_convection(mesh, velocity, t);
        let diffusion = artificial_diffusion(&convection);
        let diffusion_hat = artificial_diffusion_hat(&convection);
        Self {
            mass,
            lumped,
            stiffness,
            convection,
            diffusion,
            diffusion_hat,
            time: t,
        }
    }

    /// Reassembles the transport part at a new time, reusing the static part.
    pub fn at_time(&self, mesh: &Mesh, velocity: impl Fn([f64; 2], f64) -> [f64; 2], t: f64) -> Self {
        Self::with_static(
            mesh,
            Arc::clone(&self.mass),
            Arc::clone(&self.lumped),
            Arc::clone(&self.stiffness),
            velocity,
            t,
        )
    }

    pub fn lumped_diag(&self) -> Vec<f64> {
        self.lumped.diag()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-13;

    fn centre(mesh: &Mesh) -> usize {
        mesh.nodes().iter().position(|p| p == &[0.5, 0.5]).unwrap()
    }

    #[test]
    fn mass_matrix_entries_on_uniform_mesh() {
        let m = 4;
        let h0 = 1.0 / m as f64;
        let mesh = Mesh::unit_square(m).unwrap();
        let mass = assemble_mass(&mesh);
        let c = centre(&mesh);
        // six incident triangles of area h0²/2, each contributing |K|/6
        assert!((mass.get(c, c) - h0 * h0 / 2.0).abs() < EPS);
        // axis neighbour shares two triangles: 2 · |K|/12
        assert!((mass.get(c, c + 1) - h0 * h0 / 12.0).abs() < EPS);
        let total: f64 = mass.iter().map(|(_, _, v)| v).sum();
        assert!((total - 1.0).abs() < EPS);
        let lumped = lump_mass(&mass);
        for (row, d) in mass.row_sums().iter().zip(lumped.diag()) {
            assert_eq!(*row, d);
        }
    }

    #[test]
    fn lumped_mass_interior_corner_and_trace() {
        let m = 8;
        let h0 = 1.0 / m as f64;
        let mesh = Mesh::unit_square(m).unwrap();
        let lumped = lump_mass(&assemble_mass(&mesh));
        let d = lumped.diag();
        for &i in mesh.interior_nodes() {
            assert!((d[i] - h0 * h0).abs() < EPS);
        }
        // bottom-right corner touches a single triangle
        assert!((d[m] - h0 * h0 / 6.0).abs() < EPS);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < EPS);
    }

    #[test]
    fn stiffness_stencil_and_null_space() {
        let mesh = Mesh::unit_square(6).unwrap();
        let s = assemble_stiffness(&mesh);
        let n1 = 7;
        for &i in mesh.interior_nodes() {
            assert!((s.get(i, i) - 4.0).abs() < EPS);
            for j in [i - 1, i + 1, i - n1, i + n1] {
                assert!((s.get(i, j) + 1.0).abs() < EPS);
            }
            for j in [i - n1 - 1, i + n1 + 1] {
                assert!(s.get(i, j).abs() < EPS);
            }
        }
        let sv = s.matvec(&vec![2.5; mesh.num_nodes()]).unwrap();
        assert!(sv.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn convection_zero_velocity_and_constant_rows() {
        let mesh = Mesh::unit_square(4).unwrap();
        let t0 = assemble_convection(&mesh, |_, _| [0.0, 0.0], 0.0);
        assert!(t0.iter().all(|(_, _, v)| v == 0.0));
        let t = assemble_convection(&mesh, |_, _| [2.0, 3.0], 0.0);
        let ones = t.matvec(&vec![1.0; mesh.num_nodes()]).unwrap();
        for &i in mesh.interior_nodes() {
            assert!(ones[i].abs() < 1e-14);
        }
    }

    #[test]
    fn convection_is_skew_on_interior_pairs() {
        let mesh = Mesh::unit_square(6).unwrap();
        for b in [[2.0, 3.0], [-1.0, 0.5]] {
            let t = assemble_convection(&mesh, |_, _| b, 0.0);
            for &i in mesh.interior_nodes() {
                for n in mesh.neighbors(i) {
                    if !mesh.is_boundary(n.node) {
                        assert!((t.get(i, n.node) + t.get(n.node, i)).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn diffusion_direct_formula() {
        let tau = SparseOperator::from_triplets(2, vec![(0, 1, 1.0), (1, 0, -1.0), (0, 0, 0.0), (1, 1, 0.0)]).unwrap();
        let d = artificial_diffusion(&tau);
        assert_eq!(d.get(0, 1), -1.0);
        assert_eq!(d.get(1, 0), -1.0);
        assert_eq!(d.get(0, 0), 1.0);
        let dh = artificial_diffusion_hat(&tau);
        assert_eq!(dh.get(0, 1), 1.0);
        assert_eq!(dh.get(1, 0), 1.0);
        assert_eq!(dh.get(1, 1), -1.0);

        let zero = tau.zeros_like();
        assert!(artificial_diffusion(&zero).iter().all(|(_, _, v)| v == 0.0));
        assert!(artificial_diffusion_hat(&zero).iter().all(|(_, _, v)| v == 0.0));
    }

    #[test]
    fn diffusion_matrices_for_constant_velocity() {
        let mesh = Mesh::unit_square(8).unwrap();
        let t = assemble_convection(&mesh, |_, _| [2.0, 3.0], 0.0);
        let d = artificial_diffusion(&t);
        let dh = artificial_diffusion_hat(&t);
        for (row, sum) in d.row_sums().iter().enumerate() {
            assert!(sum.abs() < 1e-14, "row {row}");
        }
        for (i, j, v) in d.iter() {
            assert!((v - d.get(j, i)).abs() < 1e-15);
            if i != j {
                assert!(v <= 0.0);
                let expected = (-t.get(i, j)).min(0.0).min(-t.get(j, i));
                assert_eq!(v, expected);
            }
        }
        for &i in mesh.interior_nodes() {
            for n in mesh.neighbors(i) {
                if !mesh.is_boundary(n.node) {
                    let j = n.node;
                    assert!((dh.get(i, j) + d.get(i, j)).abs() < 1e-14);
                    assert!((dh.get(i, j) - t.get(i, j).abs()).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn load_vector_basics() {
        let mesh = Mesh::unit_square(4).unwrap();
        assert!(load_vector(&mesh, |_| 0.0, 4).iter().all(|&v| v == 0.0));
        let ones = load_vector(&mesh, |_| 1.0, 4);
        let lumped = lump_mass(&assemble_mass(&mesh)).diag();
        for (a, b) in ones.iter().zip(&lumped) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn lumped_inner_product_properties() {
        let mesh = Mesh::unit_square(4).unwrap();
        let ml = lump_mass(&assemble_mass(&mesh));
        let n = mesh.num_nodes();
        let mut phi_i = vec![0.0; n];
        let mut phi_j = vec![0.0; n];
        phi_i[6] = 1.0;
        phi_j[7] = 1.0;
        assert_eq!(lumped_inner_product(&ml, &phi_i, &phi_j).unwrap(), 0.0);
        let one = vec![1.0; n];
        assert!((lumped_inner_product(&ml, &one, &one).unwrap() - 1.0).abs() < EPS);
        assert!(lumped_inner_product(&ml, &phi_i, &phi_i).unwrap() > 0.0);
        assert_eq!(lumped_inner_product(&ml, &vec![0.0; n], &vec![0.0; n]).unwrap(), 0.0);
        assert!(lumped_inner_product(&ml, &one[..3], &one).is_err());
    }

    #[test]
    fn modified_projection_reproduces_moments() {
        let mesh = Mesh::unit_square(8).unwrap();
        let ml = lump_mass(&assemble_mass(&mesh));
        let f = |p: [f64; 2]| (3.0 * p[0]).sin() + p[1] * p[1];
        let r = load_vector(&mesh, f, 4);
        let proj = modified_l2_projection(&ml, &r);
        for i in 0..mesh.num_nodes() {
            let mut chi = vec![0.0; mesh.num_nodes()];
            chi[i] = 1.0;
            let lhs = lumped_inner_product(&ml, &proj, &chi).unwrap();
            assert!((lhs - r[i]).abs() < 1e-12);
        }
    }
}
