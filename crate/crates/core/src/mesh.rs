//! Conforming triangulations of planar domains with the node patch and edge
//! structure the flux limiter works on.
//!
//! The shipped generator builds the uniform right-triangle mesh of the unit
//! square: nodes are numbered lexicographically by lattice row, then column
//! (`index = row * (M + 1) + col`), and every lattice cell is split along the
//! diagonal running from its bottom-left to its top-right corner. Interior
//! nodes of this mesh have six neighbours (four axis neighbours plus the two
//! along the diagonal direction) and point-symmetric patches.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::quadrature::signed_area;

/// An adjacent node together with the index of the connecting edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub node: usize,
    pub edge: usize,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<(usize, usize)>,
    boundary: Vec<bool>,
    interior_index: Vec<Option<usize>>,
    interior_nodes: Vec<usize>,
    adjacency: Vec<Vec<Neighbor>>,
    gamma: Vec<f64>,
}

impl Mesh {
    /// Builds a mesh from raw arrays, validating orientation and conformity.
    ///
    /// Triangles must be counter-clockwise. An edge shared by a single
    /// triangle must join two nodes flagged as boundary nodes.
    pub fn from_raw(nodes: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>, boundary: Vec<bool>) -> Result<Self> {
        if boundary.len() != nodes.len() {
            return Err(Error::invalid(format!(
                "boundary mask has {} entries for {} nodes",
                boundary.len(),
                nodes.len()
            )));
        }
        let mut edge_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nodes.len()) {
                return Err(Error::invalid(format!("triangle {t} references a missing node")));
            }
            let v = [nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]];
            if signed_area(&v) <= 0.0 {
                return Err(Error::invalid(format!("triangle {t} is degenerate or clockwise")));
            }
            for a in 0..3 {
                let (i, j) = (tri[a], tri[(a + 1) % 3]);
                *edge_count.entry((i.min(j), i.max(j))).or_insert(0) += 1;
            }
        }
        for (&(i, j), &count) in &edge_count {
            match count {
                1 if !(boundary[i] && boundary[j]) => {
                    return Err(Error::invalid(format!(
                        "edge ({i}, {j}) belongs to one triangle but is not on the boundary"
                    )))
                }
                1 | 2 => {}
                _ => return Err(Error::invalid(format!("edge ({i}, {j}) is shared by {count} triangles"))),
            }
        }

        let edges: Vec<(usize, usize)> = edge_count.into_keys().collect();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (e, &(i, j)) in edges.iter().enumerate() {
            adjacency[i].push(Neighbor { node: j, edge: e });
            adjacency[j].push(Neighbor { node: i, edge: e });
        }
        for list in &mut adjacency {
            list.sort_by_key(|n| n.node);
        }

        let mut interior_index = vec![None; nodes.len()];
        let mut interior_nodes = Vec::new();
        for (i, &on_boundary) in boundary.iter().enumerate() {
            if !on_boundary {
                interior_index[i] = Some(interior_nodes.len());
                interior_nodes.push(i);
            }
        }

        let gamma = vec![1.0; nodes.len()];
        Ok(Self {
            nodes,
            triangles,
            edges,
            boundary,
            interior_index,
            interior_nodes,
            adjacency,
            gamma,
        })
    }

    /// Uniform `m × m` lattice of the unit square, each cell cut by its
    /// bottom-left to top-right diagonal. `h0 = 1/m`, diameter `√2 h0`.
    pub fn unit_square(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid(format!("unit square mesh needs M >= 2, got {m}")));
        }
        let n1 = m + 1;
        let idx = |row: usize, col: usize| row * n1 + col;
        let mut nodes = Vec::with_capacity(n1 * n1);
        let mut boundary = Vec::with_capacity(n1 * n1);
        for row in 0..n1 {
            for col in 0..n1 {
                nodes.push([col as f64 / m as f64, row as f64 / m as f64]);
                boundary.push(row == 0 || col == 0 || row == m || col == m);
            }
        }
        let mut triangles = Vec::with_capacity(2 * m * m);
        for row in 0..m {
            for col in 0..m {
                let (bl, br, tl, tr) = (idx(row, col), idx(row, col + 1), idx(row + 1, col), idx(row + 1, col + 1));
                triangles.push([bl, br, tr]);
                triangles.push([bl, tr, tl]);
            }
        }
        Self::from_raw(nodes, triangles, boundary)
    }

    /// Replaces the per-node coefficients γ_i used when forming limiter bounds.
    pub fn with_gamma(mut self, gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() != self.nodes.len() {
            return Err(Error::invalid("gamma must have one entry per node"));
        }
        if gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::invalid("gamma must be finite and non-negative"));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_interior(&self) -> usize {
        self.interior_nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let tri = self.triangles[t];
        [self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]]
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    /// Position of node `i` among the interior unknowns, `None` for Dirichlet nodes.
    pub fn interior_index(&self, i: usize) -> Option<usize> {
        self.interior_index[i]
    }

    pub fn interior_index_map(&self) -> &[Option<usize>] {
        &self.interior_index
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    /// Nodes adjacent to `i`, sorted by node index.
    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.adjacency[i]
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn triangle_diameter(&self, t: usize) -> f64 {
        let v = self.triangle_vertices(t);
        (0..3)
            .map(|a| {
                let (p, q) = (v[a], v[(a + 1) % 3]);
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Mesh size `h`: the largest triangle diameter.
    pub fn h_max(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.triangle_diameter(t)).fold(0.0, f64::max)
    }

    pub fn h_min(&self) -> f64 {
        (0..self.num_triangles())
            .map(|t| self.triangle_diameter(t))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        signed_area(&self.triangle_vertices(t))
    }

    /// Minimum and maximum of `field` over node `i` and all its neighbours.
    pub fn patch_extrema(&self, field: &[f64], i: usize) -> Result<(f64, f64)> {
        if i >= self.num_nodes() {
            return Err(Error::invalid(format!("node {i} out of range ({} nodes)", self.num_nodes())));
        }
        if field.len() != self.num_nodes() {
            return Err(Error::invalid(format!(
                "field has {} values for {} nodes",
                field.len(),
                self.num_nodes()
            )));
        }
        Ok(self.patch_extrema_unchecked(field, i))
    }

    pub(crate) fn patch_extrema_unchecked(&self, field: &[f64], i: usize) -> (f64, f64) {
        let mut lo = field[i];
        let mut hi = field[i];
        for n in &self.adjacency[i] {
            let v = field[n.node];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&p| f(p)).collect()
    }

    /// Nodal interpolant of `f`, with Dirichlet nodes set to zero.
    pub fn interpolate_homogeneous(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.boundary)
            .map(|(&p, &b)| if b { 0.0 } else { f(p) })
            .collect()
    }

    /// Gathers the interior entries of an all-node vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.interior_nodes.iter().map(|&i| full[i]).collect()
    }

    /// Expands interior values to an all-node vector with zero boundary values.
    pub fn extend(&self, interior: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_nodes()];
        for (&i, &v) in self.interior_nodes.iter().zip(interior) {
            full[i] = v;
        }
        full
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_lattice_formulas() {
        for m in [2, 4, 7] {
            let mesh = Mesh::unit_square(m).unwrap();
            assert_eq!(mesh.num_nodes(), (m + 1) * (m + 1));
            assert_eq!(mesh.num_triangles(), 2 * m * m);
            assert_eq!(mesh.num_interior(), (m - 1) * (m - 1));
        }
        let mesh = Mesh::unit_square(4).unwrap();
        assert_eq!((mesh.num_nodes(), mesh.num_triangles(), mesh.num_interior()), (25, 32, 9));
    }

    #[test]
    fn two_by_two_has_only_the_centre_inside() {
        let mesh = Mesh::unit_square(2).unwrap();
        assert_eq!(mesh.interior_nodes(), &[4]);
        assert_eq!(mesh.node(4), [0.5, 0.5]);
    }

    #[test]
    fn too_coarse_is_rejected() {
        assert!(matches!(Mesh::unit_square(1), Err(Error::InvalidArgument(_))));
        assert!(Mesh::unit_square(0).is_err());
    }

    #[test]
    fn interior_nodes_have_six_neighbours() {
        let mesh = Mesh::unit_square(8).unwrap();
        let m1 = 9;
        for &i in mesh.interior_nodes() {
            let (row, col) = (i / m1, i % m1);
            let mut expected = vec![
                i - m1,
                i - m1 - 1,
                i - 1,
                i + 1,
                i + m1,
                i + m1 + 1,
            ];
            expected.sort_unstable();
            let got: Vec<usize> = mesh.neighbors(i).iter().map(|n| n.node).collect();
            assert_eq!(got, expected, "node at row {row}, col {col}");
        }
    }

    #[test]
    fn adjacency_is_symmetric_and_edges_match() {
        let mesh = Mesh::unit_square(5).unwrap();
        for i in 0..mesh.num_nodes() {
            for n in mesh.neighbors(i) {
                assert!(mesh.neighbors(n.node).iter().any(|b| b.node == i && b.edge == n.edge));
                let (a, b) = mesh.edges()[n.edge];
                assert_eq!((a, b), (i.min(n.node), i.max(n.node)));
            }
        }
    }

    #[test]
    fn areas_sum_to_one_and_mesh_is_quasiuniform() {
        let mesh = Mesh::unit_square(6).unwrap();
        let total: f64 = (0..mesh.num_triangles()).map(|t| mesh.triangle_area(t)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((mesh.h_max() / mesh.h_min() - 1.0).abs() < 1e-12);
        assert!((mesh.h_max() - 2f64.sqrt() / 6.0).abs() < 1e-14);
    }

    #[test]
    fn every_edge_has_one_or_two_triangles() {
        let mesh = Mesh::unit_square(4).unwrap();
        let mut count = vec![0; mesh.edges().len()];
        for tri in mesh.triangles() {
            for a in 0..3 {
                let (i, j) = (tri[a], tri[(a + 1) % 3]);
                let e = mesh.neighbors(i).iter().find(|n| n.node == j).unwrap().edge;
                count[e] += 1;
            }
        }
        for (e, &(i, j)) in mesh.edges().iter().enumerate() {
            let on_boundary_line = {
                let (p, q) = (mesh.node(i), mesh.node(j));
                (p[0] == q[0] && (p[0] == 0.0 || p[0] == 1.0)) || (p[1] == q[1] && (p[1] == 0.0 || p[1] == 1.0))
            };
            assert_eq!(count[e], if on_boundary_line { 1 } else { 2 });
        }
    }

    #[test]
    fn patch_extrema_examples() {
        let mesh = Mesh::unit_square(4).unwrap();
        let constant = vec![3.5; mesh.num_nodes()];
        assert_eq!(mesh.patch_extrema(&constant, 12).unwrap(), (3.5, 3.5));

        let x = mesh.interpolate(|p| p[0]);
        let centre = 12; // (0.5, 0.5)
        assert_eq!(mesh.node(centre), [0.5, 0.5]);
        let (lo, hi) = mesh.patch_extrema(&x, centre).unwrap();
        assert!((lo - 0.25).abs() < 1e-15 && (hi - 0.75).abs() < 1e-15);

        let mut spike = vec![0.0; mesh.num_nodes()];
        spike[centre] = 1.0;
        assert_eq!(mesh.patch_extrema(&spike, centre).unwrap(), (0.0, 1.0));

        assert!(mesh.patch_extrema(&spike, 25).is_err());
        assert!(mesh.patch_extrema(&spike[..3], 0).is_err());
    }

    #[test]
    fn raw_construction_rejects_bad_input() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let cw = Mesh::from_raw(nodes.clone(), vec![[0, 2, 1]], vec![true; 3]);
        assert!(cw.is_err());
        let open = Mesh::from_raw(nodes.clone(), vec![[0, 1, 2]], vec![true, true, false]);
        assert!(open.is_err());
        let ok = Mesh::from_raw(nodes, vec![[0, 1, 2]], vec![true; 3]).unwrap();
        assert_eq!(ok.edges().len(), 3);
    }
}
