//! Ritz projection, discrete error norms and convergence orders.

use std::io::Write;

use serde::Serialize;

use crate::assembly::{assemble_stiffness, gradient_load_vector};
use crate::error::Result;
use crate::mesh::Mesh;
use crate::quadrature::{barycentric_to_cartesian, TriangleRule};
use crate::sparse::{LinearSystem, SolverOptions};

/// Ritz projection of a function with zero trace, given by its gradient.
pub fn ritz_projection(mesh: &Mesh, grad: impl Fn([f64; 2]) -> [f64; 2], degree: usize, tol: f64) -> Result<Vec<f64>> {
    let s = assemble_stiffness(mesh).restrict(mesh.interior_index_map())?;
    let r = mesh.restrict(&gradient_load_vector(mesh, grad, degree));
    let sys = LinearSystem::new(
        s,
        SolverOptions {
            tol,
            ..SolverOptions::default()
        },
    );
    Ok(mesh.extend(&sys.solve(&r)?))
}

fn p1_gradient(mesh: &Mesh, t: usize, fh: &[f64]) -> [f64; 2] {
    let v = mesh.triangle_vertices(t);
    let tri = mesh.triangles()[t];
    let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    let (d1, d2) = (fh[tri[1]] - fh[tri[0]], fh[tri[2]] - fh[tri[0]]);
    [
        (d1 * (v[2][1] - v[0][1]) - d2 * (v[1][1] - v[0][1])) / det,
        (d2 * (v[1][0] - v[0][0]) - d1 * (v[2][0] - v[0][0])) / det,
    ]
}

/// `‖f_h - f‖_{L²}` with the given quadrature degree.
pub fn l2_error(mesh: &Mesh, fh: &[f64], exact: impl Fn([f64; 2]) -> f64, degree: usize) -> f64 {
    let rule = TriangleRule::of_degree(degree);
    let mut sum = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let v = mesh.triangle_vertices(t);
        let area = mesh.triangle_area(t);
        for (lam, w) in rule.iter() {
            let uh = lam[0] * fh[tri[0]] + lam[1] * fh[tri[1]] + lam[2] * fh[tri[2]];
            let e = uh - exact(barycentric_to_cartesian(&v, lam));
            sum += area * w * e * e;
        }
    }
    sum.sqrt()
}

/// `|f_h - f|_{H¹}` seminorm.
pub fn h1_seminorm_error(mesh: &Mesh, fh: &[f64], exact_grad: impl Fn([f64; 2]) -> [f64; 2], degree: usize) -> f64 {
    let rule = TriangleRule::of_degree(degree);
    let mut sum = 0.0;
    for t in 0..mesh.num_triangles() {
        let v = mesh.triangle_vertices(t);
        let area = mesh.triangle_area(t);
        let gh = p1_gradient(mesh, t, fh);
        for (lam, w) in rule.iter() {
            let g = exact_grad(barycentric_to_cartesian(&v, lam));
            let (ex, ey) = (gh[0] - g[0], gh[1] - g[1]);
            sum += area * w * (ex * ex + ey * ey);
        }
    }
    sum.sqrt()
}

/// Full `H¹` norm of the error.
pub fn h1_error(
    mesh: &Mesh,
    fh: &[f64],
    exact: impl Fn([f64; 2]) -> f64,
    exact_grad: impl Fn([f64; 2]) -> [f64; 2],
    degree: usize,
) -> f64 {
    let l2 = l2_error(mesh, fh, exact, degree);
    let semi = h1_seminorm_error(mesh, fh, exact_grad, degree);
    (l2 * l2 + semi * semi).sqrt()
}

/// Experimental order between errors at mesh sizes `h1 > h2`.
pub fn eoc(e1: f64, h1: f64, e2: f64, h2: f64) -> f64 {
    (e1 / e2).ln() / (h1 / h2).ln()
}

/// Undershoot below `exact_min` and overshoot above `exact_max`.
pub fn oscillation_indicator(field: &[f64], exact_min: f64, exact_max: f64) -> (f64, f64) {
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ((exact_min - lo).max(0.0), (hi - exact_max).max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub h0: f64,
    pub k: f64,
    pub err_l2: f64,
    /// `NaN` when no H¹ error is evaluated.
    pub err_h1: f64,
    pub order_l2: Option<f64>,
    pub order_h1: Option<f64>,
    pub quad_degree: usize,
}

impl ErrorRecord {
    pub fn new(h0: f64, k: f64, err_l2: f64, err_h1: f64, quad_degree: usize) -> Self {
        Self {
            h0,
            k,
            err_l2,
            err_h1,
            order_l2: None,
            order_h1: None,
            quad_degree,
        }
    }
}

/// Fills the order slots from consecutive records, sorted by decreasing `h0`.
pub fn fill_orders(records: &mut [ErrorRecord]) {
    for i in 1..records.len() {
        let (a, b) = (records[i - 1].clone(), &mut records[i]);
        b.order_l2 = Some(eoc(a.err_l2, a.h0, b.err_l2, b.h0));
        b.order_h1 = if a.err_h1.is_nan() || b.err_h1.is_nan() {
            None
        } else {
            Some(eoc(a.err_h1, a.h0, b.err_h1, b.h0))
        };
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// CSV with columns `h0,err_L2,order_L2,err_H1,order_H1`.
pub fn write_error_csv<W: Write>(records: &[ErrorRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "h0,err_L2,order_L2,err_H1,order_H1")?;
    for r in records {
        let h1 = if r.err_h1.is_nan() {
            String::new()
        } else {
            format!("{:.4e}", r.err_h1)
        };
        writeln!(w, "{},{:.4e},{},{},{}", r.h0, r.err_l2, opt(r.order_l2), h1, opt(r.order_h1))?;
    }
    Ok(())
}
