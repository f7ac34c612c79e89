//! Legacy ASCII VTK output of nodal fields on a triangulation.

use std::io::Write;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Writes the mesh as an unstructured grid of triangles (cell type 5) with
/// the given scalar point data.
pub fn write_vtk<W: Write>(mesh: &Mesh, title: &str, fields: &[(&str, &[f64])], mut w: W) -> Result<()> {
    for (name, f) in fields {
        if f.len() != mesh.num_nodes() {
            return Err(Error::invalid(format!("field '{name}' has {} values for {} nodes", f.len(), mesh.num_nodes())));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("invalid VTK field name '{name}'")));
        }
    }
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.num_nodes())?;
    for p in mesh.nodes() {
        writeln!(w, "{} {} 0", p[0], p[1])?;
    }
    let nt = mesh.num_triangles();
    writeln!(w, "CELLS {} {}", nt, 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    if !fields.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.num_nodes())?;
        for (name, f) in fields {
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in f.iter() {
                writeln!(w, "{v:.16e}")?;
            }
        }
    }
    Ok(())
}
