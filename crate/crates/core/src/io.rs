//! Mesh and solution export.
//!
//! Meshes and nodal fields go out as legacy VTK ASCII unstructured grids
//! (triangles, cell type 5). Edge tags do not fit the VTK cell model, so
//! each mesh export writes a plain-text sidecar `<name>.tags` with one
//! `edge v0 v1 <tag>` line per tagged edge. Lattice cell indices, when
//! the mesh has them, ride along as integer cell data. Floats are printed
//! with 17 significant digits so a written file reproduces the inputs
//! bit-exactly on read-back.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ConvergenceRecord, Error, Result};
use crate::mesh::TriangulatedDomain;

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn vtk_header(mesh: &TriangulatedDomain, title: &str) -> String {
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "{title}");
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.n_vertices());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:.16e} {:.16e} 0.0", v[0], v[1]);
    }
    let nt = mesh.triangles.len();
    let _ = writeln!(s, "CELLS {} {}", nt, 4 * nt);
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    s
}

fn cell_data_block(mesh: &TriangulatedDomain) -> String {
    let mut s = String::new();
    if let Some(cells) = &mesh.cell_index {
        let _ = writeln!(s, "CELL_DATA {}", mesh.triangles.len());
        s.push_str("SCALARS cell_index int 2\nLOOKUP_TABLE default\n");
        for c in cells {
            let _ = writeln!(s, "{} {}", c[0], c[1]);
        }
    }
    s
}

/// Write `<path>` as legacy VTK and `<path>.tags` with the edge tags.
pub fn write_mesh_vtk(mesh: &TriangulatedDomain, path: &Path) -> Result<()> {
    let mut s = vtk_header(mesh, "mesh");
    s.push_str(&cell_data_block(mesh));
    write_file(path, &s)?;

    let mut tags = String::new();
    for (&(a, b), &tag) in &mesh.edge_tags {
        let _ = writeln!(tags, "edge {a} {b} {}", tag.as_str());
    }
    let sidecar = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tags", e.to_string_lossy()),
        None => "tags".to_string(),
    });
    write_file(&sidecar, &tags)
}

/// Write a mesh plus named nodal fields as VTK point data.
pub fn write_solution_vtk(
    mesh: &TriangulatedDomain,
    fields: &[(&str, &[f64])],
    path: &Path,
) -> Result<()> {
    let mut s = vtk_header(mesh, "solution");
    s.push_str(&cell_data_block(mesh));
    if !fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", mesh.n_vertices());
        for (name, values) in fields {
            if values.len() != mesh.n_vertices() {
                return Err(Error::config(format!(
                    "field {name} has {} values for {} vertices",
                    values.len(),
                    mesh.n_vertices()
                )));
            }
            let _ = writeln!(s, "SCALARS {name} double 1");
            s.push_str("LOOKUP_TABLE default\n");
            for v in *values {
                let _ = writeln!(s, "{v:.16e}");
            }
        }
    }
    write_file(path, &s)
}

/// Newton history as `iter,residual,damping` CSV.
pub fn write_convergence_csv(log: &[ConvergenceRecord], path: &Path) -> Result<()> {
    let mut s = String::from("iter,residual,damping\n");
    for (iter, residual, damping) in log {
        let _ = writeln!(s, "{iter},{residual:.16e},{damping:.16e}");
    }
    write_file(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CellGeometry, HoleShape};
    use crate::mesh::{mesh_unit_cell, tile_perforated_domain};

    #[test]
    fn mesh_export_writes_vtk_and_tag_sidecar() {
        let geom = CellGeometry::new(
            HoleShape::Disk {
                center: [0.0, 0.0],
                radius: 0.25,
            },
            0.25,
        );
        let mesh = mesh_unit_cell(&geom).unwrap();
        let dir = std::env::temp_dir().join("perfcell_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cell.vtk");
        write_mesh_vtk(&mesh, &path).unwrap();

        let vtk = std::fs::read_to_string(&path).unwrap();
        assert!(vtk.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(vtk.contains("DATASET UNSTRUCTURED_GRID"));
        assert!(vtk.contains(&format!("CELL_TYPES {}", mesh.triangles.len())));

        let tags = std::fs::read_to_string(dir.join("cell.vtk.tags")).unwrap();
        assert_eq!(tags.lines().count(), mesh.edge_tags.len());
        assert!(tags.lines().all(|l| l.starts_with("edge ")));
        assert!(tags.contains(" hole"));
        assert!(tags.contains(" outer"));
    }

    #[test]
    fn solution_export_carries_fields_and_cell_indices() {
        let geom = CellGeometry::new(HoleShape::None, 0.25);
        let fine = tile_perforated_domain(&geom, 3).unwrap();
        let u: Vec<f64> = (0..fine.domain.n_vertices()).map(|i| i as f64).collect();
        let dir = std::env::temp_dir().join("perfcell_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("fine.vtk");
        write_solution_vtk(&fine.domain, &[("u", &u)], &path).unwrap();
        let vtk = std::fs::read_to_string(&path).unwrap();
        assert!(vtk.contains("POINT_DATA"));
        assert!(vtk.contains("SCALARS u double 1"));
        assert!(vtk.contains("SCALARS cell_index int 2"));

        let bad = vec![0.0; 3];
        assert!(write_solution_vtk(&fine.domain, &[("u", &bad)], &path).is_err());
    }

    #[test]
    fn convergence_log_round_trips_through_csv() {
        let log = vec![(1usize, 0.5f64, 1.0f64), (2, 1e-11, 0.25)];
        let dir = std::env::temp_dir().join("perfcell_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("log.csv");
        write_convergence_csv(&log, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,residual,damping"));
        let parsed: Vec<ConvergenceRecord> = lines
            .map(|l| {
                let mut parts = l.split(',');
                (
                    parts.next().unwrap().parse().unwrap(),
                    parts.next().unwrap().parse().unwrap(),
                    parts.next().unwrap().parse().unwrap(),
                )
            })
            .collect();
        assert_eq!(parsed, log);
    }
}
