//! Plain-text export of meshes and nodal solutions.
//!
//! `<stem>_vertices.csv`: `index,x,y,boundary,value`
//! `<stem>_triangles.csv`: `index,v0,v1,v2` (counterclockwise)

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::mesh::DiskMesh;
use crate::error::{invalid, Result};

fn vertex_table(mesh: &DiskMesh, values: Option<&[f64]>) -> String {
    let mut out = String::from("index,x,y,boundary,value\n");
    for (i, p) in mesh.vertices().iter().enumerate() {
        let value = values.map_or(String::new(), |v| format!("{:.16e}", v[i]));
        let _ = writeln!(out, "{i},{:.16e},{:.16e},{},{value}", p[0], p[1], u8::from(mesh.is_boundary(i)));
    }
    out
}

fn triangle_table(mesh: &DiskMesh) -> String {
    let mut out = String::from("index,v0,v1,v2\n");
    for (i, t) in mesh.triangles().iter().enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", t[0], t[1], t[2]);
    }
    out
}

fn write_tables(dir: &Path, stem: &str, mesh: &DiskMesh, values: Option<&[f64]>) -> Result<[PathBuf; 2]> {
    fs::create_dir_all(dir)?;
    let vertices = dir.join(format!("{stem}_vertices.csv"));
    let triangles = dir.join(format!("{stem}_triangles.csv"));
    fs::write(&vertices, vertex_table(mesh, values))?;
    fs::write(&triangles, triangle_table(mesh))?;
    Ok([vertices, triangles])
}

/// Writes the vertex and triangle tables with an empty value column.
pub fn write_mesh_csv(dir: &Path, stem: &str, mesh: &DiskMesh) -> Result<[PathBuf; 2]> {
    write_tables(dir, stem, mesh, None)
}

pub fn write_solution_csv(dir: &Path, stem: &str, mesh: &DiskMesh, values: &[f64]) -> Result<[PathBuf; 2]> {
    if values.len() != mesh.vertex_count() {
        return Err(invalid("value count does not match the mesh"));
    }
    write_tables(dir, stem, mesh, Some(values))
}
