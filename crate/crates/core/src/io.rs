//! File formats: the ASCII mesh format, legacy VTK and atomic writes.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::assembly::Fields;
use crate::error::{OseenError, Result};
use crate::mesh::Mesh;

pub const MESH_MAGIC: &str = "oseen-mesh 1";

pub fn mesh_to_string(mesh: &Mesh) -> String {
    let mut s = format!("{MESH_MAGIC}\n{} {}\n", mesh.n_vertices(), mesh.n_cells());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{:e} {:e}", p[0], p[1]);
    }
    for c in mesh.cells() {
        let _ = writeln!(s, "{} {} {}", c[0], c[1], c[2]);
    }
    s
}

pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some(MESH_MAGIC) {
        return Err(OseenError::Mesh(format!("missing '{MESH_MAGIC}' header")));
    }
    let bad = |what: &str| OseenError::Mesh(format!("malformed {what}"));
    let counts: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("count line"))?
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("count line"))?;
    let [nv, nc] = counts[..] else {
        return Err(bad("count line"));
    };
    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let line = lines.next().ok_or_else(|| bad(&format!("vertex {i}")))?;
        let xy: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(&format!("vertex {i}")))?;
        match xy[..] {
            [x, y] if x.is_finite() && y.is_finite() => vertices.push([x, y]),
            _ => return Err(bad(&format!("vertex {i}"))),
        }
    }
    let mut cells = Vec::with_capacity(nc);
    for i in 0..nc {
        let line = lines.next().ok_or_else(|| bad(&format!("cell {i}")))?;
        let ids: Vec<usize> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(&format!("cell {i}")))?;
        match ids[..] {
            [a, b, c] => cells.push([a, b, c]),
            _ => return Err(bad(&format!("cell {i}"))),
        }
    }
    if lines.next().is_some() {
        return Err(OseenError::Mesh("trailing data after the last cell".into()));
    }
    let mesh = Mesh::from_cells(vertices, cells)?;
    if let Some(c) = (0..mesh.n_cells()).find(|&c| mesh.signed_area(c) <= 0.0) {
        return Err(OseenError::Mesh(format!("cell {c} has non-positive area")));
    }
    mesh.conformity_audit()?;
    Ok(mesh)
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| OseenError::io(path, e))?;
    parse_mesh(&text).map_err(|e| OseenError::Mesh(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the same directory and renames it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| OseenError::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| OseenError::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, contents).map_err(|e| OseenError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        OseenError::io(path, e)
    })
}

/// Vertex values of a discrete solution. Vertex dofs are nodal for both
/// elements and the mini bubble vanishes at vertices.
pub struct VertexFields {
    pub velocity: Vec<[Complex64; 2]>,
    pub pressure: Vec<Complex64>,
}

impl VertexFields {
    pub fn sample(mesh: &Mesh, fields: &Fields) -> Self {
        let nv = mesh.n_vertices();
        Self {
            velocity: (0..nv).map(|v| [fields.u[0][v], fields.u[1][v]]).collect(),
            pressure: fields.p[..nv].to_vec(),
        }
    }
}

/// ASCII legacy VTK unstructured grid with optional point and cell data.
pub fn vtk_string(mesh: &Mesh, title: &str, fields: Option<&VertexFields>, eta2: Option<&[f64]>) -> String {
    let mut s = String::new();
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    let _ = write!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.n_vertices());
    for p in mesh.vertices() {
        let _ = writeln!(s, "{:e} {:e} 0", p[0], p[1]);
    }
    let nc = mesh.n_cells();
    let _ = writeln!(s, "CELLS {nc} {}", 4 * nc);
    for c in mesh.cells() {
        let _ = writeln!(s, "3 {} {} {}", c[0], c[1], c[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nc}");
    for _ in 0..nc {
        s.push_str("5\n");
    }
    if let Some(f) = fields {
        let _ = writeln!(s, "POINT_DATA {}", mesh.n_vertices());
        for (name, part) in [("velocity_re", 0), ("velocity_im", 1)] {
            let _ = writeln!(s, "VECTORS {name} double");
            for u in &f.velocity {
                let (a, b) = if part == 0 { (u[0].re, u[1].re) } else { (u[0].im, u[1].im) };
                let _ = writeln!(s, "{a:e} {b:e} 0");
            }
        }
        for (name, part) in [("pressure_re", 0), ("pressure_im", 1)] {
            let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for p in &f.pressure {
                let _ = writeln!(s, "{:e}", if part == 0 { p.re } else { p.im });
            }
        }
    }
    if let Some(eta2) = eta2 {
        let _ = write!(s, "CELL_DATA {nc}\nSCALARS eta2 double 1\nLOOKUP_TABLE default\n");
        for v in eta2 {
            let _ = writeln!(s, "{v:e}");
        }
    }
    s
}
