//! Conforming triangle meshes of the square and L-shaped domains, with red
//! (uniform) refinement and newest-vertex bisection.

use std::collections::{BTreeSet, HashMap};

use crate::error::{OseenError, Result};

pub type Point = [f64; 2];

/// Set of cell indices selected for refinement.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MarkedSet {
    pub cell_ids: BTreeSet<usize>,
}

impl MarkedSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn all(mesh: &Mesh) -> Self {
        Self {
            cell_ids: (0..mesh.n_cells()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cell_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_ids.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.cell_ids.contains(&cell)
    }
}

impl FromIterator<usize> for MarkedSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self {
            cell_ids: iter.into_iter().collect(),
        }
    }
}

/// A conforming 2D triangulation.
///
/// Local edge `i` of a cell joins its vertices `i+1` and `i+2` (mod 3), i.e.
/// it is the edge opposite local vertex `i`.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    cells: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    edge_cells: Vec<(usize, Option<usize>)>,
    cell_edges: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    refinement_edge: Vec<u8>,
    parent: Vec<Option<usize>>,
    generation: Vec<u32>,
}

impl Mesh {
    /// Builds the edge topology for the given cells. Refinement edges default
    /// to the longest edge of each cell.
    pub fn from_cells(vertices: Vec<Point>, cells: Vec<[usize; 3]>) -> Result<Self> {
        let n = cells.len();
        Self::assemble(vertices, cells, None, vec![None; n], vec![0; n])
    }

    fn assemble(
        vertices: Vec<Point>,
        cells: Vec<[usize; 3]>,
        refinement_edge: Option<Vec<u8>>,
        parent: Vec<Option<usize>>,
        generation: Vec<u32>,
    ) -> Result<Self> {
        for (c, cell) in cells.iter().enumerate() {
            if cell.iter().any(|&v| v >= vertices.len()) {
                return Err(OseenError::Mesh(format!("cell {c} references a missing vertex")));
            }
            if cell[0] == cell[1] || cell[1] == cell[2] || cell[0] == cell[2] {
                return Err(OseenError::Mesh(format!("cell {c} is degenerate")));
            }
        }
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::with_capacity(cells.len() * 2);
        let mut edges = Vec::new();
        let mut edge_cells: Vec<(usize, Option<usize>)> = Vec::new();
        let mut cell_edges = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let mut local = [0usize; 3];
            for (i, slot) in local.iter_mut().enumerate() {
                let a = cell[(i + 1) % 3];
                let b = cell[(i + 2) % 3];
                let key = (a.min(b), a.max(b));
                let e = match edge_index.get(&key) {
                    Some(&e) => {
                        let entry = &mut edge_cells[e];
                        if entry.1.is_some() {
                            return Err(OseenError::Mesh(format!(
                                "edge ({}, {}) is shared by more than two cells",
                                key.0, key.1
                            )));
                        }
                        entry.1 = Some(c);
                        e
                    }
                    None => {
                        let e = edges.len();
                        edges.push([key.0, key.1]);
                        edge_cells.push((c, None));
                        edge_index.insert(key, e);
                        e
                    }
                };
                *slot = e;
            }
            cell_edges.push(local);
        }
        let boundary = edge_cells.iter().map(|(_, b)| b.is_none()).collect();
        let refinement_edge = match refinement_edge {
            Some(r) => r,
            None => cells
                .iter()
                .map(|cell| longest_edge(&vertices, cell))
                .collect(),
        };
        Ok(Self {
            vertices,
            cells,
            edges,
            edge_cells,
            cell_edges,
            boundary,
            refinement_edge,
            parent,
            generation,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn cell(&self, c: usize) -> [usize; 3] {
        self.cells[c]
    }

    pub fn cell_edges(&self, c: usize) -> [usize; 3] {
        self.cell_edges[c]
    }

    /// Adjacent cells of an edge: the first always exists, the second only
    /// for interior edges.
    pub fn edge_cells(&self, e: usize) -> (usize, Option<usize>) {
        self.edge_cells[e]
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary[e]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn refinement_edge(&self, c: usize) -> u8 {
        self.refinement_edge[c]
    }

    /// Index of the cell this one was produced from, in the previous mesh.
    pub fn parent(&self, c: usize) -> Option<usize> {
        self.parent[c]
    }

    pub fn generation(&self, c: usize) -> u32 {
        self.generation[c]
    }

    /// Vertex flags for vertices lying on an edge of the boundary.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n_vertices()];
        for (e, edge) in self.edges.iter().enumerate() {
            if self.boundary[e] {
                flags[edge[0]] = true;
                flags[edge[1]] = true;
            }
        }
        flags
    }

    pub fn signed_area(&self, c: usize) -> f64 {
        let [a, b, d] = self.cells[c].map(|v| self.vertices[v]);
        0.5 * ((b[0] - a[0]) * (d[1] - a[1]) - (d[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        dist(self.vertices[a], self.vertices[b])
    }

    /// Cell diameter `h_T`, the longest edge.
    pub fn diameter(&self, c: usize) -> f64 {
        let [a, b, d] = self.cells[c].map(|v| self.vertices[v]);
        dist(a, b).max(dist(b, d)).max(dist(d, a))
    }

    pub fn h_max(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.diameter(c)).fold(0.0, f64::max)
    }

    pub fn h_min(&self) -> f64 {
        (0..self.n_cells())
            .map(|c| self.diameter(c))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn centroid(&self, c: usize) -> Point {
        let [a, b, d] = self.cells[c].map(|v| self.vertices[v]);
        [(a[0] + b[0] + d[0]) / 3.0, (a[1] + b[1] + d[1]) / 3.0]
    }

    pub fn area(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.signed_area(c)).sum()
    }

    /// Smallest interior angle of a cell, in radians.
    pub fn min_angle(&self, c: usize) -> f64 {
        let p = self.cells[c].map(|v| self.vertices[v]);
        (0..3)
            .map(|i| {
                let o = p[i];
                let u = [p[(i + 1) % 3][0] - o[0], p[(i + 1) % 3][1] - o[1]];
                let w = [p[(i + 2) % 3][0] - o[0], p[(i + 2) % 3][1] - o[1]];
                let cos = (u[0] * w[0] + u[1] * w[1]) / (norm(u) * norm(w));
                cos.clamp(-1.0, 1.0).acos()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_angle_overall(&self) -> f64 {
        (0..self.n_cells())
            .map(|c| self.min_angle(c))
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks edge multiplicities, cell orientation, and the absence of
    /// hanging vertices.
    pub fn conformity_audit(&self) -> Result<()> {
        for c in 0..self.n_cells() {
            let area = self.signed_area(c);
            if !(area > 0.0) {
                return Err(OseenError::Mesh(format!(
                    "cell {c} has non-positive signed area {area:e}"
                )));
            }
        }
        let mut counts = vec![0u8; self.n_edges()];
        for ce in &self.cell_edges {
            for &e in ce {
                counts[e] += 1;
            }
        }
        for (e, &count) in counts.iter().enumerate() {
            let expected = if self.boundary[e] { 1 } else { 2 };
            if count != expected {
                return Err(OseenError::Mesh(format!(
                    "edge {e} appears in {count} cells, expected {expected}"
                )));
            }
        }
        // A hanging vertex sits in the interior of an edge that has only one
        // neighbour, and is itself an endpoint of such edges.
        let on_boundary = self.boundary_vertices();
        let candidates: Vec<usize> = (0..self.n_vertices()).filter(|&v| on_boundary[v]).collect();
        for (e, edge) in self.edges.iter().enumerate() {
            if !self.boundary[e] {
                continue;
            }
            let a = self.vertices[edge[0]];
            let b = self.vertices[edge[1]];
            let len = dist(a, b);
            for &v in &candidates {
                if v == edge[0] || v == edge[1] {
                    continue;
                }
                let p = self.vertices[v];
                let t = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / (len * len);
                if t <= 1e-12 || t >= 1.0 - 1e-12 {
                    continue;
                }
                let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                if cross.abs() <= 1e-12 * len * len {
                    return Err(OseenError::Mesh(format!(
                        "vertex {v} hangs on edge ({}, {})",
                        edge[0], edge[1]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Red refinement: each cell is split into four similar children through
    /// its edge midpoints.
    pub fn uniform_refine(&self) -> Mesh {
        let nv = self.n_vertices();
        let mut vertices = self.vertices.clone();
        vertices.extend(self.edges.iter().map(|&[a, b]| midpoint(self.vertices[a], self.vertices[b])));
        let mut cells = Vec::with_capacity(4 * self.n_cells());
        let mut parent = Vec::with_capacity(4 * self.n_cells());
        let mut generation = Vec::with_capacity(4 * self.n_cells());
        for (c, &[v0, v1, v2]) in self.cells.iter().enumerate() {
            let [e0, e1, e2] = self.cell_edges[c];
            let (m0, m1, m2) = (nv + e0, nv + e1, nv + e2);
            for child in [[v0, m2, m1], [m2, v1, m0], [m1, m0, v2], [m0, m1, m2]] {
                cells.push(child);
                parent.push(Some(c));
                generation.push(self.generation[c] + 1);
            }
        }
        Mesh::assemble(vertices, cells, None, parent, generation)
            .expect("red refinement of a conforming mesh is conforming")
    }

    /// Applies [`Mesh::bisect_refine`] `bisections` times, re-marking every
    /// descendant of an originally marked cell. Two passes split each marked
    /// cell into at least four children. Parents refer to cells of `self`.
    pub fn refine_marked(&self, marked: &MarkedSet, bisections: usize) -> Result<Mesh> {
        if bisections == 0 {
            return Err(OseenError::invalid("at least one bisection pass is required"));
        }
        let mut mesh = self.bisect_refine(marked)?;
        let mut origin: Vec<usize> = mesh.parent.iter().map(|p| p.expect("refined cells have parents")).collect();
        for _ in 1..bisections {
            let again: MarkedSet = (0..mesh.n_cells()).filter(|&c| marked.contains(origin[c])).collect();
            let next = mesh.bisect_refine(&again)?;
            origin = next.parent.iter().map(|p| origin[p.expect("refined cells have parents")]).collect();
            mesh = next;
        }
        mesh.parent = origin.into_iter().map(Some).collect();
        Ok(mesh)
    }

    /// Newest-vertex bisection of the marked cells with recursive conforming
    /// closure.
    pub fn bisect_refine(&self, marked: &MarkedSet) -> Result<Mesh> {
        if let Some(&bad) = marked.cell_ids.iter().find(|&&c| c >= self.n_cells()) {
            return Err(OseenError::invalid(format!("marked cell {bad} does not exist")));
        }
        let mut split = vec![false; self.n_edges()];
        for &c in &marked.cell_ids {
            split[self.cell_edges[c][self.refinement_edge[c] as usize]] = true;
        }
        // Closure: a cell with any split edge must also split its refinement edge.
        loop {
            let mut changed = false;
            for c in 0..self.n_cells() {
                let ce = self.cell_edges[c];
                let r = ce[self.refinement_edge[c] as usize];
                if !split[r] && ce.iter().any(|&e| split[e]) {
                    split[r] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let mut vertices = self.vertices.clone();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        for (e, &[a, b]) in self.edges.iter().enumerate() {
            if split[e] {
                midpoints.insert((a, b), vertices.len());
                vertices.push(midpoint(self.vertices[a], self.vertices[b]));
            }
        }

        let mut out = Children::default();
        for c in 0..self.n_cells() {
            bisect_recursive(
                self.cells[c],
                self.refinement_edge[c],
                c,
                self.generation[c],
                &midpoints,
                &mut out,
            );
        }
        Mesh::assemble(vertices, out.cells, Some(out.refinement_edge), out.parent, out.generation)
    }
}

#[derive(Default)]
struct Children {
    cells: Vec<[usize; 3]>,
    refinement_edge: Vec<u8>,
    parent: Vec<Option<usize>>,
    generation: Vec<u32>,
}

fn bisect_recursive(
    tri: [usize; 3],
    ref_edge: u8,
    parent: usize,
    generation: u32,
    midpoints: &HashMap<(usize, usize), usize>,
    out: &mut Children,
) {
    let r = ref_edge as usize;
    let p = tri[r];
    let a = tri[(r + 1) % 3];
    let b = tri[(r + 2) % 3];
    match midpoints.get(&(a.min(b), a.max(b))) {
        None => {
            out.cells.push(tri);
            out.refinement_edge.push(ref_edge);
            out.parent.push(Some(parent));
            out.generation.push(generation);
        }
        Some(&m) => {
            // The new vertex m is opposite the refinement edge of both children.
            bisect_recursive([p, a, m], 2, parent, generation + 1, midpoints, out);
            bisect_recursive([p, m, b], 1, parent, generation + 1, midpoints, out);
        }
    }
}

/// Local index of the longest edge; ties go to the edge whose opposite vertex
/// has the smallest global index.
fn longest_edge(vertices: &[Point], cell: &[usize; 3]) -> u8 {
    let mut best = 0usize;
    let mut best_len = -1.0;
    for i in 0..3 {
        let len = dist(vertices[cell[(i + 1) % 3]], vertices[cell[(i + 2) % 3]]);
        let better = if (len - best_len).abs() <= 1e-12 * len.max(best_len) {
            cell[i] < cell[best]
        } else {
            len > best_len
        };
        if better {
            best = i;
            best_len = len;
        }
    }
    best as u8
}

fn dist(a: Point, b: Point) -> f64 {
    norm([b[0] - a[0], b[1] - a[1]])
}

fn norm(v: Point) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

/// Structured grid of `(-1, 1)^2` with `2n` intervals per side, restricted to
/// the grid squares accepted by `squares(i, j)` (indexed by lower-left node).
/// Every square is split along its lower-left to upper-right diagonal.
fn structured<F>(n: usize, squares: F) -> Result<Mesh>
where
    F: Fn(usize, usize) -> bool,
{
    if n == 0 {
        return Err(OseenError::invalid("number of subdivisions must be at least 1"));
    }
    let m = 2 * n;
    let mut node_id = vec![usize::MAX; (m + 1) * (m + 1)];
    let mut vertices = Vec::new();
    let used = |i: usize, j: usize| -> bool {
        let lo_i = i.saturating_sub(1);
        let lo_j = j.saturating_sub(1);
        (lo_j..=j.min(m - 1)).any(|jj| (lo_i..=i.min(m - 1)).any(|ii| squares(ii, jj)))
    };
    for j in 0..=m {
        for i in 0..=m {
            if used(i, j) {
                node_id[j * (m + 1) + i] = vertices.len();
                let x = -1.0 + 2.0 * i as f64 / m as f64;
                let y = -1.0 + 2.0 * j as f64 / m as f64;
                vertices.push([x, y]);
            }
        }
    }
    let mut cells = Vec::new();
    for j in 0..m {
        for i in 0..m {
            if !squares(i, j) {
                continue;
            }
            let v00 = node_id[j * (m + 1) + i];
            let v10 = node_id[j * (m + 1) + i + 1];
            let v01 = node_id[(j + 1) * (m + 1) + i];
            let v11 = node_id[(j + 1) * (m + 1) + i + 1];
            cells.push([v00, v10, v11]);
            cells.push([v00, v11, v01]);
        }
    }
    Mesh::from_cells(vertices, cells)
}

/// Structured mesh of `(-1, 1)^2` with `n` subdivisions per side.
pub fn generate_square(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(OseenError::invalid("number of subdivisions must be at least 1"));
    }
    let m = n;
    let mut vertices = Vec::with_capacity((m + 1) * (m + 1));
    for j in 0..=m {
        for i in 0..=m {
            vertices.push([-1.0 + 2.0 * i as f64 / m as f64, -1.0 + 2.0 * j as f64 / m as f64]);
        }
    }
    let id = |i: usize, j: usize| j * (m + 1) + i;
    let mut cells = Vec::with_capacity(2 * m * m);
    for j in 0..m {
        for i in 0..m {
            cells.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            cells.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Mesh::from_cells(vertices, cells)
}

/// Structured mesh of the L-shaped domain `(-1, 1)^2 \ (-1, 0]^2` with `n`
/// subdivisions per unit length.
pub fn generate_lshape(n: usize) -> Result<Mesh> {
    structured(n, |i, j| !(i < n && j < n))
}

/// Which of the built-in domains a mesh covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Square,
    Lshape,
}

impl Domain {
    pub fn mesh(self, n: usize) -> Result<Mesh> {
        match self {
            Domain::Square => generate_square(n),
            Domain::Lshape => generate_lshape(n),
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = OseenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(Domain::Square),
            "lshape" | "l-shape" => Ok(Domain::Lshape),
            other => Err(OseenError::invalid(format!("unknown domain `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vertex_set(mesh: &Mesh) -> Vec<(i64, i64)> {
        let mut v: Vec<_> = mesh
            .vertices()
            .iter()
            .map(|p| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64))
            .collect();
        v.sort();
        v
    }

    #[test]
    fn square_counts() {
        let m = generate_square(1).unwrap();
        assert_eq!((m.n_vertices(), m.n_cells(), m.n_edges()), (4, 2, 5));
        let m = generate_square(10).unwrap();
        assert_eq!((m.n_vertices(), m.n_cells(), m.n_edges()), (121, 200, 320));
        // Euler: V - E + F = 2 with F counting the outer face.
        assert_eq!(121 - 320 + 201, 2);
        assert!((m.h_max() - 0.2828).abs() < 1e-4);
        assert!((m.h_max() - 2.0 * 2f64.sqrt() / 10.0).abs() < 1e-14);
        assert!((m.area() - 4.0).abs() < 1e-12);
        m.conformity_audit().unwrap();
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(matches!(generate_square(0), Err(OseenError::InvalidArgument(_))));
        assert!(matches!(generate_lshape(0), Err(OseenError::InvalidArgument(_))));
    }

    #[test]
    fn lshape_counts() {
        let m = generate_lshape(1).unwrap();
        assert_eq!((m.n_vertices(), m.n_cells()), (8, 6));
        let m = generate_lshape(2).unwrap();
        assert_eq!((m.n_vertices(), m.n_cells()), (21, 24));
        assert!((m.area() - 3.0).abs() < 1e-12);
        for n in 1..5 {
            let m = generate_lshape(n).unwrap();
            m.conformity_audit().unwrap();
            assert_eq!(m.n_vertices() as i64 - m.n_edges() as i64 + m.n_cells() as i64, 1);
            let corner = m
                .vertices()
                .iter()
                .position(|p| p[0].abs() < 1e-14 && p[1].abs() < 1e-14)
                .expect("reentrant corner present");
            assert!(m.boundary_vertices()[corner]);
        }
    }

    #[test]
    fn red_refinement() {
        let m = generate_square(1).unwrap().uniform_refine();
        assert_eq!((m.n_cells(), m.n_vertices()), (8, 9));
        let coarse = generate_square(10).unwrap();
        let fine = coarse.uniform_refine();
        assert_eq!(fine.n_cells(), 4 * coarse.n_cells());
        assert_eq!(vertex_set(&fine), vertex_set(&generate_square(20).unwrap()));
        assert!((fine.h_max() - coarse.h_max() / 2.0).abs() < 1e-14);
        fine.conformity_audit().unwrap();
    }

    #[test]
    fn empty_marking_is_a_copy() {
        let m = generate_square(3).unwrap();
        let r = m.bisect_refine(&MarkedSet::new()).unwrap();
        assert_eq!(r.n_cells(), m.n_cells());
        assert_eq!(r.n_vertices(), m.n_vertices());
    }

    #[test]
    fn single_cell_bisection_is_conforming() {
        let m = generate_square(1).unwrap();
        let r = m.bisect_refine(&[0].into_iter().collect()).unwrap();
        r.conformity_audit().unwrap();
        // Both cells share the diagonal, so both are bisected.
        assert_eq!(r.n_cells(), 4);
        assert_eq!(r.n_vertices(), 5);
    }

    #[test]
    fn two_full_bisections_give_four_descendants() {
        let m0 = generate_square(2).unwrap();
        let m1 = m0.bisect_refine(&MarkedSet::all(&m0)).unwrap();
        let m2 = m1.bisect_refine(&MarkedSet::all(&m1)).unwrap();
        m2.conformity_audit().unwrap();
        let mut descendants = vec![0; m0.n_cells()];
        for c in 0..m2.n_cells() {
            let mid = m2.parent(c).unwrap();
            descendants[m1.parent(mid).unwrap()] += 1;
        }
        assert!(descendants.iter().all(|&d| d >= 4));
    }

    #[test]
    fn double_bisection_gives_four_children_per_marked_cell() {
        let m0 = generate_lshape(2).unwrap();
        let marked: MarkedSet = [0usize, 5].into_iter().collect();
        let m1 = m0.refine_marked(&marked, 2).unwrap();
        m1.conformity_audit().unwrap();
        for c in [0, 5] {
            let children = (0..m1.n_cells()).filter(|&k| m1.parent(k) == Some(c)).count();
            assert!(children >= 4, "cell {c} has {children} children");
        }
        assert!(m0.refine_marked(&marked, 0).is_err());
    }

    #[test]
    fn corner_refinement_keeps_angles() {
        let mut m = generate_lshape(2).unwrap();
        let initial = m.min_angle_overall();
        let h0 = m.h_min();
        for _ in 0..10 {
            let marked: MarkedSet = (0..m.n_cells())
                .filter(|&c| m.cell(c).iter().any(|&v| m.vertex(v) == [0.0, 0.0]))
                .collect();
            m = m.bisect_refine(&marked).unwrap();
            m.conformity_audit().unwrap();
        }
        // NVB on right isosceles triangles keeps every cell similar to the
        // initial ones.
        assert!(m.min_angle_overall() >= initial - 1e-12);
        assert!(m.h_min() <= h0 / 16.0 + 1e-12, "{} vs {}", m.h_min(), h0);
    }

    #[test]
    fn audit_detects_hanging_vertex() {
        // Square (-1,1)^2 split into a big left triangle pair and a bisected
        // right half that doesn't match.
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let cells = vec![[0, 1, 4], [1, 2, 4], [0, 4, 3], [4, 2, 3]];
        let ok = Mesh::from_cells(vertices.clone(), cells).unwrap();
        ok.conformity_audit().unwrap();
        let cells = vec![[0, 1, 2], [0, 4, 3], [4, 2, 3]];
        let bad = Mesh::from_cells(vertices, cells).unwrap();
        assert!(bad.conformity_audit().is_err());
    }

    #[test]
    fn audit_detects_inverted_cell() {
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let m = Mesh::from_cells(vertices, vec![[0, 2, 1]]).unwrap();
        assert!(m.conformity_audit().is_err());
    }
}
