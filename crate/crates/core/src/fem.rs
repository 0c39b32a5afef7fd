//! Shape functions of the mini and lowest-order Taylor–Hood elements, the
//! affine map to physical cells, and global degree-of-freedom numbering.

use serde::{Deserialize, Serialize};

use crate::error::{OseenError, Result};
use crate::mesh::Mesh;

/// Velocity/pressure pair used for the discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    /// `[P1 + bubble]^2` velocity, P1 pressure.
    Mini,
    /// `[P2]^2` velocity, P1 pressure.
    #[serde(alias = "th")]
    TaylorHood,
}

impl ElementKind {
    /// Scalar velocity shape functions per cell.
    pub fn velocity_dofs_per_cell(self) -> usize {
        match self {
            ElementKind::Mini => 4,
            ElementKind::TaylorHood => 6,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ElementKind::Mini => "mini",
            ElementKind::TaylorHood => "th",
        }
    }
}

impl std::str::FromStr for ElementKind {
    type Err = OseenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mini" => Ok(ElementKind::Mini),
            "th" | "taylor_hood" | "taylor-hood" => Ok(ElementKind::TaylorHood),
            other => Err(OseenError::invalid(format!("unknown element `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Velocity,
    Pressure,
}

/// Values, gradients and Hessians of every shape function at one point.
#[derive(Debug, Clone, Default)]
pub struct BasisEval {
    pub values: Vec<f64>,
    pub gradients: Vec<[f64; 2]>,
    pub hessians: Vec<[[f64; 2]; 2]>,
}

impl BasisEval {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Gradients of the barycentric coordinates on the reference triangle with
/// vertices (0,0), (1,0), (0,1).
pub const REFERENCE_GRAD_LAMBDA: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

/// Validates that `lambda` lies in the closed reference triangle.
fn check_barycentric(lambda: &[f64; 3]) -> Result<()> {
    let sum: f64 = lambda.iter().sum();
    if (sum - 1.0).abs() > 1e-12 || lambda.iter().any(|&l| l < -1e-12) {
        return Err(OseenError::invalid(format!(
            "point {lambda:?} is not in the reference triangle"
        )));
    }
    Ok(())
}

/// Shape functions on the reference triangle at barycentric point `lambda`.
///
/// Velocity ordering: vertices 0..3 then either the bubble `27 l0 l1 l2` (mini)
/// or the edge functions `4 l_i l_j` for edges opposite vertices 0, 1, 2
/// (Taylor–Hood). Pressure is P1 for both kinds.
pub fn reference_basis(kind: ElementKind, role: Role, lambda: [f64; 3]) -> Result<BasisEval> {
    check_barycentric(&lambda)?;
    Ok(eval_basis(kind, role, lambda, &REFERENCE_GRAD_LAMBDA, 1.0))
}

/// Evaluates shape functions given the (constant) gradients of the
/// barycentric coordinates. `bubble_scale` multiplies the mini bubble.
pub fn eval_basis(
    kind: ElementKind,
    role: Role,
    l: [f64; 3],
    g: &[[f64; 2]; 3],
    bubble_scale: f64,
) -> BasisEval {
    // Hessian of l_i l_j is g_i g_j^T + g_j g_i^T.
    let sym = |i: usize, j: usize| -> [[f64; 2]; 2] {
        let mut h = [[0.0; 2]; 2];
        for (r, row) in h.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = g[i][r] * g[j][c] + g[j][r] * g[i][c];
            }
        }
        h
    };
    let mut out = BasisEval::default();
    let p1 = |out: &mut BasisEval| {
        for i in 0..3 {
            out.values.push(l[i]);
            out.gradients.push(g[i]);
            out.hessians.push([[0.0; 2]; 2]);
        }
    };
    match (role, kind) {
        (Role::Pressure, _) => p1(&mut out),
        (Role::Velocity, ElementKind::Mini) => {
            p1(&mut out);
            let s = 27.0 * bubble_scale;
            out.values.push(s * l[0] * l[1] * l[2]);
            let mut grad = [0.0; 2];
            for (d, gd) in grad.iter_mut().enumerate() {
                *gd = s * (g[0][d] * l[1] * l[2] + l[0] * g[1][d] * l[2] + l[0] * l[1] * g[2][d]);
            }
            out.gradients.push(grad);
            // d2(l0 l1 l2) = l2 H(l0 l1) + l1 H(l0 l2) + l0 H(l1 l2)
            let (h01, h02, h12) = (sym(0, 1), sym(0, 2), sym(1, 2));
            let mut h = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    h[r][c] = s * (l[2] * h01[r][c] + l[1] * h02[r][c] + l[0] * h12[r][c]);
                }
            }
            out.hessians.push(h);
        }
        (Role::Velocity, ElementKind::TaylorHood) => {
            for i in 0..3 {
                out.values.push(l[i] * (2.0 * l[i] - 1.0));
                let f = 4.0 * l[i] - 1.0;
                out.gradients.push([f * g[i][0], f * g[i][1]]);
                let h = sym(i, i);
                out.hessians.push([[2.0 * h[0][0], 2.0 * h[0][1]], [2.0 * h[1][0], 2.0 * h[1][1]]]);
            }
            for k in 0..3 {
                let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                out.values.push(4.0 * l[i] * l[j]);
                out.gradients.push([
                    4.0 * (g[i][0] * l[j] + l[i] * g[j][0]),
                    4.0 * (g[i][1] * l[j] + l[i] * g[j][1]),
                ]);
                let h = sym(i, j);
                out.hessians.push([[4.0 * h[0][0], 4.0 * h[0][1]], [4.0 * h[1][0], 4.0 * h[1][1]]]);
            }
        }
    }
    out
}

/// Affine map from the reference triangle onto a mesh cell.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub origin: [f64; 2],
    /// Columns are the edge vectors `p1 - p0` and `p2 - p0`.
    pub jacobian: [[f64; 2]; 2],
    pub inverse: [[f64; 2]; 2],
    pub det: f64,
}

impl AffineMap {
    pub fn new(p: [[f64; 2]; 3]) -> Self {
        let j = [
            [p[1][0] - p[0][0], p[2][0] - p[0][0]],
            [p[1][1] - p[0][1], p[2][1] - p[0][1]],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inverse = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
        Self {
            origin: p[0],
            jacobian: j,
            inverse,
            det,
        }
    }

    pub fn for_cell(mesh: &Mesh, c: usize) -> Self {
        Self::new(mesh.cell(c).map(|v| mesh.vertex(v)))
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det.abs()
    }

    pub fn to_physical(&self, lambda: [f64; 3]) -> [f64; 2] {
        let (x, y) = (lambda[1], lambda[2]);
        [
            self.origin[0] + self.jacobian[0][0] * x + self.jacobian[0][1] * y,
            self.origin[1] + self.jacobian[1][0] * x + self.jacobian[1][1] * y,
        ]
    }

    /// `J^{-T} g` for a reference gradient `g`.
    pub fn map_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        let k = &self.inverse;
        [k[0][0] * g[0] + k[1][0] * g[1], k[0][1] * g[0] + k[1][1] * g[1]]
    }

    /// `J^{-T} H J^{-1}` for a reference Hessian `H`.
    pub fn map_hessian(&self, h: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let k = &self.inverse;
        let mut out = [[0.0; 2]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        s += k[a][r] * h[a][b] * k[b][c];
                    }
                }
                *v = s;
            }
        }
        out
    }

    /// Physical gradients of the barycentric coordinates.
    pub fn grad_lambda(&self) -> [[f64; 2]; 3] {
        REFERENCE_GRAD_LAMBDA.map(|g| self.map_gradient(g))
    }
}

/// Shape functions mapped to a physical cell.
pub fn physical_basis(reference: &BasisEval, map: &AffineMap, out: &mut BasisEval) {
    out.values.clear();
    out.gradients.clear();
    out.hessians.clear();
    out.values.extend_from_slice(&reference.values);
    out.gradients.extend(reference.gradients.iter().map(|&g| map.map_gradient(g)));
    out.hessians.extend(reference.hessians.iter().map(|&h| map.map_hessian(h)));
}

/// Global numbering of the scalar velocity and pressure unknowns.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub kind: ElementKind,
    /// Scalar velocity dofs per component.
    pub n_vel: usize,
    pub n_press: usize,
    /// Per cell, global scalar-velocity indices in shape-function order.
    pub vel_entity_map: Vec<Vec<usize>>,
    /// Per cell, global pressure indices.
    pub press_entity_map: Vec<[usize; 3]>,
    /// True for scalar velocity dofs on the boundary.
    pub dirichlet_mask: Vec<bool>,
    /// Scalar velocity dof -> index among the free ones.
    pub free_index: Vec<Option<usize>>,
    /// Free index -> scalar velocity dof.
    pub free_dofs: Vec<usize>,
    /// Multiplies the mini bubble; any nonzero value spans the same space.
    pub bubble_scale: f64,
}

impl DofMap {
    pub fn new(mesh: &Mesh, kind: ElementKind) -> Self {
        let nv = mesh.n_vertices();
        let on_boundary = mesh.boundary_vertices();
        let (n_vel, vel_entity_map, dirichlet_mask) = match kind {
            ElementKind::Mini => {
                let map = (0..mesh.n_cells())
                    .map(|c| {
                        let [a, b, d] = mesh.cell(c);
                        vec![a, b, d, nv + c]
                    })
                    .collect();
                let mut mask = on_boundary.clone();
                mask.extend(std::iter::repeat_n(false, mesh.n_cells()));
                (nv + mesh.n_cells(), map, mask)
            }
            ElementKind::TaylorHood => {
                let map = (0..mesh.n_cells())
                    .map(|c| {
                        let [a, b, d] = mesh.cell(c);
                        let [e0, e1, e2] = mesh.cell_edges(c);
                        vec![a, b, d, nv + e0, nv + e1, nv + e2]
                    })
                    .collect();
                let mut mask = on_boundary.clone();
                mask.extend(mesh.boundary_flags().iter().copied());
                (nv + mesh.n_edges(), map, mask)
            }
        };
        let mut free_index = vec![None; n_vel];
        let mut free_dofs = Vec::new();
        for (i, &fixed) in dirichlet_mask.iter().enumerate() {
            if !fixed {
                free_index[i] = Some(free_dofs.len());
                free_dofs.push(i);
            }
        }
        Self {
            kind,
            n_vel,
            n_press: nv,
            vel_entity_map,
            press_entity_map: mesh.cells().to_vec(),
            dirichlet_mask,
            free_index,
            free_dofs,
            bubble_scale: 1.0,
        }
    }

    /// Same numbering with the mini bubble multiplied by `scale`.
    pub fn with_bubble_scale(mut self, scale: f64) -> Self {
        self.bubble_scale = scale;
        self
    }

    pub fn n_vel_free(&self) -> usize {
        self.free_dofs.len()
    }

    /// Dimension of the reduced saddle-point system: both free velocity
    /// components, pressure, and the zero-mean multiplier.
    pub fn system_dim(&self) -> usize {
        2 * self.n_vel_free() + self.n_press + 1
    }

    /// Reported degrees of freedom: `dim V_h + dim P_h` counted over all
    /// velocity nodes, plus the zero-mean multiplier.
    pub fn total_dof(&self) -> usize {
        2 * self.n_vel + self.n_press + 1
    }
}

pub fn build_dofmap(mesh: &Mesh, kind: ElementKind) -> DofMap {
    DofMap::new(mesh, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_square;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_interior(rng: &mut ChaCha8Rng) -> [f64; 3] {
        loop {
            let x: f64 = rng.random_range(0.01..0.98);
            let y: f64 = rng.random_range(0.01..0.98);
            if x + y < 0.99 {
                return [1.0 - x - y, x, y];
            }
        }
    }

    fn eval_at(kind: ElementKind, role: Role, x: f64, y: f64) -> BasisEval {
        eval_basis(kind, role, [1.0 - x - y, x, y], &REFERENCE_GRAD_LAMBDA, 1.0)
    }

    #[test]
    fn lagrange_property_and_bubble() {
        let verts = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for (i, &l) in verts.iter().enumerate() {
            let b = reference_basis(ElementKind::Mini, Role::Pressure, l).unwrap();
            for (j, &v) in b.values.iter().enumerate() {
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
        let c = reference_basis(ElementKind::Mini, Role::Velocity, [1.0 / 3.0; 3]).unwrap();
        assert!((c.values[3] - 1.0).abs() < 1e-14);
        assert!(c.gradients[3].iter().all(|g| g.abs() < 1e-14));
        // P2 edge nodes.
        for k in 0..3 {
            let mut l = [0.5; 3];
            l[k] = 0.0;
            let b = reference_basis(ElementKind::TaylorHood, Role::Velocity, l).unwrap();
            for (j, &v) in b.values.iter().enumerate() {
                let expect = if j == 3 + k { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn outside_point_rejected() {
        assert!(reference_basis(ElementKind::Mini, Role::Velocity, [1.2, -0.1, -0.1]).is_err());
        assert!(reference_basis(ElementKind::Mini, Role::Velocity, [0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let l = random_interior(&mut rng);
            let p1 = reference_basis(ElementKind::Mini, Role::Pressure, l).unwrap();
            let p2 = reference_basis(ElementKind::TaylorHood, Role::Velocity, l).unwrap();
            assert!((p1.values.iter().sum::<f64>() - 1.0).abs() <= 1e-13);
            assert!((p2.values.iter().sum::<f64>() - 1.0).abs() <= 1e-13);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 1e-5;
        for kind in [ElementKind::Mini, ElementKind::TaylorHood] {
            for role in [Role::Velocity, Role::Pressure] {
                for _ in 0..20 {
                    let l = random_interior(&mut rng);
                    let (x, y) = (l[1], l[2]);
                    let b = eval_at(kind, role, x, y);
                    let px = eval_at(kind, role, x + step, y);
                    let mx = eval_at(kind, role, x - step, y);
                    let py = eval_at(kind, role, x, y + step);
                    let my = eval_at(kind, role, x, y - step);
                    for i in 0..b.len() {
                        let fd = [
                            (px.values[i] - mx.values[i]) / (2.0 * step),
                            (py.values[i] - my.values[i]) / (2.0 * step),
                        ];
                        let fdh = [
                            [
                                (px.gradients[i][0] - mx.gradients[i][0]) / (2.0 * step),
                                (py.gradients[i][0] - my.gradients[i][0]) / (2.0 * step),
                            ],
                            [
                                (px.gradients[i][1] - mx.gradients[i][1]) / (2.0 * step),
                                (py.gradients[i][1] - my.gradients[i][1]) / (2.0 * step),
                            ],
                        ];
                        for d in 0..2 {
                            let g = b.gradients[i][d];
                            assert!((fd[d] - g).abs() <= 1e-6 * g.abs().max(1.0), "{kind:?} grad {i}");
                            for e in 0..2 {
                                let h = b.hessians[i][d][e];
                                assert!((fdh[d][e] - h).abs() <= 1e-6 * h.abs().max(1.0), "{kind:?} hess {i}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn second_derivatives_constant_for_p2_zero_for_p1() {
        let a = eval_at(ElementKind::TaylorHood, Role::Velocity, 0.1, 0.2);
        let b = eval_at(ElementKind::TaylorHood, Role::Velocity, 0.6, 0.3);
        assert_eq!(a.hessians, b.hessians);
        let p = eval_at(ElementKind::Mini, Role::Pressure, 0.3, 0.3);
        assert!(p.hessians.iter().flatten().flatten().all(|&h| h == 0.0));
    }

    #[test]
    fn mapped_derivatives_match_physical_evaluation() {
        let map = AffineMap::new([[0.3, -0.2], [1.1, 0.1], [0.4, 0.9]]);
        let l = [0.2, 0.5, 0.3];
        for kind in [ElementKind::Mini, ElementKind::TaylorHood] {
            let reference = reference_basis(kind, Role::Velocity, l).unwrap();
            let mut mapped = BasisEval::default();
            physical_basis(&reference, &map, &mut mapped);
            let direct = eval_basis(kind, Role::Velocity, l, &map.grad_lambda(), 1.0);
            for i in 0..direct.len() {
                for d in 0..2 {
                    assert!((mapped.gradients[i][d] - direct.gradients[i][d]).abs() < 1e-12);
                    for e in 0..2 {
                        assert!((mapped.hessians[i][d][e] - direct.hessians[i][d][e]).abs() < 1e-11);
                    }
                }
            }
        }
    }

    #[test]
    fn dof_counts_match_reference() {
        let expected = [(10, 764, 1004), (20, 2924, 3804), (30, 6484, 8404)];
        for (n, mini, th) in expected {
            let mesh = generate_square(n).unwrap();
            assert_eq!(build_dofmap(&mesh, ElementKind::Mini).total_dof(), mini);
            assert_eq!(build_dofmap(&mesh, ElementKind::TaylorHood).total_dof(), th);
        }
        let mesh = generate_square(1).unwrap();
        let d = build_dofmap(&mesh, ElementKind::Mini);
        assert_eq!(d.n_vel, 6);
        assert_eq!(d.n_vel_free(), 2);
        assert_eq!(d.n_press, 4);
    }

    #[test]
    fn dirichlet_mask_covers_boundary_only() {
        let mesh = generate_square(3).unwrap();
        let b = mesh.boundary_vertices();
        let mini = build_dofmap(&mesh, ElementKind::Mini);
        for v in 0..mesh.n_vertices() {
            assert_eq!(mini.dirichlet_mask[v], b[v]);
        }
        assert!(mini.dirichlet_mask[mesh.n_vertices()..].iter().all(|&m| !m));
        let th = build_dofmap(&mesh, ElementKind::TaylorHood);
        let boundary_edges = mesh.boundary_flags().iter().filter(|&&f| f).count();
        let masked = th.dirichlet_mask.iter().filter(|&&f| f).count();
        assert_eq!(masked, b.iter().filter(|&&f| f).count() + boundary_edges);
    }
}
