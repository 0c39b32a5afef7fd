//! Assembly of the Oseen bilinear forms and of the primal and dual
//! generalized eigenvalue pencils.
//!
//! Unknowns of the reduced system are ordered as free x-velocity, free
//! y-velocity, pressure, and one scalar multiplier enforcing zero mean
//! pressure. Dirichlet velocity dofs are eliminated.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{OseenError, Result};
use crate::fem::{eval_basis, physical_basis, AffineMap, BasisEval, DofMap, Role, REFERENCE_GRAD_LAMBDA};
use crate::mesh::Mesh;
use crate::quadrature::triangle_rule;
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Volume quadrature degree used for all assembled integrands.
pub const VOLUME_DEGREE: usize = 8;
/// Edge quadrature degree.
pub const EDGE_DEGREE: usize = 7;

/// Viscosity and constant convective velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OseenParams {
    pub nu: f64,
    pub beta: [f64; 2],
}

impl Default for OseenParams {
    fn default() -> Self {
        Self { nu: 1.0, beta: [1.0, 0.0] }
    }
}

impl OseenParams {
    pub fn new(nu: f64, beta: [f64; 2]) -> Result<Self> {
        let p = Self { nu, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn stokes(nu: f64) -> Self {
        Self { nu, beta: [0.0, 0.0] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(OseenError::invalid(format!("viscosity must be positive, got {}", self.nu)));
        }
        if !self.beta.iter().all(|b| b.is_finite()) {
            return Err(OseenError::invalid("convective velocity must be finite"));
        }
        Ok(())
    }

    pub fn beta_norm_inf(&self) -> f64 {
        self.beta[0].abs().max(self.beta[1].abs())
    }
}

/// Scalar matrices over all velocity dofs (boundary included) and pressure
/// blocks.
#[derive(Debug, Clone)]
pub struct Forms {
    /// `nu (grad phi_j, grad phi_i)`.
    pub stiffness: CsrMatrix,
    /// `((beta . grad) phi_j, phi_i)`.
    pub convection: CsrMatrix,
    /// `-(psi_q, d_x phi_j)` and `-(psi_q, d_y phi_j)`.
    pub divergence: [CsrMatrix; 2],
    /// `(phi_j, phi_i)`.
    pub mass: CsrMatrix,
    /// `m_q = integral of psi_q`.
    pub pressure_mean: Vec<f64>,
}

pub fn assemble_forms(mesh: &Mesh, dofmap: &DofMap, params: &OseenParams) -> Result<Forms> {
    params.validate()?;
    let beta = params.beta;
    assemble_forms_with_field(mesh, dofmap, params.nu, |_| beta)
}

/// As [`assemble_forms`] with a convective field evaluated at quadrature
/// points. Skew-symmetry of the convection matrix then requires
/// `div beta = 0`, which is not checked.
pub fn assemble_forms_with_field<F>(mesh: &Mesh, dofmap: &DofMap, nu: f64, beta: F) -> Result<Forms>
where
    F: Fn([f64; 2]) -> [f64; 2],
{
    if dofmap.vel_entity_map.len() != mesh.n_cells() || dofmap.n_press != mesh.n_vertices() {
        return Err(OseenError::Internal("dof map does not match mesh".into()));
    }
    let kind = dofmap.kind;
    let rule = triangle_rule(VOLUME_DEGREE)?;
    let ref_vel: Vec<BasisEval> = rule
        .points
        .iter()
        .map(|&l| eval_basis(kind, Role::Velocity, l, &REFERENCE_GRAD_LAMBDA, dofmap.bubble_scale))
        .collect();
    let ref_press: Vec<BasisEval> = rule
        .points
        .iter()
        .map(|&l| eval_basis(kind, Role::Pressure, l, &REFERENCE_GRAD_LAMBDA, 1.0))
        .collect();

    let nloc = kind.velocity_dofs_per_cell();
    let nv = dofmap.n_vel;
    let np = dofmap.n_press;
    let cap = mesh.n_cells() * nloc * nloc;
    let mut stiffness = TripletBuilder::with_capacity(nv, nv, cap);
    let mut convection = TripletBuilder::with_capacity(nv, nv, cap);
    let mut mass = TripletBuilder::with_capacity(nv, nv, cap);
    let mut bx = TripletBuilder::with_capacity(np, nv, mesh.n_cells() * 3 * nloc);
    let mut by = TripletBuilder::with_capacity(np, nv, mesh.n_cells() * 3 * nloc);
    let mut pressure_mean = vec![0.0; np];

    let mut phys = BasisEval::default();
    let mut s_loc = vec![0.0; nloc * nloc];
    let mut c_loc = vec![0.0; nloc * nloc];
    let mut m_loc = vec![0.0; nloc * nloc];
    let mut bx_loc = vec![0.0; 3 * nloc];
    let mut by_loc = vec![0.0; 3 * nloc];

    for c in 0..mesh.n_cells() {
        let map = AffineMap::for_cell(mesh, c);
        if !(map.det > 0.0) {
            return Err(OseenError::Mesh(format!("cell {c} is inverted or degenerate")));
        }
        s_loc.fill(0.0);
        c_loc.fill(0.0);
        m_loc.fill(0.0);
        bx_loc.fill(0.0);
        by_loc.fill(0.0);
        let mut mean_loc = [0.0; 3];
        for (q, (&lambda, w)) in rule.iter().enumerate() {
            let w = w * map.det;
            physical_basis(&ref_vel[q], &map, &mut phys);
            let b = beta(map.to_physical(lambda));
            let psi = &ref_press[q].values;
            for i in 0..nloc {
                let (vi, gi) = (phys.values[i], phys.gradients[i]);
                for j in 0..nloc {
                    let (vj, gj) = (phys.values[j], phys.gradients[j]);
                    c_loc[i * nloc + j] += w * (b[0] * gj[0] + b[1] * gj[1]) * vi;
                    if j >= i {
                        s_loc[i * nloc + j] += w * nu * (gi[0] * gj[0] + gi[1] * gj[1]);
                        m_loc[i * nloc + j] += w * vi * vj;
                    }
                }
            }
            for a in 0..3 {
                mean_loc[a] += w * psi[a];
                for j in 0..nloc {
                    bx_loc[a * nloc + j] -= w * psi[a] * phys.gradients[j][0];
                    by_loc[a * nloc + j] -= w * psi[a] * phys.gradients[j][1];
                }
            }
        }
        // Mirror so the assembled symmetric forms are bitwise symmetric.
        for i in 0..nloc {
            for j in 0..i {
                s_loc[i * nloc + j] = s_loc[j * nloc + i];
                m_loc[i * nloc + j] = m_loc[j * nloc + i];
            }
        }
        let vel = &dofmap.vel_entity_map[c];
        let press = &dofmap.press_entity_map[c];
        for i in 0..nloc {
            for j in 0..nloc {
                stiffness.push(vel[i], vel[j], s_loc[i * nloc + j]);
                convection.push(vel[i], vel[j], c_loc[i * nloc + j]);
                mass.push(vel[i], vel[j], m_loc[i * nloc + j]);
            }
        }
        for a in 0..3 {
            pressure_mean[press[a]] += mean_loc[a];
            for j in 0..nloc {
                bx.push(press[a], vel[j], bx_loc[a * nloc + j]);
                by.push(press[a], vel[j], by_loc[a * nloc + j]);
            }
        }
    }

    Ok(Forms {
        stiffness: stiffness.build(),
        convection: convection.build(),
        divergence: [bx.build(), by.build()],
        mass: mass.build(),
        pressure_mean,
    })
}

/// Restriction of a velocity-velocity matrix to free dofs.
pub fn restrict_free(matrix: &CsrMatrix, dofmap: &DofMap) -> CsrMatrix {
    let nf = dofmap.n_vel_free();
    let entries = matrix
        .triplets()
        .filter_map(|(r, c, v)| Some((dofmap.free_index[r]?, dofmap.free_index[c]?, v)))
        .collect();
    CsrMatrix::from_triplets(nf, nf, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    Primal,
    Dual,
}

/// Index ranges of the reduced unknown vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_free: usize,
    pub n_press: usize,
}

impl Layout {
    pub fn of(dofmap: &DofMap) -> Self {
        Self {
            n_free: dofmap.n_vel_free(),
            n_press: dofmap.n_press,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.n_free + self.n_press + 1
    }

    pub fn velocity(&self, component: usize) -> std::ops::Range<usize> {
        component * self.n_free..(component + 1) * self.n_free
    }

    pub fn pressure(&self) -> std::ops::Range<usize> {
        2 * self.n_free..2 * self.n_free + self.n_press
    }

    pub fn multiplier(&self) -> usize {
        2 * self.n_free + self.n_press
    }
}

/// Sparse pair `(K, M)` of the problem `K x = lambda M x`.
#[derive(Debug, Clone)]
pub struct Pencil {
    pub k: CsrMatrix,
    pub m: CsrMatrix,
    pub layout: Option<Layout>,
    pub problem: Problem,
}

impl Pencil {
    /// A bare pencil without field layout.
    pub fn new(k: CsrMatrix, m: CsrMatrix) -> Result<Self> {
        if k.nrows() != k.ncols() || m.nrows() != m.ncols() || k.nrows() != m.nrows() {
            return Err(OseenError::invalid("pencil matrices must be square and of equal size"));
        }
        Ok(Self {
            k,
            m,
            layout: None,
            problem: Problem::Primal,
        })
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    /// `||K x - lambda M x||_2 / ||x||_2`.
    pub fn residual(&self, lambda: Complex64, x: &[Complex64]) -> f64 {
        let kx = self.k.matvec_complex(x);
        let mx = self.m.matvec_complex(x);
        let r: f64 = kx.iter().zip(&mx).map(|(a, b)| (a - lambda * b).norm_sqr()).sum();
        let n: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        (r / n).sqrt()
    }
}

/// `K = [[S + C, B^T, 0], [B, 0, m], [0, m^T, 0]]`, `M = blockdiag(Mu, Mu, 0, 0)`
/// on free velocity dofs.
pub fn build_primal_pencil(forms: &Forms, dofmap: &DofMap) -> Result<Pencil> {
    let layout = Layout::of(dofmap);
    let nf = layout.n_free;
    if nf == 0 {
        return Err(OseenError::Assembly("mesh has no interior velocity dofs".into()));
    }
    let n = layout.dim();
    let p0 = layout.pressure().start;
    let mult = layout.multiplier();
    let mut k = TripletBuilder::new(n, n);
    let mut m = TripletBuilder::new(n, n);
    for (r, c, v) in forms.stiffness.triplets().chain(forms.convection.triplets()) {
        if let (Some(fr), Some(fc)) = (dofmap.free_index[r], dofmap.free_index[c]) {
            k.push(fr, fc, v);
            k.push(nf + fr, nf + fc, v);
        }
    }
    for (r, c, v) in forms.mass.triplets() {
        if let (Some(fr), Some(fc)) = (dofmap.free_index[r], dofmap.free_index[c]) {
            m.push(fr, fc, v);
            m.push(nf + fr, nf + fc, v);
        }
    }
    for (comp, b) in forms.divergence.iter().enumerate() {
        for (q, c, v) in b.triplets() {
            if let Some(fc) = dofmap.free_index[c] {
                let col = comp * nf + fc;
                k.push(p0 + q, col, v);
                k.push(col, p0 + q, v);
            }
        }
    }
    for (q, &mq) in forms.pressure_mean.iter().enumerate() {
        k.push(p0 + q, mult, mq);
        k.push(mult, p0 + q, mq);
    }
    let k = k.build();
    for r in 0..n {
        if k.row(r).all(|(_, v)| v == 0.0) {
            return Err(OseenError::Assembly(format!("row {r} of the system matrix is empty")));
        }
    }
    Ok(Pencil {
        k,
        m: m.build(),
        layout: Some(layout),
        problem: Problem::Primal,
    })
}

/// The adjoint pencil `(K^T, M)`.
pub fn build_dual_pencil(forms: &Forms, dofmap: &DofMap) -> Result<Pencil> {
    let primal = build_primal_pencil(forms, dofmap)?;
    Ok(dual_of(&primal))
}

pub fn dual_of(primal: &Pencil) -> Pencil {
    Pencil {
        k: primal.k.transpose(),
        m: primal.m.clone(),
        layout: primal.layout,
        problem: match primal.problem {
            Problem::Primal => Problem::Dual,
            Problem::Dual => Problem::Primal,
        },
    }
}

/// Velocity and pressure coefficient vectors of an eigenpair, expanded to
/// all dofs (Dirichlet dofs are zero).
#[derive(Debug, Clone)]
pub struct Fields {
    pub u: [Vec<Complex64>; 2],
    pub p: Vec<Complex64>,
}

impl Fields {
    pub fn from_reduced(x: &[Complex64], dofmap: &DofMap) -> Self {
        let layout = Layout::of(dofmap);
        let mut u = [vec![Complex64::new(0.0, 0.0); dofmap.n_vel], vec![Complex64::new(0.0, 0.0); dofmap.n_vel]];
        for (comp, uc) in u.iter_mut().enumerate() {
            for (f, &dof) in dofmap.free_dofs.iter().enumerate() {
                uc[dof] = x[layout.velocity(comp).start + f];
            }
        }
        Self {
            u,
            p: x[layout.pressure()].to_vec(),
        }
    }
}

/// A computed eigenvalue with its reduced eigenvector.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: Complex64,
    /// Reduced coefficient vector, normalized so that `x^H M x = 1`.
    pub x: Vec<Complex64>,
    pub residual: f64,
}

impl EigenPair {
    pub fn fields(&self, dofmap: &DofMap) -> Fields {
        Fields::from_reduced(&self.x, dofmap)
    }

    /// `||u_h||_{0,Omega}` from the velocity mass matrix.
    pub fn velocity_l2_norm(&self, mass: &CsrMatrix) -> f64 {
        let mx = mass.matvec_complex(&self.x);
        self.x.iter().zip(&mx).map(|(a, b)| (a.conj() * b).re).sum::<f64>().max(0.0).sqrt()
    }

    /// `integral of p_h` using the pressure mean vector.
    pub fn pressure_mean(&self, dofmap: &DofMap, forms: &Forms) -> Complex64 {
        let r = Layout::of(dofmap).pressure();
        self.x[r].iter().zip(&forms.pressure_mean).map(|(p, m)| p * m).sum()
    }
}
