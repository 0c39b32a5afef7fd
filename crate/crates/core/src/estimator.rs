//! Residual a posteriori error indicators for primal and dual eigenpairs.
//!
//! For a cell `T` the indicator is
//! `h_T^2 ||r||_T^2 + ||div u||_T^2 + sum_e (h_e / 2) ||[[sigma n]]||_e^2`
//! over the interior edges of `T`, with `r` the strong residual of the
//! momentum equation and `sigma = nu grad u - p I` the flux.
//!
//! Pressures are taken in the convention of the assembled pencils
//! (`b(v, q) = -int q div v`) for both problems, so the dual residual is
//! `lambda u* + nu Lap u* + (beta . grad) u* - grad p*` and the dual flux
//! is `nu grad u* - p* I`.

use num_complex::Complex64;
use serde::Serialize;

use crate::assembly::{EigenPair, Fields, OseenParams, Problem, EDGE_DEGREE, VOLUME_DEGREE};
use crate::error::{OseenError, Result};
use crate::fem::{eval_basis, physical_basis, AffineMap, BasisEval, DofMap, Role, REFERENCE_GRAD_LAMBDA};
use crate::mesh::Mesh;
use crate::quadrature::{edge_rule, triangle_rule};

/// Accepted deviation of `||u_h||_0` from one.
pub const NORMALIZATION_TOL: f64 = 1e-8;

type C = Complex64;

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub kind: Problem,
    pub lambda: [f64; 2],
    /// Total indicator `eta_T^2` per cell.
    pub per_cell: Vec<f64>,
    pub per_cell_r: Vec<f64>,
    pub per_cell_d: Vec<f64>,
    pub per_cell_j: Vec<f64>,
    /// `h_e ||[[sigma n]]||_e^2` per edge; zero on the boundary.
    pub edge_jumps: Vec<f64>,
    pub r: f64,
    pub d: f64,
    pub j: f64,
    pub eta2: f64,
}

impl EstimateReport {
    pub fn eta(&self) -> f64 {
        self.eta2.sqrt()
    }

    pub fn n_cells(&self) -> usize {
        self.per_cell.len()
    }
}

/// Local coefficients of a complex discrete field on one cell.
struct CellField {
    ux: Vec<C>,
    uy: Vec<C>,
    p: [C; 3],
}

struct FieldEval {
    u: [C; 2],
    /// `grad[i][j] = d u_i / d x_j`.
    grad: [[C; 2]; 2],
    lap: [C; 2],
    p: C,
    grad_p: [C; 2],
}

fn evaluate(field: &CellField, vel: &BasisEval, press: &BasisEval) -> FieldEval {
    let zero = C::new(0.0, 0.0);
    let mut out = FieldEval {
        u: [zero; 2],
        grad: [[zero; 2]; 2],
        lap: [zero; 2],
        p: zero,
        grad_p: [zero; 2],
    };
    for (i, (&cx, &cy)) in field.ux.iter().zip(&field.uy).enumerate() {
        let (v, g, h) = (vel.values[i], vel.gradients[i], vel.hessians[i]);
        let lap = h[0][0] + h[1][1];
        out.u[0] += cx * v;
        out.u[1] += cy * v;
        for j in 0..2 {
            out.grad[0][j] += cx * g[j];
            out.grad[1][j] += cy * g[j];
        }
        out.lap[0] += cx * lap;
        out.lap[1] += cy * lap;
    }
    for (a, &pa) in field.p.iter().enumerate() {
        out.p += pa * press.values[a];
        out.grad_p[0] += pa * press.gradients[a][0];
        out.grad_p[1] += pa * press.gradients[a][1];
    }
    out
}

fn cell_field(fields: &Fields, dofmap: &DofMap, c: usize) -> CellField {
    let vel = &dofmap.vel_entity_map[c];
    let press = &dofmap.press_entity_map[c];
    CellField {
        ux: vel.iter().map(|&d| fields.u[0][d]).collect(),
        uy: vel.iter().map(|&d| fields.u[1][d]).collect(),
        p: press.map(|d| fields.p[d]),
    }
}

fn check_inputs(mesh: &Mesh, dofmap: &DofMap, params: &OseenParams, mass_norm: f64) -> Result<()> {
    let _ = (mesh, dofmap, params);
    if (mass_norm - 1.0).abs() > NORMALIZATION_TOL {
        return Err(OseenError::invalid(format!(
            "eigenpair is not normalized: ||u_h||_0 = {mass_norm}"
        )));
    }
    Ok(())
}

fn estimate(mesh: &Mesh, dofmap: &DofMap, params: &OseenParams, pair: &EigenPair, kind: Problem) -> Result<EstimateReport> {
    if pair.x.len() != dofmap.system_dim() {
        return Err(OseenError::invalid(format!(
            "eigenvector has length {}, expected {}",
            pair.x.len(),
            dofmap.system_dim()
        )));
    }
    let (report, norm) = estimate_fields(mesh, dofmap, params, &pair.fields(dofmap), pair.lambda, kind)?;
    check_inputs(mesh, dofmap, params, norm)?;
    Ok(report)
}

/// Indicators for arbitrary discrete fields; also returns `||u_h||_0`.
fn estimate_fields(
    mesh: &Mesh,
    dofmap: &DofMap,
    params: &OseenParams,
    fields: &Fields,
    lambda: C,
    kind: Problem,
) -> Result<(EstimateReport, f64)> {
    params.validate()?;
    if dofmap.vel_entity_map.len() != mesh.n_cells() {
        return Err(OseenError::invalid("dof map does not match mesh"));
    }
    let rule = triangle_rule(VOLUME_DEGREE)?;
    let scale = dofmap.bubble_scale;
    let ref_vel: Vec<BasisEval> = rule
        .points
        .iter()
        .map(|&l| eval_basis(dofmap.kind, Role::Velocity, l, &REFERENCE_GRAD_LAMBDA, scale))
        .collect();
    let ref_press: Vec<BasisEval> = rule
        .points
        .iter()
        .map(|&l| eval_basis(dofmap.kind, Role::Pressure, l, &REFERENCE_GRAD_LAMBDA, 1.0))
        .collect();
    let (nu, beta) = (params.nu, params.beta);
    let sign = match kind {
        Problem::Primal => -1.0,
        Problem::Dual => 1.0,
    };

    let n_cells = mesh.n_cells();
    let mut per_cell_r = vec![0.0; n_cells];
    let mut per_cell_d = vec![0.0; n_cells];
    let mut norm_sq = 0.0;
    let mut phys_v = BasisEval::default();
    let mut phys_p = BasisEval::default();
    for c in 0..n_cells {
        let map = AffineMap::for_cell(mesh, c);
        let field = cell_field(fields, dofmap, c);
        let h = mesh.diameter(c);
        let (mut r2, mut d2) = (0.0, 0.0);
        for (q, w) in rule.weights.iter().enumerate() {
            let w = w * map.det;
            physical_basis(&ref_vel[q], &map, &mut phys_v);
            physical_basis(&ref_press[q], &map, &mut phys_p);
            let f = evaluate(&field, &phys_v, &phys_p);
            for i in 0..2 {
                let conv = f.grad[i][0] * beta[0] + f.grad[i][1] * beta[1];
                let r = lambda * f.u[i] + f.lap[i] * nu + conv * sign - f.grad_p[i];
                r2 += w * r.norm_sqr();
                norm_sq += w * f.u[i].norm_sqr();
            }
            d2 += w * (f.grad[0][0] + f.grad[1][1]).norm_sqr();
        }
        per_cell_r[c] = h * h * r2;
        per_cell_d[c] = d2;
    }

    let erule = edge_rule(EDGE_DEGREE)?;
    let mut edge_jumps = vec![0.0; mesh.n_edges()];
    let mut per_cell_j = vec![0.0; n_cells];
    for (e, jump_out) in edge_jumps.iter_mut().enumerate() {
        let (c1, c2) = match mesh.edge_cells(e) {
            (a, Some(b)) => (a, b),
            _ => continue,
        };
        let [va, vb] = mesh.edges()[e];
        let (pa, pb) = (mesh.vertex(va), mesh.vertex(vb));
        let len = mesh.edge_length(e);
        let normal = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
        let sides = [c1, c2].map(|c| {
            let cell = mesh.cell(c);
            let ia = cell.iter().position(|&v| v == va).expect("edge vertex in cell");
            let ib = cell.iter().position(|&v| v == vb).expect("edge vertex in cell");
            (c, ia, ib, AffineMap::for_cell(mesh, c), cell_field(fields, dofmap, c))
        });
        let mut jump2 = 0.0;
        for (pt, w) in erule.iter() {
            let mut flux = [[C::new(0.0, 0.0); 2]; 2];
            for (s, (_, ia, ib, map, field)) in sides.iter().enumerate() {
                let mut l = [0.0; 3];
                l[*ia] = pt[0];
                l[*ib] = pt[1];
                let rv = eval_basis(dofmap.kind, Role::Velocity, l, &REFERENCE_GRAD_LAMBDA, scale);
                let rp = eval_basis(dofmap.kind, Role::Pressure, l, &REFERENCE_GRAD_LAMBDA, 1.0);
                physical_basis(&rv, map, &mut phys_v);
                physical_basis(&rp, map, &mut phys_p);
                let f = evaluate(field, &phys_v, &phys_p);
                for i in 0..2 {
                    flux[s][i] = (f.grad[i][0] * normal[0] + f.grad[i][1] * normal[1]) * nu - f.p * normal[i];
                }
            }
            for i in 0..2 {
                jump2 += w * len * (flux[0][i] - flux[1][i]).norm_sqr();
            }
        }
        let contribution = len * jump2;
        *jump_out = contribution;
        per_cell_j[c1] += 0.5 * contribution;
        per_cell_j[c2] += 0.5 * contribution;
    }

    let per_cell: Vec<f64> = (0..n_cells).map(|c| per_cell_r[c] + per_cell_d[c] + per_cell_j[c]).collect();
    let r: f64 = per_cell_r.iter().sum();
    let d: f64 = per_cell_d.iter().sum();
    let j: f64 = per_cell_j.iter().sum();
    let report = EstimateReport {
        kind,
        lambda: [lambda.re, lambda.im],
        eta2: per_cell.iter().sum(),
        per_cell,
        per_cell_r,
        per_cell_d,
        per_cell_j,
        edge_jumps,
        r,
        d,
        j,
    };
    Ok((report, norm_sq.sqrt()))
}

/// Indicators `eta_T^2` for an eigenpair of the primal pencil.
pub fn primal_indicators(mesh: &Mesh, dofmap: &DofMap, params: &OseenParams, pair: &EigenPair) -> Result<EstimateReport> {
    estimate(mesh, dofmap, params, pair, Problem::Primal)
}

/// Indicators `eta*_T^2` for an eigenpair of the dual pencil.
pub fn dual_indicators(mesh: &Mesh, dofmap: &DofMap, params: &OseenParams, pair: &EigenPair) -> Result<EstimateReport> {
    estimate(mesh, dofmap, params, pair, Problem::Dual)
}

/// `theta = sqrt(eta^2 + eta*^2)` and the per-cell `theta_T^2`.
pub fn combined_theta(primal: &EstimateReport, dual: &EstimateReport) -> Result<(f64, Vec<f64>)> {
    if primal.n_cells() != dual.n_cells() {
        return Err(OseenError::invalid(format!(
            "reports cover {} and {} cells",
            primal.n_cells(),
            dual.n_cells()
        )));
    }
    let per_cell: Vec<f64> = primal.per_cell.iter().zip(&dual.per_cell).map(|(a, b)| a + b).collect();
    Ok(((primal.eta2 + dual.eta2).sqrt(), per_cell))
}
