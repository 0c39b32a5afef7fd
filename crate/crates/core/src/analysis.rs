//! Convergence-rate fits, uniform refinement studies and the vanishing
//! convection study.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_forms, build_dual_pencil, build_primal_pencil, EigenPair, OseenParams};
use crate::eigensolver::{shift_invert_solve, SolverConfig};
use crate::error::{OseenError, Result};
use crate::estimator::{dual_indicators, primal_indicators};
use crate::fem::{build_dofmap, ElementKind};
use crate::mesh::{Domain, Mesh};

pub const ALPHA_MIN: f64 = 0.25;
pub const ALPHA_MAX: f64 = 10.0;
pub const ALPHA_STEP: f64 = 1e-3;
/// Relative size of imaginary parts tolerated by [`fit_rate`].
pub const IMAG_TOL: f64 = 1e-8;

/// Least-squares fit `lambda_h = lambda_extr + c h^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub lambda_extr: f64,
    pub c: f64,
    pub alpha: f64,
    /// Root mean square of the fit residuals.
    pub residual: f64,
}

/// Fits the real parts of `lambdas`; rejects non-negligible imaginary parts.
pub fn fit_rate(hs: &[f64], lambdas: &[Complex64]) -> Result<RateFit> {
    if let Some(l) = lambdas.iter().find(|l| l.im.abs() > IMAG_TOL * l.norm()) {
        return Err(OseenError::invalid(format!(
            "eigenvalue {} + {}i is not real; fit real parts explicitly",
            l.re, l.im
        )));
    }
    let values: Vec<f64> = lambdas.iter().map(|l| l.re).collect();
    fit_rate_real(hs, &values)
}

/// Grid search over `alpha` with exact linear least squares for the other
/// two coefficients.
pub fn fit_rate_real(hs: &[f64], values: &[f64]) -> Result<RateFit> {
    if hs.len() != values.len() {
        return Err(OseenError::invalid(format!(
            "{} mesh sizes for {} eigenvalues",
            hs.len(),
            values.len()
        )));
    }
    if hs.len() < 3 {
        return Err(OseenError::invalid("rate fit needs at least three samples"));
    }
    if hs.windows(2).any(|w| !(w[1] < w[0])) || hs.iter().any(|&h| !(h > 0.0)) {
        return Err(OseenError::invalid("mesh sizes must be positive and strictly decreasing"));
    }
    let n = hs.len() as f64;
    let steps = ((ALPHA_MAX - ALPHA_MIN) / ALPHA_STEP).round() as usize;
    let mut best: Option<RateFit> = None;
    let mut best_sse = f64::INFINITY;
    for k in 0..=steps {
        let alpha = ALPHA_MIN + k as f64 * ALPHA_STEP;
        let x: Vec<f64> = hs.iter().map(|h| h.powf(alpha)).collect();
        let (sx, sy) = (x.iter().sum::<f64>(), values.iter().sum::<f64>());
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(values).map(|(a, b)| a * b).sum();
        let det = n * sxx - sx * sx;
        if det.abs() <= f64::EPSILON * n * sxx {
            continue;
        }
        let c = (n * sxy - sx * sy) / det;
        let a = (sy - c * sx) / n;
        let sse: f64 = x.iter().zip(values).map(|(xi, yi)| (yi - a - c * xi).powi(2)).sum();
        if sse < best_sse {
            best_sse = sse;
            best = Some(RateFit {
                lambda_extr: a,
                c,
                alpha,
                residual: (sse / n).sqrt(),
            });
        }
    }
    best.ok_or_else(|| OseenError::invalid("degenerate rate fit"))
}

/// One mesh level of a uniform study; error columns refer to the first
/// eigenvalue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRow {
    pub n: usize,
    pub h: f64,
    pub dof: usize,
    pub lambdas: Vec<[f64; 2]>,
    pub err: f64,
    pub eta2: f64,
    pub etastar2: f64,
    pub eff: f64,
    pub effstar: f64,
    /// Rate between this level and the previous one (0 on the first).
    pub order: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniformStudy {
    pub rows: Vec<StudyRow>,
    /// One fit per tracked eigenvalue index.
    pub fits: Vec<RateFit>,
    pub warnings: Vec<String>,
}

fn nearest(pairs: Vec<EigenPair>, target: Complex64) -> Result<EigenPair> {
    pairs
        .into_iter()
        .min_by(|a, b| (a.lambda - target).norm().total_cmp(&(b.lambda - target).norm()))
        .ok_or_else(|| OseenError::Internal("dual solve returned no eigenvalues".into()))
}

/// Solves `solver.nev` eigenvalues on each `domain.mesh(n)`, estimates the
/// first one with both estimators, and fits each eigenvalue's convergence.
pub fn uniform_study(
    domain: Domain,
    params: &OseenParams,
    element: ElementKind,
    levels: &[usize],
    solver: &SolverConfig,
) -> Result<UniformStudy> {
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(OseenError::invalid("levels must be strictly increasing"));
    }
    let meshes = levels.iter().map(|&n| Ok((n, domain.mesh(n)?))).collect::<Result<Vec<_>>>()?;
    uniform_study_meshes(meshes, params, element, solver)
}

/// [`uniform_study`] on explicit `(label, mesh)` levels ordered coarse to fine.
pub fn uniform_study_meshes(
    levels: Vec<(usize, Mesh)>,
    params: &OseenParams,
    element: ElementKind,
    solver: &SolverConfig,
) -> Result<UniformStudy> {
    if levels.len() < 3 {
        return Err(OseenError::invalid("a uniform study needs at least three levels"));
    }
    params.validate()?;
    let mut rows = Vec::with_capacity(levels.len());
    for (n, mesh) in levels {
        let dofmap = build_dofmap(&mesh, element);
        let forms = assemble_forms(&mesh, &dofmap, params)?;
        let primal = build_primal_pencil(&forms, &dofmap)?;
        let pairs = shift_invert_solve(&primal, solver)?;
        if pairs.len() < solver.nev {
            return Err(OseenError::Internal(format!("only {} eigenvalues found", pairs.len())));
        }
        let eta = primal_indicators(&mesh, &dofmap, params, &pairs[0])?;
        let dual_pencil = build_dual_pencil(&forms, &dofmap)?;
        let dual_pair = nearest(shift_invert_solve(&dual_pencil, &SolverConfig { nev: 1, ..*solver })?, pairs[0].lambda)?;
        let eta_star = dual_indicators(&mesh, &dofmap, params, &dual_pair)?;
        rows.push(StudyRow {
            n,
            h: mesh.h_max(),
            dof: dofmap.total_dof(),
            lambdas: pairs.iter().take(solver.nev).map(|p| [p.lambda.re, p.lambda.im]).collect(),
            err: f64::NAN,
            eta2: eta.eta2,
            etastar2: eta_star.eta2,
            eff: f64::NAN,
            effstar: f64::NAN,
            order: 0.0,
        });
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let mut warnings = Vec::new();
    let mut fits = Vec::with_capacity(solver.nev);
    for k in 0..solver.nev {
        let values: Vec<Complex64> = rows.iter().map(|r| Complex64::new(r.lambdas[k][0], r.lambdas[k][1])).collect();
        if values.iter().any(|l| l.im.abs() > IMAG_TOL * l.norm()) {
            warnings.push(format!("eigenvalue {} is complex; rate fitted on real parts", k + 1));
        }
        let re: Vec<f64> = values.iter().map(|l| l.re).collect();
        fits.push(fit_rate_real(&hs, &re)?);
    }
    let reference = fits[0].lambda_extr;
    for r in rows.iter_mut() {
        let l = Complex64::new(r.lambdas[0][0], r.lambdas[0][1]);
        r.err = (l - reference).norm() / reference.abs();
        r.eff = r.err / r.eta2;
        r.effstar = r.err / r.etastar2;
    }
    for i in 1..rows.len() {
        rows[i].order = (rows[i - 1].err / rows[i].err).ln() / (rows[i - 1].h / rows[i].h).ln();
    }
    Ok(UniformStudy { rows, fits, warnings })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StokesLimitRow {
    pub i: i32,
    pub beta_norm: f64,
    /// One-based eigenvalue index.
    pub k: usize,
    pub lambda: [f64; 2],
    pub stokes: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StokesLimitStudy {
    pub stokes: Vec<f64>,
    pub rows: Vec<StokesLimitRow>,
    /// `(i, max_k |lambda_k - lambda_k^S|)` per exponent.
    pub gaps: Vec<(i32, f64)>,
}

/// Greedy nearest matching of each Stokes eigenvalue to an unused Oseen one.
fn match_spectra(stokes: &[f64], oseen: &[Complex64]) -> Vec<Complex64> {
    let mut used = vec![false; oseen.len()];
    stokes
        .iter()
        .map(|&s| {
            let (j, _) = oseen
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .min_by(|a, b| (a.1 - s).norm().total_cmp(&(b.1 - s).norm()))
                .expect("enough Oseen eigenvalues");
            used[j] = true;
            oseen[j]
        })
        .collect()
}

/// Oseen spectra for `beta = (2^-i, 0)` compared with the Stokes spectrum on
/// the same mesh.
pub fn stokes_limit_study(
    mesh: &Mesh,
    nu: f64,
    element: ElementKind,
    exponents: &[i32],
    solver: &SolverConfig,
) -> Result<StokesLimitStudy> {
    if exponents.is_empty() {
        return Err(OseenError::invalid("no exponents given"));
    }
    let dofmap = build_dofmap(mesh, element);
    let spectrum = |beta: [f64; 2], nev: usize| -> Result<Vec<Complex64>> {
        let params = OseenParams::new(nu, beta)?;
        let forms = assemble_forms(mesh, &dofmap, &params)?;
        let pencil = build_primal_pencil(&forms, &dofmap)?;
        let config = SolverConfig {
            nev,
            max_krylov: solver.max_krylov.max(2 * nev + 8),
            ..*solver
        };
        Ok(shift_invert_solve(&pencil, &config)?.into_iter().map(|p| p.lambda).collect())
    };
    let k = solver.nev;
    let stokes: Vec<f64> = spectrum([0.0, 0.0], k)?.into_iter().take(k).map(|l| l.re).collect();
    let mut rows = Vec::new();
    let mut gaps = Vec::new();
    for &i in exponents {
        let b = 2f64.powi(-i);
        let oseen = spectrum([b, 0.0], k + 4)?;
        let matched = match_spectra(&stokes, &oseen);
        let mut max_gap: f64 = 0.0;
        for (idx, (&s, l)) in stokes.iter().zip(&matched).enumerate() {
            let gap = (l - s).norm();
            max_gap = max_gap.max(gap);
            rows.push(StokesLimitRow {
                i,
                beta_norm: b,
                k: idx + 1,
                lambda: [l.re, l.im],
                stokes: s,
                gap,
            });
        }
        gaps.push((i, max_gap));
    }
    Ok(StokesLimitStudy { stokes, rows, gaps })
}
