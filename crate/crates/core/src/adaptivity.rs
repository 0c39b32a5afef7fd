//! Adaptive solve, estimate, mark and refine loop.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_forms, build_dual_pencil, build_primal_pencil, EigenPair, OseenParams};
use crate::eigensolver::{shift_invert_solve, SolverConfig};
use crate::error::{OseenError, Result};
use crate::estimator::{combined_theta, dual_indicators, primal_indicators, EstimateReport};
use crate::fem::{build_dofmap, DofMap, ElementKind};
use crate::mesh::{MarkedSet, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Eta,
    EtaStar,
    Theta,
}

impl EstimatorKind {
    pub fn needs_primal(self) -> bool {
        matches!(self, EstimatorKind::Eta | EstimatorKind::Theta)
    }

    pub fn needs_dual(self) -> bool {
        matches!(self, EstimatorKind::EtaStar | EstimatorKind::Theta)
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = OseenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eta" => Ok(EstimatorKind::Eta),
            "etastar" | "eta_star" | "eta*" => Ok(EstimatorKind::EtaStar),
            "theta" => Ok(EstimatorKind::Theta),
            other => Err(OseenError::invalid(format!("unknown estimator `{other}`"))),
        }
    }
}

/// How the tracked eigenvalue is chosen on each new mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tracking {
    /// Always the `target_index`-th eigenvalue by modulus.
    Index,
    /// The eigenvalue closest to the previous iteration's value.
    Nearest,
}

impl std::str::FromStr for Tracking {
    type Err = OseenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "index" => Ok(Tracking::Index),
            "nearest" => Ok(Tracking::Nearest),
            other => Err(OseenError::invalid(format!("unknown tracking rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub estimator: EstimatorKind,
    pub marking_fraction: f64,
    pub max_iterations: usize,
    /// Stop before solving on a mesh with more reported dofs than this.
    pub max_dof: usize,
    /// Zero-based index, by modulus, of the tracked eigenvalue on the first mesh.
    pub target_index: usize,
    pub tracking: Tracking,
    /// Bisection passes applied to each marked cell per iteration.
    pub bisections: usize,
    /// Exact eigenvalue for the error column; `None` leaves err undefined.
    pub reference: Option<f64>,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorKind::Eta,
            marking_fraction: 0.5,
            max_iterations: 15,
            max_dof: 2_000_000,
            target_index: 0,
            tracking: Tracking::Index,
            bisections: 2,
            reference: None,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.marking_fraction > 0.0 && self.marking_fraction <= 1.0) {
            return Err(OseenError::invalid(format!(
                "marking fraction must lie in (0, 1], got {}",
                self.marking_fraction
            )));
        }
        if self.bisections == 0 {
            return Err(OseenError::invalid("at least one bisection pass is required"));
        }
        if self.max_iterations == 0 {
            return Err(OseenError::invalid("at least one iteration is required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptRecord {
    pub iteration: usize,
    pub dof: usize,
    pub lambda: [f64; 2],
    /// Relative error `|lambda_h - lambda| / |lambda|`; NaN without a reference.
    pub err: f64,
    pub r: f64,
    pub d: f64,
    pub j: f64,
    /// Squared global value of the driving estimator.
    pub eta2: f64,
    /// `err / eta2`.
    pub eff: f64,
    pub n_cells: usize,
    pub n_marked: usize,
}

/// Everything produced on one mesh, handed to observers before refinement.
pub struct IterationState<'a> {
    pub record: &'a AdaptRecord,
    pub mesh: &'a Mesh,
    pub dofmap: &'a DofMap,
    pub primal: Option<&'a EigenPair>,
    pub dual: Option<&'a EigenPair>,
    pub indicators: &'a [f64],
    pub marked: &'a MarkedSet,
}

/// Failure inside the loop; the records completed so far are kept.
#[derive(Debug, thiserror::Error)]
#[error("adaptive iteration {iteration} failed: {source}")]
pub struct AdaptFailure {
    pub iteration: usize,
    pub records: Vec<AdaptRecord>,
    #[source]
    pub source: OseenError,
}

/// Marks every cell with `zeta_T >= fraction * max zeta`, where the inputs are
/// `zeta_T^2`.
pub fn mark_max_strategy(indicators_sq: &[f64], fraction: f64) -> Result<MarkedSet> {
    if indicators_sq.is_empty() {
        return Err(OseenError::invalid("no indicators to mark"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(OseenError::invalid(format!("marking fraction must lie in (0, 1], got {fraction}")));
    }
    if indicators_sq.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(OseenError::invalid("indicators must be finite and nonnegative"));
    }
    let zeta: Vec<f64> = indicators_sq.iter().map(|v| v.sqrt()).collect();
    let (argmax, max) = zeta
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
    let threshold = fraction * max;
    let mut marked: MarkedSet = zeta.iter().enumerate().filter(|(_, &z)| z >= threshold).map(|(i, _)| i).collect();
    marked.cell_ids.insert(argmax);
    Ok(marked)
}

fn nearest(pairs: Vec<EigenPair>, target: Complex64) -> Option<EigenPair> {
    pairs
        .into_iter()
        .min_by(|a, b| (a.lambda - target).norm().total_cmp(&(b.lambda - target).norm()))
}

fn solve_tracked(
    pencil: &crate::assembly::Pencil,
    solver: &SolverConfig,
    index: usize,
    previous: Option<Complex64>,
) -> Result<EigenPair> {
    let nev = solver.nev.max(6).max(index + 3);
    let config = SolverConfig {
        nev,
        max_krylov: solver.max_krylov.max(2 * nev + 8),
        ..*solver
    };
    let mut pairs = shift_invert_solve(pencil, &config)?;
    match previous {
        Some(target) => nearest(pairs, target),
        None if index < pairs.len() => Some(pairs.swap_remove(index)),
        None => None,
    }
    .ok_or_else(|| OseenError::Internal(format!("eigenvalue {index} not found")))
}

fn combine(a: &EstimateReport, b: &EstimateReport) -> Result<(f64, f64, f64, f64, Vec<f64>)> {
    let (theta, per_cell) = combined_theta(a, b)?;
    Ok((a.r + b.r, a.d + b.d, a.j + b.j, theta * theta, per_cell))
}

/// Record, primal and dual pairs, indicators and marking of one iteration.
type Step = (AdaptRecord, Option<EigenPair>, Option<EigenPair>, Vec<f64>, MarkedSet);

/// Runs the adaptive loop from `initial`. `observer` sees each mesh with its
/// solution and marking before it is refined.
pub fn adapt_loop_with<F>(
    initial: &Mesh,
    params: &OseenParams,
    element: ElementKind,
    solver: &SolverConfig,
    config: &AdaptConfig,
    mut observer: F,
) -> std::result::Result<Vec<AdaptRecord>, AdaptFailure>
where
    F: FnMut(&IterationState) -> Result<()>,
{
    let mut records: Vec<AdaptRecord> = Vec::new();
    let fail = |iteration: usize, records: &mut Vec<AdaptRecord>, source: OseenError| AdaptFailure {
        iteration,
        records: std::mem::take(records),
        source,
    };
    if let Err(e) = params.validate().and_then(|_| config.validate()).and_then(|_| solver.validate()) {
        return Err(fail(0, &mut records, e));
    }
    let mut mesh = initial.clone();
    let mut previous: Option<Complex64> = None;
    let continue_from = |previous: Option<Complex64>| match config.tracking {
        Tracking::Index => None,
        Tracking::Nearest => previous,
    };
    for iteration in 1..=config.max_iterations {
        let dofmap = build_dofmap(&mesh, element);
        if dofmap.total_dof() > config.max_dof {
            break;
        }
        let step = (|| -> Result<Step> {
            let forms = assemble_forms(&mesh, &dofmap, params)?;
            let primal = if config.estimator.needs_primal() {
                let pencil = build_primal_pencil(&forms, &dofmap)?;
                Some(solve_tracked(&pencil, solver, config.target_index, continue_from(previous))?)
            } else {
                None
            };
            let dual = if config.estimator.needs_dual() {
                let pencil = build_dual_pencil(&forms, &dofmap)?;
                let target = primal.as_ref().map(|p| p.lambda).or(continue_from(previous));
                Some(solve_tracked(&pencil, solver, config.target_index, target)?)
            } else {
                None
            };
            let lambda = primal.as_ref().or(dual.as_ref()).map(|p| p.lambda).expect("one problem solved");
            let eta = primal.as_ref().map(|p| primal_indicators(&mesh, &dofmap, params, p)).transpose()?;
            let eta_star = dual.as_ref().map(|p| dual_indicators(&mesh, &dofmap, params, p)).transpose()?;
            let (r, d, j, eta2, per_cell) = match (&eta, &eta_star) {
                (Some(a), Some(b)) => combine(a, b)?,
                (Some(a), None) | (None, Some(a)) => (a.r, a.d, a.j, a.eta2, a.per_cell.clone()),
                (None, None) => unreachable!(),
            };
            let marked = mark_max_strategy(&per_cell, config.marking_fraction)?;
            let err = config
                .reference
                .map(|re| (lambda - re).norm() / re.abs())
                .unwrap_or(f64::NAN);
            let record = AdaptRecord {
                iteration,
                dof: dofmap.total_dof(),
                lambda: [lambda.re, lambda.im],
                err,
                r,
                d,
                j,
                eta2,
                eff: err / eta2,
                n_cells: mesh.n_cells(),
                n_marked: marked.len(),
            };
            Ok((record, primal, dual, per_cell, marked))
        })();
        let (record, primal, dual, per_cell, marked) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(iteration, &mut records, e)),
        };
        previous = Some(Complex64::new(record.lambda[0], record.lambda[1]));
        let state = IterationState {
            record: &record,
            mesh: &mesh,
            dofmap: &dofmap,
            primal: primal.as_ref(),
            dual: dual.as_ref(),
            indicators: &per_cell,
            marked: &marked,
        };
        if let Err(e) = observer(&state) {
            return Err(fail(iteration, &mut records, e));
        }
        records.push(record);
        if iteration == config.max_iterations {
            break;
        }
        mesh = match mesh.refine_marked(&marked, config.bisections).and_then(|m| m.conformity_audit().map(|_| m)) {
            Ok(m) => m,
            Err(e) => return Err(fail(iteration, &mut records, e)),
        };
    }
    Ok(records)
}

pub fn adapt_loop(
    initial: &Mesh,
    params: &OseenParams,
    element: ElementKind,
    solver: &SolverConfig,
    config: &AdaptConfig,
) -> std::result::Result<Vec<AdaptRecord>, AdaptFailure> {
    adapt_loop_with(initial, params, element, solver, config, |_| Ok(()))
}
