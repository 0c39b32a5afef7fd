//! The `oseen-spectral` command line: configuration, commands and outputs.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adaptivity::{adapt_loop_with, AdaptConfig, AdaptRecord, EstimatorKind, Tracking};
use crate::analysis::{stokes_limit_study, uniform_study_meshes, RateFit};
use crate::assembly::{assemble_forms, build_primal_pencil, OseenParams};
use crate::eigensolver::{eigenvalue_records, shift_invert_solve, SolverConfig, DEFAULT_SEED, DEFAULT_TOL};
use crate::error::OseenError;
use crate::estimator::primal_indicators;
use crate::fem::{build_dofmap, ElementKind};
use crate::io::{mesh_to_string, read_mesh, vtk_string, write_atomic, VertexFields};
use crate::mesh::{Domain, Mesh};

/// Reference eigenvalue of the L-shaped domain used for its error column.
#[allow(clippy::excessive_precision)]
pub const LSHAPE_REFERENCE: f64 = 32.963150646072528;

const UNIFORM_HEADER: [&str; 10] = ["N", "h", "dof", "lambda_re", "lambda_im", "err", "eta2", "etastar2", "eff", "effstar"];
const ADAPT_HEADER: [&str; 10] = ["iter", "dof", "lambda_re", "lambda_im", "err", "R", "D", "J", "eta2", "eff"];
const STOKES_HEADER: [&str; 7] = ["i", "beta_norm", "k", "lambda_re", "lambda_im", "stokes_re", "gap"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Uniform,
    Adapt,
    StokesLimit,
    Mesh,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Uniform => "uniform",
            Command::Adapt => "adapt",
            Command::StokesLimit => "stokes-limit",
            Command::Mesh => "mesh",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "oseen-spectral", version, about = "Mixed FEM eigenvalues of the 2D Oseen operator")]
pub struct Cli {
    pub command: Command,
    /// JSON configuration file (a run manifest is accepted too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// square, lshape, or a mesh file.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub nu: Option<f64>,
    /// Convection field as BX,BY.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<String>,
    /// mini or th.
    #[arg(long)]
    pub element: Option<String>,
    #[arg(long)]
    pub nev: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// eta, etastar or theta.
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Comma-separated mesh levels.
    #[arg(long)]
    pub levels: Option<String>,
    /// Comma-separated exponents i of beta = (2^-i, 0).
    #[arg(long, allow_hyphen_values = true)]
    pub exponents: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub dump_meshes: bool,
    /// Also write the pencil matrices in Matrix Market format (solve).
    #[arg(long)]
    pub export_matrices: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Every run parameter. Unset optional fields get command- and
/// domain-dependent defaults in [`RunConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub domain: String,
    pub n: Option<usize>,
    pub nu: f64,
    pub beta: [f64; 2],
    pub element: ElementKind,
    pub nev: usize,
    pub shift: [f64; 2],
    pub tol: f64,
    pub seed: u64,
    pub max_krylov: Option<usize>,
    pub estimator: EstimatorKind,
    pub iterations: usize,
    pub marking_fraction: f64,
    pub bisections: usize,
    pub tracking: Tracking,
    pub target_index: usize,
    pub max_dof: usize,
    pub reference: Option<f64>,
    pub levels: Option<Vec<usize>>,
    pub exponents: Vec<i32>,
    pub out: PathBuf,
    pub dump_meshes: bool,
    pub vtk: bool,
    pub export_matrices: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adapt = AdaptConfig::default();
        Self {
            domain: "square".into(),
            n: None,
            nu: 1.0,
            beta: [1.0, 0.0],
            element: ElementKind::Mini,
            nev: 4,
            shift: [0.0, 0.0],
            tol: DEFAULT_TOL,
            seed: DEFAULT_SEED,
            max_krylov: None,
            estimator: adapt.estimator,
            iterations: adapt.max_iterations,
            marking_fraction: adapt.marking_fraction,
            bisections: adapt.bisections,
            tracking: adapt.tracking,
            target_index: adapt.target_index,
            max_dof: adapt.max_dof,
            reference: None,
            levels: None,
            exponents: vec![0, 2, 4, 8, 15],
            out: PathBuf::from("out"),
            dump_meshes: false,
            vtk: true,
            export_matrices: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Builtin(Domain),
    File(PathBuf),
}

impl DomainSpec {
    pub fn parse(s: &str) -> Self {
        s.parse().map(DomainSpec::Builtin).unwrap_or_else(|_| DomainSpec::File(PathBuf::from(s)))
    }
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>, OseenError> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| OseenError::invalid(format!("bad {what} entry `{t}`"))))
        .collect()
}

impl RunConfig {
    /// Reads a JSON config; a run manifest contributes its `config` object.
    pub fn from_json(text: &str) -> Result<Self, OseenError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| OseenError::invalid(format!("config is not valid JSON: {e}")))?;
        let value = match value.get("config") {
            Some(inner) if value.get("outputs").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).map_err(|e| OseenError::invalid(format!("config: {e}")))
    }

    /// File values first, then flags on top.
    pub fn from_cli(cli: &Cli) -> Result<Self, OseenError> {
        let mut c = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| OseenError::io(path, e))?;
                Self::from_json(&text)?
            }
            None => Self::default(),
        };
        if let Some(v) = &cli.domain {
            c.domain = v.clone();
        }
        if let Some(v) = cli.n {
            c.n = Some(v);
        }
        if let Some(v) = cli.nu {
            c.nu = v;
        }
        if let Some(v) = &cli.beta {
            let b: Vec<f64> = parse_list("beta", v)?;
            let [bx, by] = b[..] else {
                return Err(OseenError::invalid(format!("beta needs two components, got `{v}`")));
            };
            c.beta = [bx, by];
        }
        if let Some(v) = &cli.element {
            c.element = v.parse()?;
        }
        if let Some(v) = cli.nev {
            c.nev = v;
        }
        if let Some(v) = cli.tol {
            c.tol = v;
        }
        if let Some(v) = &cli.estimator {
            c.estimator = v.parse()?;
        }
        if let Some(v) = cli.iterations {
            c.iterations = v;
        }
        if let Some(v) = &cli.levels {
            c.levels = Some(parse_list("levels", v)?);
        }
        if let Some(v) = &cli.exponents {
            c.exponents = parse_list("exponents", v)?;
        }
        if let Some(v) = &cli.out {
            c.out = v.clone();
        }
        if let Some(v) = cli.seed {
            c.seed = v;
        }
        c.dump_meshes |= cli.dump_meshes;
        c.export_matrices |= cli.export_matrices;
        Ok(c)
    }

    /// Fills command-dependent defaults and validates everything.
    pub fn resolve(mut self, command: Command) -> Result<Self, OseenError> {
        let domain = DomainSpec::parse(&self.domain);
        if self.n.is_none() {
            self.n = Some(match (&domain, command) {
                (DomainSpec::File(_), _) => 0,
                (DomainSpec::Builtin(Domain::Lshape), _) => 4,
                (DomainSpec::Builtin(Domain::Square), Command::StokesLimit) => 40,
                (DomainSpec::Builtin(Domain::Square), _) => 20,
            });
        }
        if self.levels.is_none() {
            self.levels = Some(match domain {
                DomainSpec::File(_) => vec![0, 1, 2],
                DomainSpec::Builtin(Domain::Lshape) => vec![4, 8, 12, 16],
                DomainSpec::Builtin(Domain::Square) => vec![20, 30, 40, 50],
            });
        }
        if self.reference.is_none() && domain == DomainSpec::Builtin(Domain::Lshape) && command == Command::Adapt {
            self.reference = Some(LSHAPE_REFERENCE);
        }
        OseenParams::new(self.nu, self.beta)?;
        self.solver().validate()?;
        self.adapt().validate()?;
        if let DomainSpec::Builtin(_) = domain {
            if self.n == Some(0) {
                return Err(OseenError::invalid("n must be positive"));
            }
        }
        let levels = self.levels.as_deref().unwrap_or_default();
        if command == Command::Uniform {
            if levels.len() < 3 {
                return Err(OseenError::invalid("a uniform study needs at least three levels"));
            }
            if levels.windows(2).any(|w| w[1] <= w[0]) {
                return Err(OseenError::invalid("levels must be strictly increasing"));
            }
        }
        if command == Command::StokesLimit {
            if self.exponents.is_empty() {
                return Err(OseenError::invalid("no exponents given"));
            }
            if self.exponents.iter().any(|&i| !(0..=1000).contains(&i)) {
                return Err(OseenError::invalid("exponents must lie in 0..=1000"));
            }
        }
        Ok(self)
    }

    pub fn params(&self) -> OseenParams {
        OseenParams {
            nu: self.nu,
            beta: self.beta,
        }
    }

    pub fn solver(&self) -> SolverConfig {
        let base = SolverConfig::with_nev(self.nev);
        SolverConfig {
            shift: self.shift,
            tol: self.tol,
            seed: self.seed,
            max_krylov: self.max_krylov.unwrap_or(base.max_krylov),
            ..base
        }
    }

    pub fn adapt(&self) -> AdaptConfig {
        AdaptConfig {
            estimator: self.estimator,
            marking_fraction: self.marking_fraction,
            max_iterations: self.iterations,
            max_dof: self.max_dof,
            target_index: self.target_index,
            tracking: self.tracking,
            bisections: self.bisections,
            reference: self.reference,
        }
    }

    fn n(&self) -> usize {
        self.n.unwrap_or(0)
    }

    fn mesh(&self) -> Result<Mesh, OseenError> {
        match DomainSpec::parse(&self.domain) {
            DomainSpec::Builtin(d) => d.mesh(self.n()),
            DomainSpec::File(p) => read_mesh(&p),
        }
    }
}

/// An error with the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
#[error("{source}")]
pub struct CliError {
    pub code: i32,
    pub stage: &'static str,
    #[source]
    pub source: OseenError,
}

impl CliError {
    pub const CONFIG: i32 = 2;
    pub const SOLVER: i32 = 3;
    pub const WRITE: i32 = 4;

    fn config(source: OseenError) -> Self {
        Self { code: Self::CONFIG, stage: "config", source }
    }

    fn solver(source: OseenError) -> Self {
        Self { code: Self::SOLVER, stage: "solver", source }
    }

    fn write(source: OseenError) -> Self {
        Self { code: Self::WRITE, stage: "write", source }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> String {
        let kind = match &self.source {
            OseenError::InvalidArgument(_) => "invalid_argument",
            OseenError::Mesh(_) => "mesh",
            OseenError::Assembly(_) => "assembly",
            OseenError::SingularPencil(_) => "singular_pencil",
            OseenError::Convergence { .. } => "convergence",
            OseenError::Internal(_) => "internal",
            OseenError::Io { .. } => "io",
        };
        json!({"error": {"stage": self.stage, "kind": kind, "message": self.source.to_string(), "exit_code": self.code}})
            .to_string()
    }
}

type CliResult<T> = Result<T, CliError>;

/// Output files of a run, relative to the output directory.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> CliResult<()> {
        write_atomic(&self.dir.join(name), contents).map_err(CliError::write)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &serde_json::Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn manifest(&mut self, command: Command, config: &RunConfig) -> CliResult<()> {
        let mut outputs = self.written.clone();
        outputs.push("manifest.json".into());
        let value = json!({
            "tool": "oseen-spectral",
            "version": env!("CARGO_PKG_VERSION"),
            "linear_algebra": "faer 0.24",
            "command": command.name(),
            "seed": config.seed,
            "config": config,
            "outputs": outputs,
        });
        self.json("manifest.json", &value)
    }
}

fn csv_bytes<const W: usize>(header: [&str; W], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn metadata(config: &RunConfig, mesh: &Mesh, dof: usize, system_dim: usize) -> serde_json::Value {
    json!({
        "domain": config.domain,
        "n": config.n,
        "nu": config.nu,
        "beta": config.beta,
        "element": config.element,
        "cells": mesh.n_cells(),
        "dof": dof,
        "system_dim": system_dim,
        "nev": config.nev,
        "shift": config.shift,
        "tol": config.tol,
        "seed": config.seed,
    })
}

fn cmd_solve(config: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let mesh = config.mesh().map_err(CliError::config)?;
    let params = config.params();
    let dofmap = build_dofmap(&mesh, config.element);
    let forms = assemble_forms(&mesh, &dofmap, &params).map_err(CliError::solver)?;
    let pencil = build_primal_pencil(&forms, &dofmap).map_err(CliError::solver)?;
    let pairs = shift_invert_solve(&pencil, &config.solver()).map_err(CliError::solver)?;
    let value = json!({
        "metadata": metadata(config, &mesh, dofmap.total_dof(), pencil.dim()),
        "eigenvalues": eigenvalue_records(&pairs),
    });
    out.json("eigenvalues.json", &value)?;
    for (k, p) in pairs.iter().enumerate() {
        println!("lambda_{} = {:.10} {:+.3e}i  (residual {:.2e})", k + 1, p.lambda.re, p.lambda.im, p.residual);
    }
    if config.vtk {
        if let Some(first) = pairs.first() {
            let eta = primal_indicators(&mesh, &dofmap, &params, first).map_err(CliError::solver)?;
            let fields = VertexFields::sample(&mesh, &first.fields(&dofmap));
            let title = format!("lambda_1 = {:e} + {:e}i", first.lambda.re, first.lambda.im);
            out.write("mode1.vtk", vtk_string(&mesh, &title, Some(&fields), Some(&eta.per_cell)).as_bytes())?;
        }
    }
    if config.export_matrices {
        out.write("K.mtx", pencil.k.to_matrix_market().as_bytes())?;
        out.write("M.mtx", pencil.m.to_matrix_market().as_bytes())?;
    }
    Ok(())
}

fn fit_json(fit: &RateFit) -> serde_json::Value {
    json!({"lambda_extr": fit.lambda_extr, "c": fit.c, "alpha": fit.alpha, "residual": fit.residual})
}

fn cmd_uniform(config: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let levels = config.levels.clone().unwrap_or_default();
    let meshes = match DomainSpec::parse(&config.domain) {
        DomainSpec::Builtin(d) => levels.iter().map(|&n| Ok((n, d.mesh(n)?))).collect::<Result<Vec<_>, _>>(),
        DomainSpec::File(p) => {
            let base = read_mesh(&p).map_err(CliError::config)?;
            let deepest = *levels.iter().max().unwrap_or(&0);
            let mut refined = vec![base];
            for _ in 0..deepest {
                refined.push(refined.last().expect("nonempty").uniform_refine());
            }
            Ok(levels.iter().map(|&l| (l, refined[l].clone())).collect())
        }
    }
    .map_err(CliError::config)?;
    let study = uniform_study_meshes(meshes, &config.params(), config.element, &config.solver()).map_err(CliError::solver)?;
    let mut rows: Vec<Vec<String>> = study
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                num(r.h),
                r.dof.to_string(),
                num(r.lambdas[0][0]),
                num(r.lambdas[0][1]),
                num(r.err),
                num(r.eta2),
                num(r.etastar2),
                num(r.eff),
                num(r.effstar),
            ]
        })
        .collect();
    let extr = study.fits[0].lambda_extr;
    rows.push(
        ["extr", "0", "", &num(extr), &num(0.0), &num(0.0), "", "", "", ""]
            .map(String::from)
            .to_vec(),
    );
    out.write("uniform.csv", &csv_bytes(UNIFORM_HEADER, &rows))?;
    let value = json!({
        "fits": study.fits.iter().map(fit_json).collect::<Vec<_>>(),
        "levels": study.rows,
        "warnings": study.warnings,
    });
    out.json("uniform_fit.json", &value)?;
    for (k, f) in study.fits.iter().enumerate() {
        println!("lambda_{} extr = {:.6}  alpha = {:.3}", k + 1, f.lambda_extr, f.alpha);
    }
    for w in &study.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn adapt_rows(records: &[AdaptRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                r.dof.to_string(),
                num(r.lambda[0]),
                num(r.lambda[1]),
                num(r.err),
                num(r.r),
                num(r.d),
                num(r.j),
                num(r.eta2),
                num(r.eff),
            ]
        })
        .collect()
}

fn cmd_adapt(config: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let mesh = config.mesh().map_err(CliError::config)?;
    let params = config.params();
    let mut dumps: Vec<(String, Vec<u8>)> = Vec::new();
    let result = adapt_loop_with(&mesh, &params, config.element, &config.solver(), &config.adapt(), |state| {
        let r = state.record;
        println!("iter {:>2}  dof {:>7}  lambda {:.8}  err {:.4e}  eta2 {:.4e}", r.iteration, r.dof, r.lambda[0], r.err, r.eta2);
        if config.dump_meshes {
            let stem = format!("meshes/iter_{:02}", r.iteration);
            let pair = state.primal.or(state.dual).expect("one problem solved");
            let fields = VertexFields::sample(state.mesh, &pair.fields(state.dofmap));
            let title = format!("iteration {} lambda = {:e} + {:e}i", r.iteration, r.lambda[0], r.lambda[1]);
            dumps.push((format!("{stem}.mesh"), mesh_to_string(state.mesh).into_bytes()));
            dumps.push((format!("{stem}.vtk"), vtk_string(state.mesh, &title, Some(&fields), Some(state.indicators)).into_bytes()));
        }
        Ok(())
    });
    let (records, failure) = match result {
        Ok(records) => (records, None),
        Err(f) => (f.records, Some(f.source)),
    };
    out.write("adapt.csv", &csv_bytes(ADAPT_HEADER, &adapt_rows(&records)))?;
    for (name, bytes) in dumps {
        out.write(&name, &bytes)?;
    }
    match failure {
        Some(e) => Err(CliError::solver(e)),
        None => Ok(()),
    }
}

fn cmd_stokes_limit(config: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let mesh = config.mesh().map_err(CliError::config)?;
    let study = stokes_limit_study(&mesh, config.nu, config.element, &config.exponents, &config.solver()).map_err(CliError::solver)?;
    let rows: Vec<Vec<String>> = study
        .rows
        .iter()
        .map(|r| {
            vec![
                r.i.to_string(),
                num(r.beta_norm),
                r.k.to_string(),
                num(r.lambda[0]),
                num(r.lambda[1]),
                num(r.stokes),
                num(r.gap),
            ]
        })
        .collect();
    out.write("stokes_limit.csv", &csv_bytes(STOKES_HEADER, &rows))?;
    for (i, gap) in &study.gaps {
        println!("i = {i:>2}  max gap = {gap:.4e}");
    }
    Ok(())
}

fn cmd_mesh(config: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let mesh = config.mesh().map_err(CliError::config)?;
    out.write("mesh.txt", mesh_to_string(&mesh).as_bytes())?;
    out.write("mesh.vtk", vtk_string(&mesh, "mesh", None, None).as_bytes())?;
    let dof = [ElementKind::Mini, ElementKind::TaylorHood].map(|e| build_dofmap(&mesh, e).total_dof());
    println!(
        "{} vertices, {} cells, h_max {:.4e}, dof mini {} th {}",
        mesh.n_vertices(),
        mesh.n_cells(),
        mesh.h_max(),
        dof[0],
        dof[1]
    );
    Ok(())
}

/// Runs one command with an already merged configuration.
pub fn execute(command: Command, config: RunConfig) -> CliResult<()> {
    let config = config.resolve(command).map_err(CliError::config)?;
    let mut out = Outputs::new(&config.out);
    match command {
        Command::Solve => cmd_solve(&config, &mut out)?,
        Command::Uniform => cmd_uniform(&config, &mut out)?,
        Command::Adapt => cmd_adapt(&config, &mut out)?,
        Command::StokesLimit => cmd_stokes_limit(&config, &mut out)?,
        Command::Mesh => cmd_mesh(&config, &mut out)?,
    }
    out.manifest(command, &config)
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let err = CliError::config(OseenError::invalid(e.to_string().trim().to_string()));
            eprintln!("{}", err.to_json());
            return err.code;
        }
    };
    let result = RunConfig::from_cli(&cli).map_err(CliError::config).and_then(|c| execute(cli.command, c));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.code
        }
    }
}
