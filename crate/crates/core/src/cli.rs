//! Config-driven front end: problem loading, hypothesis checks, single
//! solves, λ-sweeps and verification ledgers.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::cutoff::{verify_cutoff, write_table, CutoffFamily, CutoffKind, UnknownCutoff};
use crate::energy::{EnergyError, SystemProblem};
use crate::expr::{parse_with, Arity, Expr, ExprError};
use crate::field::{
    estimate_embedding_constant, orlicz_sobolev_norm, read_binary, write_binary, write_csv, Boundary, DiscreteField,
    FieldError, Grid,
};
use crate::moser::{moser_ladder, IterationLedger, MoserError};
use crate::mpa::{run_mountain_pass, MpaError, SolverConfig, SolverResult};
use crate::nfunction::{
    build_from_kernel, complement, estimate_indices, sobolev_conjugate, verify_kernel_hypotheses, GrowthKernel,
    IndexPair, NFunction, NFunctionError,
};
use crate::nonlinearity::{
    build_modified, build_scalar_modified, check_hypotheses, check_modified, worked_example, worked_example_in,
    HypothesisConstants, ModifiedNonlinearity, NonlinearityError, NonlinearitySpec,
};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "ORLICZ_THREADS";

/// Names accepted by `problem.builtin`.
pub const BUILTINS: [&str; 3] = ["worked-example", "desk-scalar", "desk-system"];

/// Frozen column order of the sweep table.
pub const SWEEP_HEADER: &str =
    "lambda,level,norm_u,norm_v,sup_norm,residual,iterations,converged,ftilde_equals_f,ladder,error";

/// Random fields used for the embedding constant.
/// Name given to problems assembled from expressions.
const EXPRESSION_PROBLEM: &str = "expression";
const EMBEDDING_TRIALS: usize = 12;
/// Deepest ladder requested; the exponent cap usually stops it earlier.
const LADDER_DEPTH: usize = 20;
const CHECK_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown builtin problem `{0}` (expected worked-example, desk-scalar or desk-system)")]
    UnknownBuiltin(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Cutoff(#[from] UnknownCutoff),
    #[error(transparent)]
    Nonlinearity(#[from] NonlinearityError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Solver(#[from] MpaError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    NFunction(#[from] NFunctionError),
    #[error(transparent)]
    Moser(#[from] MoserError),
}

impl CliError {
    /// Solver failures map to 2, everything else to 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Solver(_) => 2,
            _ => 1,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Invalid { field: field.to_string(), message: message.into() }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

// ---------------------------------------------------------------------------
// Raw TOML layout

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    problem: RawProblem,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    sweep: RawSweep,
    #[serde(default)]
    output: RawOutput,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    builtin: Option<String>,
    kernels: Option<Vec<String>>,
    potentials: Option<Vec<String>>,
    f: Option<String>,
    cutoff: Option<String>,
    delta: Option<f64>,
    index_dim: Option<usize>,
    x_dim: Option<usize>,
    constants: Option<RawConstants>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstants {
    k: Vec<f64>,
    lower: Vec<f64>,
    r: Vec<f64>,
    grad: Vec<f64>,
    window: Option<Vec<f64>>,
    mu: Vec<f64>,
    radius: f64,
    tail: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dim: Option<usize>,
    n: Option<usize>,
    half_width: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    path_nodes: Option<usize>,
    descent_step: Option<f64>,
    max_iters: Option<usize>,
    residual_tol: Option<f64>,
    lambda: Option<f64>,
    polish_iters: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    lambda_min: Option<f64>,
    lambda_max: Option<f64>,
    points: Option<usize>,
    log_spaced: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
}

// ---------------------------------------------------------------------------
// Resolved configuration

#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub kernel_sources: Vec<String>,
    pub kernels: Vec<GrowthKernel>,
    pub potential_sources: Vec<String>,
    /// Nonlinearity as stated, used by the hypothesis checks.
    pub nonlinearity: NonlinearitySpec,
    /// Nonlinearity restricted to the grid's coordinates, used by solves.
    pub grid_nonlinearity: NonlinearitySpec,
    pub cutoff: CutoffFamily,
    /// Dimension used for the growth indices and Sobolev conjugates.
    pub index_dim: usize,
}

impl Problem {
    pub fn components(&self) -> usize {
        self.kernels.len()
    }

    pub fn modified(&self) -> Result<ModifiedNonlinearity, CliError> {
        Ok(if self.components() == 1 {
            build_scalar_modified(&self.grid_nonlinearity, self.cutoff.delta)?
        } else {
            build_modified(&self.grid_nonlinearity, self.cutoff)?
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points: usize,
    pub log_spaced: bool,
}

impl SweepConfig {
    /// The λ grid in increasing order with exact endpoints.
    pub fn lambdas(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.lambda_min];
        }
        let last = self.points - 1;
        (0..self.points)
            .map(|i| {
                if i == 0 {
                    self.lambda_min
                } else if i == last {
                    self.lambda_max
                } else {
                    let f = i as f64 / last as f64;
                    if self.log_spaced {
                        (self.lambda_min.ln() + f * (self.lambda_max.ln() - self.lambda_min.ln())).exp()
                    } else {
                        self.lambda_min + f * (self.lambda_max - self.lambda_min)
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: Problem,
    pub grid: Grid,
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    /// The effective configuration with every default filled in; loading
    /// it again gives the same configuration.
    pub fn echo(&self) -> String {
        let p = &self.problem;
        let s = &self.solver;
        let w = &self.sweep;
        let mut out = format!("seed = {}\n\n[problem]\n", self.seed);
        if p.name == EXPRESSION_PROBLEM {
            let quote = |v: &[String]| v.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(", ");
            let _ = writeln!(out, "kernels = [{}]", quote(&p.kernel_sources));
            let _ = writeln!(out, "potentials = [{}]", quote(&p.potential_sources));
            let _ = writeln!(out, "f = {:?}", p.nonlinearity.f.to_string());
            let _ = writeln!(out, "x_dim = {}", p.nonlinearity.x_dim);
        } else {
            let _ = writeln!(out, "builtin = {:?}", p.name);
        }
        let _ = writeln!(out, "cutoff = {:?}\ndelta = {:?}\nindex_dim = {}", p.cutoff.kind.name(), p.cutoff.delta, p.index_dim);
        if p.name == EXPRESSION_PROBLEM {
            let c = &p.nonlinearity.constants;
            let n = p.components();
            let list = |v: &[f64; 2]| v[..n].iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
            let _ = writeln!(out, "\n[problem.constants]");
            let _ = writeln!(out, "k = [{}]\nlower = [{}]\nr = [{}]", list(&c.k), list(&c.lower), list(&c.r));
            let _ = writeln!(out, "grad = [{}]\nwindow = [{}]\nmu = [{}]", list(&c.grad), list(&c.window), list(&c.mu));
            let _ = writeln!(out, "radius = {:?}", c.radius);
            if let Some(t) = &c.tail {
                let _ = writeln!(out, "tail = [{}]", list(t));
            }
        }
        let _ = write!(
            out,
            "\n[grid]\ndim = {}\nn = {}\nhalf_width = {:?}\n\n\
             [solver]\npath_nodes = {}\ndescent_step = {:?}\nmax_iters = {}\nresidual_tol = {:?}\nlambda = {:?}\npolish_iters = {}\n\n\
             [sweep]\nlambda_min = {:?}\nlambda_max = {:?}\npoints = {}\nlog_spaced = {}\n\n[output]\ndir = {:?}\n",
            self.grid.dim,
            self.grid.n,
            self.grid.half_width,
            s.path_nodes,
            s.descent_step,
            s.max_iters,
            s.residual_tol,
            s.lambda,
            s.polish_iters,
            w.lambda_min,
            w.lambda_max,
            w.points,
            w.log_spaced,
            self.output_dir.display().to_string()
        );
        out
    }

    pub fn system(&self, lambda: f64) -> Result<SystemProblem, CliError> {
        let arity = Arity::new(false, false, self.grid.dim);
        let potentials =
            self.problem.potential_sources.iter().map(|s| parse_with(s, arity)).collect::<Result<Vec<Expr>, _>>()?;
        Ok(SystemProblem::new(self.problem.kernels.clone(), potentials, self.problem.modified()?, lambda, self.grid)?)
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        CliError::Parse { line, message: e.message().to_string() }
    })?;

    let dim = raw.grid.dim.unwrap_or(2);
    let grid = Grid::new(dim, raw.grid.n.unwrap_or(64), raw.grid.half_width.unwrap_or(8.0))
        .map_err(|e| invalid("grid", e.to_string()))?;
    let (problem, default_lambda) = resolve_problem(&raw.problem, dim)?;

    let d = SolverConfig::default();
    let solver = SolverConfig {
        path_nodes: raw.solver.path_nodes.unwrap_or(d.path_nodes),
        descent_step: raw.solver.descent_step.unwrap_or(d.descent_step),
        max_iters: raw.solver.max_iters.unwrap_or(d.max_iters),
        residual_tol: raw.solver.residual_tol.unwrap_or(d.residual_tol),
        lambda: raw.solver.lambda.unwrap_or(default_lambda),
        polish_iters: raw.solver.polish_iters.unwrap_or(d.polish_iters),
    };
    solver.validate().map_err(|e| invalid("solver", e.to_string()))?;

    let sweep = SweepConfig {
        lambda_min: raw.sweep.lambda_min.unwrap_or(10.0),
        lambda_max: raw.sweep.lambda_max.unwrap_or(1000.0),
        points: raw.sweep.points.unwrap_or(7),
        log_spaced: raw.sweep.log_spaced.unwrap_or(true),
    };
    if !(sweep.lambda_min > 0.0 && sweep.lambda_min.is_finite()) {
        return Err(invalid("sweep.lambda_min", "must be positive"));
    }
    if !(sweep.lambda_max >= sweep.lambda_min && sweep.lambda_max.is_finite()) {
        return Err(invalid("sweep.lambda_max", "must be at least lambda_min"));
    }
    if sweep.points == 0 {
        return Err(invalid("sweep.points", "must be at least 1"));
    }
    if sweep.points > 1 && sweep.lambda_max == sweep.lambda_min {
        return Err(invalid("sweep.lambda_max", "must exceed lambda_min when points > 1"));
    }

    Ok(RunConfig {
        problem,
        grid,
        solver,
        sweep,
        output_dir: PathBuf::from(raw.output.dir.unwrap_or_else(|| "out".to_string())),
        seed: raw.seed.unwrap_or(0),
    })
}

fn pair(field: &str, v: &[f64], components: usize) -> Result<[f64; 2], CliError> {
    match (v, components) {
        ([a], 1) => Ok([*a, 0.0]),
        ([a, b], 2) => Ok([*a, *b]),
        _ => Err(invalid(field, format!("expected {components} value(s), got {}", v.len()))),
    }
}

/// Desk-scale constants: `k = 2.2`, `r = 2.5`, unit tail, hypothesis
/// radius 1.
fn desk_constants(components: usize) -> HypothesisConstants {
    let both = |a: f64| if components == 2 { [a, a] } else { [a, 0.0] };
    HypothesisConstants {
        k: both(2.2),
        lower: both(1.0),
        r: both(2.5),
        grad: both(2.2),
        window: [2.0, 2.0],
        mu: both(2.2),
        radius: 1.0,
        tail: Some(both(1.0)),
    }
}

fn resolve_problem(raw: &RawProblem, grid_dim: usize) -> Result<(Problem, f64), CliError> {
    let expression_fields =
        raw.kernels.is_some() || raw.potentials.is_some() || raw.f.is_some() || raw.constants.is_some();
    if let Some(name) = &raw.builtin {
        if expression_fields {
            return Err(invalid("problem", "builtin excludes kernels, potentials, f and constants"));
        }
        let mut problem = builtin_problem(name, grid_dim)?;
        if let Some(kind) = &raw.cutoff {
            problem.cutoff.kind = kind.parse()?;
        }
        if let Some(delta) = raw.delta {
            if !(delta > 0.0) {
                return Err(invalid("problem.delta", "must be positive"));
            }
            problem.cutoff.delta = delta;
        }
        if let Some(n) = raw.index_dim {
            problem.index_dim = n;
        }
        return Ok((problem, 100.0));
    }
    let kernels_src = raw.kernels.clone().ok_or_else(|| invalid("problem.kernels", "required without a builtin"))?;
    let components = kernels_src.len();
    if !(1..=2).contains(&components) {
        return Err(invalid("problem.kernels", "expected one or two kernels"));
    }
    let potentials = raw.potentials.clone().unwrap_or_else(|| vec!["1".to_string(); components]);
    if potentials.len() != components {
        return Err(invalid("problem.potentials", format!("expected {components} potential(s)")));
    }
    let f = raw.f.clone().ok_or_else(|| invalid("problem.f", "required without a builtin"))?;
    let constants = match &raw.constants {
        None => desk_constants(components),
        Some(c) => {
            let window = c.window.as_deref().map_or(Ok([2.0, 2.0]), |w| {
                pair("problem.constants.window", w, components).map(|p| if components == 1 { [p[0], p[0]] } else { p })
            })?;
            HypothesisConstants {
                k: pair("problem.constants.k", &c.k, components)?,
                lower: pair("problem.constants.lower", &c.lower, components)?,
                r: pair("problem.constants.r", &c.r, components)?,
                grad: pair("problem.constants.grad", &c.grad, components)?,
                window,
                mu: pair("problem.constants.mu", &c.mu, components)?,
                radius: c.radius,
                tail: c.tail.as_deref().map(|t| pair("problem.constants.tail", t, components)).transpose()?,
            }
        }
    };
    let x_dim = raw.x_dim.unwrap_or(0);
    let spec = NonlinearitySpec::parse(&f, components, x_dim, constants)?.with_symbolic_partials();
    let kernels = kernels_src.iter().map(|s| GrowthKernel::parse(s)).collect::<Result<Vec<_>, _>>()?;
    let default_kind = if components == 1 { CutoffKind::ScalarSine } else { CutoffKind::Sine };
    let kind = raw.cutoff.as_deref().map_or(Ok(default_kind), str::parse)?;
    let delta = raw.delta.unwrap_or(if components == 1 { 1.0 } else { 4.0 });
    if !(delta > 0.0) {
        return Err(invalid("problem.delta", "must be positive"));
    }
    let problem = Problem {
        name: EXPRESSION_PROBLEM.to_string(),
        kernel_sources: kernels_src,
        kernels,
        potential_sources: potentials,
        nonlinearity: spec.clone(),
        grid_nonlinearity: spec,
        cutoff: CutoffFamily::new(kind, delta),
        index_dim: raw.index_dim.unwrap_or(grid_dim),
    };
    Ok((problem, 100.0))
}

/// Built-in problems. The worked example keeps its six-dimensional data for
/// the checks and is restricted to the grid's coordinates for solves.
pub fn builtin_problem(name: &str, grid_dim: usize) -> Result<Problem, CliError> {
    match name {
        "worked-example" => {
            let d = grid_dim.min(6);
            Ok(Problem {
                name: name.to_string(),
                kernel_sources: vec!["4*t^2+5*t^3".into(), "4*t^2*log(2+t)+t^3/(1+t)".into()],
                kernels: vec![GrowthKernel::example_polynomial(), GrowthKernel::example_logarithmic()],
                potential_sources: vec![format!("1+sum_cos2(x,{d})"), format!("1+sum_sin2(x,{d})")],
                nonlinearity: worked_example(true),
                grid_nonlinearity: worked_example_in(d),
                cutoff: CutoffFamily::new(CutoffKind::Sine, 4.0),
                index_dim: 6,
            })
        }
        "desk-scalar" | "desk-system" => {
            let components = if name == "desk-scalar" { 1 } else { 2 };
            let f = if components == 1 { "|t|^2.2" } else { "|t|^2.2+|s|^2.2" };
            let spec = NonlinearitySpec::parse(f, components, 0, desk_constants(components))?.with_symbolic_partials();
            let kind = if components == 1 { CutoffKind::ScalarSine } else { CutoffKind::Sine };
            Ok(Problem {
                name: name.to_string(),
                kernel_sources: vec!["t^(-0.5)".into(); components],
                kernels: vec![GrowthKernel::power(1.5); components],
                potential_sources: vec!["1".into(); components],
                nonlinearity: spec.clone(),
                grid_nonlinearity: spec,
                cutoff: CutoffFamily::new(kind, 1.0),
                index_dim: 2,
            })
        }
        other => Err(CliError::UnknownBuiltin(other.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Solving and verification

/// Per-problem data shared by every verification: N-functions, grid
/// indices and empirical embedding constants.
#[derive(Debug, Clone)]
pub struct VerifyContext {
    pub nfuns: Vec<NFunction>,
    pub indices: Vec<IndexPair>,
    /// `None` when the conjugate exponent is infinite on this grid.
    pub embedding: Vec<Option<f64>>,
    pub r: [f64; 2],
}

impl VerifyContext {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let nfuns = cfg.problem.kernels.iter().map(build_from_kernel).collect::<Result<Vec<_>, _>>()?;
        let indices = nfuns.iter().map(|nf| estimate_indices(nf, cfg.grid.dim)).collect::<Result<Vec<_>, _>>()?;
        let embedding = nfuns
            .iter()
            .zip(&indices)
            .enumerate()
            .map(|(i, (nf, ip))| {
                if ip.l_star.is_finite() {
                    estimate_embedding_constant(nf, ip.l_star, EMBEDDING_TRIALS, cfg.grid, cfg.seed.wrapping_add(i as u64))
                        .map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VerifyContext { nfuns, indices, embedding, r: cfg.problem.grid_nonlinearity.constants.r })
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub lambda: f64,
    pub result: SolverResult,
    /// `‖·‖_{1,Φᵢ}` of each component.
    pub norms: Vec<f64>,
    /// Sup norm below the cut-off's inner radius, so the modification is
    /// inactive on the solution.
    pub ftilde_equals_f: bool,
    pub ladders: Vec<Result<IterationLedger, MoserError>>,
    pub boundary_mass: f64,
}

impl SolveReport {
    pub fn ladder_passed(&self) -> Option<bool> {
        let mut all = true;
        for l in &self.ladders {
            match l {
                Ok(l) => all &= l.passed,
                Err(_) => return None,
            }
        }
        Some(all)
    }

    pub fn components(&self) -> Vec<&DiscreteField> {
        std::iter::once(&self.result.u).chain(self.result.v.as_ref()).collect()
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let r = &self.result;
        let _ = writeln!(out, "lambda = {}", self.lambda);
        let _ = writeln!(out, "converged = {}", r.converged);
        let _ = writeln!(out, "scaled residual = {:e}", r.residual_sup);
        let _ = writeln!(out, "iterations = {}", r.iterations);
        let _ = writeln!(out, "level = {:e}", r.level);
        for (i, n) in self.norms.iter().enumerate() {
            let _ = writeln!(out, "sobolev norm [{}] = {:e}", i + 1, n);
        }
        let _ = writeln!(out, "sup norm = {:e}", r.sup_norm);
        let _ = writeln!(out, "modification inactive = {}", self.ftilde_equals_f);
        let _ = writeln!(out, "boundary mass = {:e}", self.boundary_mass);
        for (i, l) in self.ladders.iter().enumerate() {
            match l {
                Ok(l) => {
                    let _ = writeln!(
                        out,
                        "ladder [{}] = {} (bound {:e}, sup {:e}, fitted constant {:e} empirical)",
                        i + 1,
                        if l.passed { "pass" } else { "FAIL" },
                        l.bound_product,
                        l.sup_norm,
                        l.fitted_constant
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "ladder [{}] unavailable: {e}", i + 1);
                }
            }
        }
        out
    }
}

/// Norms, cut-off flag and Moser ladders of a solution.
pub fn analyse(cfg: &RunConfig, ctx: &VerifyContext, lambda: f64, result: SolverResult) -> Result<SolveReport, CliError> {
    let fields: Vec<&DiscreteField> = std::iter::once(&result.u).chain(result.v.as_ref()).collect();
    let mut norms = Vec::new();
    let mut ladders = Vec::new();
    let mut boundary_mass: f64 = 0.0;
    for (i, u) in fields.iter().enumerate() {
        let norm = orlicz_sobolev_norm(u, &ctx.nfuns[i])?;
        norms.push(norm);
        boundary_mass = boundary_mass.max(u.boundary_mass());
        let ladder = match ctx.embedding[i] {
            Some(c) if norm > 0.0 => moser_ladder(u, &ctx.indices[i], ctx.r[i], lambda, norm, c, LADDER_DEPTH),
            Some(_) => Err(MoserError::NonPositive { name: "Orlicz-Sobolev norm", value: norm }),
            None => Err(MoserError::Exponent(format!(
                "lower index {} is not below the grid dimension {}",
                ctx.indices[i].l, cfg.grid.dim
            ))),
        };
        ladders.push(ladder);
    }
    Ok(SolveReport {
        lambda,
        ftilde_equals_f: result.sup_norm < cfg.problem.cutoff.inner_radius(),
        result,
        norms,
        ladders,
        boundary_mass,
    })
}

pub fn solve_at(cfg: &RunConfig, ctx: &VerifyContext, base: &SystemProblem, lambda: f64) -> Result<SolveReport, CliError> {
    let solver = SolverConfig { lambda, ..cfg.solver.clone() };
    let result = run_mountain_pass(base, &solver)?;
    analyse(cfg, ctx, lambda, result)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub lambda: f64,
    pub outcome: Result<SolveReport, String>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub inner_radius: f64,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for row in &self.rows {
            match &row.outcome {
                Ok(rep) => {
                    let r = &rep.result;
                    let norm_v = rep.norms.get(1).map_or(String::new(), |v| format!("{v:e}"));
                    let ladder = match rep.ladder_passed() {
                        Some(true) => "pass",
                        Some(false) => "fail",
                        None => "n/a",
                    };
                    let _ = writeln!(
                        out,
                        "{:e},{:e},{:e},{},{:e},{:e},{},{},{},{},",
                        row.lambda,
                        r.level,
                        rep.norms[0],
                        norm_v,
                        r.sup_norm,
                        r.residual_sup,
                        r.iterations,
                        r.converged,
                        rep.ftilde_equals_f,
                        ladder
                    );
                }
                Err(e) => {
                    let clean: String = e.chars().map(|c| if c == ',' || c == '\n' { ';' } else { c }).collect();
                    let _ = writeln!(out, "{:e},,,,,,,false,false,n/a,{clean}", row.lambda);
                }
            }
        }
        out
    }

    /// Smallest swept λ from which every row has its sup norm below the
    /// cut-off's inner radius. Empirical only.
    pub fn empirical_threshold(&self) -> Option<f64> {
        let below = |r: &SweepRow| r.outcome.as_ref().is_ok_and(|rep| rep.result.sup_norm < self.inner_radius);
        let first_bad_from_end = self.rows.iter().rposition(|r| !below(r));
        match first_bad_from_end {
            None => self.rows.first().map(|r| r.lambda),
            Some(i) => self.rows.get(i + 1).map(|r| r.lambda),
        }
    }

    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.outcome.as_ref().is_ok_and(|rep| rep.result.converged))
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let converged = self.rows.iter().filter(|r| r.outcome.as_ref().is_ok_and(|x| x.result.converged)).count();
        let _ = writeln!(out, "rows = {}", self.rows.len());
        let _ = writeln!(out, "converged = {converged}");
        match self.empirical_threshold() {
            Some(l) => {
                let _ = writeln!(
                    out,
                    "empirical threshold lambda_hat = {l:e} (sup norm below {} from here on)",
                    self.inner_radius
                );
            }
            None => {
                let _ = writeln!(out, "empirical threshold lambda_hat: not reached in this sweep");
            }
        }
        out
    }
}

/// Solves every λ of the sweep; rows run in parallel and come back in λ order.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepTable, CliError> {
    let base = cfg.system(cfg.sweep.lambda_min)?;
    let ctx = VerifyContext::new(cfg)?;
    let rows = cfg
        .sweep
        .lambdas()
        .into_par_iter()
        .map(|lambda| SweepRow { lambda, outcome: solve_at(cfg, &ctx, &base, lambda).map_err(|e| e.to_string()) })
        .collect();
    Ok(SweepTable { rows, inner_radius: cfg.problem.cutoff.inner_radius() })
}

/// Writes the solution components back to back in the binary field format.
pub fn write_solution<W: Write>(rep: &SolveReport, mut out: W) -> io::Result<()> {
    for u in rep.components() {
        write_binary(u, &mut out)?;
    }
    Ok(())
}

pub fn read_solution(path: &Path, components: usize) -> Result<Vec<DiscreteField>, CliError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    (0..components).map(|_| read_binary(&mut reader, Boundary::ZeroDirichlet).map_err(CliError::from)).collect()
}

/// Residual, norms and ladders of a stored solution at parameter `lambda`.
pub fn verify_solution(cfg: &RunConfig, fields: Vec<DiscreteField>, lambda: f64) -> Result<SolveReport, CliError> {
    let p = cfg.system(lambda)?;
    for u in &fields {
        if u.grid != cfg.grid {
            return Err(invalid("solution", "grid differs from the configured grid"));
        }
    }
    let refs: Vec<&DiscreteField> = fields.iter().collect();
    let state = p.state_from_fields(&refs)?;
    let residual = p.residual_of_state(&state);
    let scale = p.residual_scale(&state).max(1e-300);
    let residual_sup = residual.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
    let mut it = fields.into_iter();
    let u = it.next().ok_or_else(|| invalid("solution", "empty"))?;
    let result = SolverResult {
        sup_norm: p.state_sup_norm(&state),
        level: p.energy_of_state(&state),
        residual_sup,
        iterations: 0,
        converged: residual_sup <= cfg.solver.residual_tol,
        u,
        v: it.next(),
    };
    let ctx = VerifyContext::new(cfg)?;
    analyse(cfg, &ctx, lambda, result)
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(name = "orlicz", version, about = "Orlicz N-function toolkit and mountain-pass solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check kernel and nonlinearity hypotheses.
    Check { config: PathBuf },
    /// Solve at the configured lambda and write the solution.
    Solve { config: PathBuf },
    /// Solve over the lambda grid and write sweep.csv.
    Sweep { config: PathBuf },
    /// Verify a stored solution and write the ladder ledgers.
    Verify {
        config: PathBuf,
        solution: PathBuf,
        /// Parameter of the stored solution; defaults to solver.lambda.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Tabulate a cut-off family as CSV on stdout.
    CutoffTable {
        kind: String,
        delta: f64,
        #[arg(long, default_value_t = 101)]
        n: usize,
        /// Half-width of the table; defaults to 1.25·delta.
        #[arg(long)]
        extent: Option<f64>,
    },
    /// Indices, hypotheses and sample values of each N-function.
    NfunReport { config: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    HypothesisFailure,
    NotConverged,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::HypothesisFailure => 1,
            Outcome::NotConverged => 2,
        }
    }
}

/// Sizes the global thread pool from [`THREADS_ENV`] when it is set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| invalid(THREADS_ENV, format!("`{raw}` is not a thread count")))?;
    if n == 0 {
        return Err(invalid(THREADS_ENV, "must be at least 1"));
    }
    // a pool built earlier in the process wins; that is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Check { config } => {
            let cfg = load_config(&config)?;
            eprint!("{}", cfg.echo());
            let (text, ok) = check_report(&cfg)?;
            emit(out, &text)?;
            Ok(if ok { Outcome::Success } else { Outcome::HypothesisFailure })
        }
        Command::Solve { config } => {
            let cfg = load_config(&config)?;
            eprint!("{}", cfg.echo());
            let base = cfg.system(cfg.solver.lambda)?;
            let ctx = VerifyContext::new(&cfg)?;
            let rep = solve_at(&cfg, &ctx, &base, cfg.solver.lambda)?;
            let dir = &cfg.output_dir;
            let mut bin = Vec::new();
            write_solution(&rep, &mut bin).map_err(io_err(dir))?;
            write_file(&dir.join("solution.bin"), &bin)?;
            for (i, u) in rep.components().iter().enumerate() {
                let mut csv = Vec::new();
                write_csv(u, &mut csv).map_err(io_err(dir))?;
                write_file(&dir.join(format!("solution_{}.csv", i + 1)), &csv)?;
            }
            write_file(&dir.join("config.echo.toml"), cfg.echo().as_bytes())?;
            write_file(&dir.join("solve.txt"), rep.summary().as_bytes())?;
            emit(out, &rep.summary())?;
            Ok(if rep.result.converged { Outcome::Success } else { Outcome::NotConverged })
        }
        Command::Sweep { config } => {
            let cfg = load_config(&config)?;
            eprint!("{}", cfg.echo());
            let table = run_sweep(&cfg)?;
            let dir = &cfg.output_dir;
            write_file(&dir.join("sweep.csv"), table.to_csv().as_bytes())?;
            write_file(&dir.join("config.echo.toml"), cfg.echo().as_bytes())?;
            write_file(&dir.join("sweep.txt"), table.summary().as_bytes())?;
            emit(out, &table.to_csv())?;
            emit(out, &table.summary())?;
            Ok(if table.all_converged() { Outcome::Success } else { Outcome::NotConverged })
        }
        Command::Verify { config, solution, lambda } => {
            let cfg = load_config(&config)?;
            let lambda = lambda.unwrap_or(cfg.solver.lambda);
            let fields = read_solution(&solution, cfg.problem.components())?;
            let rep = verify_solution(&cfg, fields, lambda)?;
            for (i, l) in rep.ladders.iter().enumerate() {
                if let Ok(l) = l {
                    let mut csv = Vec::new();
                    l.write_csv(&mut csv).map_err(io_err(&cfg.output_dir))?;
                    write_file(&cfg.output_dir.join(format!("ladder_{}.csv", i + 1)), &csv)?;
                }
            }
            emit(out, &rep.summary())?;
            Ok(if !rep.result.converged {
                Outcome::NotConverged
            } else if rep.ladder_passed() == Some(false) {
                Outcome::HypothesisFailure
            } else {
                Outcome::Success
            })
        }
        Command::CutoffTable { kind, delta, n, extent } => {
            let kind: CutoffKind = kind.parse()?;
            if !(delta > 0.0) {
                return Err(invalid("delta", "must be positive"));
            }
            if n < 2 {
                return Err(invalid("n", "must be at least 2"));
            }
            let fam = CutoffFamily::new(kind, delta);
            let mut buf = Vec::new();
            write_table(&fam, n, extent.unwrap_or(1.25 * delta), &mut buf).map_err(io_err(Path::new("<stdout>")))?;
            out.write_all(&buf).map_err(io_err(Path::new("<stdout>")))?;
            Ok(Outcome::Success)
        }
        Command::NfunReport { config } => {
            let cfg = load_config(&config)?;
            let (text, ok) = nfun_report(&cfg);
            emit(out, &text)?;
            Ok(if ok { Outcome::Success } else { Outcome::HypothesisFailure })
        }
    }
}

/// Kernel hypotheses, nonlinearity hypotheses and the modified
/// nonlinearity's checks, as text plus an overall verdict.
pub fn check_report(cfg: &RunConfig) -> Result<(String, bool), CliError> {
    let p = &cfg.problem;
    let mut out = String::new();
    let mut ok = true;
    let mut indices = Vec::new();
    for (i, k) in p.kernels.iter().enumerate() {
        let rep = verify_kernel_hypotheses(k, p.index_dim);
        let _ = writeln!(out, "kernel {} : phi(t) = {}", i + 1, p.kernel_sources[i]);
        for (name, c) in [("monotone", &rep.monotone), ("index window", &rep.index_window), ("coercive", &rep.coercive)] {
            let _ = writeln!(out, "  [{}] {name} : {}", if c.passed { "pass" } else { "FAIL" }, c.detail);
        }
        ok &= rep.all_passed();
        indices.push(rep.indices);
    }
    if !ok {
        let _ = writeln!(out, "kernel hypotheses failed; nonlinearity checks skipped");
        return Ok((out, false));
    }
    let ip1 = indices[0].expect("indices exist when hypotheses pass");
    let ip2 = indices.get(1).copied().flatten().unwrap_or(ip1);
    let report = check_hypotheses(&p.nonlinearity, &ip1, &ip2, CHECK_SAMPLES)?;
    let _ = writeln!(out, "nonlinearity : {}", p.nonlinearity.f);
    out.push_str(&report.to_text());
    ok &= report.all_passed();
    let modified = p.modified()?;
    let (sandwich, growth) = check_modified(&modified, CHECK_SAMPLES, 2.0 * p.cutoff.delta);
    for v in [&sandwich, &growth] {
        let _ = writeln!(out, "[{}] {} : {}", if v.passed { "pass" } else { "FAIL" }, v.name, v.detail);
        ok &= v.passed;
    }
    let audit = verify_cutoff(&p.cutoff, CHECK_SAMPLES);
    let _ = writeln!(
        out,
        "cut-off {} delta={} : C1 mismatch inner {:.3e} outer {:.3e}, sign violation {:.3e}",
        p.cutoff.kind, p.cutoff.delta, audit.c1_mismatch_inner, audit.c1_mismatch_outer, audit.sign_violation
    );
    let _ = writeln!(out, "verdict = {}", if ok { "PASS" } else { "FAIL" });
    Ok((out, ok))
}

pub fn nfun_report(cfg: &RunConfig) -> (String, bool) {
    let p = &cfg.problem;
    let mut out = String::new();
    let mut ok = true;
    for (i, k) in p.kernels.iter().enumerate() {
        let _ = writeln!(out, "kernel {} : phi(t) = {}", i + 1, p.kernel_sources[i]);
        let rep = verify_kernel_hypotheses(k, p.index_dim);
        ok &= rep.all_passed();
        let nf = match build_from_kernel(k) {
            Ok(nf) => nf,
            Err(e) => {
                let _ = writeln!(out, "  N-function unavailable: {e}");
                ok = false;
                continue;
            }
        };
        let _ = writeln!(out, "  Phi = {}", nf.describe());
        match estimate_indices(&nf, p.index_dim) {
            Ok(ip) => {
                let _ = writeln!(
                    out,
                    "  l = {:.6}, m = {:.6}, l* = {:.6}, m* = {:.6}, conjugate indices = ({:.6}, {:.6}), N = {}",
                    ip.l, ip.m, ip.l_star, ip.m_star, ip.m_tilde, ip.l_tilde, ip.dim
                );
            }
            Err(e) => {
                let _ = writeln!(out, "  indices unavailable: {e}");
            }
        }
        let _ = writeln!(out, "  hypotheses: {}", if rep.all_passed() { "pass" } else { "FAIL" });
        let conj = complement(&nf);
        let sob = sobolev_conjugate(&nf, p.index_dim);
        let _ = writeln!(out, "  t,Phi,complement,sobolev_conjugate");
        for e in -3..=3 {
            let t = 10f64.powi(e);
            let s = sob.as_ref().map_or("undefined".to_string(), |s| format!("{:e}", s.eval(t)));
            let _ = writeln!(out, "  {t:e},{:e},{:e},{s}", nf.eval(t), conj.eval(t));
        }
    }
    (out, ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_worked_example_config() {
        let cfg = parse_config("[problem]\nbuiltin = \"worked-example\"\n").unwrap();
        assert_eq!(cfg.problem.components(), 2);
        assert_eq!(cfg.problem.index_dim, 6);
        assert_eq!(cfg.problem.nonlinearity.x_dim, 6);
        assert_eq!(cfg.problem.grid_nonlinearity.x_dim, 2);
        assert_eq!(cfg.problem.cutoff.delta, 4.0);
        assert_eq!(cfg.grid, Grid::new(2, 64, 8.0).unwrap());
        assert!(cfg.echo().contains("builtin = \"worked-example\""));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_config("[grid]\ndim = 2\nn = \"many\"\n") {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_config("[problem]\nbuiltin = \"desk-scalar\"\n[sweep]\nlambda_min = -1.0\n") {
            Err(CliError::Invalid { field, .. }) => assert_eq!(field, "sweep.lambda_min"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_config("[problem]\nbuiltin = \"nope\"\n"),
            Err(CliError::UnknownBuiltin(_))
        ));
        assert!(matches!(load_config(Path::new("/definitely/missing.toml")), Err(CliError::Io { .. })));
    }

    #[test]
    fn lambda_grids() {
        let s = SweepConfig { lambda_min: 10.0, lambda_max: 1000.0, points: 9, log_spaced: true };
        let l = s.lambdas();
        assert_eq!(l.len(), 9);
        assert!(l.windows(2).all(|w| w[0] < w[1]));
        assert_eq!((l[0], l[8]), (10.0, 1000.0));
        assert!((l[4] - 100.0).abs() < 1e-12);
        let one = SweepConfig { points: 1, ..s };
        assert_eq!(one.lambdas(), vec![10.0]);
    }

    #[test]
    fn sublinear_kernel_rejected_at_check() {
        // Phi(t) = t^{2.5}/2.5 has l = 2.5, not below N = 2
        let cfg = parse_config("[problem]\nkernels = [\"t^0.5\"]\nf = \"|t|^2.2\"\n").unwrap();
        let (text, ok) = check_report(&cfg).unwrap();
        assert!(!ok, "{text}");
        assert!(text.contains("FAIL"));
    }

    #[test]
    fn expression_problem_with_constants() {
        let src = r#"
            [problem]
            kernels = ["t^(-0.5)", "t^(-0.5)"]
            potentials = ["1", "1+0.5*sum_cos2(x,2)"]
            f = "|t|^2.2+|s|^2.2"
            cutoff = "sine_sq"
            delta = 1.0
            [problem.constants]
            k = [2.2, 2.2]
            lower = [1.0, 1.0]
            r = [2.5, 2.5]
            grad = [2.2, 2.2]
            mu = [2.2, 2.2]
            radius = 1.0
            tail = [1.0, 1.0]
            [grid]
            n = 16
            half_width = 4.0
        "#;
        let cfg = parse_config(src).unwrap();
        assert_eq!(cfg.problem.cutoff.kind, CutoffKind::SineSq);
        let p = cfg.system(50.0).unwrap();
        assert_eq!(p.components(), 2);
        let bad = src.replace("k = [2.2, 2.2]", "k = [2.2]");
        assert!(matches!(parse_config(&bad), Err(CliError::Invalid { .. })));
    }

    #[test]
    fn echo_reloads_to_the_same_configuration() {
        let scalar = "[problem]\nkernels = [\"t^(-0.5)\"]\nf = \"|t|^2.2\"\nx_dim = 0\n[solver]\nlambda = 30\n";
        for src in ["[problem]\nbuiltin = \"desk-system\"\ndelta = 0.5\n", "[problem]\nbuiltin = \"worked-example\"\n", scalar] {
            let echo = parse_config(src).unwrap().echo();
            let again = parse_config(&echo).unwrap_or_else(|e| panic!("{e}\n{echo}"));
            assert_eq!(again.echo(), echo);
        }
    }

    #[test]
    fn sweep_csv_layout() {
        let table = SweepTable {
            rows: vec![SweepRow { lambda: 3.0, outcome: Err("no valley, at all".into()) }],
            inner_radius: 0.5,
        };
        let csv = table.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(SWEEP_HEADER));
        let row = lines.next().unwrap();
        assert_eq!(row.split(',').count(), SWEEP_HEADER.split(',').count());
        assert!(row.ends_with("no valley; at all"));
        assert_eq!(table.empirical_threshold(), None);
    }
}
