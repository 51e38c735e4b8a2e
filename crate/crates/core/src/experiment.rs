//! Declarative experiment configs and the commands that turn them into
//! CSV tables and field snapshots.
//!
//! Configs are TOML. Every block has defaults, so an empty file describes
//! the desk brick-mortar problem; unknown keys are rejected.
//!
//! ```toml
//! experiment = "convergence"
//!
//! [problem]
//! dims = [42, 42, 42]
//!
//! [parareal]
//! n_sub = [4, 8, 16]
//! coarse_steps = 64
//! fine_steps = 1024
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discretization::{BoundarySpec, StateVector};
use crate::error::{ensure_positive, Error, Result};
use crate::grid::{build_brick_mortar, effective_coefficient_1d, lag_time, BrickMortarSpec, CoefficientField, Grid3D};
use crate::io;
use crate::multigrid::MgConfig;
use crate::parareal::{
    defect, relative_errors, run_parareal, run_serial, Backend, PararealConfig, PararealTrace, SerialRun,
};
use crate::perf_model::{self, speedup_simple, validate_model, DEFAULT_FLAG_RATIO};
use crate::propagator::{step_count, Label, Problem, Propagator, PropagatorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Convergence,
    Coefficients,
    ErrorOverTime,
    Speedup,
    WeakScaling,
    Export,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Convergence => "convergence",
            Experiment::Coefficients => "coefficients",
            Experiment::ErrorOverTime => "error-over-time",
            Experiment::Speedup => "speedup",
            Experiment::WeakScaling => "weak-scaling",
            Experiment::Export => "export",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientModel {
    #[default]
    BrickMortar,
    /// `D = constant_d` everywhere.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub dims: [usize; 3],
    /// Physical size of the domain. Defaults to one brick plus mortar on each
    /// side laterally and the stack height vertically.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extent: Option<[f64; 3]>,
    pub geometry: BrickMortarSpec,
    pub coefficients: CoefficientModel,
    pub constant_d: f64,
    pub boundary: BoundarySpec,
    /// Final time. Defaults to the lag time of the brick-mortar field.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            dims: [42, 42, 42],
            extent: None,
            geometry: BrickMortarSpec::default(),
            coefficients: CoefficientModel::BrickMortar,
            constant_d: 1e-3,
            boundary: BoundarySpec::default(),
            t_end: None,
        }
    }
}

impl ProblemConfig {
    pub fn extent(&self) -> [f64; 3] {
        self.extent.unwrap_or_else(|| {
            let g = &self.geometry;
            let m = 2.0 * g.mortar_width;
            [g.brick_extent[0] + m, g.brick_extent[1] + m, g.required_height()]
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        ensure_positive("constant_d", self.constant_d)?;
        for e in self.extent() {
            ensure_positive("extent", e)?;
        }
        if let Some(t) = self.t_end {
            ensure_positive("t_end", t)?;
        }
        self.grid(self.dims).map(|_| ())
    }

    pub fn grid(&self, dims: [usize; 3]) -> Result<Grid3D> {
        Grid3D::covering(dims, self.extent())
    }

    pub fn field(&self, grid: &Grid3D, model: CoefficientModel) -> Result<CoefficientField> {
        match model {
            CoefficientModel::BrickMortar => build_brick_mortar(&self.geometry, grid),
            CoefficientModel::Constant => CoefficientField::uniform(*grid, self.constant_d),
        }
    }

    pub fn problem(&self, dims: [usize; 3], model: CoefficientModel) -> Result<Problem> {
        let grid = self.grid(dims)?;
        Ok(Problem::new(self.field(&grid, model)?, self.boundary))
    }

    /// `t_end` if given, else the lag time of the brick-mortar field.
    pub fn t_end(&self) -> Result<f64> {
        match self.t_end {
            Some(t) => Ok(t),
            None => self.lag_time(self.dims),
        }
    }

    /// Lag time of the brick-mortar field on a `dims` grid.
    pub fn lag_time(&self, dims: [usize; 3]) -> Result<f64> {
        let field = self.field(&self.grid(dims)?, CoefficientModel::BrickMortar)?;
        lag_time(self.extent()[2], effective_coefficient_1d(&field))
    }
}

/// Step sizes are given as step counts over `[0, T]`, so `Δt = T / coarse_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PararealBlock {
    pub n_sub: Vec<usize>,
    /// Capped at each `N_t`; defaults to `N_t`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defect_tol: Option<f64>,
    pub backend: Backend,
    pub retirement: bool,
    pub coarse_steps: usize,
    pub fine_steps: usize,
    /// The discretization-error reference uses `δt / error_refinement`.
    pub error_refinement: usize,
    pub mg: MgConfig,
    /// Solver settings of the coarse propagator, if different.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coarse_mg: Option<MgConfig>,
}

impl Default for PararealBlock {
    fn default() -> Self {
        Self {
            n_sub: vec![4, 8, 16],
            max_iter: None,
            defect_tol: None,
            backend: Backend::Sequential,
            retirement: true,
            coarse_steps: 64,
            fine_steps: 1024,
            error_refinement: 4,
            mg: MgConfig::default(),
            coarse_mg: None,
        }
    }
}

impl PararealBlock {
    pub fn validate(&self) -> Result<()> {
        if self.n_sub.is_empty() {
            return cfg_err("parareal.n_sub must list at least one value");
        }
        for &n in &self.n_sub {
            check_steps(n, self.coarse_steps, self.fine_steps)
                .map_err(|e| Error::Config(format!("parareal: {e}")))?;
        }
        if self.error_refinement < 1 {
            return cfg_err("parareal.error_refinement must be at least 1");
        }
        if self.max_iter == Some(0) {
            return cfg_err("parareal.max_iter must be at least 1");
        }
        if let Some(tol) = self.defect_tol {
            if !(tol >= 0.0 && tol.is_finite()) {
                return cfg_err(format!("parareal.defect_tol must be non-negative, got {tol}"));
            }
        }
        self.mg.validate()?;
        if let Some(mg) = &self.coarse_mg {
            mg.validate()?;
        }
        Ok(())
    }

    pub fn largest_n_sub(&self) -> usize {
        self.n_sub.iter().copied().max().unwrap_or(1)
    }

    pub fn config(&self, n_sub: usize, t_end: f64, backend: Backend) -> PararealConfig {
        PararealConfig {
            n_sub,
            t_end,
            max_iter: self.max_iter.unwrap_or(n_sub).min(n_sub),
            defect_tol: self.defect_tol,
            backend,
            retirement: self.retirement,
        }
    }

    pub fn coarse_spec(&self, t_end: f64) -> PropagatorSpec {
        let mut spec = PropagatorSpec::new(t_end / self.coarse_steps as f64, Label::Coarse);
        spec.mg = self.coarse_mg.unwrap_or(self.mg);
        spec
    }

    pub fn fine_spec(&self, t_end: f64) -> PropagatorSpec {
        let mut spec = PropagatorSpec::new(t_end / self.fine_steps as f64, Label::Fine);
        spec.mg = self.mg;
        spec
    }

    pub fn reference_spec(&self, t_end: f64) -> PropagatorSpec {
        let mut spec = self.fine_spec(t_end);
        spec.dt /= self.error_refinement as f64;
        spec
    }
}

fn check_steps(n_sub: usize, coarse_steps: usize, fine_steps: usize) -> Result<()> {
    if n_sub == 0 || coarse_steps == 0 || fine_steps == 0 {
        return cfg_err("n_sub and step counts must be positive");
    }
    if coarse_steps % n_sub != 0 {
        return cfg_err(format!("coarse_steps {coarse_steps} is not divisible by n_sub {n_sub}"));
    }
    if fine_steps % coarse_steps != 0 {
        return cfg_err(format!(
            "fine_steps {fine_steps} is not divisible by coarse_steps {coarse_steps}"
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeedupBlock {
    /// Parareal iterations of each timed run.
    pub iterations: usize,
    pub flag_ratio: f64,
    /// Imbalance factors `b` of the model curves.
    pub imbalance: Vec<f64>,
    pub curve_n_sub: Vec<usize>,
}

impl Default for SpeedupBlock {
    fn default() -> Self {
        Self {
            iterations: 1,
            flag_ratio: DEFAULT_FLAG_RATIO,
            imbalance: vec![0.0, 0.5, 0.75],
            curve_n_sub: vec![4, 8, 16, 32],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportBlock {
    /// Snapshot times; defaults to `T/16`, `T/2` and `T`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

/// One run of a weak-scaling ladder. Step counts are over `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rung {
    pub dims: [usize; 3],
    pub n_sub: usize,
    pub coarse_steps: usize,
    pub fine_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakScalingPlan {
    /// Final time; defaults to the lag time on the first rung's grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default = "one_usize")]
    pub iterations: usize,
    /// Timed runs per rung; the fastest is kept, since millisecond rungs are
    /// dominated by scheduling noise.
    #[serde(default = "three_usize")]
    pub repeats: usize,
    /// Rungs whose estimated footprint exceeds this are skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_memory_mb: Option<f64>,
    pub rungs: Vec<Rung>,
}

fn one_usize() -> usize {
    1
}

fn three_usize() -> usize {
    3
}

impl WeakScalingPlan {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.t_end {
            ensure_positive("weak_scaling.t_end", t).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.rungs.is_empty() {
            return cfg_err("weak_scaling.rungs must list at least one rung");
        }
        if self.repeats == 0 {
            return cfg_err("weak_scaling.repeats must be at least 1");
        }
        for (i, r) in self.rungs.iter().enumerate() {
            check_steps(r.n_sub, r.coarse_steps, r.fine_steps)
                .map_err(|e| Error::Config(format!("weak_scaling rung {i}: {e}")))?;
            if self.iterations == 0 || self.iterations > r.n_sub {
                return cfg_err(format!(
                    "weak_scaling rung {i}: iterations {} must lie in 1..={}",
                    self.iterations, r.n_sub
                ));
            }
        }
        for (i, w) in self.rungs.windows(2).enumerate() {
            let (a, b) = (&w[0], &w[1]);
            // steps per subinterval, compared without division
            if a.coarse_steps * b.n_sub != b.coarse_steps * a.n_sub
                || a.fine_steps * b.n_sub != b.fine_steps * a.n_sub
            {
                return cfg_err(format!(
                    "weak_scaling rungs {i} and {}: steps per subinterval must stay constant",
                    i + 1
                ));
            }
        }
        Ok(())
    }

    /// Rough peak footprint of one rung in MiB.
    pub fn estimated_memory_mb(&self, rung: &Rung) -> f64 {
        let cells = rung.dims.iter().product::<usize>() as f64;
        let vectors = rung.n_sub as f64 * (self.iterations as f64 + 3.0) + 64.0;
        cells * vectors * 8.0 / (1024.0 * 1024.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Command run by [`run`]; the command line overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    /// Recorded with the outputs. The built-in experiments are deterministic.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub parareal: PararealBlock,
    #[serde(default)]
    pub speedup: SpeedupBlock,
    #[serde(default)]
    pub export: ExportBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_scaling: Option<WeakScalingPlan>,
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => Error::Config(format!("{}: {other}", path.display())),
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        let text = self.to_toml_string()?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.problem.validate().map_err(wrap)?;
        self.parareal.validate().map_err(wrap)?;
        if !(self.speedup.flag_ratio > 0.0 && self.speedup.flag_ratio.is_finite()) {
            return cfg_err("speedup.flag_ratio must be positive");
        }
        if self.speedup.iterations == 0 {
            return cfg_err("speedup.iterations must be at least 1");
        }
        if let Some(plan) = &self.weak_scaling {
            plan.validate()?;
        }
        Ok(())
    }
}

/// Overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub backend: Option<Backend>,
    pub cores: Option<usize>,
}

impl RunOptions {
    fn backend(&self, cfg: &ExperimentConfig) -> Backend {
        self.backend.unwrap_or(cfg.parareal.backend)
    }

    fn cores(&self) -> usize {
        self.cores
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// Process exit code for an error: 2 for bad input, 3 for failures while running.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidInput(_)
        | Error::Geometry(_)
        | Error::ResolutionTooCoarse(_)
        | Error::GeometryOverflow(_)
        | Error::GridMismatch { .. }
        | Error::NonIntegralSteps { .. }
        | Error::Format(_) => 2,
        _ => 3,
    }
}

/// A CSV table: header, one line per row, no trailing comment.
pub trait CsvRow {
    const HEADER: &'static str;
    fn write_row(&self, out: &mut String);
}

pub fn to_csv<R: CsvRow>(rows: &[R], config_hash: &str) -> String {
    let mut out = format!("# config_hash={config_hash}\n{}\n", R::HEADER);
    for r in rows {
        r.write_row(&mut out);
    }
    out
}

fn raw_csv(header: &str, body: &str, config_hash: &str) -> String {
    format!("# config_hash={config_hash}\n{header}\n{body}")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Fine and reference runs over `[0, T]` recorded at the boundaries of `lcm` subintervals.
struct Baseline {
    lcm: usize,
    fine: SerialRun,
    reference: SerialRun,
}

impl Baseline {
    fn new(block: &PararealBlock, problem: &Problem, n_subs: &[usize], t_end: f64) -> Result<Self> {
        let lcm = n_subs.iter().fold(1, |a, &b| lcm(a, b));
        let cfg = PararealConfig::new(lcm, t_end, 1);
        let fine = Propagator::for_problem(block.fine_spec(t_end), problem)?;
        let reference = Propagator::for_problem(block.reference_spec(t_end), problem)?;
        Ok(Self {
            lcm,
            fine: run_serial(&cfg, &fine, &problem.initial)?,
            reference: run_serial(&cfg, &reference, &problem.initial)?,
        })
    }

    fn fine_boundaries(&self, n_sub: usize) -> Vec<StateVector> {
        pick(&self.fine.states, self.lcm, n_sub)
    }

    fn reference_boundaries(&self, n_sub: usize) -> Vec<StateVector> {
        pick(&self.reference.states, self.lcm, n_sub)
    }

    /// Relative error of the fine solution at `T`.
    fn e_fine(&self) -> Result<f64> {
        defect(
            self.fine.states.last().expect("non-empty"),
            self.reference.states.last().expect("non-empty"),
        )
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

fn pick(states: &[StateVector], lcm: usize, n_sub: usize) -> Vec<StateVector> {
    let stride = lcm / n_sub;
    (0..=n_sub).map(|n| states[n * stride].clone()).collect()
}

fn propagators(block: &PararealBlock, problem: &Problem, t_end: f64) -> Result<(Propagator, Propagator)> {
    Ok((
        Propagator::for_problem(block.coarse_spec(t_end), problem)?,
        Propagator::for_problem(block.fine_spec(t_end), problem)?,
    ))
}

/// Smallest `k ≥ 1` whose defect at `T` is below `e_fine`.
pub fn iterations_to_accuracy(defects_at_t: &[f64], e_fine: f64) -> Option<usize> {
    (1..defects_at_t.len()).find(|&k| defects_at_t[k] < e_fine)
}

fn defects_at_end(trace: &PararealTrace, reference: &[StateVector]) -> Result<Vec<f64>> {
    let n = trace.config.n_sub;
    Ok(trace.defects(reference)?.into_iter().map(|row| row[n]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n_sub: usize,
    pub iteration: usize,
    /// `d^k` at `T`.
    pub defect: f64,
    /// Largest relative update of this iteration.
    pub max_update: f64,
    pub e_fine: f64,
}

impl CsvRow for ConvergenceRow {
    const HEADER: &'static str = "n_sub,iteration,defect,max_update,e_fine";
    fn write_row(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{:e}",
            self.n_sub, self.iteration, self.defect, self.max_update, self.e_fine
        );
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceResult {
    pub rows: Vec<ConvergenceRow>,
    pub traces: Vec<PararealTrace>,
    /// Serial fine boundary states for each trace.
    pub references: Vec<Vec<StateVector>>,
}

/// Defect at `T` per iteration for every requested `N_t`, against the
/// fine discretization error estimate.
pub fn convergence(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ConvergenceResult> {
    let block = &cfg.parareal;
    let t_end = cfg.problem.t_end()?;
    let problem = cfg.problem.problem(cfg.problem.dims, cfg.problem.coefficients)?;
    let baseline = Baseline::new(block, &problem, &block.n_sub, t_end)?;
    let e_fine = baseline.e_fine()?;
    let (coarse, fine) = propagators(block, &problem, t_end)?;
    let mut result = ConvergenceResult {
        rows: Vec::new(),
        traces: Vec::new(),
        references: Vec::new(),
    };
    for &n_sub in &block.n_sub {
        let pcfg = block.config(n_sub, t_end, opts.backend(cfg));
        let trace = run_parareal(&pcfg, &coarse, &fine, &problem.initial)?;
        let reference = baseline.fine_boundaries(n_sub);
        let d = defects_at_end(&trace, &reference)?;
        for (k, &defect) in d.iter().enumerate() {
            let max_update = trace.update_norms[k].iter().copied().fold(0.0, f64::max);
            result.rows.push(ConvergenceRow {
                n_sub,
                iteration: k,
                defect,
                max_update,
                e_fine,
            });
        }
        result.traces.push(trace);
        result.references.push(reference);
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientsRow {
    pub iteration: usize,
    pub defect_jumping: Option<f64>,
    pub defect_constant: Option<f64>,
}

impl CsvRow for CoefficientsRow {
    const HEADER: &'static str = "iteration,defect_jumping,defect_constant";
    fn write_row(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{},{}",
            self.iteration,
            opt(self.defect_jumping),
            opt(self.defect_constant)
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientsResult {
    pub n_sub: usize,
    pub rows: Vec<CoefficientsRow>,
    pub e_fine_jumping: f64,
    pub e_fine_constant: f64,
    pub iterations_jumping: Option<usize>,
    pub iterations_constant: Option<usize>,
}

impl CoefficientsResult {
    pub const SUMMARY_HEADER: &'static str = "coefficients,n_sub,e_fine,iterations_to_e_fine";

    pub fn summary_rows(&self) -> String {
        let it = |k: Option<usize>| k.map(|k| k.to_string()).unwrap_or_default();
        format!(
            "jumping,{},{:e},{}\nconstant,{},{:e},{}\n",
            self.n_sub,
            self.e_fine_jumping,
            it(self.iterations_jumping),
            self.n_sub,
            self.e_fine_constant,
            it(self.iterations_constant)
        )
    }
}

/// Jumping versus constant coefficients at the largest `N_t`, same `T` and steps.
pub fn coefficients(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CoefficientsResult> {
    let block = &cfg.parareal;
    let t_end = cfg.problem.t_end()?;
    let n_sub = block.largest_n_sub();
    let mut columns = Vec::new();
    for model in [CoefficientModel::BrickMortar, CoefficientModel::Constant] {
        let problem = cfg.problem.problem(cfg.problem.dims, model)?;
        let baseline = Baseline::new(block, &problem, &[n_sub], t_end)?;
        let (coarse, fine) = propagators(block, &problem, t_end)?;
        let pcfg = block.config(n_sub, t_end, opts.backend(cfg));
        let trace = run_parareal(&pcfg, &coarse, &fine, &problem.initial)?;
        let d = defects_at_end(&trace, &baseline.fine_boundaries(n_sub))?;
        columns.push((d, baseline.e_fine()?));
    }
    let (jump, constant) = (&columns[0], &columns[1]);
    let rows = (0..jump.0.len().max(constant.0.len()))
        .map(|k| CoefficientsRow {
            iteration: k,
            defect_jumping: jump.0.get(k).copied(),
            defect_constant: constant.0.get(k).copied(),
        })
        .collect();
    Ok(CoefficientsResult {
        n_sub,
        rows,
        e_fine_jumping: jump.1,
        e_fine_constant: constant.1,
        iterations_jumping: iterations_to_accuracy(&jump.0, jump.1),
        iterations_constant: iterations_to_accuracy(&constant.0, constant.1),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorOverTimeRow {
    pub boundary: usize,
    pub time: f64,
    pub coarse_error: f64,
    pub fine_error: f64,
    pub defect_1: f64,
    pub defect_2: Option<f64>,
}

impl CsvRow for ErrorOverTimeRow {
    const HEADER: &'static str = "boundary_index,time,coarse_error,fine_error,defect_1,defect_2";
    fn write_row(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{}",
            self.boundary,
            self.time,
            self.coarse_error,
            self.fine_error,
            self.defect_1,
            opt(self.defect_2)
        );
    }
}

/// Coarse and fine errors against the refined reference, and `d^1_n`, `d^2_n`,
/// at every boundary of the largest `N_t`.
pub fn error_over_time(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<ErrorOverTimeRow>> {
    let block = &cfg.parareal;
    let t_end = cfg.problem.t_end()?;
    let n_sub = block.largest_n_sub();
    let problem = cfg.problem.problem(cfg.problem.dims, cfg.problem.coefficients)?;
    let baseline = Baseline::new(block, &problem, &[n_sub], t_end)?;
    let (coarse, fine) = propagators(block, &problem, t_end)?;
    let mut pcfg = block.config(n_sub, t_end, opts.backend(cfg));
    pcfg.max_iter = n_sub.min(2);
    pcfg.defect_tol = None;
    let coarse_run = run_serial(&pcfg, &coarse, &problem.initial)?;
    let reference = baseline.reference_boundaries(n_sub);
    let fine_states = baseline.fine_boundaries(n_sub);
    let coarse_err = relative_errors(&coarse_run.states, &reference)?;
    let fine_err = relative_errors(&fine_states, &reference)?;
    let trace = run_parareal(&pcfg, &coarse, &fine, &problem.initial)?;
    let d = trace.defects(&fine_states)?;
    Ok((0..=n_sub)
        .map(|n| ErrorOverTimeRow {
            boundary: n,
            time: pcfg.boundary_time(n),
            coarse_error: coarse_err[n],
            fine_error: fine_err[n],
            defect_1: d[1][n],
            defect_2: d.get(2).map(|row| row[n]),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupRow {
    pub n_sub: usize,
    pub iterations: usize,
    /// `concurrent`, `simulated`, or `simulated-insufficient-cores`.
    pub mode: String,
    pub serial_seconds: f64,
    pub parareal_seconds: f64,
    /// Event-driven pipelined replay of the measured profile.
    pub pipelined_seconds: f64,
    pub measured: f64,
    pub predicted_ideal: f64,
    pub predicted_general: f64,
    pub ratio: f64,
    pub flagged: bool,
}

impl CsvRow for SpeedupRow {
    const HEADER: &'static str = "n_sub,iterations,mode,serial_seconds,parareal_seconds,pipelined_seconds,measured,predicted_ideal,predicted_general,ratio,flagged";
    fn write_row(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.n_sub,
            self.iterations,
            self.mode,
            self.serial_seconds,
            self.parareal_seconds,
            self.pipelined_seconds,
            self.measured,
            self.predicted_ideal,
            self.predicted_general,
            self.ratio,
            self.flagged
        );
    }
}

/// Measured against predicted speedup for every `N_t`. Without enough cores
/// for the concurrent backend, the run falls back to the sequential backend
/// and a simulated pipelined wall time, and the row says so.
pub fn speedup(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<SpeedupRow>> {
    let block = &cfg.parareal;
    let t_end = cfg.problem.t_end()?;
    let problem = cfg.problem.problem(cfg.problem.dims, cfg.problem.coefficients)?;
    let (coarse, fine) = propagators(block, &problem, t_end)?;
    let cores = opts.cores();
    let mut rows = Vec::new();
    for &n_sub in &block.n_sub {
        let requested = opts.backend(cfg);
        let (backend, mode) = match requested {
            Backend::Concurrent if cores >= n_sub => (Backend::Concurrent, "concurrent"),
            Backend::Concurrent => {
                eprintln!(
                    "warning: {cores} core(s) available, N_t = {n_sub} needs {n_sub}; \
                     reporting simulated pipelined timings"
                );
                (Backend::Sequential, "simulated-insufficient-cores")
            }
            Backend::Sequential => (Backend::Sequential, "simulated"),
        };
        let mut pcfg = block.config(n_sub, t_end, backend);
        pcfg.max_iter = cfg.speedup.iterations.min(n_sub);
        pcfg.defect_tol = None;
        let serial = run_serial(&pcfg, &fine, &problem.initial)?;
        let trace = run_parareal(&pcfg, &coarse, &fine, &problem.initial)?;
        let report = validate_model(&trace, &serial, backend == Backend::Sequential, cfg.speedup.flag_ratio)?;
        let p = &report.predicted;
        let ideal = speedup_simple(pcfg.max_iter, n_sub, p.total_coarse / p.total_fine, 1.0)?;
        rows.push(SpeedupRow {
            n_sub,
            iterations: pcfg.max_iter,
            mode: mode.into(),
            serial_seconds: serial.total_seconds(),
            parareal_seconds: report.parareal_seconds,
            pipelined_seconds: report.pipelined_seconds,
            measured: report.measured,
            predicted_ideal: ideal,
            predicted_general: p.value,
            ratio: report.ratio,
            flagged: report.flagged,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakScalingRow {
    pub rung: usize,
    pub dims: [usize; 3],
    pub n_sub: usize,
    pub coarse_steps: usize,
    pub fine_steps: usize,
    /// `None` when the rung was skipped.
    pub result: Option<RungResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RungResult {
    pub e_fine: f64,
    pub defect_1: f64,
    pub iterations: usize,
    pub mode: String,
    pub runtime: f64,
    /// Runtime over the previous rung's runtime.
    pub factor: Option<f64>,
    /// `factor` divided by the growth in cell count.
    pub factor_per_cell: Option<f64>,
}

impl CsvRow for WeakScalingRow {
    const HEADER: &'static str =
        "rung,nx,ny,nz,n_sub,coarse_steps,fine_steps,e_fine,defect_1,iterations,mode,runtime,factor,factor_per_cell";
    fn write_row(&self, out: &mut String) {
        let [nx, ny, nz] = self.dims;
        let _ = write!(
            out,
            "{},{nx},{ny},{nz},{},{},{},",
            self.rung, self.n_sub, self.coarse_steps, self.fine_steps
        );
        let _ = match &self.result {
            Some(r) => writeln!(
                out,
                "{:e},{:e},{},{},{:e},{},{}",
                r.e_fine,
                r.defect_1,
                r.iterations,
                r.mode,
                r.runtime,
                opt(r.factor),
                opt(r.factor_per_cell)
            ),
            None => writeln!(out, ",,,skipped,,,"),
        };
    }
}

/// Runs each rung of the ladder on the problem geometry, with the rung's grid.
pub fn weak_scaling(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<WeakScalingRow>> {
    let plan = cfg
        .weak_scaling
        .as_ref()
        .ok_or_else(|| Error::Config("weak-scaling needs a [weak_scaling] block".into()))?;
    let cores = opts.cores();
    let t_end = match plan.t_end {
        Some(t) => t,
        None => cfg.problem.lag_time(plan.rungs[0].dims)?,
    };
    let mut rows: Vec<WeakScalingRow> = Vec::new();
    let mut previous: Option<(f64, usize)> = None;
    for (i, rung) in plan.rungs.iter().enumerate() {
        let mut row = WeakScalingRow {
            rung: i,
            dims: rung.dims,
            n_sub: rung.n_sub,
            coarse_steps: rung.coarse_steps,
            fine_steps: rung.fine_steps,
            result: None,
        };
        if let Some(limit) = plan.max_memory_mb {
            let need = plan.estimated_memory_mb(rung);
            if need > limit {
                eprintln!("notice: skipping rung {i}: needs about {need:.0} MiB, limit {limit:.0} MiB");
                rows.push(row);
                previous = None;
                continue;
            }
        }
        let block = PararealBlock {
            n_sub: vec![rung.n_sub],
            max_iter: Some(plan.iterations),
            defect_tol: None,
            coarse_steps: rung.coarse_steps,
            fine_steps: rung.fine_steps,
            ..cfg.parareal.clone()
        };
        let problem = cfg.problem.problem(rung.dims, cfg.problem.coefficients)?;
        let baseline = Baseline::new(&block, &problem, &[rung.n_sub], t_end)?;
        let (coarse, fine) = propagators(&block, &problem, t_end)?;
        let (backend, mode) = match opts.backend(cfg) {
            Backend::Concurrent if cores >= rung.n_sub => (Backend::Concurrent, "concurrent"),
            Backend::Concurrent => (Backend::Sequential, "simulated-insufficient-cores"),
            Backend::Sequential => (Backend::Sequential, "simulated"),
        };
        let pcfg = block.config(rung.n_sub, t_end, backend);
        let trace = run_parareal(&pcfg, &coarse, &fine, &problem.initial)?;
        let d = defects_at_end(&trace, &baseline.fine_boundaries(rung.n_sub))?;
        // iterates are deterministic, so repeats only refine the timings
        let mut wall = trace.wall_seconds;
        let mut profile = trace.profile()?;
        for _ in 1..plan.repeats {
            let again = run_parareal(&pcfg, &coarse, &fine, &problem.initial)?;
            wall = wall.min(again.wall_seconds);
            let p = again.profile()?;
            for (a, b) in profile.gamma_c.iter_mut().zip(&p.gamma_c) {
                *a = a.min(*b);
            }
            for (a, b) in profile.gamma_f.iter_mut().zip(&p.gamma_f) {
                *a = a.min(*b);
            }
        }
        let runtime = match backend {
            Backend::Concurrent => wall,
            Backend::Sequential => trace.simulate_wall(&profile)?,
        };
        let cells: usize = rung.dims.iter().product();
        let factor = previous.map(|(r, _)| runtime / r);
        let factor_per_cell = previous.map(|(r, c)| runtime / r / (cells as f64 / c as f64));
        row.result = Some(RungResult {
            e_fine: baseline.e_fine()?,
            defect_1: d[1],
            iterations: trace.iterations(),
            mode: mode.into(),
            runtime,
            factor,
            factor_per_cell,
        });
        previous = Some((runtime, cells));
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub state: StateVector,
}

/// Serial fine solution at each requested time, in ascending order.
pub fn export_solution(cfg: &ExperimentConfig, times: &[f64]) -> Result<Vec<Snapshot>> {
    let t_end = cfg.problem.t_end()?;
    let mut times = times.to_vec();
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && **t <= t_end * (1.0 + 1e-12))) {
        return cfg_err(format!("snapshot time {t} lies outside [0, {t_end}]"));
    }
    times.sort_by(f64::total_cmp);
    let problem = cfg.problem.problem(cfg.problem.dims, cfg.problem.coefficients)?;
    let fine = Propagator::for_problem(cfg.parareal.fine_spec(t_end), &problem)?;
    let dt = fine.spec().dt;
    let mut state = problem.initial.clone();
    let mut snapshots = Vec::with_capacity(times.len());
    for t in times {
        // land exactly on the fine step grid
        let steps = step_count(t, dt)?;
        let target = if steps == cfg.parareal.fine_steps { t_end } else { steps as f64 * dt };
        if target > state.time() {
            state = fine.propagate(&state, target, 0)?.0;
        }
        snapshots.push(Snapshot { time: t, state: state.clone() });
    }
    Ok(snapshots)
}

pub fn default_export_times(t_end: f64) -> Vec<f64> {
    vec![t_end / 16.0, t_end / 2.0, t_end]
}

const SNAPSHOT_HEADER: &str = "index,time,file,mean,min,max";

/// Runs `experiment` and writes its outputs to the output directory.
/// Returns the paths written.
pub fn run_experiment(experiment: Experiment, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let hash = cfg.hash()?;
    let dir = opts.out_dir(cfg);
    // compute everything first so timings never include file output
    let files: Vec<(String, String)> = match experiment {
        Experiment::Convergence => {
            let r = convergence(cfg, opts)?;
            let mut files = vec![("convergence.csv".to_string(), to_csv(&r.rows, &hash))];
            for (trace, reference) in r.traces.iter().zip(&r.references) {
                let mut body = String::new();
                trace.write_csv(Some(reference), &mut body)?;
                files.push((
                    format!("convergence_trace_nt{}.csv", trace.config.n_sub),
                    raw_csv(PararealTrace::CSV_HEADER, &body, &hash),
                ));
            }
            files
        }
        Experiment::Coefficients => {
            let r = coefficients(cfg, opts)?;
            vec![
                ("coefficients.csv".into(), to_csv(&r.rows, &hash)),
                (
                    "coefficients_summary.csv".into(),
                    raw_csv(CoefficientsResult::SUMMARY_HEADER, &r.summary_rows(), &hash),
                ),
            ]
        }
        Experiment::ErrorOverTime => {
            vec![("error_over_time.csv".into(), to_csv(&error_over_time(cfg, opts)?, &hash))]
        }
        Experiment::Speedup => {
            let rows = speedup(cfg, opts)?;
            let curves = perf_model::model_curves(&cfg.speedup.curve_n_sub, &cfg.speedup.imbalance, 1)?;
            vec![
                ("speedup.csv".into(), to_csv(&rows, &hash)),
                (
                    "model_curves.csv".into(),
                    raw_csv(perf_model::MODEL_CURVE_HEADER, &curves, &hash),
                ),
            ]
        }
        Experiment::WeakScaling => {
            let rows = weak_scaling(cfg, opts)?;
            let n_subs: Vec<usize> = cfg
                .weak_scaling
                .as_ref()
                .map(|p| p.rungs.iter().map(|r| r.n_sub).collect())
                .unwrap_or_default();
            let table = perf_model::efficiency_table(&n_subs, &[1, 2], &[0.1, 1.0])?;
            vec![
                ("weak_scaling.csv".into(), to_csv(&rows, &hash)),
                (
                    "efficiency.csv".into(),
                    raw_csv(perf_model::EFFICIENCY_HEADER, &table, &hash),
                ),
            ]
        }
        Experiment::Export => {
            let t_end = cfg.problem.t_end()?;
            let times = cfg
                .export
                .times
                .clone()
                .unwrap_or_else(|| default_export_times(t_end));
            let snapshots = export_solution(cfg, &times)?;
            let grid = cfg.problem.grid(cfg.problem.dims)?;
            let field = cfg.problem.field(&grid, cfg.problem.coefficients)?;
            let mut files = vec![(
                "coefficients.field".to_string(),
                io::format_field(field.grid(), field.values(), None),
            )];
            let mut index = String::new();
            for (i, s) in snapshots.iter().enumerate() {
                let name = format!("snapshot_{i:02}.field");
                let v = s.state.values();
                let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let _ = writeln!(index, "{i},{:e},{name},{:e},{min:e},{max:e}", s.time, s.state.mean());
                files.push((name, io::format_field(s.state.grid(), v, Some(s.state.time()))));
            }
            files.push(("snapshots.csv".into(), raw_csv(SNAPSHOT_HEADER, &index, &hash)));
            files
        }
    };
    fs::create_dir_all(&dir)?;
    let mut written = Vec::with_capacity(files.len());
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Runs the experiment named in the config.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let experiment = cfg
        .experiment
        .ok_or_else(|| Error::Config("no experiment selected".into()))?;
    run_experiment(experiment, cfg, opts)
}
