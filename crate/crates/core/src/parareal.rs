//! The Parareal iteration
//!
//! `c^{k+1}_{n+1} = C(c^{k+1}_n) − C(c^k_n) + F(c^k_n)`, `c^k_0 = c_0`,
//!
//! initialised by a serial coarse sweep. Subinterval `n` (0-based, from
//! `t_n` to `t_{n+1}`) has an exact output after iteration `n + 1`; with
//! retirement it does no further work from iteration `n + 2` on.
//!
//! Two backends compute the same arithmetic in the same per-subinterval
//! order: a sequential loop, and one thread per subinterval that passes
//! boundary values downstream as soon as they are corrected.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::discretization::{norm2, StateVector};
use crate::error::{ensure_positive, Error, Result};
use crate::perf_model::CostProfile;
use crate::propagator::{step_count, CostRecord, Label, Propagator, PropagatorSpec, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Single thread, iteration by iteration.
    Sequential,
    /// One worker thread per subinterval.
    Concurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PararealConfig {
    pub n_sub: usize,
    pub t_end: f64,
    pub max_iter: usize,
    /// Stop once every relative update `‖c^k_n − c^{k−1}_n‖/‖c^{k−1}_n‖` is at or below this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect_tol: Option<f64>,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default = "default_retirement")]
    pub retirement: bool,
}

fn default_backend() -> Backend {
    Backend::Sequential
}

fn default_retirement() -> bool {
    true
}

impl PararealConfig {
    pub fn new(n_sub: usize, t_end: f64, max_iter: usize) -> Self {
        Self {
            n_sub,
            t_end,
            max_iter,
            defect_tol: None,
            backend: Backend::Sequential,
            retirement: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sub == 0 {
            return Err(Error::InvalidInput("n_sub must be at least 1".into()));
        }
        ensure_positive("t_end", self.t_end)?;
        if self.max_iter > self.n_sub {
            return Err(Error::InvalidInput(format!(
                "max_iter {} exceeds n_sub {}",
                self.max_iter, self.n_sub
            )));
        }
        if let Some(tol) = self.defect_tol {
            if !(tol >= 0.0 && tol.is_finite()) {
                return Err(Error::InvalidInput(format!("defect_tol must be non-negative, got {tol}")));
            }
        }
        Ok(())
    }

    pub fn subinterval_length(&self) -> f64 {
        self.t_end / self.n_sub as f64
    }

    /// `t_n = n·T/N_t`.
    pub fn boundary_time(&self, n: usize) -> f64 {
        if n == self.n_sub {
            self.t_end
        } else {
            n as f64 * self.t_end / self.n_sub as f64
        }
    }

    /// True if subinterval `n` does no work in iteration `k`.
    pub fn is_retired(&self, n: usize, k: usize) -> bool {
        self.retirement && k >= n + 2
    }

    /// Checks that both step sizes tile a subinterval exactly.
    pub fn check_steps(&self, coarse: &PropagatorSpec, fine: &PropagatorSpec) -> Result<()> {
        let len = self.subinterval_length();
        step_count(len, coarse.dt)?;
        step_count(len, fine.dt)?;
        step_count(coarse.dt, fine.dt)?;
        Ok(())
    }
}

/// Relative Euclidean difference `‖a − b‖₂ / ‖b‖₂`.
pub fn defect(state: &StateVector, reference: &StateVector) -> Result<f64> {
    state.grid().check_same(reference.grid())?;
    let r = reference.norm();
    if r == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(diff_norm(state.values(), reference.values()) / r)
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Relative change of a boundary value between iterations; absolute if the old value is zero.
fn update_norm(new: &StateVector, old: &StateVector) -> f64 {
    let d = diff_norm(new.values(), old.values());
    let o = norm2(old.values());
    if o > 0.0 {
        d / o
    } else {
        d
    }
}

/// Serial fine run: boundary states `c_0 … c_{N_t}` and one cost record per subinterval.
#[derive(Debug, Clone)]
pub struct SerialRun {
    pub states: Vec<StateVector>,
    pub costs: Vec<CostRecord>,
}

impl SerialRun {
    /// Γ: total measured cost.
    pub fn total_seconds(&self) -> f64 {
        self.costs.iter().map(CostRecord::seconds).sum()
    }

    pub fn subinterval_seconds(&self) -> Vec<f64> {
        self.costs.iter().map(CostRecord::seconds).collect()
    }
}

/// `c_n = P(c_{n−1})` across all subintervals with a single propagator.
pub fn run_serial(cfg: &PararealConfig, prop: &Propagator, c0: &StateVector) -> Result<SerialRun> {
    cfg.validate()?;
    step_count(cfg.subinterval_length(), prop.spec().dt)?;
    let mut states = Vec::with_capacity(cfg.n_sub + 1);
    let mut costs = Vec::with_capacity(cfg.n_sub);
    let mut current = c0.clone();
    current.set_time(0.0);
    states.push(current.clone());
    for n in 0..cfg.n_sub {
        let (next, cost) = prop
            .propagate(&current, cfg.boundary_time(n + 1), n)
            .map_err(|e| tag(0, n, e))?;
        states.push(next.clone());
        costs.push(cost);
        current = next;
    }
    Ok(SerialRun { states, costs })
}

/// Reference trajectory of the fine propagator.
pub fn run_serial_fine(cfg: &PararealConfig, fine: &Propagator, c0: &StateVector) -> Result<SerialRun> {
    run_serial(cfg, fine, c0)
}

/// Relative difference at each boundary between a run at `spec.dt` and a
/// run at `spec.dt / refinement`. Boundary 0 is always 0.
pub fn discretization_error_estimate(
    cfg: &PararealConfig,
    problem: &Problem,
    spec: &PropagatorSpec,
    refinement: usize,
) -> Result<Vec<f64>> {
    if refinement == 0 {
        return Err(Error::InvalidInput("refinement must be at least 1".into()));
    }
    let base = run_serial(cfg, &Propagator::for_problem(*spec, problem)?, &problem.initial)?;
    let mut fine_spec = *spec;
    fine_spec.dt = spec.dt / refinement as f64;
    let reference = if refinement == 1 {
        base.clone()
    } else {
        run_serial(cfg, &Propagator::for_problem(fine_spec, problem)?, &problem.initial)?
    };
    relative_errors(&base.states, &reference.states)
}

/// Per-boundary relative differences, 0 at boundary 0 and wherever the reference vanishes identically with the state.
pub fn relative_errors(states: &[StateVector], reference: &[StateVector]) -> Result<Vec<f64>> {
    if states.len() != reference.len() {
        return Err(Error::InvalidInput("trajectories have different lengths".into()));
    }
    states
        .iter()
        .zip(reference)
        .enumerate()
        .map(|(n, (s, r))| if n == 0 || s == r { Ok(0.0) } else { defect(s, r) })
        .collect()
}

fn tag(iteration: usize, subinterval: usize, e: Error) -> Error {
    Error::Subinterval {
        iteration,
        subinterval,
        source: Box::new(e),
    }
}

/// Everything recorded during a Parareal run.
#[derive(Debug, Clone)]
pub struct PararealTrace {
    pub config: PararealConfig,
    /// `iterates[k][n] = c^k_n`, `n = 0..=N_t`. Unchanged values share storage.
    pub iterates: Vec<Vec<Arc<StateVector>>>,
    /// `update_norms[k][n]`; row 0 is zero.
    pub update_norms: Vec<Vec<f64>>,
    /// `coarse_costs[k][n]` for subinterval `n`; `None` where it did no work.
    pub coarse_costs: Vec<Vec<Option<CostRecord>>>,
    /// `fine_costs[k][n]`; row 0 is empty since iteration 0 runs no fine solves.
    pub fine_costs: Vec<Vec<Option<CostRecord>>>,
    /// First iteration in which each subinterval did no work.
    pub retired_at: Vec<Option<usize>>,
    /// Measured wall-clock time of the whole run.
    pub wall_seconds: f64,
}

impl PararealTrace {
    /// Number of completed iterations (iteration 0 excluded).
    pub fn iterations(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn final_state(&self) -> &StateVector {
        self.iterates.last().and_then(|row| row.last()).expect("non-empty trace")
    }

    /// `d^k_n` against the serial fine boundary states.
    pub fn defects(&self, reference: &[StateVector]) -> Result<Vec<Vec<f64>>> {
        if reference.len() != self.config.n_sub + 1 {
            return Err(Error::InvalidInput(format!(
                "reference has {} states, expected {}",
                reference.len(),
                self.config.n_sub + 1
            )));
        }
        self.iterates
            .iter()
            .map(|row| {
                row.iter()
                    .zip(reference)
                    .enumerate()
                    .map(|(n, (c, r))| if n == 0 { Ok(0.0) } else { defect(c, r) })
                    .collect()
            })
            .collect()
    }

    /// γ^c_n from the initial coarse sweep and γ^f_n from the first fine sweep.
    pub fn profile(&self) -> Result<CostProfile> {
        let gamma_c = self.coarse_costs[0]
            .iter()
            .map(|c| c.as_ref().map(CostRecord::seconds))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::MissingCost("initial coarse sweep".into()))?;
        let row = self
            .fine_costs
            .get(1)
            .ok_or_else(|| Error::MissingCost("no fine sweep was run".into()))?;
        let gamma_f = row
            .iter()
            .map(|c| c.as_ref().map(CostRecord::seconds))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::MissingCost("first fine sweep".into()))?;
        CostProfile::new(gamma_c, gamma_f)
    }

    /// Wall time of the schedule the general speedup model assumes: the
    /// serial coarse sweep, then `γ^x = max_n (γ^c_n + γ^f_n)` per iteration.
    pub fn lockstep_wall(&self, profile: &CostProfile) -> Result<f64> {
        if profile.len() != self.config.n_sub {
            return Err(Error::MissingCost(format!(
                "profile has {} subintervals, run has {}",
                profile.len(),
                self.config.n_sub
            )));
        }
        Ok(profile.total_coarse() + self.iterations() as f64 * profile.gamma_x())
    }

    /// Wall time of the pipelined schedule if subinterval `n` always spends
    /// `γ^c_n` per coarse and `γ^f_n` per fine solve and messages are free.
    pub fn simulate_wall(&self, profile: &CostProfile) -> Result<f64> {
        let n_sub = self.config.n_sub;
        if profile.len() != n_sub {
            return Err(Error::MissingCost(format!(
                "profile has {} subintervals, run has {n_sub}",
                profile.len()
            )));
        }
        // done[n]: when worker n finished its latest coarse correction
        let mut done = vec![0.0f64; n_sub];
        let mut upstream = 0.0;
        for n in 0..n_sub {
            done[n] = upstream + profile.gamma_c[n];
            upstream = done[n];
        }
        let mut finish = upstream;
        for k in 1..=self.iterations() {
            let mut upstream = 0.0;
            for n in 0..n_sub {
                if self.config.is_retired(n, k) {
                    upstream = 0.0;
                    continue;
                }
                let fine_done = done[n] + profile.gamma_f[n];
                done[n] = fine_done.max(upstream) + profile.gamma_c[n];
                upstream = done[n];
                finish = finish.max(done[n]);
            }
        }
        Ok(finish)
    }

    pub const CSV_HEADER: &'static str =
        "iteration,boundary_index,defect,update_norm,coarse_seconds,fine_seconds,retired_flag";

    /// One row per (iteration, boundary). Costs belong to the subinterval ending at the boundary.
    pub fn write_csv(&self, reference: Option<&[StateVector]>, out: &mut String) -> Result<()> {
        let defects = reference.map(|r| self.defects(r)).transpose()?;
        for k in 0..self.iterates.len() {
            for b in 0..=self.config.n_sub {
                let d = defects.as_ref().map(|d| format!("{:e}", d[k][b])).unwrap_or_default();
                let seconds = |costs: &Vec<Vec<Option<CostRecord>>>| {
                    if b == 0 {
                        0.0
                    } else {
                        costs[k][b - 1].as_ref().map_or(0.0, CostRecord::seconds)
                    }
                };
                let retired = b > 0 && self.config.is_retired(b - 1, k);
                let _ = writeln!(
                    out,
                    "{k},{b},{d},{:e},{:e},{:e},{}",
                    self.update_norms[k][b],
                    seconds(&self.coarse_costs),
                    seconds(&self.fine_costs),
                    u8::from(retired)
                );
            }
        }
        Ok(())
    }
}

/// Runs Parareal from `c0` (taken to be at `t = 0`).
pub fn run_parareal(
    cfg: &PararealConfig,
    coarse: &Propagator,
    fine: &Propagator,
    c0: &StateVector,
) -> Result<PararealTrace> {
    cfg.validate()?;
    cfg.check_steps(coarse.spec(), fine.spec())?;
    if coarse.spec().label != Label::Coarse || fine.spec().label != Label::Fine {
        return Err(Error::InvalidInput("propagators must be labelled coarse and fine".into()));
    }
    let mut c0 = c0.clone();
    c0.set_time(0.0);
    let start = Instant::now();
    let mut trace = match cfg.backend {
        Backend::Sequential => sequential(cfg, coarse, fine, c0)?,
        Backend::Concurrent => concurrent(cfg, coarse, fine, c0)?,
    };
    trace.wall_seconds = start.elapsed().as_secs_f64();
    Ok(trace)
}

/// `(g_new − g_old) + f`, elementwise.
fn correct(g_new: &StateVector, g_old: &StateVector, f: &StateVector, time: f64) -> StateVector {
    let values = g_new
        .values()
        .iter()
        .zip(g_old.values())
        .zip(f.values())
        .map(|((a, b), c)| (a - b) + c)
        .collect();
    StateVector::from_values(*f.grid(), values, time).expect("same grid")
}

struct Builder {
    cfg: PararealConfig,
    iterates: Vec<Vec<Arc<StateVector>>>,
    update_norms: Vec<Vec<f64>>,
    coarse_costs: Vec<Vec<Option<CostRecord>>>,
    fine_costs: Vec<Vec<Option<CostRecord>>>,
}

impl Builder {
    fn new(cfg: &PararealConfig, c0: Arc<StateVector>) -> Self {
        let n = cfg.n_sub;
        let rows = cfg.max_iter + 1;
        Self {
            cfg: *cfg,
            iterates: (0..rows).map(|_| vec![c0.clone(); n + 1]).collect(),
            update_norms: vec![vec![0.0; n + 1]; rows],
            coarse_costs: vec![vec![None; n]; rows],
            fine_costs: vec![vec![None; n]; rows],
        }
    }

    fn record(&mut self, k: usize, n: usize, out: Arc<StateVector>, coarse: Option<CostRecord>, fine: Option<CostRecord>) {
        if k > 0 {
            self.update_norms[k][n + 1] = update_norm(&out, &self.iterates[k - 1][n + 1]);
        }
        self.iterates[k][n + 1] = out;
        self.coarse_costs[k][n] = coarse;
        self.fine_costs[k][n] = fine;
    }

    fn retire(&mut self, k: usize, n: usize) {
        self.iterates[k][n + 1] = self.iterates[k - 1][n + 1].clone();
    }

    fn converged(&self, k: usize) -> bool {
        match self.cfg.defect_tol {
            Some(tol) => k > 0 && self.update_norms[k].iter().all(|&u| u <= tol),
            None => false,
        }
    }

    fn finish(mut self, last: usize) -> PararealTrace {
        let rows = last + 1;
        self.iterates.truncate(rows);
        self.update_norms.truncate(rows);
        self.coarse_costs.truncate(rows);
        self.fine_costs.truncate(rows);
        let retired_at = (0..self.cfg.n_sub)
            .map(|n| (1..rows).find(|&k| self.cfg.is_retired(n, k)))
            .collect();
        PararealTrace {
            config: self.cfg,
            iterates: self.iterates,
            update_norms: self.update_norms,
            coarse_costs: self.coarse_costs,
            fine_costs: self.fine_costs,
            retired_at,
            wall_seconds: 0.0,
        }
    }
}

fn sequential(cfg: &PararealConfig, coarse: &Propagator, fine: &Propagator, c0: StateVector) -> Result<PararealTrace> {
    let n_sub = cfg.n_sub;
    let mut b = Builder::new(cfg, Arc::new(c0));
    // g_old[n] = C(c^{k−1}_n), the coarse value from the previous iteration
    let mut g_old: Vec<Arc<StateVector>> = Vec::with_capacity(n_sub);
    for n in 0..n_sub {
        let t1 = cfg.boundary_time(n + 1);
        let (g, cost) = coarse.propagate(&b.iterates[0][n], t1, n).map_err(|e| tag(0, n, e))?;
        let g = Arc::new(g);
        g_old.push(g.clone());
        b.record(0, n, g, Some(cost), None);
    }
    let mut last = 0;
    for k in 1..=cfg.max_iter {
        for n in 0..n_sub {
            if cfg.is_retired(n, k) {
                b.retire(k, n);
                continue;
            }
            let t1 = cfg.boundary_time(n + 1);
            let (f, fcost) = fine.propagate(&b.iterates[k - 1][n], t1, n).map_err(|e| tag(k, n, e))?;
            let (g, gcost) = coarse.propagate(&b.iterates[k][n], t1, n).map_err(|e| tag(k, n, e))?;
            let out = Arc::new(correct(&g, &g_old[n], &f, t1));
            g_old[n] = Arc::new(g);
            b.record(k, n, out, Some(gcost), Some(fcost));
        }
        last = k;
        if b.converged(k) {
            break;
        }
    }
    Ok(b.finish(last))
}

struct Report {
    k: usize,
    n: usize,
    out: Arc<StateVector>,
    coarse: CostRecord,
    fine: Option<CostRecord>,
}

fn concurrent(cfg: &PararealConfig, coarse: &Propagator, fine: &Propagator, c0: StateVector) -> Result<PararealTrace> {
    let n_sub = cfg.n_sub;
    let c0 = Arc::new(c0);
    let stop_after = AtomicUsize::new(usize::MAX);
    let (report_tx, report_rx) = mpsc::channel::<Result<Report>>();

    std::thread::scope(|scope| {
        let mut upstream: Option<mpsc::Receiver<Arc<StateVector>>> = None;
        for n in 0..n_sub {
            let (tx, rx) = mpsc::channel();
            let input = upstream.replace(rx);
            let downstream = (n + 1 < n_sub).then_some(tx);
            let reports = report_tx.clone();
            let c0 = c0.clone();
            let stop_after = &stop_after;
            scope.spawn(move || {
                let w = Worker {
                    cfg,
                    n,
                    coarse,
                    fine,
                    input,
                    downstream,
                    reports: &reports,
                    stop_after,
                };
                if let Err(e) = w.run(c0) {
                    let _ = reports.send(Err(e));
                }
            });
        }
        drop(report_tx);

        let mut b = Builder::new(cfg, c0.clone());
        let expected = |k: usize| (0..n_sub).filter(|&n| !cfg.is_retired(n, k)).count();
        let mut pending = vec![0usize; cfg.max_iter + 1];
        let mut last = 0;
        let mut complete = 0;
        let mut failure: Option<(usize, usize, Error)> = None;
        for msg in report_rx {
            match msg {
                Ok(r) => {
                    if r.k > stop_after.load(Ordering::Acquire) {
                        continue;
                    }
                    b.record(r.k, r.n, r.out, Some(r.coarse), r.fine);
                    pending[r.k] += 1;
                    // iterations complete strictly in order; fill retired slots then test
                    while complete <= cfg.max_iter && pending[complete] == expected(complete) {
                        let k = complete;
                        if k > 0 {
                            for n in 0..n_sub {
                                if cfg.is_retired(n, k) {
                                    b.retire(k, n);
                                }
                            }
                        }
                        last = k;
                        complete += 1;
                        if b.converged(k) {
                            stop_after.store(k, Ordering::Release);
                            break;
                        }
                    }
                }
                Err(Error::Subinterval {
                    iteration,
                    subinterval,
                    source,
                }) => {
                    let earlier = failure
                        .as_ref()
                        .is_none_or(|&(k, n, _)| (iteration, subinterval) < (k, n));
                    if earlier {
                        failure = Some((iteration, subinterval, *source));
                    }
                    stop_after.store(0, Ordering::Release);
                }
                Err(e) => {
                    if failure.is_none() {
                        failure = Some((usize::MAX, usize::MAX, e));
                    }
                    stop_after.store(0, Ordering::Release);
                }
            }
        }
        if let Some((k, n, e)) = failure {
            return Err(if k == usize::MAX { e } else { tag(k, n, e) });
        }
        if complete == 0 {
            return Err(Error::Backend("no iteration completed".into()));
        }
        Ok(b.finish(last))
    })
}

struct Worker<'a> {
    cfg: &'a PararealConfig,
    n: usize,
    coarse: &'a Propagator,
    fine: &'a Propagator,
    input: Option<mpsc::Receiver<Arc<StateVector>>>,
    downstream: Option<mpsc::Sender<Arc<StateVector>>>,
    reports: &'a mpsc::Sender<Result<Report>>,
    stop_after: &'a AtomicUsize,
}

enum Received {
    Value(Arc<StateVector>),
    Stopped,
}

impl Worker<'_> {
    fn receive(&self, c0: &Arc<StateVector>) -> Received {
        match &self.input {
            None => Received::Value(c0.clone()),
            // a closed channel means upstream stopped early or failed
            Some(rx) => rx.recv().map_or(Received::Stopped, Received::Value),
        }
    }

    fn send(&self, k: usize, out: &Arc<StateVector>, coarse: CostRecord, fine: Option<CostRecord>) -> bool {
        if let Some(tx) = &self.downstream {
            // downstream may already have stopped; that is not an error
            let _ = tx.send(out.clone());
        }
        let report = Report {
            k,
            n: self.n,
            out: out.clone(),
            coarse,
            fine,
        };
        self.reports.send(Ok(report)).is_ok()
    }

    fn run(self, c0: Arc<StateVector>) -> Result<()> {
        let n = self.n;
        let t1 = self.cfg.boundary_time(n + 1);
        let Received::Value(mut input) = self.receive(&c0) else {
            return Ok(());
        };
        let (g, cost) = self.coarse.propagate(&input, t1, n).map_err(|e| tag(0, n, e))?;
        let mut g_old = Arc::new(g);
        if !self.send(0, &g_old, cost, None) {
            return Ok(());
        }
        for k in 1..=self.cfg.max_iter {
            if self.cfg.is_retired(n, k) || k > self.stop_after.load(Ordering::Acquire) {
                break;
            }
            let (f, fcost) = self.fine.propagate(&input, t1, n).map_err(|e| tag(k, n, e))?;
            // once upstream has retired its output is frozen and nothing more arrives
            if !(n > 0 && self.cfg.is_retired(n - 1, k)) {
                match self.receive(&c0) {
                    Received::Value(v) => input = v,
                    Received::Stopped => return Ok(()),
                }
            }
            let (g, gcost) = self.coarse.propagate(&input, t1, n).map_err(|e| tag(k, n, e))?;
            let out = Arc::new(correct(&g, &g_old, &f, t1));
            g_old = Arc::new(g);
            if !self.send(k, &out, gcost, Some(fcost)) {
                return Ok(());
            }
        }
        Ok(())
    }
}
