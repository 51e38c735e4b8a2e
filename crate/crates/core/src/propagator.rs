//! Implicit-Euler propagators with per-step cost records.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::discretization::{BoundarySpec, StateVector};
use crate::error::{ensure_positive, Error, Result};
use crate::grid::CoefficientField;
use crate::multigrid::{self, MgConfig, MgHierarchy};

/// Relative slack when checking that an interval holds a whole number of steps.
pub const STEP_COUNT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Coarse,
    Fine,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Coarse => "coarse",
            Label::Fine => "fine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagatorSpec {
    pub dt: f64,
    #[serde(default)]
    pub mg: MgConfig,
    pub label: Label,
    /// Extra sleep per step, for controlled-cost experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_delay: Option<f64>,
}

impl PropagatorSpec {
    pub fn new(dt: f64, label: Label) -> Self {
        Self {
            dt,
            mg: MgConfig::default(),
            label,
            step_delay: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("dt", self.dt)?;
        if let Some(d) = self.step_delay {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidInput(format!("step_delay must be non-negative, got {d}")));
            }
        }
        self.mg.validate()
    }

    /// Number of steps covering `length`, or an error if it is not integral.
    pub fn steps_for(&self, length: f64) -> Result<usize> {
        step_count(length, self.dt)
    }
}

pub(crate) fn step_count(length: f64, dt: f64) -> Result<usize> {
    if length < 0.0 || !length.is_finite() {
        return Err(Error::InvalidInput(format!("interval length {length} must be non-negative")));
    }
    let ratio = length / dt;
    let n = ratio.round();
    if (ratio - n).abs() > STEP_COUNT_TOL * ratio.max(1.0) {
        return Err(Error::NonIntegralSteps { length, dt });
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCost {
    pub mg_cycles: usize,
    pub seconds: f64,
}

/// Cost of one propagate call.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRecord {
    pub label: Label,
    pub subinterval: usize,
    pub steps: Vec<StepCost>,
}

impl CostRecord {
    pub fn new(label: Label, subinterval: usize) -> Self {
        Self {
            label,
            subinterval,
            steps: Vec::new(),
        }
    }

    /// Subinterval total γ.
    pub fn seconds(&self) -> f64 {
        self.steps.iter().map(|s| s.seconds).sum()
    }

    pub fn mg_cycles(&self) -> usize {
        self.steps.iter().map(|s| s.mg_cycles).sum()
    }

    pub const CSV_HEADER: &'static str = "subinterval_index,label,step_index,mg_cycles,seconds";

    pub fn write_csv_rows(&self, out: &mut String) {
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{:e}",
                self.subinterval,
                self.label.as_str(),
                i,
                s.mg_cycles,
                s.seconds
            );
        }
    }
}

/// Coefficients, boundary data and initial state of a diffusion problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub field: CoefficientField,
    pub bc: BoundarySpec,
    pub initial: StateVector,
}

impl Problem {
    /// Zero initial state at `t = 0`.
    pub fn new(field: CoefficientField, bc: BoundarySpec) -> Self {
        let initial = StateVector::zeros(*field.grid(), 0.0);
        Self { field, bc, initial }
    }
}

/// An implicit-Euler integrator with its multigrid hierarchy built once.
#[derive(Debug, Clone)]
pub struct Propagator {
    spec: PropagatorSpec,
    hierarchy: Arc<MgHierarchy>,
}

impl Propagator {
    pub fn new(spec: PropagatorSpec, field: &CoefficientField, bc: &BoundarySpec) -> Result<Self> {
        spec.validate()?;
        let hierarchy = MgHierarchy::build(field, bc, spec.dt, &spec.mg)?;
        Ok(Self {
            spec,
            hierarchy: Arc::new(hierarchy),
        })
    }

    pub fn for_problem(spec: PropagatorSpec, problem: &Problem) -> Result<Self> {
        Self::new(spec, &problem.field, &problem.bc)
    }

    pub fn spec(&self) -> &PropagatorSpec {
        &self.spec
    }

    pub fn hierarchy(&self) -> &MgHierarchy {
        &self.hierarchy
    }

    /// One step `(I − dt L) c_new = c_old + boundary part`, warm-started from `c_old`.
    pub fn step(&self, state: &StateVector) -> Result<(StateVector, StepCost)> {
        let start = Instant::now();
        let solve = multigrid::solve(&self.hierarchy, state, state, &self.spec.mg)?;
        if !solve.converged {
            return Err(Error::NotConverged {
                cycles: solve.cycles,
                relative_residual: solve.relative_residual,
            });
        }
        if let Some(d) = self.spec.step_delay {
            std::thread::sleep(Duration::from_secs_f64(d));
        }
        let mut next = solve.solution;
        next.set_time(state.time() + self.spec.dt);
        let cost = StepCost {
            mg_cycles: solve.cycles,
            seconds: start.elapsed().as_secs_f64(),
        };
        Ok((next, cost))
    }

    /// Steps from `state.time()` to `t1`. The result carries exactly `t1`.
    pub fn propagate(&self, state: &StateVector, t1: f64, subinterval: usize) -> Result<(StateVector, CostRecord)> {
        let n = self.spec.steps_for(t1 - state.time())?;
        let mut record = CostRecord::new(self.spec.label, subinterval);
        let mut current = state.clone();
        for _ in 0..n {
            let (next, cost) = self.step(&current)?;
            record.steps.push(cost);
            current = next;
        }
        current.set_time(t1);
        Ok((current, record))
    }

    /// Like [`Propagator::propagate`] but also returns the state after every step.
    pub fn trajectory(&self, state: &StateVector, t1: f64) -> Result<(Vec<StateVector>, CostRecord)> {
        let n = self.spec.steps_for(t1 - state.time())?;
        let mut record = CostRecord::new(self.spec.label, 0);
        let mut states = Vec::with_capacity(n + 1);
        states.push(state.clone());
        for _ in 0..n {
            let (next, cost) = self.step(states.last().expect("non-empty"))?;
            record.steps.push(cost);
            states.push(next);
        }
        Ok((states, record))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid3D;

    fn column(nz: usize) -> (CoefficientField, BoundarySpec) {
        let g = Grid3D::new([2, 2, nz], [1.0; 3]).unwrap();
        (CoefficientField::uniform(g, 1.0).unwrap(), BoundarySpec::default())
    }

    #[test]
    fn step_count_checks_divisibility() {
        assert_eq!(step_count(1.0, 0.25).unwrap(), 4);
        assert_eq!(step_count(0.3, 0.1).unwrap(), 3);
        assert_eq!(step_count(0.0, 0.1).unwrap(), 0);
        assert!(matches!(step_count(1.0, 0.3), Err(Error::NonIntegralSteps { .. })));
    }

    #[test]
    fn empty_interval_is_identity() {
        let (f, bc) = column(4);
        let p = Propagator::new(PropagatorSpec::new(0.5, Label::Fine), &f, &bc).unwrap();
        let s = StateVector::from_values(*f.grid(), (0..16).map(|i| i as f64 / 16.0).collect(), 2.0).unwrap();
        let (out, rec) = p.propagate(&s, 2.0, 0).unwrap();
        assert_eq!(out, s);
        assert!(rec.steps.is_empty());
    }

    #[test]
    fn tiny_step_barely_moves() {
        let (f, bc) = column(6);
        let p = Propagator::new(PropagatorSpec::new(1e-12, Label::Fine), &f, &bc).unwrap();
        let s = StateVector::from_values(*f.grid(), vec![0.5; 24], 0.0).unwrap();
        let (next, _) = p.step(&s).unwrap();
        let diff: f64 = next.values().iter().zip(s.values()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(diff.sqrt() / s.norm() <= 1e-9);
    }

    #[test]
    fn record_totals_are_sums() {
        let (f, bc) = column(5);
        let p = Propagator::new(PropagatorSpec::new(0.1, Label::Coarse), &f, &bc).unwrap();
        let (_, rec) = p.propagate(&StateVector::zeros(*f.grid(), 0.0), 0.5, 3).unwrap();
        assert_eq!(rec.steps.len(), 5);
        let sum: f64 = rec.steps.iter().map(|s| s.seconds).sum();
        assert_eq!(rec.seconds(), sum);
        let mut csv = String::new();
        rec.write_csv_rows(&mut csv);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("3,coarse,0,"));
    }
}
