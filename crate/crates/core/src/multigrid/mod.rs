//! Geometric multigrid for the implicit-Euler systems.
//!
//! V-cycles with damped Jacobi smoothing, piecewise-constant transfers,
//! re-discretised coarse operators built from cell-block averaged
//! coefficients, and a banded LU solve on the coarsest level. Restriction is
//! the volume-scaled transpose of prolongation, so a V-cycle is a symmetric
//! operator and can precondition conjugate gradients.

mod band_lu;

pub use band_lu::{BandLu, BandMatrix};

use serde::{Deserialize, Serialize};

use crate::discretization::{assemble_values, norm2, BoundarySpec, StateVector, StencilOperator};
use crate::error::{Error, Result};
use crate::grid::{CoefficientField, Grid3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgConfig {
    /// Jacobi damping factor.
    pub omega: f64,
    pub pre_smooth: usize,
    pub post_smooth: usize,
    pub max_cycles: usize,
    /// Stop once `‖b − A x‖ ≤ rel_tol · ‖b − A 0‖`.
    pub rel_tol: f64,
    /// Levels are coarsened until they hold at most this many cells.
    pub coarsest_max_unknowns: usize,
    /// Use each V-cycle as a conjugate-gradient preconditioner instead of
    /// iterating it directly.
    pub krylov: bool,
}

impl Default for MgConfig {
    fn default() -> Self {
        Self {
            omega: 0.6,
            pre_smooth: 3,
            post_smooth: 3,
            max_cycles: 50,
            rel_tol: 1e-8,
            coarsest_max_unknowns: 4096,
            krylov: true,
        }
    }
}

impl MgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(Error::InvalidInput(format!(
                "omega must lie in (0, 1), got {}",
                self.omega
            )));
        }
        if self.pre_smooth == 0 || self.post_smooth == 0 {
            return Err(Error::InvalidInput("smoothing step counts must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidInput("rel_tol must be positive".into()));
        }
        if self.coarsest_max_unknowns == 0 {
            return Err(Error::InvalidInput("coarsest_max_unknowns must be positive".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant transfer between two levels: each fine cell belongs
/// to the coarse cell containing its centre.
#[derive(Debug, Clone)]
struct Parents {
    axes: [Vec<usize>; 3],
    /// Fine-to-coarse cell volume ratio; restriction is `scale · Pᵀ`.
    scale: f64,
}

impl Parents {
    fn new(fine: &Grid3D, coarse: &Grid3D) -> Self {
        let axis = |a: usize| {
            let (hf, hc) = (fine.spacing()[a], coarse.spacing()[a]);
            let last = coarse.dims()[a] - 1;
            (0..fine.dims()[a])
                .map(|i| ((((i as f64 + 0.5) * hf) / hc) as usize).min(last))
                .collect()
        };
        Self {
            axes: [axis(0), axis(1), axis(2)],
            scale: fine.cell_volume() / coarse.cell_volume(),
        }
    }

    /// Calls `f(fine_index, coarse_index)` for every fine cell in order.
    #[inline]
    fn for_each(&self, coarse: &Grid3D, mut f: impl FnMut(usize, usize)) {
        let cx = coarse.nx();
        let plane = cx * coarse.ny();
        let mut c = 0;
        for &pz in &self.axes[2] {
            for &py in &self.axes[1] {
                let row = pz * plane + py * cx;
                for &px in &self.axes[0] {
                    f(c, row + px);
                    c += 1;
                }
            }
        }
    }

    fn prolong_add(&self, coarse: &Grid3D, vc: &[f64], x: &mut [f64]) {
        self.for_each(coarse, |f, c| x[f] += vc[c]);
    }

    fn restrict_scaled(&self, coarse: &Grid3D, r: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.for_each(coarse, |f, c| out[c] += r[f]);
        out.iter_mut().for_each(|o| *o *= self.scale);
    }

    fn average(&self, coarse: &Grid3D, v: &[f64], out: &mut [f64]) {
        let mut count = vec![0u32; out.len()];
        out.iter_mut().for_each(|o| *o = 0.0);
        self.for_each(coarse, |f, c| {
            out[c] += v[f];
            count[c] += 1;
        });
        for (o, &n) in out.iter_mut().zip(&count) {
            *o /= n as f64;
        }
    }
}

#[derive(Debug, Clone)]
struct Level {
    op: StencilOperator,
    coeffs: Vec<f64>,
    /// Transfer to the next coarser level, if any.
    down: Option<Parents>,
}

/// Operators from fine to coarse, all assembled for the same `dt`.
#[derive(Debug, Clone)]
pub struct MgHierarchy {
    levels: Vec<Level>,
    coarse_lu: BandLu,
    bc: BoundarySpec,
}

impl MgHierarchy {
    pub fn build(field: &CoefficientField, bc: &BoundarySpec, dt: f64, cfg: &MgConfig) -> Result<Self> {
        cfg.validate()?;
        let mut grid = *field.grid();
        let mut coeffs = field.values().to_vec();
        let mut levels = vec![Level {
            op: assemble_values(&grid, &coeffs, bc, dt)?,
            coeffs: coeffs.clone(),
            down: None,
        }];
        while grid.len() > cfg.coarsest_max_unknowns {
            let Some(coarse) = grid.coarsen() else { break };
            let parents = Parents::new(&grid, &coarse);
            let mut coarse_coeffs = vec![0.0; coarse.len()];
            parents.average(&coarse, &coeffs, &mut coarse_coeffs);
            coeffs = coarse_coeffs;
            levels.last_mut().expect("non-empty").down = Some(parents);
            levels.push(Level {
                op: assemble_values(&coarse, &coeffs, bc, dt)?,
                coeffs: coeffs.clone(),
                down: None,
            });
            grid = coarse;
        }
        let coarse_lu = band_from_operator(&levels.last().expect("non-empty").op).factor()?;
        Ok(Self {
            levels,
            coarse_lu,
            bc: *bc,
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn grid(&self, level: usize) -> &Grid3D {
        self.levels[level].op.grid()
    }

    pub fn operator(&self, level: usize) -> &StencilOperator {
        &self.levels[level].op
    }

    /// Coefficients the operator on `level` was assembled from.
    pub fn coefficients(&self, level: usize) -> &[f64] {
        &self.levels[level].coeffs
    }

    pub fn fine_operator(&self) -> &StencilOperator {
        &self.levels[0].op
    }

    pub fn dt(&self) -> f64 {
        self.levels[0].op.dt()
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.bc
    }

    fn vcycle(&self, level: usize, x: &mut [f64], rhs: &[f64], work: &mut [LevelWork], cfg: &MgConfig) {
        let here_level = &self.levels[level];
        let Some(parents) = &here_level.down else {
            x.copy_from_slice(rhs);
            self.coarse_lu.solve_in_place(x);
            return;
        };
        let op = &here_level.op;
        let coarse = self.levels[level + 1].op.grid();
        let (here, below) = work.split_first_mut().expect("work per level");
        jacobi(op, x, rhs, cfg.omega, cfg.pre_smooth, &mut here.r);
        op.residual_linear(x, rhs, &mut here.r);
        parents.restrict_scaled(coarse, &here.r, &mut here.rc);
        here.xc.iter_mut().for_each(|v| *v = 0.0);
        self.vcycle(level + 1, &mut here.xc, &here.rc, below, cfg);
        parents.prolong_add(coarse, &here.xc, x);
        jacobi(op, x, rhs, cfg.omega, cfg.post_smooth, &mut here.r);
    }

    fn workspace(&self) -> Vec<LevelWork> {
        self.levels
            .windows(2)
            .map(|pair| {
                let n = pair[0].op.grid().len();
                let nc = pair[1].op.grid().len();
                LevelWork {
                    r: vec![0.0; n],
                    rc: vec![0.0; nc],
                    xc: vec![0.0; nc],
                }
            })
            .collect()
    }
}

struct LevelWork {
    r: Vec<f64>,
    rc: Vec<f64>,
    xc: Vec<f64>,
}

/// Outcome of [`solve`]. `converged == false` is a signal, not an error.
#[derive(Debug, Clone)]
pub struct MgSolve {
    pub solution: StateVector,
    /// V-cycles applied.
    pub cycles: usize,
    /// Residual norm before the first cycle and after every cycle.
    pub residual_history: Vec<f64>,
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `apply(A, x) = b` starting from `x0`, one V-cycle per iteration.
///
/// The tolerance is relative to `‖b − A·0‖`, the residual of a zero guess; a
/// good initial guess therefore needs fewer cycles. When that norm vanishes
/// the initial residual is used instead.
pub fn solve(hierarchy: &MgHierarchy, b: &StateVector, x0: &StateVector, cfg: &MgConfig) -> Result<MgSolve> {
    let op = hierarchy.fine_operator();
    op.grid().check_same(b.grid())?;
    op.grid().check_same(x0.grid())?;
    let rhs = op.linear_rhs(b.values());
    let mut x = x0.values().to_vec();
    let mut r = vec![0.0; x.len()];
    let mut work = hierarchy.workspace();

    let mut res = op.residual_linear(&x, &rhs, &mut r);
    let mut reference = norm2(&rhs);
    if reference == 0.0 {
        reference = res;
    }
    let target = cfg.rel_tol * reference;
    let mut history = vec![res];
    let mut cycles = 0;
    if cfg.krylov {
        // preconditioned conjugate gradients, restarted from the true
        // residual whenever the recurrence claims convergence
        let n = x.len();
        let (mut z, mut p, mut q) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        'restart: while res > target && cycles < cfg.max_cycles {
            z.iter_mut().for_each(|v| *v = 0.0);
            hierarchy.vcycle(0, &mut z, &r, &mut work, cfg);
            cycles += 1;
            p.copy_from_slice(&z);
            let mut rz = dot(&r, &z);
            loop {
                op.apply_linear(&p, &mut q);
                let pq = dot(&p, &q);
                if !(pq > 0.0) || !(rz > 0.0) {
                    break 'restart;
                }
                let alpha = rz / pq;
                for i in 0..n {
                    x[i] += alpha * p[i];
                    r[i] -= alpha * q[i];
                }
                let est = norm2(&r);
                if est <= target || cycles >= cfg.max_cycles {
                    res = op.residual_linear(&x, &rhs, &mut r);
                    history.push(res);
                    continue 'restart;
                }
                history.push(est);
                z.iter_mut().for_each(|v| *v = 0.0);
                hierarchy.vcycle(0, &mut z, &r, &mut work, cfg);
                cycles += 1;
                let rz_new = dot(&r, &z);
                let beta = rz_new / rz;
                rz = rz_new;
                for i in 0..n {
                    p[i] = z[i] + beta * p[i];
                }
            }
        }
        res = op.residual_linear(&x, &rhs, &mut r);
    } else {
        while res > target && cycles < cfg.max_cycles {
            hierarchy.vcycle(0, &mut x, &rhs, &mut work, cfg);
            cycles += 1;
            res = op.residual_linear(&x, &rhs, &mut r);
            history.push(res);
            if res == 0.0 {
                break;
            }
        }
    }
    if !res.is_finite() {
        return Err(Error::NotConverged {
            cycles,
            relative_residual: f64::INFINITY,
        });
    }
    let relative = if reference > 0.0 { res / reference } else { 0.0 };
    Ok(MgSolve {
        solution: StateVector::from_values(*op.grid(), x, b.time())?,
        cycles,
        residual_history: history,
        relative_residual: relative,
        converged: res <= target,
    })
}

/// `steps` damped Jacobi sweeps on the linear system `A x = rhs`.
fn jacobi(op: &StencilOperator, x: &mut [f64], rhs: &[f64], omega: f64, steps: usize, ax: &mut [f64]) {
    let diag = op.diagonal();
    for _ in 0..steps {
        op.apply_linear(x, ax);
        for i in 0..x.len() {
            x[i] += omega * (rhs[i] - ax[i]) / diag[i];
        }
    }
}

/// Damped Jacobi on `apply(op, x) = b`: `x ← x + ω D⁻¹ (b − apply(op, x))`.
pub fn smooth(op: &StencilOperator, x: &StateVector, b: &StateVector, omega: f64, steps: usize) -> Result<StateVector> {
    op.grid().check_same(x.grid())?;
    op.grid().check_same(b.grid())?;
    if op.diagonal().iter().any(|&d| d == 0.0) {
        return Err(Error::SingularMatrix { column: 0 });
    }
    let rhs = op.linear_rhs(b.values());
    let mut out = x.values().to_vec();
    let mut ax = vec![0.0; out.len()];
    jacobi(op, &mut out, &rhs, omega, steps, &mut ax);
    StateVector::from_values(*op.grid(), out, x.time())
}

/// Direct solve of `apply(op, x) = b` by banded LU.
pub fn coarse_solve(op: &StencilOperator, b: &StateVector) -> Result<StateVector> {
    op.grid().check_same(b.grid())?;
    let lu = band_from_operator(op).factor()?;
    let x = lu.solve(&op.linear_rhs(b.values()));
    StateVector::from_values(*op.grid(), x, b.time())
}

/// Banded matrix of the linear part of `op` (bandwidth `nx·ny`).
pub fn band_from_operator(op: &StencilOperator) -> BandMatrix {
    let g = op.grid();
    let n = g.len();
    let bw = (g.nx() * g.ny()).min(n - 1);
    let mut m = BandMatrix::zeros(n, bw, bw);
    for (c, &d) in op.diagonal().iter().enumerate() {
        m.set(c, c, d);
    }
    op.for_each_coupling(|r, c, w| {
        m.set(r, c, w);
        m.set(c, r, w);
    });
    m
}

/// Cell-block average onto the next coarser grid.
pub fn restrict(fine: &StateVector) -> Result<StateVector> {
    let coarse = fine
        .grid()
        .coarsen()
        .ok_or_else(|| Error::InvalidInput("grid cannot be coarsened further".into()))?;
    let mut out = vec![0.0; coarse.len()];
    Parents::new(fine.grid(), &coarse).average(&coarse, fine.values(), &mut out);
    StateVector::from_values(coarse, out, fine.time())
}

/// Piecewise-constant injection of `coarse` into the cells of `fine`.
pub fn prolong(coarse: &StateVector, fine: &Grid3D) -> Result<StateVector> {
    match fine.coarsen() {
        Some(g) if g.dims() == coarse.grid().dims() => {}
        _ => {
            return Err(Error::InvalidInput(format!(
                "{:?} is not the coarsening of {:?}",
                coarse.grid().dims(),
                fine.dims()
            )))
        }
    }
    let mut x = vec![0.0; fine.len()];
    Parents::new(fine, coarse.grid()).prolong_add(coarse.grid(), coarse.values(), &mut x);
    StateVector::from_values(*fine, x, coarse.time())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{apply, assemble, residual};
    use crate::grid::{build_brick_mortar, BrickMortarSpec};

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn zero_smoothing_steps_is_identity() {
        let g = Grid3D::new([4, 4, 4], [1.0; 3]).unwrap();
        let op = assemble(&CoefficientField::uniform(g, 1.0).unwrap(), &BoundarySpec::default(), 1.0).unwrap();
        let x = StateVector::from_values(g, pseudo_random(g.len(), 1), 0.0).unwrap();
        let b = StateVector::from_values(g, pseudo_random(g.len(), 2), 0.0).unwrap();
        assert_eq!(smooth(&op, &x, &b, 0.6, 0).unwrap(), x);
    }

    #[test]
    fn jacobi_with_unit_damping_solves_diagonal_system() {
        let g = Grid3D::new([2, 2, 2], [1.0; 3]).unwrap();
        let n = g.len();
        let diag: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let op = StencilOperator::from_parts(g, 1.0, diag.clone(), vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let b = StateVector::from_values(g, vec![3.0; n], 0.0).unwrap();
        let x = smooth(&op, &StateVector::zeros(g, 0.0), &b, 1.0, 1).unwrap();
        for (xi, d) in x.values().iter().zip(&diag) {
            assert_eq!(*xi, 3.0 / d);
        }
    }

    #[test]
    fn jacobi_does_not_increase_residual() {
        let g = Grid3D::new([6, 5, 7], [0.5, 0.5, 0.25]).unwrap();
        let op = assemble(&CoefficientField::uniform(g, 0.8).unwrap(), &BoundarySpec::default(), 0.1).unwrap();
        let b = StateVector::from_values(g, pseudo_random(g.len(), 3), 0.0).unwrap();
        let mut x = StateVector::from_values(g, pseudo_random(g.len(), 4), 0.0).unwrap();
        let mut last = residual(&op, &x, &b).unwrap().1;
        for _ in 0..3 {
            x = smooth(&op, &x, &b, 0.6, 1).unwrap();
            let now = residual(&op, &x, &b).unwrap().1;
            assert!(now <= last);
            last = now;
        }
    }

    #[test]
    fn transfers_preserve_constants() {
        let g = Grid3D::new([5, 4, 3], [1.0; 3]).unwrap();
        let x = StateVector::from_values(g, vec![1.75; g.len()], 0.0).unwrap();
        let c = restrict(&x).unwrap();
        assert_eq!(c.grid().dims(), [3, 2, 2]);
        assert!(c.values().iter().all(|&v| (v - 1.75).abs() < 1e-15));
        let back = prolong(&c, &g).unwrap();
        assert!(back.values().iter().all(|&v| (v - 1.75).abs() < 1e-15));
    }

    #[test]
    fn restriction_averages_blocks() {
        let g = Grid3D::new([4, 4, 4], [1.0; 3]).unwrap();
        let v: Vec<f64> = (0..g.len()).map(|i| i as f64).collect();
        let c = restrict(&StateVector::from_values(g, v, 0.0).unwrap()).unwrap();
        // children of coarse (0,0,0): indices 0,1,4,5,16,17,20,21
        assert_eq!(c.values()[0], (0 + 1 + 4 + 5 + 16 + 17 + 20 + 21) as f64 / 8.0);
        // children of coarse (1,1,1): 42,43,46,47,58,59,62,63
        assert_eq!(c.values()[7], (42 + 43 + 46 + 47 + 58 + 59 + 62 + 63) as f64 / 8.0);
    }

    #[test]
    fn prolong_rejects_wrong_level() {
        let g = Grid3D::new([4, 4, 4], [1.0; 3]).unwrap();
        let wrong = StateVector::zeros(Grid3D::new([3, 2, 2], [1.0; 3]).unwrap(), 0.0);
        assert!(prolong(&wrong, &g).is_err());
    }

    #[test]
    fn coarse_solve_identity_like_and_consistent() {
        let g = Grid3D::new([5, 5, 2], [1.0; 3]).unwrap();
        let n = g.len();
        let op = StencilOperator::from_parts(g, 1.0, vec![1.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let b = StateVector::from_values(g, pseudo_random(n, 9), 0.0).unwrap();
        assert_eq!(coarse_solve(&op, &b).unwrap().values(), b.values());

        let f = build_brick_mortar(
            &BrickMortarSpec {
                layers: 1,
                brick_extent: [3.0, 3.0, 1.0],
                ..Default::default()
            },
            &Grid3D::new([5, 5, 3], [1.0; 3]).unwrap(),
        )
        .unwrap();
        let b = StateVector::from_values(*f.grid(), pseudo_random(f.grid().len(), 10), 0.0).unwrap();
        let op = assemble(&f, &BoundarySpec::default(), 3.0).unwrap();
        let x = coarse_solve(&op, &b).unwrap();
        let back = apply(&op, &x).unwrap();
        let err = back.values().iter().zip(b.values()).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-10 * b.norm());
    }

    #[test]
    fn exact_initial_guess_takes_zero_cycles() {
        let g = Grid3D::new([8, 8, 8], [1.0; 3]).unwrap();
        let f = CoefficientField::uniform(g, 1.0).unwrap();
        let cfg = MgConfig { coarsest_max_unknowns: 64, ..Default::default() };
        let h = MgHierarchy::build(&f, &BoundarySpec::default(), 0.5, &cfg).unwrap();
        assert_eq!(h.depth(), 2);
        let x = StateVector::from_values(g, pseudo_random(g.len(), 5), 0.0).unwrap();
        let b = apply(h.fine_operator(), &x).unwrap();
        let out = solve(&h, &b, &x, &cfg).unwrap();
        assert_eq!(out.cycles, 0);
        assert_eq!(out.solution, x);
    }
}
