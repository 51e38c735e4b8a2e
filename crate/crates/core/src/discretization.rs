//! Cell-centred finite volumes for `∂c/∂t = ∇·(D∇c)` and the implicit-Euler
//! system `(I − dt·L) c_new = c_old`.
//!
//! Interior faces use the harmonic mean of the two cell coefficients, which
//! makes the two-point flux continuous across phase interfaces. Dirichlet
//! faces are closed with a ghost value at half a cell distance. Lateral faces
//! are homogeneous Neumann.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::grid::{CoefficientField, Grid3D};

/// Cell-centred concentration field at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    grid: Grid3D,
    values: Vec<f64>,
    time: f64,
}

impl StateVector {
    pub fn zeros(grid: Grid3D, time: f64) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            time,
        }
    }

    pub fn from_values(grid: Grid3D, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("state values must be finite".into()));
        }
        Ok(Self { grid, values, time })
    }

    pub fn grid(&self) -> &Grid3D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.values)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Condition on the top or bottom face of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceCondition {
    Dirichlet(f64),
    /// Homogeneous Neumann (zero flux).
    Neumann,
}

/// Boundary data. Lateral faces are always zero-flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub top: FaceCondition,
    pub bottom: FaceCondition,
}

impl Default for BoundarySpec {
    /// Donor at the top (`c = 1`), perfect sink at the bottom (`c = 0`).
    fn default() -> Self {
        Self {
            top: FaceCondition::Dirichlet(1.0),
            bottom: FaceCondition::Dirichlet(0.0),
        }
    }
}

impl BoundarySpec {
    pub fn dirichlet(top: f64, bottom: f64) -> Self {
        Self {
            top: FaceCondition::Dirichlet(top),
            bottom: FaceCondition::Dirichlet(bottom),
        }
    }

    pub fn all_neumann() -> Self {
        Self {
            top: FaceCondition::Neumann,
            bottom: FaceCondition::Neumann,
        }
    }
}

/// Harmonic mean of the two cell coefficients sharing a face.
pub fn face_coefficient(d_left: f64, d_right: f64) -> Result<f64> {
    ensure_positive("d_left", d_left)?;
    ensure_positive("d_right", d_right)?;
    Ok(harmonic(d_left, d_right))
}

#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Matrix-free 7-point operator representing the affine map
/// `x ↦ (I − dt·L) x + constant`.
///
/// Couplings are stored once per face (`east[c]` couples `c` with its +x
/// neighbour, and so on), so the linear part is symmetric by construction.
/// `constant` holds the Dirichlet contributions moved to the left-hand side;
/// the implicit-Euler step solves `apply(x) = c_old`.
#[derive(Debug, Clone)]
pub struct StencilOperator {
    grid: Grid3D,
    dt: f64,
    diag: Vec<f64>,
    east: Vec<f64>,
    north: Vec<f64>,
    up: Vec<f64>,
    constant: Vec<f64>,
}

/// Weights of one operator row: centre, then the −x, +x, −y, +y, −z, +z
/// neighbours. Missing neighbours have weight zero.
pub type StencilRow = [f64; 7];

impl StencilOperator {
    pub fn grid(&self) -> &Grid3D {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// `apply(0)`: the Dirichlet contribution.
    pub fn constant(&self) -> &[f64] {
        &self.constant
    }

    pub fn row(&self, cell: usize) -> StencilRow {
        let [nx, ny, _] = self.grid.dims();
        let (i, j, k) = self.grid.ijk(cell);
        let plane = nx * ny;
        [
            self.diag[cell],
            if i > 0 { self.east[cell - 1] } else { 0.0 },
            self.east[cell],
            if j > 0 { self.north[cell - nx] } else { 0.0 },
            self.north[cell],
            if k > 0 { self.up[cell - plane] } else { 0.0 },
            self.up[cell],
        ]
    }

    /// Linear part only: `y = (I − dt·L) x`.
    pub fn apply_linear(&self, x: &[f64], y: &mut [f64]) {
        let [nx, ny, nz] = self.grid.dims();
        let plane = nx * ny;
        debug_assert_eq!(x.len(), self.grid.len());
        for (yc, (&d, &xc)) in y.iter_mut().zip(self.diag.iter().zip(x)) {
            *yc = d * xc;
        }
        for k in 0..nz {
            for j in 0..ny {
                let row = nx * (j + ny * k);
                for i in 0..nx - 1 {
                    let c = row + i;
                    let w = self.east[c];
                    y[c] += w * x[c + 1];
                    y[c + 1] += w * x[c];
                }
                if j + 1 < ny {
                    for c in row..row + nx {
                        let w = self.north[c];
                        y[c] += w * x[c + nx];
                        y[c + nx] += w * x[c];
                    }
                }
            }
            if k + 1 < nz {
                for c in plane * k..plane * (k + 1) {
                    let w = self.up[c];
                    y[c] += w * x[c + plane];
                    y[c + plane] += w * x[c];
                }
            }
        }
    }

    /// `r = rhs − (I − dt·L) x`, returning `‖r‖₂`.
    pub(crate) fn residual_linear(&self, x: &[f64], rhs: &[f64], r: &mut [f64]) -> f64 {
        self.apply_linear(x, r);
        let mut sum = 0.0;
        for (ri, &bi) in r.iter_mut().zip(rhs) {
            *ri = bi - *ri;
            sum += *ri * *ri;
        }
        sum.sqrt()
    }

    /// Right-hand side of the linear system equivalent to `apply(x) = b`.
    pub fn linear_rhs(&self, b: &[f64]) -> Vec<f64> {
        b.iter().zip(&self.constant).map(|(bi, ci)| bi - ci).collect()
    }

    #[cfg(test)]
    pub(crate) fn from_parts(
        grid: Grid3D,
        dt: f64,
        diag: Vec<f64>,
        east: Vec<f64>,
        north: Vec<f64>,
        up: Vec<f64>,
        constant: Vec<f64>,
    ) -> Self {
        let n = grid.len();
        assert!(
            [diag.len(), east.len(), north.len(), up.len(), constant.len()]
                .iter()
                .all(|&l| l == n)
        );
        Self {
            grid,
            dt,
            diag,
            east,
            north,
            up,
            constant,
        }
    }

    /// Visits every stored off-diagonal entry as `(row, column, weight)`,
    /// once per face.
    pub(crate) fn for_each_coupling(&self, mut f: impl FnMut(usize, usize, f64)) {
        let [nx, ny, nz] = self.grid.dims();
        let plane = nx * ny;
        for c in 0..self.grid.len() {
            let (i, j, k) = self.grid.ijk(c);
            if i + 1 < nx {
                f(c, c + 1, self.east[c]);
            }
            if j + 1 < ny {
                f(c, c + nx, self.north[c]);
            }
            if k + 1 < nz {
                f(c, c + plane, self.up[c]);
            }
        }
    }
}

/// Assembles `(I − dt·L)` for `field` and `bc`.
pub fn assemble(field: &CoefficientField, bc: &BoundarySpec, dt: f64) -> Result<StencilOperator> {
    assemble_values(field.grid(), field.values(), bc, dt)
}

pub(crate) fn assemble_values(
    grid: &Grid3D,
    coeff: &[f64],
    bc: &BoundarySpec,
    dt: f64,
) -> Result<StencilOperator> {
    ensure_positive("dt", dt)?;
    if coeff.len() != grid.len() {
        return Err(Error::InvalidInput(format!(
            "coefficient field has {} values for {} cells",
            coeff.len(),
            grid.len()
        )));
    }
    if let Some(bad) = coeff.iter().find(|&&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "coefficients must be positive, found {bad}"
        )));
    }
    let n = grid.len();
    let [nx, ny, nz] = grid.dims();
    let [hx, hy, hz] = grid.spacing();
    let plane = nx * ny;
    let (sx, sy, sz) = (dt / (hx * hx), dt / (hy * hy), dt / (hz * hz));

    let mut diag = vec![1.0; n];
    let mut east = vec![0.0; n];
    let mut north = vec![0.0; n];
    let mut up = vec![0.0; n];
    let mut constant = vec![0.0; n];

    for c in 0..n {
        let (i, j, k) = grid.ijk(c);
        if i + 1 < nx {
            let w = sx * harmonic(coeff[c], coeff[c + 1]);
            east[c] = -w;
            diag[c] += w;
            diag[c + 1] += w;
        }
        if j + 1 < ny {
            let w = sy * harmonic(coeff[c], coeff[c + nx]);
            north[c] = -w;
            diag[c] += w;
            diag[c + nx] += w;
        }
        if k + 1 < nz {
            let w = sz * harmonic(coeff[c], coeff[c + plane]);
            up[c] = -w;
            diag[c] += w;
            diag[c + plane] += w;
        }
    }

    // Ghost elimination: flux 2·D·(g − c)/h² per unit volume.
    let faces = [(0, bc.bottom), (nz - 1, bc.top)];
    for (k, cond) in faces {
        if let FaceCondition::Dirichlet(g) = cond {
            for c in plane * k..plane * (k + 1) {
                let w = 2.0 * sz * coeff[c];
                diag[c] += w;
                constant[c] -= w * g;
            }
        }
    }

    Ok(StencilOperator {
        grid: *grid,
        dt,
        diag,
        east,
        north,
        up,
        constant,
    })
}

/// Affine application `(I − dt·L) x + constant`.
pub fn apply(op: &StencilOperator, x: &StateVector) -> Result<StateVector> {
    op.grid.check_same(x.grid())?;
    let mut y = vec![0.0; op.grid.len()];
    op.apply_linear(x.values(), &mut y);
    for (yi, ci) in y.iter_mut().zip(&op.constant) {
        *yi += ci;
    }
    Ok(StateVector {
        grid: op.grid,
        values: y,
        time: x.time(),
    })
}

/// `b − apply(op, x)` and its Euclidean norm.
pub fn residual(op: &StencilOperator, x: &StateVector, b: &StateVector) -> Result<(StateVector, f64)> {
    op.grid.check_same(b.grid())?;
    let ax = apply(op, x)?;
    let values: Vec<f64> = b.values().iter().zip(ax.values()).map(|(bi, ai)| bi - ai).collect();
    let norm = norm2(&values);
    Ok((
        StateVector {
            grid: op.grid,
            values,
            time: b.time(),
        },
        norm,
    ))
}
