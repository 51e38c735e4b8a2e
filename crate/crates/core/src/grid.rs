//! Structured grids and the brick-and-mortar coefficient layout.
//!
//! Cells are addressed by `(i, j, k)` and linearised x-fastest:
//! `index = i + nx * (j + ny * k)`. The z axis is the permeation axis; the
//! top face (largest z) carries the donor concentration.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};

/// Uniform cell-centred Cartesian grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3D {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl Grid3D {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::with_origin(dims, spacing, [0.0; 3])
    }

    pub fn with_origin(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidInput(format!(
                "every axis needs at least 2 cells, got {dims:?}"
            )));
        }
        for (axis, &h) in spacing.iter().enumerate() {
            ensure_positive(&format!("spacing[{axis}]"), h)?;
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidInput("origin must be finite".into()));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
        })
    }

    /// Grid covering the box `[origin, origin + extent]` with `dims` cells.
    pub fn covering(dims: [usize; 3], extent: [f64; 3]) -> Result<Self> {
        let spacing = [
            extent[0] / dims[0] as f64,
            extent[1] / dims[1] as f64,
            extent[2] / dims[2] as f64,
        ];
        Self::new(dims, spacing)
    }

    pub fn nx(&self) -> usize {
        self.dims[0]
    }

    pub fn ny(&self) -> usize {
        self.dims[1]
    }

    pub fn nz(&self) -> usize {
        self.dims[2]
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn ijk(&self, index: usize) -> (usize, usize, usize) {
        let i = index % self.dims[0];
        let rest = index / self.dims[0];
        (i, rest % self.dims[1], rest / self.dims[1])
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.spacing[0],
            self.origin[1] + (j as f64 + 0.5) * self.spacing[1],
            self.origin[2] + (k as f64 + 0.5) * self.spacing[2],
        ]
    }

    /// Next coarser grid: every axis halves its cell count (rounding up) while
    /// the covered box stays the same. `None` once an axis would drop below 2.
    pub fn coarsen(&self) -> Option<Self> {
        let dims = self.dims.map(|n| n.div_ceil(2));
        if dims.iter().any(|&n| n < 2) {
            return None;
        }
        let extent = self.extent();
        let spacing = [
            extent[0] / dims[0] as f64,
            extent[1] / dims[1] as f64,
            extent[2] / dims[2] as f64,
        ];
        Some(Self {
            dims,
            spacing,
            origin: self.origin,
        })
    }

    /// Same grid with twice the cells per axis.
    pub fn refine(&self) -> Self {
        Self {
            dims: self.dims.map(|n| 2 * n),
            spacing: self.spacing.map(|h| h / 2.0),
            origin: self.origin,
        }
    }

    pub(crate) fn check_same(&self, other: &Grid3D) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::GridMismatch {
                expected: self.dims,
                found: other.dims,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Corneocyte,
    Lipid,
}

/// Brick-and-mortar layout: flat corneocyte bricks stacked in staggered
/// layers, separated on all sides by lipid channels of `mortar_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrickMortarSpec {
    pub layers: usize,
    pub brick_extent: [f64; 3],
    pub mortar_width: f64,
    /// Lateral shift between successive layers, as a fraction of the brick pitch.
    pub stagger_offset: f64,
    pub d_cor: f64,
    pub d_lip: f64,
}

impl Default for BrickMortarSpec {
    fn default() -> Self {
        Self {
            layers: 10,
            brick_extent: [40.0, 40.0, 1.0],
            mortar_width: 1.0,
            stagger_offset: 0.5,
            d_cor: 1e-3,
            d_lip: 1.0,
        }
    }
}

impl BrickMortarSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::Geometry("at least one corneocyte layer is required".into()));
        }
        if !(self.mortar_width > 0.0 && self.mortar_width.is_finite()) {
            return Err(Error::Geometry(format!(
                "mortar width must be positive, got {}",
                self.mortar_width
            )));
        }
        if self
            .brick_extent
            .iter()
            .any(|&e| !(e > 0.0 && e.is_finite()))
        {
            return Err(Error::Geometry(format!(
                "brick extent must be positive in every axis, got {:?}",
                self.brick_extent
            )));
        }
        if !(0.0..1.0).contains(&self.stagger_offset) {
            return Err(Error::Geometry(format!(
                "stagger offset must lie in [0, 1), got {}",
                self.stagger_offset
            )));
        }
        ensure_positive("d_cor", self.d_cor)?;
        ensure_positive("d_lip", self.d_lip)?;
        Ok(())
    }

    /// Distance between the bottoms of two successive brick layers.
    pub fn layer_pitch(&self) -> f64 {
        self.brick_extent[2] + self.mortar_width
    }

    /// Minimum domain height holding every layer plus top and bottom lipid.
    pub fn required_height(&self) -> f64 {
        self.layers as f64 * self.layer_pitch() + self.mortar_width
    }

    /// Lateral pitch along x (`axis = 0`) or y (`axis = 1`).
    pub fn lateral_pitch(&self, axis: usize) -> f64 {
        self.brick_extent[axis] + self.mortar_width
    }

    /// Lateral shift of layer `layer` relative to the domain origin.
    pub fn layer_shift(&self, layer: usize, axis: usize) -> f64 {
        let frac = (layer as f64 * self.stagger_offset).fract();
        frac * self.lateral_pitch(axis)
    }

    /// z-range `[lo, hi)` of a brick layer, relative to the domain origin.
    pub fn layer_span(&self, layer: usize) -> (f64, f64) {
        let lo = self.mortar_width + layer as f64 * self.layer_pitch();
        (lo, lo + self.brick_extent[2])
    }

    /// Point-in-brick test for coordinates relative to the domain origin.
    pub fn is_corneocyte(&self, p: [f64; 3]) -> bool {
        let pitch_z = self.layer_pitch();
        let zr = p[2] - self.mortar_width;
        if zr < 0.0 {
            return false;
        }
        let layer = (zr / pitch_z).floor() as usize;
        if layer >= self.layers {
            return false;
        }
        let (lo, hi) = self.layer_span(layer);
        if !(p[2] >= lo && p[2] < hi) {
            return false;
        }
        (0..2).all(|axis| {
            let pitch = self.lateral_pitch(axis);
            let u = (p[axis] - self.mortar_width - self.layer_shift(layer, axis)).rem_euclid(pitch);
            u < self.brick_extent[axis]
        })
    }
}

/// Piecewise-constant diffusion coefficient, one value and phase per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    grid: Grid3D,
    values: Vec<f64>,
    phase: Vec<Phase>,
}

impl CoefficientField {
    /// Single-phase field with coefficient `d` everywhere (labelled lipid).
    pub fn uniform(grid: Grid3D, d: f64) -> Result<Self> {
        ensure_positive("coefficient", d)?;
        Ok(Self {
            grid,
            values: vec![d; grid.len()],
            phase: vec![Phase::Lipid; grid.len()],
        })
    }

    /// Field from explicit phase labels and per-phase coefficients.
    pub fn from_phases(grid: Grid3D, phase: Vec<Phase>, d_cor: f64, d_lip: f64) -> Result<Self> {
        ensure_positive("d_cor", d_cor)?;
        ensure_positive("d_lip", d_lip)?;
        if phase.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} phase labels, got {}",
                grid.len(),
                phase.len()
            )));
        }
        let values = phase
            .iter()
            .map(|p| match p {
                Phase::Corneocyte => d_cor,
                Phase::Lipid => d_lip,
            })
            .collect();
        Ok(Self {
            grid,
            values,
            phase,
        })
    }

    pub fn grid(&self) -> &Grid3D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn phase(&self) -> &[Phase] {
        &self.phase
    }

    pub fn corneocyte_fraction(&self) -> f64 {
        let n = self
            .phase
            .iter()
            .filter(|&&p| p == Phase::Corneocyte)
            .count();
        n as f64 / self.phase.len() as f64
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn count_centers(lo: f64, hi: f64, origin: f64, h: f64, n: usize) -> usize {
    (0..n)
        .filter(|&i| {
            let c = origin + (i as f64 + 0.5) * h;
            c >= lo && c < hi
        })
        .count()
}

/// Rasterises the brick-and-mortar layout onto `grid` by classifying every
/// cell centre.
pub fn build_brick_mortar(spec: &BrickMortarSpec, grid: &Grid3D) -> Result<CoefficientField> {
    spec.validate()?;
    let h = grid.spacing();
    let extent = grid.extent();
    let m = spec.mortar_width;

    for (axis, name) in ["x", "y", "z"].iter().enumerate() {
        if h[axis] > m {
            return Err(Error::ResolutionTooCoarse(format!(
                "h{name} = {} exceeds the mortar width {m}",
                h[axis]
            )));
        }
    }
    let needed = spec.required_height();
    if extent[2] < needed * (1.0 - 1e-12) {
        return Err(Error::GeometryOverflow(format!(
            "{} layers need a domain height of {needed}, got {}",
            spec.layers, extent[2]
        )));
    }

    // Every channel between bricks must hold at least one cell centre.
    let mut z_channels = vec![(0.0, m)];
    for layer in 0..spec.layers {
        let (_, hi) = spec.layer_span(layer);
        z_channels.push((hi, hi + m));
    }
    for (lo, hi) in z_channels {
        if count_centers(lo, hi, 0.0, h[2], grid.nz()) == 0 {
            return Err(Error::ResolutionTooCoarse(format!(
                "lipid layer z in [{lo}, {hi}) contains no cell"
            )));
        }
    }
    for layer in 0..spec.layers {
        for axis in 0..2 {
            let pitch = spec.lateral_pitch(axis);
            let shift = spec.layer_shift(layer, axis);
            let first = ((-m - shift) / pitch).floor() as i64 - 1;
            let last = ((extent[axis] - m - shift) / pitch).ceil() as i64 + 1;
            for j in first..=last {
                let lo = m + shift + j as f64 * pitch + spec.brick_extent[axis];
                let hi = lo + m;
                if lo >= 0.0 && hi <= extent[axis] && count_centers(lo, hi, 0.0, h[axis], grid.dims()[axis]) == 0 {
                    return Err(Error::ResolutionTooCoarse(format!(
                        "lateral channel on axis {axis} at [{lo}, {hi}) in layer {layer} contains no cell"
                    )));
                }
            }
        }
    }

    let mut phase = Vec::with_capacity(grid.len());
    for k in 0..grid.nz() {
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let z = (k as f64 + 0.5) * h[2];
                let y = (j as f64 + 0.5) * h[1];
                let x = (i as f64 + 0.5) * h[0];
                phase.push(if spec.is_corneocyte([x, y, z]) {
                    Phase::Corneocyte
                } else {
                    Phase::Lipid
                });
            }
        }
    }
    CoefficientField::from_phases(*grid, phase, spec.d_cor, spec.d_lip)
}

/// Characteristic lag time `λ² / (6 D_eff)` of a membrane of thickness `lambda`.
pub fn lag_time(lambda: f64, d_eff: f64) -> Result<f64> {
    ensure_positive("membrane thickness", lambda)?;
    ensure_positive("effective coefficient", d_eff)?;
    Ok(lambda * lambda / (6.0 * d_eff))
}

/// Effective coefficient along the permeation (z) axis: the harmonic mean
/// over z-slices of each slice's arithmetic-mean coefficient.
pub fn effective_coefficient_1d(field: &CoefficientField) -> f64 {
    let grid = field.grid();
    let per_slice = grid.nx() * grid.ny();
    let resistance: f64 = field
        .values()
        .chunks_exact(per_slice)
        .map(|slice| {
            let mean = slice.iter().sum::<f64>() / per_slice as f64;
            1.0 / mean
        })
        .sum();
    grid.nz() as f64 / resistance
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_grid() -> Grid3D {
        Grid3D::new([42, 42, 42], [1.0, 1.0, 0.5]).unwrap()
    }

    #[test]
    fn linear_index_round_trips() {
        let g = Grid3D::new([3, 4, 5], [1.0; 3]).unwrap();
        for idx in 0..g.len() {
            let (i, j, k) = g.ijk(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid3D::new([1, 4, 4], [1.0; 3]).is_err());
        assert!(Grid3D::new([4, 4, 4], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn coarsening_rounds_up_and_keeps_extent() {
        let g = Grid3D::new([42, 21, 5], [1.0, 2.0, 0.5]).unwrap();
        let c = g.coarsen().unwrap();
        assert_eq!(c.dims(), [21, 11, 3]);
        for (a, b) in g.extent().iter().zip(c.extent()) {
            assert!((a - b).abs() < 1e-12);
        }
        let tiny = Grid3D::new([2, 8, 8], [1.0; 3]).unwrap();
        assert!(tiny.coarsen().is_none());
    }

    #[test]
    fn zero_volume_brick_is_rejected() {
        let spec = BrickMortarSpec {
            brick_extent: [40.0, 0.0, 1.0],
            ..Default::default()
        };
        assert!(matches!(
            build_brick_mortar(&spec, &desk_grid()),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn equal_coefficients_give_uniform_field() {
        let spec = BrickMortarSpec {
            d_cor: 1e-3,
            d_lip: 1e-3,
            ..Default::default()
        };
        let field = build_brick_mortar(&spec, &desk_grid()).unwrap();
        assert!(field.values().iter().all(|&v| v == 1e-3));
    }

    #[test]
    fn coarse_resolution_is_rejected() {
        let grid = Grid3D::new([20, 20, 42], [2.1, 2.1, 0.5]).unwrap();
        assert!(matches!(
            build_brick_mortar(&BrickMortarSpec::default(), &grid),
            Err(Error::ResolutionTooCoarse(_))
        ));
    }

    #[test]
    fn too_many_layers_overflow() {
        let spec = BrickMortarSpec {
            layers: 11,
            ..Default::default()
        };
        assert!(matches!(
            build_brick_mortar(&spec, &desk_grid()),
            Err(Error::GeometryOverflow(_))
        ));
    }

    #[test]
    fn phases_match_values() {
        let spec = BrickMortarSpec::default();
        let field = build_brick_mortar(&spec, &desk_grid()).unwrap();
        for (v, p) in field.values().iter().zip(field.phase()) {
            match p {
                Phase::Corneocyte => assert_eq!(*v, spec.d_cor),
                Phase::Lipid => assert_eq!(*v, spec.d_lip),
            }
        }
        // top and bottom slices are lipid
        let g = field.grid();
        let per = g.nx() * g.ny();
        assert!(field.phase()[..per].iter().all(|&p| p == Phase::Lipid));
        assert!(field.phase()[g.len() - per..]
            .iter()
            .all(|&p| p == Phase::Lipid));
    }

    #[test]
    fn swapping_coefficients_swaps_values() {
        let spec = BrickMortarSpec::default();
        let swapped = BrickMortarSpec {
            d_cor: spec.d_lip,
            d_lip: spec.d_cor,
            ..spec
        };
        let a = build_brick_mortar(&spec, &desk_grid()).unwrap();
        let b = build_brick_mortar(&swapped, &desk_grid()).unwrap();
        assert_eq!(a.phase(), b.phase());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(*x, if *y == spec.d_cor { spec.d_lip } else { spec.d_cor });
        }
    }

    #[test]
    fn lag_time_values() {
        assert!((lag_time(1.0, 1.0 / 6.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((lag_time(2.0, 1.0 / 6.0).unwrap() - 4.0).abs() < 1e-14);
        assert!(lag_time(1.0, 0.0).is_err());
        assert!(lag_time(-1.0, 1.0).is_err());
    }

    #[test]
    fn effective_coefficient_of_slabs() {
        let g = Grid3D::new([3, 3, 4], [1.0; 3]).unwrap();
        assert!((effective_coefficient_1d(&CoefficientField::uniform(g, 0.25).unwrap()) - 0.25).abs() < 1e-15);

        let phase = (0..g.len())
            .map(|idx| if g.ijk(idx).2 < 2 { Phase::Lipid } else { Phase::Corneocyte })
            .collect();
        let field = CoefficientField::from_phases(g, phase, 1e-3, 1.0).unwrap();
        let expected = 2.0 / (1.0 + 1000.0);
        assert!((effective_coefficient_1d(&field) - expected).abs() < 1e-15);
    }

    #[test]
    fn effective_coefficient_of_default_layout_is_bounded() {
        let field = build_brick_mortar(&BrickMortarSpec::default(), &desk_grid()).unwrap();
        let d = effective_coefficient_1d(&field);
        assert!(d > 1e-3 && d < 1.0, "d_eff = {d}");
    }
}
