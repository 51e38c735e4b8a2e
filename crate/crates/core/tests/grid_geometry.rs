mod common;

use parareal_skin::grid::{
    build_brick_mortar, effective_coefficient_1d, lag_time, BrickMortarSpec, CoefficientField, Grid3D, Phase,
};
use proptest::prelude::*;

/// Brute-force classification: enumerate every brick of every layer as a box
/// and test the point against each.
fn in_some_brick(spec: &BrickMortarSpec, extent: [f64; 3], p: [f64; 3]) -> bool {
    let m = spec.mortar_width;
    let [bx, by, bz] = spec.brick_extent;
    for layer in 0..spec.layers {
        let z0 = m + layer as f64 * (bz + m);
        if !(p[2] >= z0 && p[2] < z0 + bz) {
            continue;
        }
        let shift = |b: f64| ((layer as f64 * spec.stagger_offset).fract()) * (b + m);
        let (sx, sy) = (shift(bx), shift(by));
        let reps = |len: f64, b: f64| ((len / (b + m)).ceil() as i64) + 2;
        for qx in -2..reps(extent[0], bx) {
            let x0 = m + sx + qx as f64 * (bx + m);
            if !(p[0] >= x0 && p[0] < x0 + bx) {
                continue;
            }
            for qy in -2..reps(extent[1], by) {
                let y0 = m + sy + qy as f64 * (by + m);
                if p[1] >= y0 && p[1] < y0 + by {
                    return true;
                }
            }
        }
    }
    false
}

fn corneocyte_cells(field: &CoefficientField) -> usize {
    field.phase().iter().filter(|&&p| p == Phase::Corneocyte).count()
}

#[test]
fn desk_layout_matches_brute_force_classification() {
    let spec = BrickMortarSpec::default();
    let extent = [42.0, 42.0, 21.0];
    let grid = Grid3D::covering([42, 42, 42], extent).unwrap();
    let field = build_brick_mortar(&spec, &grid).unwrap();
    let mut count = 0;
    for k in 0..grid.nz() {
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let c = grid.cell_center(i, j, k);
                let expected = in_some_brick(&spec, extent, c);
                let got = field.phase()[grid.index(i, j, k)] == Phase::Corneocyte;
                assert_eq!(got, expected, "cell ({i}, {j}, {k})");
                count += expected as usize;
            }
        }
    }
    assert_eq!(corneocyte_cells(&field), count);
    // top and bottom cell layers are lipid
    let plane = 42 * 42;
    assert!(field.phase()[..plane].iter().all(|&p| p == Phase::Lipid));
    assert!(field.phase()[field.phase().len() - plane..].iter().all(|&p| p == Phase::Lipid));
}

#[test]
fn desk_volume_fraction_is_close_to_analytic() {
    // Each layer covers the 42×42 box minus a cross of lipid channels; the
    // covered area is exact on this grid because h divides every edge.
    let spec = BrickMortarSpec::default();
    let grid = Grid3D::covering([42, 42, 42], [42.0, 42.0, 21.0]).unwrap();
    let field = build_brick_mortar(&spec, &grid).unwrap();
    let fraction = field.corneocyte_fraction();
    let brick_volume = 40.0 * 40.0 * 1.0;
    let analytic = spec.layers as f64 * brick_volume / (42.0 * 42.0 * 21.0);
    // one cell layer of discretization around every brick face
    let slack = spec.layers as f64 * (4.0 * 40.0 * 1.0) / (42.0 * 42.0 * 21.0);
    assert!((fraction - analytic).abs() <= slack, "{fraction} vs {analytic}");
}

#[test]
fn refinement_converges_in_volume_fraction() {
    let spec = common::small_spec();
    let fractions: Vec<f64> = [[16, 16, 14], [32, 32, 28], [64, 64, 56]]
        .iter()
        .map(|&dims| build_brick_mortar(&spec, &Grid3D::covering(dims, [8.0, 8.0, 7.0]).unwrap())
            .unwrap()
            .corneocyte_fraction())
        .collect();
    let exact = 3.0 * 36.0 / (8.0 * 8.0 * 7.0);
    let errs: Vec<f64> = fractions.iter().map(|f| (f - exact).abs()).collect();
    assert!(errs[1] <= errs[0] + 1e-15 && errs[2] <= errs[1] + 1e-15, "{errs:?}");
}

#[test]
fn lag_time_of_layered_column() {
    // two layers of equal thickness: series resistance 1/d1 + 1/d2 per half
    let grid = Grid3D::new([2, 2, 4], [1.0; 3]).unwrap();
    let phase = (0..16).map(|c| if c < 8 { Phase::Corneocyte } else { Phase::Lipid }).collect();
    let field = CoefficientField::from_phases(grid, phase, 1e-3, 1.0).unwrap();
    let d_eff = effective_coefficient_1d(&field);
    let oracle = 1.0 / (0.5 / 1e-3 + 0.5 / 1.0);
    assert!((d_eff - oracle).abs() < 1e-15);
    let t = lag_time(4.0, d_eff).unwrap();
    assert!((t - 16.0 / (6.0 * oracle)).abs() < 1e-9);
}

proptest! {
    #[test]
    fn linear_index_is_a_bijection(nx in 2usize..7, ny in 2usize..7, nz in 2usize..7) {
        let g = Grid3D::new([nx, ny, nz], [1.0; 3]).unwrap();
        let mut seen = vec![false; g.len()];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = g.index(i, j, k);
                    prop_assert_eq!(idx, i + nx * (j + ny * k));
                    prop_assert!(!seen[idx]);
                    seen[idx] = true;
                    prop_assert_eq!(g.ijk(idx), (i, j, k));
                }
            }
        }
    }

    #[test]
    fn coarsening_halves_and_refine_inverts(nx in 2usize..40, ny in 2usize..40, nz in 2usize..40,
                                            h in 0.1f64..3.0) {
        let g = Grid3D::new([nx, ny, nz], [h, 2.0 * h, 0.5 * h]).unwrap();
        if let Some(c) = g.coarsen() {
            for axis in 0..3 {
                prop_assert_eq!(c.dims()[axis], g.dims()[axis].div_ceil(2));
                prop_assert!((c.extent()[axis] - g.extent()[axis]).abs() <= 1e-12 * g.extent()[axis]);
            }
        }
        let r = g.refine();
        prop_assert_eq!(r.dims(), [2 * nx, 2 * ny, 2 * nz]);
        let back = r.coarsen().unwrap();
        prop_assert_eq!(back.dims(), g.dims());
        for axis in 0..3 {
            prop_assert!((back.spacing()[axis] - g.spacing()[axis]).abs() <= 1e-12 * g.spacing()[axis]);
        }
    }

    #[test]
    fn phases_partition_and_bound_values(layers in 1usize..4, bx in 1.0f64..5.0, stagger in 0.0f64..0.99,
                                         d_cor in 1e-4f64..1.0, d_lip in 1e-2f64..10.0) {
        let spec = BrickMortarSpec {
            layers,
            brick_extent: [bx, bx, 1.0],
            mortar_width: 1.0,
            stagger_offset: stagger,
            d_cor,
            d_lip,
        };
        let extent = [2.0 * bx + 3.0, bx + 2.0, spec.required_height()];
        let dims = [
            (extent[0] * 2.0).ceil() as usize,
            (extent[1] * 2.0).ceil() as usize,
            (extent[2] * 2.0).ceil() as usize,
        ];
        let grid = Grid3D::covering(dims, extent).unwrap();
        let field = match build_brick_mortar(&spec, &grid) {
            Ok(f) => f,
            // channels narrower than a cell centre spacing are legitimately rejected
            Err(_) => return Ok(()),
        };
        let (lo, hi) = (d_cor.min(d_lip), d_cor.max(d_lip));
        for (v, p) in field.values().iter().zip(field.phase()) {
            prop_assert!(*v >= lo && *v <= hi);
            match p {
                Phase::Corneocyte => prop_assert_eq!(*v, d_cor),
                Phase::Lipid => prop_assert_eq!(*v, d_lip),
            }
        }
        let d_eff = effective_coefficient_1d(&field);
        prop_assert!(d_eff >= lo * (1.0 - 1e-12) && d_eff <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn lag_time_formula(lambda in 1e-3f64..1e3, d in 1e-6f64..1e3) {
        let t = lag_time(lambda, d).unwrap();
        prop_assert!((t - lambda * lambda / (6.0 * d)).abs() <= 1e-12 * t);
    }
}
