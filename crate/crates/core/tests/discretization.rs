mod common;

use common::{dense_operator, mat_vec, random_field, random_values, rel_diff};
use parareal_skin::discretization::{
    apply, assemble, face_coefficient, residual, BoundarySpec, FaceCondition, StateVector,
};
use parareal_skin::grid::{build_brick_mortar, BrickMortarSpec, Grid3D};
use parareal_skin::multigrid::coarse_solve;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn boundary(seed: u64) -> BoundarySpec {
    match seed % 3 {
        0 => BoundarySpec::default(),
        1 => BoundarySpec::all_neumann(),
        _ => BoundarySpec {
            top: FaceCondition::Neumann,
            bottom: FaceCondition::Dirichlet(0.25),
        },
    }
}

#[test]
fn apply_and_residual_match_dense_matrix_on_4_cubed() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..6 {
        let field = random_field(&mut rng, [4, 4, 4]);
        let bc = boundary(seed);
        let dt = 0.37;
        let op = assemble(&field, &bc, dt).unwrap();
        let (a, constant) = dense_operator(&field, &bc, dt);
        let x = StateVector::from_values(*field.grid(), random_values(&mut rng, 64), 0.0).unwrap();
        let b = StateVector::from_values(*field.grid(), random_values(&mut rng, 64), 0.0).unwrap();

        let ax = mat_vec(&a, x.values());
        let expected: Vec<f64> = ax.iter().zip(&constant).map(|(p, q)| p + q).collect();
        let got = apply(&op, &x).unwrap();
        assert!(rel_diff(got.values(), &expected) < 1e-13);

        let (r, norm) = residual(&op, &x, &b).unwrap();
        let expected_r: Vec<f64> = b.values().iter().zip(&expected).map(|(p, q)| p - q).collect();
        assert!(rel_diff(r.values(), &expected_r) < 1e-13);
        let oracle_norm = expected_r.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - oracle_norm).abs() <= 1e-13 * oracle_norm);
    }
}

#[test]
fn zero_state_gives_constant_part() {
    let field = common::small_brick_field([8, 8, 8]);
    let op = assemble(&field, &BoundarySpec::default(), 2.0).unwrap();
    let zero = StateVector::zeros(*field.grid(), 0.0);
    assert_eq!(apply(&op, &zero).unwrap().values(), op.constant());
    let b = StateVector::from_values(*field.grid(), vec![0.5; 512], 0.0).unwrap();
    let (r, _) = residual(&op, &zero, &b).unwrap();
    for ((ri, bi), ci) in r.values().iter().zip(b.values()).zip(op.constant()) {
        assert_eq!(*ri, bi - ci);
    }
}

#[test]
fn exact_solution_has_tiny_residual() {
    let field = common::small_brick_field([8, 8, 8]);
    let op = assemble(&field, &BoundarySpec::default(), 5.0).unwrap();
    let b = StateVector::from_values(*field.grid(), vec![0.3; 512], 0.0).unwrap();
    let x = coarse_solve(&op, &b).unwrap();
    let (_, norm) = residual(&op, &x, &b).unwrap();
    assert!(norm <= 1e-12 * b.norm());
}

#[test]
fn desk_operator_is_an_m_matrix() {
    let grid = Grid3D::covering([42, 42, 42], [42.0, 42.0, 21.0]).unwrap();
    let field = build_brick_mortar(&BrickMortarSpec::default(), &grid).unwrap();
    let op = assemble(&field, &BoundarySpec::default(), 9.2).unwrap();
    for c in 0..grid.len() {
        let row = op.row(c);
        assert!(row[0] > 0.0);
        let off: f64 = row[1..].iter().map(|w| {
            assert!(*w <= 0.0);
            -w
        }).sum();
        assert!(row[0] > off, "row {c} not strictly dominant");
    }
}

#[test]
fn three_cell_column_center_row() {
    let g = Grid3D::new([2, 2, 3], [1.0; 3]).unwrap();
    let field = parareal_skin::grid::CoefficientField::uniform(g, 1.0).unwrap();
    let op = assemble(&field, &BoundarySpec::dirichlet(0.0, 0.0), 1.0).unwrap();
    // middle cell of the column: lateral faces couple to its twins with weight 1
    let row = op.row(g.index(0, 0, 1));
    assert_eq!(row[5], -1.0);
    assert_eq!(row[6], -1.0);
    // without the two lateral couplings: 1 + 1 + 1 = 3
    assert_eq!(row[0] + row[2] + row[4], 3.0);
}

#[test]
fn neumann_constants_are_fixed_points() {
    let field = common::small_brick_field([8, 8, 8]);
    let op = assemble(&field, &BoundarySpec::all_neumann(), 3.0).unwrap();
    let x = StateVector::from_values(*field.grid(), vec![0.7; 512], 0.0).unwrap();
    let y = apply(&op, &x).unwrap();
    for v in y.values() {
        assert!((v - 0.7).abs() < 1e-13);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn face_coefficient_is_symmetric_and_bounded(a in 1e-6f64..1e3, b in 1e-6f64..1e3) {
        let f = face_coefficient(a, b).unwrap();
        prop_assert_eq!(f, face_coefficient(b, a).unwrap());
        prop_assert!(f >= a.min(b) * (1.0 - 1e-15) && f <= a.max(b) * (1.0 + 1e-15));
        prop_assert!((f - 2.0 * a * b / (a + b)).abs() <= 1e-15 * f);
    }

    #[test]
    fn affine_linearity(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_field(&mut rng, [3, 4, 5]);
        let op = assemble(&field, &boundary(seed), 0.8).unwrap();
        let g = *field.grid();
        let x = StateVector::from_values(g, random_values(&mut rng, g.len()), 0.0).unwrap();
        let y = StateVector::from_values(g, random_values(&mut rng, g.len()), 0.0).unwrap();
        let sum: Vec<f64> = x.values().iter().zip(y.values()).map(|(a, b)| a + b).collect();
        let lhs = apply(&op, &StateVector::from_values(g, sum, 0.0).unwrap()).unwrap();
        let ax = apply(&op, &x).unwrap();
        let ay = apply(&op, &y).unwrap();
        for c in 0..g.len() {
            let rhs = ax.values()[c] + ay.values()[c] - op.constant()[c];
            prop_assert!((lhs.values()[c] - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn couplings_are_symmetric_and_conservative(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_field(&mut rng, [4, 3, 5]);
        let dt = 1.3;
        let op = assemble(&field, &BoundarySpec::default(), dt).unwrap();
        let g = *field.grid();
        let [nx, ny, _] = g.dims();
        let offsets = [0isize, -1, 1, -(nx as isize), nx as isize, -((nx * ny) as isize), (nx * ny) as isize];
        let x = random_values(&mut rng, g.len());
        // Net flux out of every cell from its stencil; interior faces must cancel.
        let mut net_interior = 0.0;
        let mut scale = 0.0;
        for c in 0..g.len() {
            let row = op.row(c);
            for (slot, off) in offsets.iter().enumerate().skip(1) {
                if row[slot] != 0.0 {
                    let o = (c as isize + off) as usize;
                    let back = op.row(o);
                    // the reverse slot is the neighbouring pair entry
                    let rev = if slot % 2 == 1 { slot + 1 } else { slot - 1 };
                    prop_assert_eq!(row[slot], back[rev]);
                    // flux from c to o computed on both sides is equal and opposite
                    let f_c = -row[slot] * (x[c] - x[o]);
                    let f_o = -back[rev] * (x[o] - x[c]);
                    prop_assert!((f_c + f_o).abs() <= 1e-14 * (f_c.abs() + 1.0));
                    net_interior += f_c;
                    scale += f_c.abs();
                }
            }
        }
        prop_assert!(net_interior.abs() <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn implicit_step_keeps_values_in_unit_interval(seed in 0u64..1000, dt in 1e-3f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_field(&mut rng, [4, 4, 4]);
        let bc = BoundarySpec::dirichlet(rand::Rng::gen_range(&mut rng, 0.0..1.0), rand::Rng::gen_range(&mut rng, 0.0..1.0));
        let op = assemble(&field, &bc, dt).unwrap();
        let old: Vec<f64> = (0..64).map(|_| rand::Rng::gen_range(&mut rng, 0.0..1.0)).collect();
        let b = StateVector::from_values(*field.grid(), old, 0.0).unwrap();
        let x = coarse_solve(&op, &b).unwrap();
        for v in x.values() {
            prop_assert!(*v >= -1e-12 && *v <= 1.0 + 1e-12, "{}", v);
        }
    }
}
