//! Helpers shared by the integration tests: small problems and dense oracles.
#![allow(dead_code)]

use parareal_skin::discretization::{BoundarySpec, FaceCondition};
use parareal_skin::grid::{build_brick_mortar, BrickMortarSpec, CoefficientField, Grid3D, Phase};
use rand::Rng;

/// Three staggered 6×6×1 bricks in an 8×8×7 box.
pub fn small_spec() -> BrickMortarSpec {
    BrickMortarSpec {
        layers: 3,
        brick_extent: [6.0, 6.0, 1.0],
        ..BrickMortarSpec::default()
    }
}

pub fn small_brick_field(dims: [usize; 3]) -> CoefficientField {
    let grid = Grid3D::covering(dims, [8.0, 8.0, 7.0]).unwrap();
    build_brick_mortar(&small_spec(), &grid).unwrap()
}

pub fn random_field<R: Rng>(rng: &mut R, dims: [usize; 3]) -> CoefficientField {
    let grid = Grid3D::new(dims, [rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)]).unwrap();
    let phase = (0..grid.len())
        .map(|_| if rng.gen_bool(0.4) { Phase::Corneocyte } else { Phase::Lipid })
        .collect();
    CoefficientField::from_phases(grid, phase, rng.gen_range(1e-3..1e-1), rng.gen_range(0.5..2.0)).unwrap()
}

pub fn random_values<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Dense `(I − dt·L)` and Dirichlet constant, built face by face from the
/// two-point flux `D_f (c_j − c_i) / h²` with harmonic face means and ghost
/// cells at distance `h/2` on Dirichlet faces.
pub fn dense_operator(field: &CoefficientField, bc: &BoundarySpec, dt: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let g = field.grid();
    let d = field.values();
    let n = g.len();
    let [nx, ny, nz] = g.dims();
    let h = g.spacing();
    let mut a = vec![vec![0.0; n]; n];
    let mut constant = vec![0.0; n];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let c = g.index(i, j, k);
                a[c][c] += 1.0;
                let ijk = [i as isize, j as isize, k as isize];
                for axis in 0..3 {
                    for step in [-1isize, 1] {
                        let mut nb = ijk;
                        nb[axis] += step;
                        let inside = (0..3).all(|ax| nb[ax] >= 0 && (nb[ax] as usize) < g.dims()[ax]);
                        let s = dt / (h[axis] * h[axis]);
                        if inside {
                            let o = g.index(nb[0] as usize, nb[1] as usize, nb[2] as usize);
                            let df = 1.0 / (0.5 / d[c] + 0.5 / d[o]);
                            a[c][c] += s * df;
                            a[c][o] -= s * df;
                        } else if axis == 2 {
                            let cond = if step < 0 { bc.bottom } else { bc.top };
                            if let FaceCondition::Dirichlet(gv) = cond {
                                let w = s * 2.0 * d[c];
                                a[c][c] += w;
                                constant[c] -= w * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    (a, constant)
}

pub fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &bi)| {
        let mut r = r.clone();
        r.push(bi);
        r
    }).collect();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, p);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}
