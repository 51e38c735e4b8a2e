//! Steps a 16³ brick-mortar problem with implicit Euler and prints the mean
//! concentration and multigrid cost of every step.
//!
//!     cargo run --release --example propagator

use parareal_skin::discretization::{BoundarySpec, StateVector};
use parareal_skin::grid::{build_brick_mortar, BrickMortarSpec, Grid3D};
use parareal_skin::propagator::{Label, Propagator, PropagatorSpec};

fn main() -> parareal_skin::Result<()> {
    let spec = BrickMortarSpec { layers: 3, brick_extent: [6.0, 6.0, 1.0], ..BrickMortarSpec::default() };
    let grid = Grid3D::covering([16, 16, 16], [8.0, 8.0, 7.0])?;
    let field = build_brick_mortar(&spec, &grid)?;
    let p = Propagator::new(PropagatorSpec::new(1.0, Label::Fine), &field, &BoundarySpec::default())?;

    let (states, record) = p.trajectory(&StateVector::zeros(grid, 0.0), 20.0)?;
    println!("{:>5} {:>10} {:>7} {:>10}", "t", "mean", "cycles", "seconds");
    for (s, cost) in states[1..].iter().zip(&record.steps) {
        println!("{:>5} {:>10.6} {:>7} {:>10.2e}", s.time(), s.mean(), cost.mg_cycles, cost.seconds);
    }
    Ok(())
}
