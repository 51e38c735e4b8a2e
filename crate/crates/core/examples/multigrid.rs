//! One implicit-Euler solve on the desk field, with plain V-cycles and with
//! V-cycle preconditioned CG, for a short and a long time step.
//!
//!     cargo run --release --example multigrid

use parareal_skin::discretization::{BoundarySpec, StateVector};
use parareal_skin::grid::{build_brick_mortar, BrickMortarSpec, Grid3D};
use parareal_skin::multigrid::{solve, MgConfig, MgHierarchy};

fn main() -> parareal_skin::Result<()> {
    let grid = Grid3D::covering([42, 42, 42], [42.0, 42.0, 21.0])?;
    let field = build_brick_mortar(&BrickMortarSpec::default(), &grid)?;
    let bc = BoundarySpec::default();
    let b = StateVector::zeros(grid, 0.0);

    for dt in [0.5, 9.2] {
        for krylov in [false, true] {
            let cfg = MgConfig { krylov, max_cycles: 200, ..MgConfig::default() };
            let h = MgHierarchy::build(&field, &bc, dt, &cfg)?;
            let s = solve(&h, &b, &b, &cfg)?;
            let history: Vec<String> = s.residual_history.iter().map(|r| format!("{r:.1e}")).collect();
            println!(
                "dt {dt:>4}  {:<9} levels {}  cycles {:>3}  rel. residual {:.1e}",
                if krylov { "pcg" } else { "v-cycle" },
                h.depth(),
                s.cycles,
                s.relative_residual
            );
            println!("    {}", history.join(" "));
        }
    }
    Ok(())
}
