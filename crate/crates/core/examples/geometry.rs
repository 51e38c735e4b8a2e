//! Builds the desk brick-and-mortar field, reports its make-up and lag time,
//! and writes it as a `.field` file.
//!
//!     cargo run --example geometry -- [out.field]

use parareal_skin::grid::{build_brick_mortar, effective_coefficient_1d, lag_time, BrickMortarSpec, Grid3D};
use parareal_skin::io::write_coefficients;

fn main() -> parareal_skin::Result<()> {
    let spec = BrickMortarSpec::default();
    let extent = [42.0, 42.0, spec.required_height()];
    let grid = Grid3D::covering([42, 42, 42], extent)?;
    let field = build_brick_mortar(&spec, &grid)?;

    let d_eff = effective_coefficient_1d(&field);
    println!("grid {:?}, spacing {:?}", grid.dims(), grid.spacing());
    println!("corneocyte fraction {:.4}", field.corneocyte_fraction());
    println!("D_eff {d_eff:.5}, lag time {:.2}", lag_time(extent[2], d_eff)?);

    // one x-z slice through the middle, '#' for corneocyte
    let j = grid.ny() / 2;
    for k in (0..grid.nz()).rev() {
        let row: String = (0..grid.nx())
            .map(|i| if field.values()[grid.index(i, j, k)] < 0.5 { '#' } else { '.' })
            .collect();
        println!("{row}");
    }

    if let Some(path) = std::env::args().nth(1) {
        write_coefficients(path.as_ref(), &field)?;
        println!("wrote {path}");
    }
    Ok(())
}
