//! Runs the weak-scaling ladder from `configs/weak_scaling.toml` and prints
//! one line per rung.
//!
//!     cargo run --release --example weak_scaling

use std::path::Path;

use parareal_skin::experiment::{weak_scaling, ExperimentConfig, RunOptions};

fn main() -> parareal_skin::Result<()> {
    let cfg = ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/weak_scaling.toml"))?;
    for row in weak_scaling(&cfg, &RunOptions::default())? {
        match row.result {
            Some(r) => println!(
                "rung {} {:?} N_t={}: e_fine {:.2e}  d1 {:.2e}  runtime {:.3} s  factor {}",
                row.rung,
                row.dims,
                row.n_sub,
                r.e_fine,
                r.defect_1,
                r.runtime,
                r.factor.map_or("-".to_string(), |f| format!("{f:.1}"))
            ),
            None => println!("rung {} skipped", row.rung),
        }
    }
    Ok(())
}
