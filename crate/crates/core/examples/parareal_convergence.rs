//! Parareal on the 16³ problem from `configs/small.toml`: defect against the
//! serial fine solution at T after every iteration, for both backends.
//!
//!     cargo run --release --example parareal_convergence

use std::path::Path;

use parareal_skin::experiment::ExperimentConfig;
use parareal_skin::parareal::{run_parareal, run_serial, Backend};
use parareal_skin::propagator::Propagator;

fn main() -> parareal_skin::Result<()> {
    let cfg = ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/small.toml"))?;
    let t_end = cfg.problem.t_end()?;
    let problem = cfg.problem.problem(cfg.problem.dims, cfg.problem.coefficients)?;
    let coarse = Propagator::for_problem(cfg.parareal.coarse_spec(t_end), &problem)?;
    let fine = Propagator::for_problem(cfg.parareal.fine_spec(t_end), &problem)?;

    for backend in [Backend::Sequential, Backend::Concurrent] {
        let pcfg = cfg.parareal.config(8, t_end, backend);
        let serial = run_serial(&pcfg, &fine, &problem.initial)?;
        let trace = run_parareal(&pcfg, &coarse, &fine, &problem.initial)?;
        let defects = trace.defects(&serial.states)?;
        println!("{backend:?}, N_t = 8, T = {t_end:.3}, wall {:.2} s", trace.wall_seconds);
        for (k, row) in defects.iter().enumerate() {
            println!("  k = {k}: d at T = {:.3e}", row[8]);
        }
        println!("  retired at {:?}", trace.retired_at);
    }
    Ok(())
}
