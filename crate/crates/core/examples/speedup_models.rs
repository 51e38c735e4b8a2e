//! Speedup predictions: the constant-cost bound, the imbalanced profile of
//! the load-imbalance scenario, and weak-scaling efficiency.
//!
//!     cargo run --example speedup_models

use parareal_skin::perf_model::{imbalance_scenario, speedup_general, speedup_simple, weak_scaling_efficiency};

fn main() -> parareal_skin::Result<()> {
    println!("{:>4} {:>8} {:>8} {:>8} {:>8}", "N_t", "bound", "b=0", "b=0.5", "b=0.75");
    for n in [4, 8, 16, 32] {
        let bound = speedup_simple(1, n, 0.1, 1.0)?;
        let curves: Vec<f64> = [0.0, 0.5, 0.75]
            .iter()
            .map(|&b| speedup_general(&imbalance_scenario(n, b)?, 1).map(|s| s.value))
            .collect::<parareal_skin::Result<_>>()?;
        println!("{n:>4} {bound:>8.3} {:>8.3} {:>8.3} {:>8.3}", curves[0], curves[1], curves[2]);
    }

    println!();
    println!("weak-scaling efficiency, one iteration");
    for sigma in [0.01, 0.1, 1.0] {
        let row: Vec<String> = [2, 4, 8, 16, 32]
            .iter()
            .map(|&n| weak_scaling_efficiency(n, 1, sigma).map(|e| format!("{e:.3}")))
            .collect::<parareal_skin::Result<_>>()?;
        println!("  sigma {sigma:<5} {}", row.join(" "));
    }
    Ok(())
}
