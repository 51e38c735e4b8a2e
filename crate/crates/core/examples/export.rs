//! Serial fine solution snapshots of a small problem, written as `.field`
//! files and read back.
//!
//!     cargo run --release --example export -- [out_dir]

use std::path::PathBuf;

use parareal_skin::experiment::{export_solution, ExperimentConfig};
use parareal_skin::io::{read_field, write_state};

const CONFIG: &str = r#"
[problem]
dims = [16, 16, 16]
extent = [8.0, 8.0, 7.0]

[problem.geometry]
layers = 3
brick_extent = [6.0, 6.0, 1.0]

[parareal]
n_sub = [4]
coarse_steps = 32
fine_steps = 256
"#;

fn main() -> parareal_skin::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/example_export".into()));
    std::fs::create_dir_all(&dir)?;
    let cfg = ExperimentConfig::from_toml_str(CONFIG)?;
    let t_end = cfg.problem.t_end()?;
    let times: Vec<f64> = (0..=4).map(|i| i as f64 * t_end / 4.0).collect();
    for (i, snap) in export_solution(&cfg, &times)?.iter().enumerate() {
        let path = dir.join(format!("snapshot_{i:02}.field"));
        write_state(&path, &snap.state)?;
        let back = read_field(&path)?.into_state()?;
        println!(
            "t = {:>7.3}  mean {:.5}  round trip exact: {}  {}",
            snap.time,
            snap.state.mean(),
            back.values() == snap.state.values(),
            path.display()
        );
    }
    Ok(())
}
