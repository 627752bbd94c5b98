//! A small batch comparing every method on 5x5 grids with J in {-1, 1} and
//! constant fields 0, 0.1 and 0.4. Writes CSV/JSON into `target/bench-example`.
//!
//! cargo run --release --example benchmark

use sbp::graph::DistSpec;
use sbp::harness::{run_experiment, write_outputs, ExperimentConfig, GraphSpec, Method};

fn main() -> sbp::Result<()> {
    let mut cfg = ExperimentConfig::new(
        GraphSpec::Grid { rows: 5, cols: 5 },
        DistSpec::Constant(0.0),
        DistSpec::RademacherScaled(1.0),
    );
    cfg.thetas = Some(vec![0.0, 0.1, 0.4]);
    cfg.models_per_setting = 10;
    cfg.inits_per_model = 20;
    cfg.methods = Method::ALL.to_vec();
    cfg.bethe_min.restarts = 10;
    cfg.master_seed = 2;

    let report = run_experiment(&cfg)?;
    for p in write_outputs(&report, "target/bench-example")? {
        eprintln!("wrote {}", p.display());
    }
    print!("{}", report.summary_csv());
    Ok(())
}
