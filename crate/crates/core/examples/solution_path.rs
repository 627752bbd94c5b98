//! Scores every fixed point along one self-guided run and prints the trace as CSV.
//!
//! cargo run --release --example solution_path

use sbp::graph::{build_grid, sample_model, DistSpec};
use sbp::harness::{trace_csv, trace_experiment};
use sbp::homotopy::SbpConfig;

fn main() -> sbp::Result<()> {
    let model = sample_model(&build_grid(5, 5)?, DistSpec::Constant(0.4), DistSpec::RademacherScaled(1.0), 21)?;
    let rows = trace_experiment(&model, &SbpConfig::default(), 20, 0)?;
    print!("{}", trace_csv(&rows));

    let fixed = SbpConfig {
        adaptive: false,
        step_init: 0.05,
        max_models: 21,
        ..SbpConfig::default()
    };
    let rows = trace_experiment(&model, &fixed, 0, 0)?;
    eprintln!("uniform steps of 0.05: {} fixed points, last zeta {}", rows.len(), rows.last().map_or(0.0, |r| r.zeta));
    Ok(())
}
