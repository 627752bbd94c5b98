//! With no fields and only positive couplings, the self-guided run stays on the
//! symmetric fixed point and returns the exact marginals (all 0.5), while plain
//! BP from random messages usually settles on a magnetized fixed point.
//!
//! cargo run --release --example zero_field_exactness

use sbp::bp::{extract_pseudomarginals, init_messages, run_bp, BpParams, InitMode};
use sbp::exact::enumerate_exact;
use sbp::graph::{build_grid, sample_model, DistSpec};
use sbp::harness::mse;
use sbp::homotopy::{run_sbp, SbpConfig};

fn main() -> sbp::Result<()> {
    let graph = build_grid(4, 4)?;
    for seed in 0..5 {
        let model = sample_model(&graph, DistSpec::Constant(0.0), DistSpec::Uniform(0.5, 2.0), seed)?;
        let exact = enumerate_exact(&model)?.prob_plus();
        let (p, trace) = run_sbp(&model, &SbpConfig::default())?;
        let init = init_messages(&graph, InitMode::Random(seed));
        let bp = run_bp(&model, &init, &BpParams::default(), seed)?;
        let bp_mse = mse(&exact, &extract_pseudomarginals(&model, &bp.messages)?.prob_plus())?;
        println!(
            "model {seed}: sbp mse {:.1e} in {} sweeps | bp mse {bp_mse:.4} (converged: {})",
            mse(&exact, &p.prob_plus())?,
            trace.total_sweeps,
            bp.converged
        );
    }
    Ok(())
}
