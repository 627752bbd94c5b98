//! Marginals of a frustrated 5x5 grid from plain BP, self-guided BP and exact inference.
//!
//! cargo run --release --example quickstart

use sbp::bp::{extract_pseudomarginals, init_messages, run_bp, BpParams, InitMode};
use sbp::exact::{eliminate_exact, EliminationOrder};
use sbp::graph::{build_grid, sample_model, DistSpec};
use sbp::harness::mse;
use sbp::homotopy::{run_sbp, SbpConfig};

fn main() -> sbp::Result<()> {
    let graph = build_grid(5, 5)?;
    let model = sample_model(&graph, DistSpec::Constant(0.4), DistSpec::RademacherScaled(1.0), 3)?;
    let exact = eliminate_exact(&model, &EliminationOrder::Auto)?.prob_plus();

    let (beliefs, trace) = run_sbp(&model, &SbpConfig::default())?;
    println!(
        "sbp: mse {:.4}, {} sweeps, zeta path {:?}, reached 1: {}",
        mse(&exact, &beliefs.prob_plus())?,
        trace.total_sweeps,
        trace.fixed_point_zetas(),
        trace.reached_one
    );

    let mut converged = 0;
    for seed in 0..20 {
        let init = init_messages(&graph, InitMode::Random(seed));
        let out = run_bp(&model, &init, &BpParams::default(), seed)?;
        if out.converged {
            converged += 1;
            let p = extract_pseudomarginals(&model, &out.messages)?;
            println!("bp init {seed:>2}: mse {:.4} after {} sweeps", mse(&exact, &p.prob_plus())?, out.sweeps_used);
        }
    }
    println!("bp converged from {converged}/20 random initializations");
    Ok(())
}
