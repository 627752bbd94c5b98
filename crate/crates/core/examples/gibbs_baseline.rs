//! Heat-bath Gibbs estimates against exact marginals for growing budgets.
//!
//! cargo run --release --example gibbs_baseline

use sbp::exact::enumerate_exact;
use sbp::gibbs::{default_burn_in, run_gibbs};
use sbp::graph::{build_complete, sample_model, DistSpec};
use sbp::harness::mse;

fn main() -> sbp::Result<()> {
    let model = sample_model(&build_complete(10)?, DistSpec::Constant(0.1), DistSpec::RademacherScaled(1.0), 12)?;
    let exact = enumerate_exact(&model)?.prob_plus();
    for updates in [1_000, 10_000, 100_000, 1_000_000] {
        let est = run_gibbs(&model, updates, default_burn_in(updates), 3)?;
        println!("{updates:>9} updates: mse {:.5}", mse(&exact, &est.singles)?);
    }
    Ok(())
}
