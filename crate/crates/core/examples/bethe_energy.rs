//! Bethe free energy at BP fixed points: exact on a tree, an upper bound on
//! -ln Z for an attractive loopy model, and the best-of-restarts reference.
//!
//! cargo run --release --example bethe_energy

use sbp::bethe::{approx_global_bethe_min, bethe_free_energy, dFB_dzeta};
use sbp::bp::{extract_pseudomarginals, run_bp, BpParams, MessageSet};
use sbp::exact::enumerate_exact;
use sbp::graph::{build_grid, build_random_tree, sample_model, DistSpec, IsingModel};
use sbp::homotopy::{run_sbp, SbpConfig};

fn bp_free_energy(model: &IsingModel) -> sbp::Result<f64> {
    let out = run_bp(model, &MessageSet::uniform(model.graph()), &BpParams::default(), 0)?;
    let p = extract_pseudomarginals(model, &out.messages)?;
    Ok(bethe_free_energy(model, &p)?.free_energy)
}

fn main() -> sbp::Result<()> {
    let tree = sample_model(&build_random_tree(10, 1)?, DistSpec::Uniform(-1.0, 1.0), DistSpec::Uniform(-2.0, 2.0), 1)?;
    println!("tree: F_B = {:.10}, -ln Z = {:.10}", bp_free_energy(&tree)?, -enumerate_exact(&tree)?.log_z);

    let grid = build_grid(4, 4)?;
    let attractive = sample_model(&grid, DistSpec::Uniform(-0.5, 0.5), DistSpec::Uniform(0.0, 1.0), 2)?;
    println!(
        "attractive grid: F_B = {:.6} >= -ln Z = {:.6}",
        bp_free_energy(&attractive)?,
        -enumerate_exact(&attractive)?.log_z
    );

    let general = sample_model(&grid, DistSpec::Constant(0.4), DistSpec::RademacherScaled(1.0), 5)?;
    let reference = approx_global_bethe_min(&general, 20, 7)?;
    let (p, _) = run_sbp(&general, &SbpConfig::default())?;
    let v = bethe_free_energy(&general, &p)?;
    println!(
        "frustrated grid: SBP F_B = {:.6} (E {:.4}, S {:.4}), reference F_B = {:.6} ({:?}, {} converged restarts)",
        v.free_energy, v.energy, v.entropy, reference.value.free_energy, reference.source, reference.converged_restarts
    );
    println!("dF_B/dzeta at the SBP beliefs: {:.6}", dFB_dzeta(&general, &p));
    Ok(())
}
