//! Brute-force enumeration against variable elimination, and elimination on a
//! 10x10 grid where enumeration is out of reach.
//!
//! cargo run --release --example exact_oracles

use std::time::Instant;

use sbp::exact::{eliminate_exact, enumerate_exact, grid_sweep_order, induced_width, EliminationOrder};
use sbp::graph::{build_complete, build_grid, sample_model, DistSpec};

fn main() -> sbp::Result<()> {
    let small = sample_model(&build_complete(12)?, DistSpec::Uniform(-0.5, 0.5), DistSpec::Uniform(-1.0, 1.0), 4)?;
    let a = enumerate_exact(&small)?;
    let b = eliminate_exact(&small, &EliminationOrder::Auto)?;
    println!("complete graph, 12 nodes: ln Z = {:.12} (enumeration) vs {:.12} (elimination)", a.log_z, b.log_z);

    let grid = build_grid(10, 10)?;
    println!("10x10 grid: column sweep has induced width {}", induced_width(&grid, &grid_sweep_order(10, 10)));
    let model = sample_model(&grid, DistSpec::Uniform(-0.5, 0.5), DistSpec::Uniform(0.0, 2.5), 9)?;
    let t = Instant::now();
    let r = eliminate_exact(&model, &EliminationOrder::Auto)?;
    println!(
        "ln Z = {:.6}, P(x_0 = +1) = {:.6}, {} pair tables in {:.2?}",
        r.log_z,
        r.singles[0][1],
        r.pairs.len(),
        t.elapsed()
    );
    Ok(())
}
