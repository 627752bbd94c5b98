//! Writes a sampled model in the text format, reads it back and runs inference on it.
//!
//! cargo run --release --example model_files

use sbp::graph::{build_random, sample_model, DistSpec};
use sbp::harness::{infer, Method, MethodParams};
use sbp::model_io::{parse_model, write_model_string};

fn main() -> sbp::Result<()> {
    let graph = build_random(6, 2.0, 5)?;
    let model = sample_model(&graph, DistSpec::Uniform(-0.5, 0.5), DistSpec::Uniform(-1.0, 1.0), 5)?;
    let text = write_model_string(&model);
    print!("{text}");
    let back = parse_model(&text)?;
    assert_eq!(back, model);

    let result = infer(&back, Method::Sbp, &MethodParams::default(), 0)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}
