//! Text format for a single Ising model.
//!
//! ```text
//! ising v1 <num_nodes>
//! n <i> <theta_i>        one line per node
//! e <i> <j> <J_ij>       one line per edge
//! ```
//!
//! Indices are 0-based. Reals are written with 17 significant digits so a
//! write/read cycle reproduces every value bit for bit.

use std::fs;
use std::path::Path;

use crate::graph::{Graph, IsingModel};
use crate::{Error, Result};

/// Formats a float with 17 significant digits (`1.2345678901234567e-1`).
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn write_model_string(model: &IsingModel) -> String {
    let g = model.graph();
    let mut out = format!("ising v1 {}\n", g.num_nodes());
    for (i, &t) in model.fields().iter().enumerate() {
        out.push_str(&format!("n {i} {}\n", fmt_f64(t)));
    }
    for (&(i, j), &c) in g.edges().iter().zip(model.couplings()) {
        out.push_str(&format!("e {i} {j} {}\n", fmt_f64(c)));
    }
    out
}

pub fn write_model(model: &IsingModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_model_string(model))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<IsingModel> {
    parse_model(&fs::read_to_string(path)?)
}

pub fn parse_model(text: &str) -> Result<IsingModel> {
    let err = |line: usize, msg: String| Error::Parse { line, msg };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty input".into()))?;
    let num_nodes = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["ising", "v1", n] => n
            .parse::<usize>()
            .map_err(|_| err(hline, format!("bad node count {n:?}")))?,
        _ => return Err(err(hline, format!("expected `ising v1 <num_nodes>`, got {header:?}"))),
    };

    let mut fields = vec![None; num_nodes];
    let mut edges = Vec::new();
    let mut couplings = Vec::new();
    for (ln, line) in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        let idx = |t: &str| {
            t.parse::<usize>()
                .map_err(|_| err(ln, format!("bad index {t:?}")))
        };
        let real = |t: &str| t.parse::<f64>().map_err(|_| err(ln, format!("bad value {t:?}")));
        match tok.as_slice() {
            ["n", i, v] => {
                let i = idx(i)?;
                let slot = fields
                    .get_mut(i)
                    .ok_or_else(|| err(ln, format!("node {i} out of range")))?;
                if slot.replace(real(v)?).is_some() {
                    return Err(err(ln, format!("node {i} given twice")));
                }
            }
            ["e", i, j, v] => {
                edges.push((idx(i)?, idx(j)?));
                couplings.push(real(v)?);
            }
            _ => return Err(err(ln, format!("unrecognized line {line:?}"))),
        }
    }
    let fields = fields
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.ok_or_else(|| err(0, format!("missing field for node {i}"))))
        .collect::<Result<Vec<_>>>()?;
    let graph = Graph::from_edges(num_nodes, &edges)?;
    // from_edges keeps the input order, so couplings line up with edge indices.
    IsingModel::new(graph, couplings, fields)
}
