//! Graphs, Ising models and their seeded generators.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{rng_for, stream};
use crate::{Error, Result};

/// Undirected simple graph. Edges are stored once with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    /// Per node: `(neighbor, edge index)`.
    adjacency: Vec<Vec<(usize, usize)>>,
    grid: Option<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from an edge list, normalizing each pair to `i < j`.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut adjacency = vec![Vec::new(); num_nodes];
        let mut normalized = Vec::with_capacity(edges.len());
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) out of range for {num_nodes} nodes"
                )));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop on node {a}")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if !seen.insert((i, j)) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
            let e = normalized.len();
            normalized.push((i, j));
            adjacency[i].push((j, e));
            adjacency[j].push((i, e));
        }
        Ok(Self {
            num_nodes,
            edges: normalized,
            adjacency,
            grid: None,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    /// Neighbors of `i` together with the connecting edge index.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.num_nodes as f64
    }

    /// `(rows, cols)` when the graph was produced by [`build_grid`].
    pub fn grid_shape(&self) -> Option<(usize, usize)> {
        self.grid
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency
            .get(a)?
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, e)| e)
    }

    /// Connected component label per node, labels in order of first appearance.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.num_nodes];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..self.num_nodes {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &(w, _) in &self.adjacency[v] {
                    if label[w] == usize::MAX {
                        label[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }

    /// True when the graph has no cycles (a forest).
    pub fn is_forest(&self) -> bool {
        let components = self.components().into_iter().max().map_or(0, |m| m + 1);
        self.edges.len() + components == self.num_nodes
    }
}

/// 4-connected `rows x cols` lattice; node `(r, c)` has index `r * cols + c`.
pub fn build_grid(rows: usize, cols: usize) -> Result<Graph> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidGraph(format!("grid dimensions must be positive, got {rows}x{cols}")));
    }
    let mut edges = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1));
            }
            if r + 1 < rows {
                edges.push((v, v + cols));
            }
        }
    }
    let mut g = Graph::from_edges(rows * cols, &edges)?;
    g.grid = Some((rows, cols));
    Ok(g)
}

pub fn build_complete(n: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidGraph("complete graph needs at least one node".into()));
    }
    let edges: Vec<_> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    Graph::from_edges(n, &edges)
}

/// Independent-edge random graph with inclusion probability `avg_degree / (n - 1)`.
///
/// Disconnected draws are kept; see [`build_random_with`] to resample until connected.
pub fn build_random(n: usize, avg_degree: f64, seed: u64) -> Result<Graph> {
    build_random_with(n, avg_degree, seed, false)
}

const MAX_CONNECTIVITY_ATTEMPTS: u64 = 10_000;

pub fn build_random_with(n: usize, avg_degree: f64, seed: u64, require_connected: bool) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidGraph(format!("random graph needs at least two nodes, got {n}")));
    }
    if !(avg_degree > 0.0 && avg_degree < n as f64) {
        return Err(Error::InvalidGraph(format!(
            "average degree must lie in (0, {n}), got {avg_degree}"
        )));
    }
    let p = (avg_degree / (n - 1) as f64).min(1.0);
    for attempt in 0..MAX_CONNECTIVITY_ATTEMPTS {
        let attempt_seed = if attempt == 0 {
            seed
        } else {
            crate::rng::derive_seed(seed, stream::GRAPH, attempt)
        };
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let u: f64 = rng_for(attempt_seed, stream::EDGE, (i * n + j) as u64).gen();
                if u < p {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::from_edges(n, &edges)?;
        if !require_connected || g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::InvalidGraph(format!(
        "no connected graph after {MAX_CONNECTIVITY_ATTEMPTS} draws (n = {n}, avg degree {avg_degree})"
    )))
}

/// Random recursive tree over a shuffled labelling: the `k`-th node attaches to one of
/// the `k` nodes placed before it.
pub fn build_random_tree(n: usize, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidGraph("tree needs at least one node".into()));
    }
    let mut rng = rng_for(seed, stream::GRAPH, 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let edges: Vec<_> = (1..n)
        .map(|k| (order[rng.gen_range(0..k)], order[k]))
        .collect();
    Graph::from_edges(n, &edges)
}

/// Distribution of a field or coupling draw.
///
/// Serializes as its textual form, e.g. `"uniform:-0.5:0.5"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DistSpec {
    Constant(f64),
    /// Uniform on `[lo, hi]`.
    Uniform(f64, f64),
    /// `+c` or `-c` with equal probability.
    RademacherScaled(f64),
}

impl DistSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = match *self {
            DistSpec::Constant(c) | DistSpec::RademacherScaled(c) => c.is_finite(),
            DistSpec::Uniform(a, b) => {
                if a > b {
                    return Err(Error::InvalidSpec(format!("uniform({a}, {b}) has lo > hi")));
                }
                a.is_finite() && b.is_finite()
            }
        };
        if finite {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("{self} has non-finite parameters")))
        }
    }

    /// The same distribution with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> DistSpec {
        match *self {
            DistSpec::Constant(c) => DistSpec::Constant(c * factor),
            DistSpec::Uniform(a, b) => {
                let (lo, hi) = (a * factor, b * factor);
                DistSpec::Uniform(lo.min(hi), lo.max(hi))
            }
            DistSpec::RademacherScaled(c) => DistSpec::RademacherScaled(c * factor),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DistSpec::Constant(c) => c,
            DistSpec::Uniform(a, b) => {
                if a == b {
                    a
                } else {
                    a + (b - a) * rng.gen::<f64>()
                }
            }
            DistSpec::RademacherScaled(c) => {
                if rng.gen::<bool>() {
                    c
                } else {
                    -c
                }
            }
        }
    }
}

impl fmt::Display for DistSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistSpec::Constant(c) => write!(f, "constant:{c}"),
            DistSpec::Uniform(a, b) => write!(f, "uniform:{a}:{b}"),
            DistSpec::RademacherScaled(c) => write!(f, "rademacher:{c}"),
        }
    }
}

impl From<DistSpec> for String {
    fn from(spec: DistSpec) -> String {
        spec.to_string()
    }
}

impl TryFrom<String> for DistSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Parses `constant:C`, `uniform:A:B` or `rademacher:C`.
impl FromStr for DistSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidSpec(format!("bad number {t:?} in {s:?}")))
        };
        let spec = match parts.as_slice() {
            ["constant", c] => DistSpec::Constant(num(c)?),
            ["uniform", a, b] => DistSpec::Uniform(num(a)?, num(b)?),
            ["rademacher", c] => DistSpec::RademacherScaled(num(c)?),
            _ => return Err(Error::InvalidSpec(format!("unrecognized spec {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Binary pairwise model `p(x) ∝ exp(Σ J_ij x_i x_j + Σ θ_i x_i)` over spins in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    graph: Arc<Graph>,
    couplings: Vec<f64>,
    fields: Vec<f64>,
}

impl IsingModel {
    pub fn new(graph: impl Into<Arc<Graph>>, couplings: Vec<f64>, fields: Vec<f64>) -> Result<Self> {
        let graph = graph.into();
        if couplings.len() != graph.num_edges() {
            return Err(Error::InvalidModel(format!(
                "{} couplings for {} edges",
                couplings.len(),
                graph.num_edges()
            )));
        }
        if fields.len() != graph.num_nodes() {
            return Err(Error::InvalidModel(format!(
                "{} fields for {} nodes",
                fields.len(),
                graph.num_nodes()
            )));
        }
        if couplings.iter().chain(&fields).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite coupling or field".into()));
        }
        Ok(Self {
            graph,
            couplings,
            fields,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn shared_graph(&self) -> Arc<Graph> {
        Arc::clone(&self.graph)
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// All couplings strictly positive.
    pub fn is_attractive(&self) -> bool {
        self.couplings.iter().all(|&j| j > 0.0)
    }

    /// `Σ J_ij x_i x_j + Σ θ_i x_i`, the log of [`joint_unnormalized`].
    pub fn log_weight(&self, config: &SpinConfiguration) -> Result<f64> {
        let x = config.states();
        if x.len() != self.num_nodes() {
            return Err(Error::InvalidArgument(format!(
                "configuration has {} spins, model has {} nodes",
                x.len(),
                self.num_nodes()
            )));
        }
        let pair: f64 = self
            .graph
            .edges()
            .iter()
            .zip(&self.couplings)
            .map(|(&(i, j), &c)| c * f64::from(x[i]) * f64::from(x[j]))
            .sum();
        let local: f64 = self
            .fields
            .iter()
            .zip(x)
            .map(|(&t, &s)| t * f64::from(s))
            .sum();
        Ok(pair + local)
    }
}

/// Draws one field per node and one coupling per edge, each from its own derived stream.
pub fn sample_model(graph: &Graph, field_spec: DistSpec, coupling_spec: DistSpec, seed: u64) -> Result<IsingModel> {
    field_spec.validate()?;
    coupling_spec.validate()?;
    let fields = (0..graph.num_nodes())
        .map(|i| field_spec.sample(&mut rng_for(seed, stream::NODE, i as u64)))
        .collect();
    let couplings = (0..graph.num_edges())
        .map(|e| coupling_spec.sample(&mut rng_for(seed, stream::EDGE, e as u64)))
        .collect();
    IsingModel::new(graph.clone(), couplings, fields)
}

/// Multiplies every coupling by `zeta`, i.e. raises each pairwise potential to the power `zeta`.
pub fn scale_model(model: &IsingModel, zeta: f64) -> Result<IsingModel> {
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::InvalidArgument(format!("scale factor {zeta} outside [0, 1]")));
    }
    Ok(IsingModel {
        graph: model.shared_graph(),
        couplings: model.couplings.iter().map(|&j| j * zeta).collect(),
        fields: model.fields.clone(),
    })
}

pub fn joint_unnormalized(model: &IsingModel, config: &SpinConfiguration) -> Result<f64> {
    model.log_weight(config).map(f64::exp)
}

/// One spin in {-1, +1} per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfiguration(Vec<i8>);

impl SpinConfiguration {
    pub fn new(states: Vec<i8>) -> Result<Self> {
        if let Some(bad) = states.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument(format!("spin value {bad} not in {{-1, +1}}")));
        }
        Ok(Self(states))
    }

    /// Configuration whose bit `k` of `bits` set means node `k` is +1.
    pub fn from_bits(n: usize, bits: u64) -> Self {
        Self((0..n).map(|k| if bits >> k & 1 == 1 { 1 } else { -1 }).collect())
    }

    pub fn states(&self) -> &[i8] {
        &self.0
    }

    pub fn flipped(&self) -> Self {
        Self(self.0.iter().map(|&s| -s).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_counts() {
        let g = build_grid(5, 5).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (25, 40));
        let g = build_grid(1, 1).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (1, 0));
        let g = build_grid(2, 3).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (6, 7));
        assert_eq!(g.grid_shape(), Some((2, 3)));
        assert!(build_grid(0, 3).is_err());
        assert!(build_grid(3, 0).is_err());
    }

    #[test]
    fn complete_counts() {
        assert_eq!(build_complete(10).unwrap().num_edges(), 45);
        assert_eq!(build_complete(1).unwrap().num_edges(), 0);
        assert_eq!(build_complete(4).unwrap().num_edges(), 6);
        assert!(build_complete(0).is_err());
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(Graph::from_edges(3, &[(0, 0)]).is_err());
        assert!(Graph::from_edges(3, &[(0, 1), (1, 0)]).is_err());
        assert!(Graph::from_edges(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn random_graph_determinism_and_expectation() {
        let a = build_random(10, 3.0, 7).unwrap();
        let b = build_random(10, 3.0, 7).unwrap();
        assert_eq!(a, b);
        // Expected edge count is n * d / 2 = 15.
        let mean: f64 = (0..400)
            .map(|s| build_random(10, 3.0, s).unwrap().num_edges() as f64)
            .sum::<f64>()
            / 400.0;
        assert!((mean - 15.0).abs() < 0.6, "mean edges {mean}");
        let differing = (0..20)
            .filter(|&s| build_random(10, 3.0, s).unwrap() != build_random(10, 3.0, s + 100).unwrap())
            .count();
        assert!(differing >= 18);
    }

    #[test]
    fn random_graph_edge_cases() {
        for s in 0..10 {
            assert_eq!(build_random(2, 1.0, s).unwrap().num_edges(), 1);
        }
        assert!(build_random(10, 10.0, 0).is_err());
        assert!(build_random(10, 0.0, 0).is_err());
        for s in 0..10 {
            assert!(build_random_with(10, 1.5, s, true).unwrap().is_connected());
        }
    }

    #[test]
    fn random_trees_are_trees() {
        for s in 0..20 {
            let t = build_random_tree(12, s).unwrap();
            assert_eq!(t.num_edges(), 11);
            assert!(t.is_connected());
            assert!(t.is_forest());
        }
    }

    #[test]
    fn sample_model_specs() {
        let g = build_grid(5, 5).unwrap();
        let m = sample_model(&g, DistSpec::Constant(0.4), DistSpec::RademacherScaled(1.0), 3).unwrap();
        assert!(m.fields().iter().all(|&t| t == 0.4));
        assert!(m.couplings().iter().all(|&j| j == 1.0 || j == -1.0));
        assert!(m.couplings().iter().any(|&j| j == 1.0) && m.couplings().iter().any(|&j| j == -1.0));

        let z = sample_model(&g, DistSpec::Constant(0.0), DistSpec::Constant(0.0), 3).unwrap();
        assert!(z.fields().iter().chain(z.couplings()).all(|&v| v == 0.0));

        let c = build_complete(10).unwrap();
        let m = sample_model(&c, DistSpec::Uniform(-0.5, 0.5), DistSpec::Uniform(0.0, 2.5), 11).unwrap();
        assert!(m.couplings().iter().all(|&j| (0.0..=2.5).contains(&j)));
        assert!(m.fields().iter().all(|&t| (-0.5..=0.5).contains(&t)));

        assert!(sample_model(&c, DistSpec::Uniform(1.0, 0.0), DistSpec::Constant(0.0), 0).is_err());
    }

    #[test]
    fn scaling() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let m = IsingModel::new(g, vec![1.0], vec![0.3, -0.2]).unwrap();
        assert_eq!(scale_model(&m, 0.5).unwrap().couplings(), &[0.5]);
        let z = scale_model(&m, 0.0).unwrap();
        assert_eq!(z.couplings(), &[0.0]);
        assert_eq!(z.fields(), m.fields());
        assert_eq!(scale_model(&m, 1.0).unwrap(), m);
        assert!(scale_model(&m, 1.5).is_err());
        assert!(scale_model(&m, -0.1).is_err());
    }

    #[test]
    fn joint_values() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let m = IsingModel::new(g, vec![0.5], vec![0.0, 0.0]).unwrap();
        let x = SpinConfiguration::new(vec![1, 1]).unwrap();
        assert!((joint_unnormalized(&m, &x).unwrap() - 1.648_721_270_700_128).abs() < 1e-12);

        let one = IsingModel::new(Graph::from_edges(1, &[]).unwrap(), vec![], vec![0.4]).unwrap();
        let x = SpinConfiguration::new(vec![-1]).unwrap();
        assert!((joint_unnormalized(&one, &x).unwrap() - 0.670_320_046_035_639_3).abs() < 1e-12);

        let zero = IsingModel::new(build_grid(2, 2).unwrap(), vec![0.0; 4], vec![0.0; 4]).unwrap();
        assert_eq!(joint_unnormalized(&zero, &SpinConfiguration::from_bits(4, 5)).unwrap(), 1.0);

        assert!(joint_unnormalized(&m, &SpinConfiguration::new(vec![1]).unwrap()).is_err());
        assert!(SpinConfiguration::new(vec![0, 1]).is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("constant:0.4".parse::<DistSpec>().unwrap(), DistSpec::Constant(0.4));
        assert_eq!("uniform:-0.5:0.5".parse::<DistSpec>().unwrap(), DistSpec::Uniform(-0.5, 0.5));
        assert_eq!("rademacher:1".parse::<DistSpec>().unwrap(), DistSpec::RademacherScaled(1.0));
        assert!("uniform:1:0".parse::<DistSpec>().is_err());
        assert!("gauss:1".parse::<DistSpec>().is_err());
    }

    fn arb_model() -> impl Strategy<Value = (IsingModel, u64)> {
        (2usize..8, any::<u64>(), -2.0f64..2.0, 0.0f64..1.0).prop_map(|(n, seed, j, t)| {
            let g = build_random(n, (n as f64 - 1.0).min(2.0).max(0.5), seed).unwrap();
            let m = sample_model(&g, DistSpec::Uniform(-t, t), DistSpec::Uniform(-j.abs(), j.abs()), seed).unwrap();
            (m, seed)
        })
    }

    proptest! {
        #[test]
        fn scale_identity_and_zero((m, seed) in arb_model()) {
            prop_assert_eq!(&scale_model(&m, 1.0).unwrap(), &m);
            let z = scale_model(&m, 0.0).unwrap();
            let x = SpinConfiguration::from_bits(m.num_nodes(), seed);
            let local: f64 = m.fields().iter().zip(x.states()).map(|(t, &s)| t * f64::from(s)).sum();
            prop_assert!((joint_unnormalized(&z, &x).unwrap() - local.exp()).abs() <= 1e-12 * local.exp());
        }

        #[test]
        fn spin_flip_symmetry_without_fields((m, seed) in arb_model()) {
            let m = IsingModel::new(m.shared_graph(), m.couplings().to_vec(), vec![0.0; m.num_nodes()]).unwrap();
            let x = SpinConfiguration::from_bits(m.num_nodes(), seed);
            let a = joint_unnormalized(&m, &x).unwrap();
            let b = joint_unnormalized(&m, &x.flipped()).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }

        #[test]
        fn generators_are_deterministic(n in 3usize..15, seed in any::<u64>()) {
            let g = build_random(n, 2.0, seed).unwrap();
            prop_assert_eq!(&g, &build_random(n, 2.0, seed).unwrap());
            let a = sample_model(&g, DistSpec::Uniform(-0.5, 0.5), DistSpec::RademacherScaled(1.0), seed).unwrap();
            let b = sample_model(&g, DistSpec::Uniform(-0.5, 0.5), DistSpec::RademacherScaled(1.0), seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
