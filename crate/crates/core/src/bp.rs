//! Sum-product belief propagation on Ising models.
//!
//! Messages live in probability space, one normalized pair per directed
//! edge. Entry `0` of every pair or table refers to state `-1`, entry `1`
//! to state `+1`. Directed edge `2e` runs from the lower to the higher
//! endpoint of undirected edge `e`, and `2e + 1` runs back.
//!
//! A sweep updates every directed message once, in a given order, reading
//! the most recent values (sequential in-place semantics). The residual
//! uses the synchronous map instead, where every new message is computed
//! from the same input set.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::graph::{Graph, IsingModel};
use crate::rng::{rng_for, stream};
use crate::{Error, Result};

/// Lower bound applied to unnormalized message entries.
pub const POSITIVITY_FLOOR: f64 = 1e-300;

/// Default sweep-to-sweep convergence threshold on the max absolute message change.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Maps a table index (0 or 1) to its spin value.
#[inline]
pub fn spin(state: usize) -> f64 {
    if state == 1 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageSet {
    values: Vec<[f64; 2]>,
}

impl MessageSet {
    pub fn uniform(graph: &Graph) -> Self {
        Self {
            values: vec![[0.5, 0.5]; 2 * graph.num_edges()],
        }
    }

    /// Wraps raw pairs; each must be strictly positive and sum to one within `1e-9`.
    pub fn from_pairs(graph: &Graph, values: Vec<[f64; 2]>) -> Result<Self> {
        if values.len() != 2 * graph.num_edges() {
            return Err(Error::InvalidArgument(format!(
                "{} message pairs for {} directed edges",
                values.len(),
                2 * graph.num_edges()
            )));
        }
        for (d, p) in values.iter().enumerate() {
            if !(p[0] > 0.0 && p[1] > 0.0) || (p[0] + p[1] - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("message {d} = {p:?} is not a positive distribution")));
            }
        }
        Ok(Self { values })
    }

    /// Pairs already known to be positive and normalized.
    pub(crate) fn from_normalized(values: Vec<[f64; 2]>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn pairs(&self) -> &[[f64; 2]] {
        &self.values
    }

    pub fn get(&self, directed: usize) -> [f64; 2] {
        self.values[directed]
    }

    /// Message from `from` to `to` along an existing edge.
    pub fn between(&self, graph: &Graph, from: usize, to: usize) -> Option<[f64; 2]> {
        let e = graph.edge_index(from, to)?;
        Some(self.values[directed_index(graph, e, from)])
    }

    pub fn max_abs_diff(&self, other: &MessageSet) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| [(a[0] - b[0]).abs(), (a[1] - b[1]).abs()])
            .fold(0.0, f64::max)
    }

    /// Mean squared difference over all entries of all directed messages.
    pub fn mse(&self, other: &MessageSet) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum();
        sum / (2 * self.values.len()) as f64
    }
}

/// Directed index of edge `e` leaving node `from`.
pub fn directed_index(graph: &Graph, e: usize, from: usize) -> usize {
    if graph.edge(e).0 == from {
        2 * e
    } else {
        2 * e + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Uniform,
    Random(u64),
}

pub fn init_messages(graph: &Graph, mode: InitMode) -> MessageSet {
    match mode {
        InitMode::Uniform => MessageSet::uniform(graph),
        InitMode::Random(seed) => {
            let mut rng = rng_for(seed, stream::MESSAGES, 0);
            let values = (0..2 * graph.num_edges())
                .map(|_| {
                    let p: f64 = rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12);
                    [1.0 - p, p]
                })
                .collect();
            MessageSet { values }
        }
    }
}

struct DirectedEdge {
    source: usize,
    edge: usize,
    /// Directed messages `k -> source` for every neighbor `k` except the target.
    incoming: Vec<usize>,
}

/// Precomputed message-passing structure plus potentials for one model.
struct Propagator<'a> {
    model: &'a IsingModel,
    directed: Vec<DirectedEdge>,
    /// Per node, all incoming directed messages.
    node_incoming: Vec<Vec<usize>>,
}

impl<'a> Propagator<'a> {
    fn new(model: &'a IsingModel) -> Self {
        let g = model.graph();
        let node_incoming: Vec<Vec<usize>> = (0..g.num_nodes())
            .map(|i| {
                g.neighbors(i)
                    .iter()
                    .map(|&(k, e)| directed_index(g, e, k))
                    .collect()
            })
            .collect();
        let directed = (0..2 * g.num_edges())
            .map(|d| {
                let e = d / 2;
                let (a, b) = g.edge(e);
                let (source, target) = if d % 2 == 0 { (a, b) } else { (b, a) };
                let incoming = g
                    .neighbors(source)
                    .iter()
                    .filter(|&&(k, _)| k != target)
                    .map(|&(k, ek)| directed_index(g, ek, k))
                    .collect();
                DirectedEdge { source, edge: e, incoming }
            })
            .collect();
        Self {
            model,
            directed,
            node_incoming,
        }
    }

    /// New normalized message for directed edge `d` computed from `values`.
    fn compute(&self, d: usize, values: &[[f64; 2]]) -> Result<[f64; 2]> {
        let de = &self.directed[d];
        let prod = product(&de.incoming, values);
        let theta = self.model.fields()[de.source];
        let coupling = self.model.couplings()[de.edge];
        let plus = theta.exp() * prod[1];
        let minus = (-theta).exp() * prod[0];
        let (same, flip) = (coupling.exp(), (-coupling).exp());
        let up = (same * plus + flip * minus).max(POSITIVITY_FLOOR);
        let down = (flip * plus + same * minus).max(POSITIVITY_FLOOR);
        let total = up + down;
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Numerical(format!("message {d} has normalizer {total}")));
        }
        Ok([down / total, up / total])
    }
}

/// Product of the given messages, rescaled so the larger entry is one.
fn product(indices: &[usize], values: &[[f64; 2]]) -> [f64; 2] {
    let mut acc = [1.0, 1.0];
    for &k in indices {
        acc[0] *= values[k][0];
        acc[1] *= values[k][1];
        let s = acc[0].max(acc[1]);
        acc[0] /= s;
        acc[1] /= s;
    }
    acc
}

fn check_damping(damping: f64) -> Result<()> {
    if (0.0..1.0).contains(&damping) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("damping {damping} outside [0, 1)")))
    }
}

/// Updates `messages` in place following `schedule`; returns the max absolute change.
fn sweep(prop: &Propagator<'_>, messages: &mut MessageSet, schedule: &[usize], damping: f64) -> Result<f64> {
    let mut change = 0.0f64;
    for &d in schedule {
        let new = prop.compute(d, &messages.values)?;
        let old = messages.values[d];
        let mixed = [
            (1.0 - damping) * new[0] + damping * old[0],
            (1.0 - damping) * new[1] + damping * old[1],
        ];
        let s = mixed[0] + mixed[1];
        let out = [mixed[0] / s, mixed[1] / s];
        change = change.max((out[0] - old[0]).abs()).max((out[1] - old[1]).abs());
        messages.values[d] = out;
    }
    Ok(change)
}

/// One full sweep of (damped) BP over `schedule`, which must list every
/// directed edge exactly once.
pub fn bp_update(model: &IsingModel, messages: &MessageSet, schedule: &[usize], damping: f64) -> Result<MessageSet> {
    check_damping(damping)?;
    let n = 2 * model.graph().num_edges();
    check_messages(model, messages)?;
    let mut seen = vec![false; n];
    if schedule.len() != n || schedule.iter().any(|&d| d >= n || std::mem::replace(&mut seen[d], true)) {
        return Err(Error::InvalidArgument(
            "schedule must be a permutation of the directed edges".into(),
        ));
    }
    let prop = Propagator::new(model);
    let mut out = messages.clone();
    sweep(&prop, &mut out, schedule, damping)?;
    Ok(out)
}

fn check_messages(model: &IsingModel, messages: &MessageSet) -> Result<()> {
    if messages.len() != 2 * model.graph().num_edges() {
        return Err(Error::InvalidArgument(format!(
            "{} messages for {} directed edges",
            messages.len(),
            2 * model.graph().num_edges()
        )));
    }
    Ok(())
}

/// The synchronous map: every message recomputed from the input set, no damping.
pub fn synchronous_update(model: &IsingModel, messages: &MessageSet) -> Result<MessageSet> {
    check_messages(model, messages)?;
    let prop = Propagator::new(model);
    let values = (0..messages.len())
        .map(|d| prop.compute(d, &messages.values))
        .collect::<Result<Vec<_>>>()?;
    Ok(MessageSet { values })
}

/// Max absolute entry of `M - BP(M)` under the synchronous map.
pub fn residual(model: &IsingModel, messages: &MessageSet) -> Result<f64> {
    Ok(messages.max_abs_diff(&synchronous_update(model, messages)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BpParams {
    pub max_sweeps: usize,
    pub damping: f64,
    pub tolerance: f64,
}

impl Default for BpParams {
    fn default() -> Self {
        Self {
            max_sweeps: 1000,
            damping: 0.0,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

impl BpParams {
    /// Damped BP as used for the damped baseline: 0.9 damping, 10^4 sweeps.
    pub fn damped() -> Self {
        Self {
            max_sweeps: 10_000,
            damping: 0.9,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BpOutcome {
    pub messages: MessageSet,
    pub sweeps_used: usize,
    pub converged: bool,
    /// Max absolute message change during the last sweep.
    pub final_residual: f64,
}

/// Runs sweeps with a fresh random edge order each time until the max
/// message change of a sweep drops to `tolerance` or `max_sweeps` is hit.
pub fn run_bp(model: &IsingModel, init: &MessageSet, params: &BpParams, schedule_seed: u64) -> Result<BpOutcome> {
    check_damping(params.damping)?;
    check_messages(model, init)?;
    if params.max_sweeps == 0 || !(params.tolerance > 0.0) {
        return Err(Error::InvalidArgument("max_sweeps and tolerance must be positive".into()));
    }
    let prop = Propagator::new(model);
    let mut rng = rng_for(schedule_seed, stream::SCHEDULE, 0);
    let mut schedule: Vec<usize> = (0..init.len()).collect();
    let mut messages = init.clone();
    let mut change = f64::INFINITY;
    for sweep_no in 1..=params.max_sweeps {
        schedule.shuffle(&mut rng);
        change = sweep(&prop, &mut messages, &schedule, params.damping)?;
        if change <= params.tolerance {
            return Ok(BpOutcome {
                messages,
                sweeps_used: sweep_no,
                converged: true,
                final_residual: change,
            });
        }
    }
    Ok(BpOutcome {
        messages,
        sweeps_used: params.max_sweeps,
        converged: false,
        final_residual: change,
    })
}

/// Singleton and pairwise belief tables.
///
/// `pairs[e][a][b]` is the belief for `x_i = spin(a)`, `x_j = spin(b)` where
/// `(i, j) = graph.edge(e)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pseudomarginals {
    pub singles: Vec<[f64; 2]>,
    pub pairs: Vec<[[f64; 2]; 2]>,
}

impl Pseudomarginals {
    /// Independent uniform beliefs.
    pub fn uniform(graph: &Graph) -> Self {
        Self {
            singles: vec![[0.5, 0.5]; graph.num_nodes()],
            pairs: vec![[[0.25; 2]; 2]; graph.num_edges()],
        }
    }

    /// `P(x_i = +1)` per node.
    pub fn prob_plus(&self) -> Vec<f64> {
        self.singles.iter().map(|p| p[1]).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.singles.iter().map(|p| p[1] - p[0]).collect()
    }

    pub fn correlations(&self) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|t| t[1][1] + t[0][0] - t[1][0] - t[0][1])
            .collect()
    }

    /// Largest violation of `Σ_{x_j} P_ij(x_i, x_j) = P_i(x_i)` in either direction.
    pub fn max_polytope_violation(&self, graph: &Graph) -> f64 {
        let mut worst = 0.0f64;
        for (e, t) in self.pairs.iter().enumerate() {
            let (i, j) = graph.edge(e);
            for s in 0..2 {
                worst = worst.max((t[s][0] + t[s][1] - self.singles[i][s]).abs());
                worst = worst.max((t[0][s] + t[1][s] - self.singles[j][s]).abs());
            }
        }
        worst
    }

    /// Checks shapes, nonnegativity and normalization within `tol`.
    pub fn validate(&self, graph: &Graph, tol: f64) -> Result<()> {
        if self.singles.len() != graph.num_nodes() || self.pairs.len() != graph.num_edges() {
            return Err(Error::InvalidPseudomarginals("table counts do not match the graph".into()));
        }
        for (i, p) in self.singles.iter().enumerate() {
            if p.iter().any(|&v| !(v >= 0.0)) || (p[0] + p[1] - 1.0).abs() > tol {
                return Err(Error::InvalidPseudomarginals(format!("singleton table {i} = {p:?}")));
            }
        }
        for (e, t) in self.pairs.iter().enumerate() {
            let flat = [t[0][0], t[0][1], t[1][0], t[1][1]];
            if flat.iter().any(|&v| !(v >= 0.0)) || (flat.iter().sum::<f64>() - 1.0).abs() > tol {
                return Err(Error::InvalidPseudomarginals(format!("pairwise table {e} = {t:?}")));
            }
        }
        Ok(())
    }
}

/// Beliefs from messages: `P_i ∝ Φ_i Π_k μ_{k→i}` and
/// `P_ij ∝ Φ_i Φ_j Φ_ij Π_{k≠j} μ_{k→i} Π_{l≠i} μ_{l→j}`.
pub fn extract_pseudomarginals(model: &IsingModel, messages: &MessageSet) -> Result<Pseudomarginals> {
    check_messages(model, messages)?;
    let g = model.graph();
    let prop = Propagator::new(model);
    let fields = model.fields();
    let singles = (0..g.num_nodes())
        .map(|i| {
            let prod = product(&prop.node_incoming[i], &messages.values);
            let up = fields[i].exp() * prod[1];
            let down = (-fields[i]).exp() * prod[0];
            [down / (up + down), up / (up + down)]
        })
        .collect();
    let pairs = (0..g.num_edges())
        .map(|e| {
            let (i, j) = g.edge(e);
            // Cavity products: everything into i except from j, and vice versa.
            let pi = product(&prop.directed[2 * e].incoming, &messages.values);
            let pj = product(&prop.directed[2 * e + 1].incoming, &messages.values);
            let coupling = model.couplings()[e];
            let mut table = [[0.0; 2]; 2];
            let mut total = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    let (xa, xb) = (spin(a), spin(b));
                    let v = (fields[i] * xa + fields[j] * xb + coupling * xa * xb).exp() * pi[a] * pj[b];
                    table[a][b] = v;
                    total += v;
                }
            }
            for row in &mut table {
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            table
        })
        .collect();
    Ok(Pseudomarginals { singles, pairs })
}

/// Node means `P(+1) - P(-1)` and edge correlations `E[x_i x_j]`.
pub fn mean_and_correlation(p: &Pseudomarginals) -> (Vec<f64>, Vec<f64>) {
    (p.means(), p.correlations())
}
