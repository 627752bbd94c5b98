//! Exact marginals and partition function.
//!
//! Two independent routes: brute-force enumeration over all `2^N` spin
//! configurations, and log-domain variable elimination. Pair marginals from
//! elimination are obtained per query, by eliminating everything except the
//! two endpoints of the edge.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::bp::Pseudomarginals;
use crate::graph::{Graph, IsingModel};
use crate::{Error, Result};

/// Largest model [`enumerate_exact`] accepts.
pub const MAX_ENUMERATION_NODES: usize = 25;

/// Largest induced width [`eliminate_exact`] accepts (tables of `2^(width + 1)` entries).
pub const MAX_INDUCED_WIDTH: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactResult {
    pub log_z: f64,
    pub singles: Vec<[f64; 2]>,
    /// Same layout as [`Pseudomarginals::pairs`].
    pub pairs: Vec<[[f64; 2]; 2]>,
}

impl ExactResult {
    pub fn prob_plus(&self) -> Vec<f64> {
        self.singles.iter().map(|p| p[1]).collect()
    }

    /// Exact free energy `-ln Z`.
    pub fn free_energy(&self) -> f64 {
        -self.log_z
    }

    pub fn to_pseudomarginals(&self) -> Pseudomarginals {
        Pseudomarginals {
            singles: self.singles.clone(),
            pairs: self.pairs.clone(),
        }
    }
}

/// Sums the joint over every configuration, visiting them in Gray-code order
/// so each step flips one spin.
pub fn enumerate_exact(model: &IsingModel) -> Result<ExactResult> {
    let g = model.graph();
    let n = g.num_nodes();
    if n > MAX_ENUMERATION_NODES {
        return Err(Error::Infeasible(format!(
            "enumeration limited to {MAX_ENUMERATION_NODES} nodes, model has {n}"
        )));
    }
    let fields = model.fields();
    let couplings = model.couplings();
    let mut x = vec![-1.0f64; n];
    // All spins at -1: every coupling term is +J, every field term -θ.
    let mut log_w: f64 = couplings.iter().sum::<f64>() - fields.iter().sum::<f64>();

    // Accumulators hold Σ exp(log_w - shift); the shift is raised lazily.
    const RESCALE_MARGIN: f64 = 50.0;
    let mut shift = log_w;
    let mut z = 0.0;
    let mut plus = vec![0.0; n];
    let mut pairs = vec![[[0.0; 2]; 2]; g.num_edges()];

    let total: u64 = 1 << n;
    for step in 0..total {
        if step > 0 {
            let k = step.trailing_zeros() as usize;
            let local: f64 = fields[k] + g.neighbors(k).iter().map(|&(j, e)| couplings[e] * x[j]).sum::<f64>();
            log_w -= 2.0 * x[k] * local;
            x[k] = -x[k];
        }
        if log_w > shift + RESCALE_MARGIN {
            let factor = (shift - log_w).exp();
            z *= factor;
            plus.iter_mut().for_each(|p| *p *= factor);
            pairs.iter_mut().flatten().flatten().for_each(|p| *p *= factor);
            shift = log_w;
        }
        let w = (log_w - shift).exp();
        z += w;
        for (p, &xi) in plus.iter_mut().zip(&x) {
            if xi > 0.0 {
                *p += w;
            }
        }
        for (t, &(i, j)) in pairs.iter_mut().zip(g.edges()) {
            t[usize::from(x[i] > 0.0)][usize::from(x[j] > 0.0)] += w;
        }
    }

    let singles = plus.iter().map(|&p| [(z - p) / z, p / z]).collect();
    let pairs = pairs
        .into_iter()
        .map(|t| t.map(|row| row.map(|v| v / z)))
        .collect();
    Ok(ExactResult {
        log_z: shift + z.ln(),
        singles,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EliminationOrder {
    /// Narrower of min-degree and, for grids, a sweep along the longer side.
    Auto,
    Explicit(Vec<usize>),
}

/// Greedy min-degree order; ties go to the lowest node index.
pub fn min_degree_order(graph: &Graph) -> Vec<usize> {
    let n = graph.num_nodes();
    let mut adj: Vec<BTreeSet<usize>> = (0..n)
        .map(|i| graph.neighbors(i).iter().map(|&(j, _)| j).collect())
        .collect();
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| alive[v])
            .min_by_key(|&v| (adj[v].len(), v))
            .expect("a live node remains");
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
            for &b in &nbrs {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
        alive[v] = false;
        adj[v].clear();
        order.push(v);
    }
    order
}

/// For an `rows x cols` grid: eliminate column by column when `rows <= cols`,
/// row by row otherwise, giving induced width `min(rows, cols)`.
pub fn grid_sweep_order(rows: usize, cols: usize) -> Vec<usize> {
    if rows <= cols {
        (0..cols)
            .flat_map(|c| (0..rows).map(move |r| r * cols + c))
            .collect()
    } else {
        (0..rows * cols).collect()
    }
}

/// Largest neighborhood met while eliminating in `order`.
pub fn induced_width(graph: &Graph, order: &[usize]) -> usize {
    let n = graph.num_nodes();
    let mut adj: Vec<BTreeSet<usize>> = (0..n)
        .map(|i| graph.neighbors(i).iter().map(|&(j, _)| j).collect())
        .collect();
    let mut width = 0;
    for &v in order {
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        width = width.max(nbrs.len());
        for &a in &nbrs {
            adj[a].remove(&v);
            for &b in &nbrs {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
        adj[v].clear();
    }
    width
}

fn resolve_order(graph: &Graph, order: &EliminationOrder) -> Result<(Vec<usize>, usize)> {
    match order {
        EliminationOrder::Explicit(o) => {
            let n = graph.num_nodes();
            let mut seen = vec![false; n];
            if o.len() != n || o.iter().any(|&v| v >= n || std::mem::replace(&mut seen[v], true)) {
                return Err(Error::InvalidArgument("elimination order must be a permutation of the nodes".into()));
            }
            Ok((o.clone(), induced_width(graph, o)))
        }
        EliminationOrder::Auto => {
            let md = min_degree_order(graph);
            let md_width = induced_width(graph, &md);
            if let Some((r, c)) = graph.grid_shape() {
                let sweep = grid_sweep_order(r, c);
                let w = induced_width(graph, &sweep);
                if w < md_width {
                    return Ok((sweep, w));
                }
            }
            Ok((md, md_width))
        }
    }
}

/// Log-domain table over binary variables; bit `k` of an index is the state of `vars[k]`.
#[derive(Debug, Clone)]
struct Factor {
    vars: Vec<usize>,
    table: Vec<f64>,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn model_factors(model: &IsingModel) -> Vec<Factor> {
    let g = model.graph();
    let mut out: Vec<Factor> = model
        .fields()
        .iter()
        .enumerate()
        .map(|(i, &t)| Factor {
            vars: vec![i],
            table: vec![-t, t],
        })
        .collect();
    for (&(i, j), &c) in g.edges().iter().zip(model.couplings()) {
        out.push(Factor {
            vars: vec![i, j],
            table: vec![c, -c, -c, c],
        });
    }
    out
}

/// Product of `factors` over the sorted union of their scopes, with `drop`
/// summed out when present.
fn combine(factors: &[Factor], drop: Option<usize>) -> Factor {
    let scope: Vec<usize> = factors
        .iter()
        .flat_map(|f| f.vars.iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    // For every factor, the scope position of each of its variables.
    let positions: Vec<Vec<usize>> = factors
        .iter()
        .map(|f| {
            f.vars
                .iter()
                .map(|v| scope.iter().position(|s| s == v).expect("variable in scope"))
                .collect()
        })
        .collect();
    let mut full = vec![0.0; 1usize << scope.len()];
    for (idx, slot) in full.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (f, pos) in factors.iter().zip(&positions) {
            let fi = pos
                .iter()
                .enumerate()
                .fold(0usize, |a, (k, &p)| a | ((idx >> p) & 1) << k);
            acc += f.table[fi];
        }
        *slot = acc;
    }
    let Some(v) = drop else {
        return Factor { vars: scope, table: full };
    };
    let p = scope.iter().position(|&s| s == v).expect("dropped variable in scope");
    let low_mask = (1usize << p) - 1;
    let reduced = (0..full.len() / 2)
        .map(|idx| {
            let base = (idx & low_mask) | ((idx & !low_mask) << 1);
            log_add(full[base], full[base | 1 << p])
        })
        .collect();
    let mut vars = scope;
    vars.remove(p);
    Factor { vars, table: reduced }
}

/// Eliminates every variable of `order` not in `keep`; returns the joint log table over `keep`
/// (sorted ascending), or a scalar when `keep` is empty.
fn eliminate_all(mut factors: Vec<Factor>, order: &[usize], keep: &[usize]) -> Factor {
    for &v in order.iter().filter(|v| !keep.contains(v)) {
        let (touching, rest): (Vec<Factor>, Vec<Factor>) = factors.into_iter().partition(|f| f.vars.contains(&v));
        factors = rest;
        if !touching.is_empty() {
            factors.push(combine(&touching, Some(v)));
        }
    }
    combine(&factors, None)
}

fn log_sum(table: &[f64]) -> f64 {
    table.iter().fold(f64::NEG_INFINITY, |a, &b| log_add(a, b))
}

/// Normalized probabilities from a log table.
fn normalize(table: &[f64]) -> Vec<f64> {
    let lz = log_sum(table);
    table.iter().map(|&v| (v - lz).exp()).collect()
}

/// Variable elimination in the log domain. Produces the same quantities as
/// [`enumerate_exact`]; singles are marginalized from the first incident
/// edge's pair table (or queried directly for isolated nodes).
pub fn eliminate_exact(model: &IsingModel, order: &EliminationOrder) -> Result<ExactResult> {
    let g = model.graph();
    let (order, width) = resolve_order(g, order)?;
    if width > MAX_INDUCED_WIDTH {
        return Err(Error::Infeasible(format!(
            "induced width {width} exceeds the limit of {MAX_INDUCED_WIDTH}"
        )));
    }
    let factors = model_factors(model);
    let root = eliminate_all(factors.clone(), &order, &[]);
    let log_z = log_sum(&root.table);

    let pairs: Vec<[[f64; 2]; 2]> = g
        .edges()
        .iter()
        .map(|&(i, j)| {
            let f = eliminate_all(factors.clone(), &order, &[i, j]);
            debug_assert_eq!(f.vars, vec![i, j]);
            let p = normalize(&f.table);
            // Index bit 0 is i (the lower node), bit 1 is j.
            [[p[0], p[2]], [p[1], p[3]]]
        })
        .collect();

    let singles = (0..g.num_nodes())
        .map(|i| match g.neighbors(i).first() {
            Some(&(_, e)) => {
                let t = pairs[e];
                if g.edge(e).0 == i {
                    [t[0][0] + t[0][1], t[1][0] + t[1][1]]
                } else {
                    [t[0][0] + t[1][0], t[0][1] + t[1][1]]
                }
            }
            None => {
                let p = normalize(&eliminate_all(factors.clone(), &order, &[i]).table);
                [p[0], p[1]]
            }
        })
        .collect();

    Ok(ExactResult { log_z, singles, pairs })
}

/// Enumeration for small models, elimination otherwise.
pub fn exact_inference(model: &IsingModel) -> Result<ExactResult> {
    if model.num_nodes() <= 16 {
        enumerate_exact(model)
    } else {
        eliminate_exact(model, &EliminationOrder::Auto)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_complete, build_grid, build_random, build_random_tree, sample_model, DistSpec, SpinConfiguration};
    use proptest::prelude::*;

    /// Plain summation with no Gray code, no log-domain tricks.
    fn naive(m: &IsingModel) -> (f64, Vec<f64>) {
        let n = m.num_nodes();
        let mut z = 0.0;
        let mut plus = vec![0.0; n];
        for bits in 0..1u64 << n {
            let w = m.log_weight(&SpinConfiguration::from_bits(n, bits)).unwrap().exp();
            z += w;
            for (k, p) in plus.iter_mut().enumerate() {
                if bits >> k & 1 == 1 {
                    *p += w;
                }
            }
        }
        (z.ln(), plus.into_iter().map(|p| p / z).collect())
    }

    fn close(a: &ExactResult, b: &ExactResult, tol: f64) -> bool {
        (a.log_z - b.log_z).abs() <= tol
            && a.singles.iter().flatten().zip(b.singles.iter().flatten()).all(|(x, y)| (x - y).abs() <= tol)
            && a.pairs.iter().flatten().flatten().zip(b.pairs.iter().flatten().flatten()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn single_node_closed_form() {
        let m = IsingModel::new(Graph::from_edges(1, &[]).unwrap(), vec![], vec![0.4]).unwrap();
        for r in [enumerate_exact(&m).unwrap(), eliminate_exact(&m, &EliminationOrder::Auto).unwrap()] {
            assert!((r.singles[0][1] - 0.689_974_481_127_612_8).abs() < 1e-12);
            assert!((r.log_z - 0.771_100_665_947_777_8).abs() < 1e-12);
        }
    }

    #[test]
    fn two_node_enumeration() {
        let m = IsingModel::new(Graph::from_edges(2, &[(0, 1)]).unwrap(), vec![0.5], vec![0.0, 0.0]).unwrap();
        let r = enumerate_exact(&m).unwrap();
        let t = r.pairs[0];
        let chi = t[0][0] + t[1][1] - t[0][1] - t[1][0];
        assert!((chi - 0.5f64.tanh()).abs() < 1e-12);
        // ln(2e^0.5 + 2e^-0.5)
        assert!((r.log_z - 1.506_408_868_078_168).abs() < 1e-12);
    }

    #[test]
    fn zero_fields_give_zero_means() {
        let g = build_complete(6).unwrap();
        let m = sample_model(&g, DistSpec::Constant(0.0), DistSpec::Uniform(-3.0, 3.0), 4).unwrap();
        let r = enumerate_exact(&m).unwrap();
        assert!(r.singles.iter().all(|p| (p[1] - 0.5).abs() < 1e-14));
    }

    #[test]
    fn guards() {
        let g = build_grid(5, 6).unwrap();
        let m = sample_model(&g, DistSpec::Constant(0.0), DistSpec::Constant(0.1), 0).unwrap();
        assert!(matches!(enumerate_exact(&m), Err(Error::Infeasible(_))));
        let c = build_complete(23).unwrap();
        let m = sample_model(&c, DistSpec::Constant(0.0), DistSpec::Constant(0.1), 0).unwrap();
        assert!(matches!(eliminate_exact(&m, &EliminationOrder::Auto), Err(Error::Infeasible(_))));
        let small = sample_model(&build_grid(2, 2).unwrap(), DistSpec::Constant(0.0), DistSpec::Constant(0.1), 0).unwrap();
        assert!(eliminate_exact(&small, &EliminationOrder::Explicit(vec![0, 1, 2])).is_err());
        assert!(eliminate_exact(&small, &EliminationOrder::Explicit(vec![0, 1, 2, 2])).is_err());
    }

    #[test]
    fn grid_sweep_width() {
        let g = build_grid(10, 10).unwrap();
        assert_eq!(induced_width(&g, &grid_sweep_order(10, 10)), 10);
        let g = build_grid(4, 7).unwrap();
        assert_eq!(induced_width(&g, &grid_sweep_order(4, 7)), 4);
        let g = build_grid(7, 4).unwrap();
        assert_eq!(induced_width(&g, &grid_sweep_order(7, 4)), 4);
        let (_, w) = resolve_order(&build_grid(10, 10).unwrap(), &EliminationOrder::Auto).unwrap();
        assert!(w <= 10);
    }

    #[test]
    fn strong_couplings_stay_finite() {
        let g = build_complete(12).unwrap();
        let m = sample_model(&g, DistSpec::Uniform(-0.5, 0.5), DistSpec::Uniform(0.0, 5.0), 1).unwrap();
        let a = enumerate_exact(&m).unwrap();
        let b = eliminate_exact(&m, &EliminationOrder::Auto).unwrap();
        assert!(a.log_z.is_finite() && a.log_z > 100.0);
        assert!(close(&a, &b, 1e-10));
    }

    #[test]
    fn ten_by_ten_grid_runs() {
        let g = build_grid(10, 10).unwrap();
        let m = sample_model(&g, DistSpec::Uniform(-0.5, 0.5), DistSpec::Uniform(-1.0, 1.0), 2).unwrap();
        let r = eliminate_exact(&m, &EliminationOrder::Auto).unwrap();
        assert!(r.log_z.is_finite());
        assert!(r.to_pseudomarginals().max_polytope_violation(&g) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn enumeration_matches_naive(n in 1usize..9, seed in any::<u64>()) {
            let g = if n == 1 { Graph::from_edges(1, &[]).unwrap() } else { build_random(n, (n as f64 - 1.0).min(3.0), seed).unwrap() };
            let m = sample_model(&g, DistSpec::Uniform(-1.0, 1.0), DistSpec::Uniform(-2.0, 2.0), seed).unwrap();
            let r = enumerate_exact(&m).unwrap();
            let (lz, plus) = naive(&m);
            prop_assert!((r.log_z - lz).abs() < 1e-10);
            for (a, b) in r.prob_plus().iter().zip(plus) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn routes_agree(n in 2usize..13, seed in any::<u64>(), tree in any::<bool>()) {
            let g = if tree { build_random_tree(n, seed).unwrap() } else { build_random(n, (n as f64 - 1.0).min(3.0), seed).unwrap() };
            let m = sample_model(&g, DistSpec::Uniform(-1.0, 1.0), DistSpec::Uniform(-2.0, 2.0), seed).unwrap();
            let a = enumerate_exact(&m).unwrap();
            let b = eliminate_exact(&m, &EliminationOrder::Auto).unwrap();
            prop_assert!(close(&a, &b, 1e-10));
            prop_assert!(a.to_pseudomarginals().max_polytope_violation(&g) < 1e-12);
            prop_assert!(b.to_pseudomarginals().max_polytope_violation(&g) < 1e-12);
        }
    }
}
