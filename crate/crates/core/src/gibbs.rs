//! Single-site heat-bath Gibbs sampler.
//!
//! One update picks a node uniformly at random and redraws it from its
//! conditional `P(x_i = +1 | rest) = σ(2 (θ_i + Σ_j J_ij x_j))`.

use rand::Rng;
use serde::Serialize;

use crate::graph::IsingModel;
use crate::rng::{rng_for, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GibbsEstimate {
    /// Estimated `P(x_i = +1)` per node.
    pub singles: Vec<f64>,
    /// Estimated `E[x_i x_j]` per edge.
    pub correlations: Vec<f64>,
    /// Single-site updates performed, burn-in included.
    pub total_updates: usize,
    pub burn_in: usize,
    pub seed: u64,
}

/// Burn-in used when none is given: a tenth of the budget.
pub fn default_burn_in(total_updates: usize) -> usize {
    total_updates / 10
}

/// Runs one chain from a random start and averages the state after every
/// post-burn-in update.
pub fn run_gibbs(model: &IsingModel, total_updates: usize, burn_in: usize, seed: u64) -> Result<GibbsEstimate> {
    if burn_in >= total_updates {
        return Err(Error::InvalidArgument(format!(
            "burn-in ({burn_in}) must be smaller than the number of updates ({total_updates})"
        )));
    }
    let g = model.graph();
    let n = g.num_nodes();
    let fields = model.fields();
    let couplings = model.couplings();
    let mut rng = rng_for(seed, stream::GIBBS, 0);
    let mut x: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();

    let mut plus = vec![0u64; n];
    let mut agree = vec![0u64; g.num_edges()];
    for t in 0..total_updates {
        if n > 0 {
            let i = rng.gen_range(0..n);
            let local = fields[i] + g.neighbors(i).iter().map(|&(j, e)| couplings[e] * x[j]).sum::<f64>();
            let p_plus = 1.0 / (1.0 + (-2.0 * local).exp());
            x[i] = if rng.gen::<f64>() < p_plus { 1.0 } else { -1.0 };
        }
        if t >= burn_in {
            for (c, &xi) in plus.iter_mut().zip(&x) {
                *c += u64::from(xi > 0.0);
            }
            for (c, &(i, j)) in agree.iter_mut().zip(g.edges()) {
                *c += u64::from(x[i] == x[j]);
            }
        }
    }
    let samples = (total_updates - burn_in) as f64;
    Ok(GibbsEstimate {
        singles: plus.iter().map(|&c| c as f64 / samples).collect(),
        correlations: agree.iter().map(|&c| 2.0 * c as f64 / samples - 1.0).collect(),
        total_updates,
        burn_in,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::enumerate_exact;
    use crate::graph::{build_complete, sample_model, DistSpec, Graph};

    #[test]
    fn single_node_concentrates() {
        let m = IsingModel::new(Graph::from_edges(1, &[]).unwrap(), vec![], vec![0.4]).unwrap();
        let hits = (0..100)
            .filter(|&s| {
                let est = run_gibbs(&m, 100_000, 10_000, s).unwrap();
                (est.singles[0] - 0.689_974_481_127_612_8).abs() <= 0.01
            })
            .count();
        assert!(hits >= 99, "{hits}/100 within tolerance");
    }

    #[test]
    fn zero_model_is_fair() {
        let g = build_complete(5).unwrap();
        let m = sample_model(&g, DistSpec::Constant(0.0), DistSpec::Constant(0.0), 0).unwrap();
        let est = run_gibbs(&m, 100_000, 10_000, 3).unwrap();
        assert!(est.singles.iter().all(|p| (p - 0.5).abs() <= 0.02));
    }

    #[test]
    fn pair_correlation() {
        let m = IsingModel::new(Graph::from_edges(2, &[(0, 1)]).unwrap(), vec![0.5], vec![0.0, 0.0]).unwrap();
        let est = run_gibbs(&m, 100_000, 10_000, 11).unwrap();
        assert!((est.correlations[0] - 0.5f64.tanh()).abs() <= 0.02);
    }

    #[test]
    fn deterministic_and_bounded() {
        let g = build_complete(6).unwrap();
        let m = sample_model(&g, DistSpec::Uniform(-0.5, 0.5), DistSpec::Uniform(-1.0, 1.0), 2).unwrap();
        let a = run_gibbs(&m, 20_000, 2_000, 5).unwrap();
        assert_eq!(a, run_gibbs(&m, 20_000, 2_000, 5).unwrap());
        assert_ne!(a.singles, run_gibbs(&m, 20_000, 2_000, 6).unwrap().singles);
        assert!(a.singles.iter().all(|p| (0.0..=1.0).contains(p)));
        let ex = enumerate_exact(&m).unwrap();
        for (p, q) in a.singles.iter().zip(ex.prob_plus()) {
            assert!((p - q).abs() < 0.1);
        }
    }

    #[test]
    fn rejects_burn_in_past_budget() {
        let m = IsingModel::new(Graph::from_edges(1, &[]).unwrap(), vec![], vec![0.0]).unwrap();
        assert!(run_gibbs(&m, 10, 10, 0).is_err());
        assert_eq!(default_burn_in(100_000), 10_000);
    }
}
