//! Bethe free energy `F_B = E_B - S_B` over local-polytope beliefs.

use rayon::prelude::*;
use serde::Serialize;

use crate::bp::{extract_pseudomarginals, init_messages, run_bp, spin, BpParams, InitMode, MessageSet, Pseudomarginals, POSITIVITY_FLOOR};
use crate::graph::IsingModel;
use crate::homotopy::{run_sbp, SbpConfig};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

/// Normalization slack accepted by [`bethe_free_energy`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetheValue {
    pub free_energy: f64,
    pub energy: f64,
    pub entropy: f64,
}

/// `p ln p` with the `0 ln 0 = 0` convention.
fn xlogx(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * p.max(POSITIVITY_FLOOR).ln()
    }
}

/// Evaluates the Bethe free energy of `p` under `model`.
///
/// Entropy is grouped as pairwise entropy minus `(d_i - 1)` times each
/// singleton entropy.
pub fn bethe_free_energy(model: &IsingModel, p: &Pseudomarginals) -> Result<BetheValue> {
    let g = model.graph();
    p.validate(g, NORMALIZATION_TOL)?;
    let mut energy = 0.0;
    let mut entropy = 0.0;
    for (t, &c) in p.pairs.iter().zip(model.couplings()) {
        for a in 0..2 {
            for b in 0..2 {
                energy -= t[a][b] * c * spin(a) * spin(b);
                entropy -= xlogx(t[a][b]);
            }
        }
    }
    for (i, (s, &theta)) in p.singles.iter().zip(model.fields()).enumerate() {
        let d = g.degree(i) as f64;
        for a in 0..2 {
            energy -= s[a] * theta * spin(a);
            entropy += (d - 1.0) * xlogx(s[a]);
        }
    }
    Ok(BetheValue {
        free_energy: energy - entropy,
        energy,
        entropy,
    })
}

/// Derivative of `F_B(scale(model, ζ), p)` in `ζ` for fixed beliefs: `-Σ J_ij χ_ij`.
#[allow(non_snake_case)]
pub fn dFB_dzeta(base_model: &IsingModel, p: &Pseudomarginals) -> f64 {
    -p.correlations()
        .iter()
        .zip(base_model.couplings())
        .map(|(chi, j)| chi * j)
        .sum::<f64>()
}

/// Where the reference beliefs of [`approx_global_bethe_min`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BetheMinSource {
    /// Lowest value among converged damped-BP restarts.
    Restarts,
    /// No restart converged; the self-guided result is used instead.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetheMin {
    pub pseudomarginals: Pseudomarginals,
    pub value: BetheValue,
    pub source: BetheMinSource,
    pub converged_restarts: usize,
    /// Sweeps summed over every restart (plus the fallback run, if any).
    pub total_sweeps: usize,
}

/// Best-of-restarts stand-in for the global Bethe minimum.
///
/// Runs damped BP (`BpParams::damped`) from uniform messages and from
/// `restarts` random initializations, and keeps the converged outcome with the
/// lowest free energy. Ties keep the earlier restart.
pub fn approx_global_bethe_min(model: &IsingModel, restarts: usize, seed: u64) -> Result<BetheMin> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let g = model.graph();
    let params = BpParams::damped();
    // (converged, sweeps, beliefs and value when converged) per restart.
    type Restart = (bool, usize, Option<(Pseudomarginals, BetheValue)>);
    let outcomes: Vec<Result<Restart>> = (0..=restarts)
        .into_par_iter()
        .map(|k| {
            let init: MessageSet = if k == 0 {
                MessageSet::uniform(g)
            } else {
                init_messages(g, InitMode::Random(derive_seed(seed, stream::RESTART, k as u64)))
            };
            let out = run_bp(model, &init, &params, derive_seed(seed, stream::SCHEDULE, k as u64))?;
            if !out.converged {
                return Ok((false, out.sweeps_used, None));
            }
            let p = extract_pseudomarginals(model, &out.messages)?;
            let v = bethe_free_energy(model, &p)?;
            Ok((true, out.sweeps_used, Some((p, v))))
        })
        .collect();

    let mut best: Option<(Pseudomarginals, BetheValue)> = None;
    let mut converged_restarts = 0;
    let mut total_sweeps = 0;
    for o in outcomes {
        let (conv, sweeps, found) = o?;
        total_sweeps += sweeps;
        converged_restarts += usize::from(conv);
        if let Some((p, v)) = found {
            if best.as_ref().is_none_or(|(_, b)| v.free_energy < b.free_energy) {
                best = Some((p, v));
            }
        }
    }
    match best {
        Some((pseudomarginals, value)) => Ok(BetheMin {
            pseudomarginals,
            value,
            source: BetheMinSource::Restarts,
            converged_restarts,
            total_sweeps,
        }),
        None => {
            let (p, trace) = run_sbp(model, &SbpConfig::default())?;
            let value = bethe_free_energy(model, &p)?;
            Ok(BetheMin {
                pseudomarginals: p,
                value,
                source: BetheMinSource::Fallback,
                converged_restarts,
                total_sweeps: total_sweeps + trace.total_sweeps,
            })
        }
    }
}
