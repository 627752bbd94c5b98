//! Self-guided belief propagation.
//!
//! The couplings are scaled by `ζ` running from 0 to 1. At `ζ = 0` every
//! variable is independent and BP is exact, with a unique fixed point
//! reached from uniform messages in one sweep. Each later model is solved
//! by BP started from an extrapolation of the fixed points already found,
//! so the run follows one continuous path of fixed points. When BP stops
//! converging the driver returns the last fixed point it reached.

use serde::{Deserialize, Serialize};

use crate::bp::{extract_pseudomarginals, run_bp, BpParams, MessageSet, Pseudomarginals, DEFAULT_TOLERANCE};
use crate::graph::{scale_model, IsingModel};
use crate::rng::{derive_seed, stream};
use crate::spline::NaturalCubicSpline;
use crate::{Error, Result};

/// Extrapolated message entries are clamped into `[EXTRAPOLATION_CLAMP, 1 - EXTRAPOLATION_CLAMP]`.
pub const EXTRAPOLATION_CLAMP: f64 = 1e-6;

/// Steps ending this close below 1 are taken to 1.
const ZETA_SNAP: f64 = 1e-9;

/// Most recent fixed points used by the spline.
const MAX_SPLINE_POINTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbpConfig {
    pub step_init: f64,
    pub adaptive: bool,
    /// Cap on the number of scaled models attempted; the last allowed attempt is forced to `ζ = 1`.
    pub max_models: usize,
    pub bp_max_sweeps: usize,
    pub bp_tolerance: f64,
    /// Number of earlier fixed points used besides the latest one when extrapolating.
    pub extrapolation_depth: usize,
    pub adaptive_threshold: f64,
    pub schedule_seed: u64,
    /// How many times a failed step may be halved and retried. Zero stops at the first failure.
    pub retry_halvings: usize,
}

impl Default for SbpConfig {
    fn default() -> Self {
        Self {
            step_init: 0.1,
            adaptive: true,
            max_models: 10,
            bp_max_sweeps: 1000,
            bp_tolerance: DEFAULT_TOLERANCE,
            extrapolation_depth: 3,
            adaptive_threshold: 1e-3,
            schedule_seed: 0,
            retry_halvings: 0,
        }
    }
}

impl SbpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_init > 0.0 && self.step_init <= 1.0) {
            return Err(Error::InvalidConfig(format!("step_init {} outside (0, 1]", self.step_init)));
        }
        if self.max_models == 0 || self.bp_max_sweeps == 0 {
            return Err(Error::InvalidConfig("max_models and bp_max_sweeps must be positive".into()));
        }
        if !(self.bp_tolerance > 0.0 && self.adaptive_threshold > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Record of one run along the path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SbpTrace {
    /// Scale values attempted, strictly increasing from 0. When the run stopped on a
    /// non-converging model its value is the last entry and has no fixed point.
    pub zetas: Vec<f64>,
    /// One fixed point per converged entry of `zetas`, in order.
    pub fixed_points: Vec<MessageSet>,
    /// BP sweeps spent on each entry of `zetas`.
    pub step_sweeps: Vec<usize>,
    /// Failed attempts that were retried with a halved step.
    pub rejected_zetas: Vec<f64>,
    pub terminal_zeta: f64,
    pub reached_one: bool,
    pub total_sweeps: usize,
    pub models_attempted: usize,
}

impl SbpTrace {
    /// Scale value of each recorded fixed point.
    pub fn fixed_point_zetas(&self) -> &[f64] {
        &self.zetas[..self.fixed_points.len()]
    }

    pub fn final_messages(&self) -> &MessageSet {
        self.fixed_points.last().expect("a trace always holds the ζ = 0 fixed point")
    }
}

/// Runs the homotopy and returns the beliefs of the last fixed point, extracted
/// under that fixed point's own scaled model.
pub fn run_sbp(model: &IsingModel, config: &SbpConfig) -> Result<(Pseudomarginals, SbpTrace)> {
    config.validate()?;
    let params = BpParams {
        max_sweeps: config.bp_max_sweeps,
        damping: 0.0,
        tolerance: config.bp_tolerance,
    };
    let mut history: Vec<(f64, MessageSet)> = Vec::new();
    let mut trace = SbpTrace {
        zetas: Vec::new(),
        fixed_points: Vec::new(),
        step_sweeps: Vec::new(),
        rejected_zetas: Vec::new(),
        terminal_zeta: 0.0,
        reached_one: false,
        total_sweeps: 0,
        models_attempted: 0,
    };
    let mut retries_left = config.retry_halvings;
    let mut zeta = 0.0;
    loop {
        trace.models_attempted += 1;
        let scaled = scale_model(model, zeta)?;
        let init = match history.len() {
            0 => MessageSet::uniform(model.graph()),
            len => {
                let from = len.saturating_sub(config.extrapolation_depth + 1);
                extrapolate_messages(&history[from..], zeta)?
            }
        };
        let seed = derive_seed(config.schedule_seed, stream::SCHEDULE, trace.models_attempted as u64);
        let outcome = run_bp(&scaled, &init, &params, seed)?;
        trace.total_sweeps += outcome.sweeps_used;

        if !outcome.converged {
            let last = history.last().map(|(z, _)| *z);
            match last {
                Some(prev) if retries_left > 0 && trace.models_attempted < config.max_models => {
                    retries_left -= 1;
                    trace.rejected_zetas.push(zeta);
                    zeta = prev + 0.5 * (zeta - prev);
                    continue;
                }
                _ => {
                    trace.zetas.push(zeta);
                    trace.step_sweeps.push(outcome.sweeps_used);
                    break;
                }
            }
        }

        trace.zetas.push(zeta);
        trace.step_sweeps.push(outcome.sweeps_used);
        history.push((zeta, outcome.messages));
        if zeta >= 1.0 || trace.models_attempted >= config.max_models {
            break;
        }
        let step = if config.adaptive {
            let msgs: Vec<&MessageSet> = history.iter().map(|(_, m)| m).collect();
            adaptive_step(&msgs, config.step_init, config.adaptive_threshold)
        } else {
            config.step_init
        };
        zeta = if trace.models_attempted + 1 >= config.max_models {
            1.0
        } else {
            let next = zeta + step;
            // Absorb rounding from repeated float steps so 0.1 x 10 lands on 1.
            if next >= 1.0 - ZETA_SNAP {
                1.0
            } else {
                next
            }
        };
    }

    let (terminal_zeta, _) = history
        .last()
        .ok_or_else(|| Error::Numerical("BP failed to converge on the independent model".into()))?;
    trace.terminal_zeta = *terminal_zeta;
    trace.reached_one = *terminal_zeta == 1.0;
    trace.fixed_points = history.into_iter().map(|(_, m)| m).collect();
    let beliefs = extract_pseudomarginals(&scale_model(model, trace.terminal_zeta)?, trace.final_messages())?;
    Ok((beliefs, trace))
}

/// Step-size controller: starts from `step_init` and keeps enlarging the step
/// while the latest fixed point stays within `threshold` (mean squared
/// message difference) of the fixed points `k = 1, 2, ...` steps back.
pub fn adaptive_step(history: &[&MessageSet], step_init: f64, threshold: f64) -> f64 {
    let Some(m) = history.len().checked_sub(1) else {
        return step_init;
    };
    let mut step = step_init;
    let mut k = 1;
    while k < history.len() && history[m].mse(history[m - k]) < threshold {
        k += 1;
        step += step_init * k as f64;
    }
    step
}

/// Warm start for the model at `target`: the latest fixed point (one entry),
/// a linear extrapolation (two), or a natural cubic spline through the last
/// up to four fixed points, per message entry. Extrapolated pairs are clamped
/// and renormalized.
pub fn extrapolate_messages(history: &[(f64, MessageSet)], target: f64) -> Result<MessageSet> {
    let Some((last_zeta, last)) = history.last() else {
        return Err(Error::InvalidArgument("extrapolation needs at least one fixed point".into()));
    };
    if !(target > *last_zeta) {
        return Err(Error::InvalidArgument(format!(
            "target {target} must exceed the latest scale value {last_zeta}"
        )));
    }
    if history.len() == 1 {
        return Ok(last.clone());
    }
    let points = &history[history.len().saturating_sub(MAX_SPLINE_POINTS)..];
    let xs: Vec<f64> = points.iter().map(|(z, _)| *z).collect();
    let mut ys = vec![0.0; points.len()];
    let mut values = Vec::with_capacity(last.len());
    for d in 0..last.len() {
        let mut pair = [0.0; 2];
        for (s, slot) in pair.iter_mut().enumerate() {
            for (y, (_, m)) in ys.iter_mut().zip(points) {
                *y = m.get(d)[s];
            }
            let v = NaturalCubicSpline::new(&xs, &ys)?.eval(target);
            *slot = v.clamp(EXTRAPOLATION_CLAMP, 1.0 - EXTRAPOLATION_CLAMP);
        }
        let total = pair[0] + pair[1];
        values.push([pair[0] / total, pair[1] / total]);
    }
    Ok(MessageSet::from_normalized(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp::residual;
    use crate::exact::enumerate_exact;
    use crate::graph::{build_grid, sample_model, DistSpec, Graph};

    fn msgs(values: Vec<[f64; 2]>) -> MessageSet {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        MessageSet::from_pairs(&g, values).unwrap()
    }

    #[test]
    fn adaptive_step_cases() {
        let a = msgs(vec![[0.5, 0.5], [0.5, 0.5]]);
        let b = msgs(vec![[0.1, 0.9], [0.1, 0.9]]);
        assert_eq!(adaptive_step(&[&a], 0.1, 1e-3), 0.1);
        // Identical last two, far at depth two: one pass, step = 0.1 + 0.1 * 2.
        let s = adaptive_step(&[&b, &a, &a], 0.1, 1e-3);
        assert!((s - 0.3).abs() < 1e-15);
        assert_eq!(adaptive_step(&[&a, &b], 0.1, 1e-3), 0.1);
        // All identical: passes at k = 1, 2 for three points: 0.1 + 0.2 + 0.3.
        assert!((adaptive_step(&[&a, &a, &a], 0.1, 1e-3) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn extrapolation_cases() {
        let a = msgs(vec![[0.6, 0.4], [0.3, 0.7]]);
        assert_eq!(extrapolate_messages(&[(0.1, a.clone())], 0.5).unwrap(), a);
        let flat = extrapolate_messages(&[(0.1, a.clone()), (0.2, a.clone())], 0.7).unwrap();
        assert!(flat.max_abs_diff(&a) < 1e-15);
        let b = msgs(vec![[0.5, 0.5], [0.3, 0.7]]);
        let out = extrapolate_messages(&[(0.1, a.clone()), (0.2, b)], 0.3).unwrap();
        assert!((out.get(0)[1] - 0.6).abs() < 1e-12);
        assert!((out.get(0)[0] - 0.4).abs() < 1e-12);
        assert!(extrapolate_messages(&[(0.1, a.clone())], 0.1).is_err());
        assert!(extrapolate_messages(&[], 0.1).is_err());
    }

    #[test]
    fn extrapolation_clamps_overshoot() {
        let a = msgs(vec![[0.5, 0.5]; 2]);
        let b = msgs(vec![[0.05, 0.95]; 2]);
        let out = extrapolate_messages(&[(0.0, a), (0.1, b)], 1.0).unwrap();
        for p in out.pairs() {
            assert!(p[0] > 0.0 && (p[0] + p[1] - 1.0).abs() < 1e-15);
            assert!((p[0] - EXTRAPOLATION_CLAMP).abs() < 1e-12);
        }
    }

    #[test]
    fn spline_used_with_many_points() {
        // Only the last four points enter; the natural spline through
        // (0.1..0.4, 0.5 + 0.3 z^2) continued to 0.5 gives 0.569 (reference value).
        let f = |z: f64| 0.5 + 0.3 * z * z;
        let hist: Vec<(f64, MessageSet)> = [0.0, 0.1, 0.2, 0.3, 0.4]
            .iter()
            .map(|&z| (z, msgs(vec![[1.0 - f(z), f(z)]; 2])))
            .collect();
        let out = extrapolate_messages(&hist, 0.5).unwrap();
        assert!((out.get(0)[1] - 0.569).abs() < 1e-12);
    }

    #[test]
    fn zero_field_attractive_is_exact() {
        let g = build_grid(4, 4).unwrap();
        let m = sample_model(&g, DistSpec::Constant(0.0), DistSpec::Uniform(0.5, 3.0), 8).unwrap();
        let (p, trace) = run_sbp(&m, &SbpConfig::default()).unwrap();
        assert!(trace.reached_one);
        assert!(p.singles.iter().all(|s| *s == [0.5, 0.5]));
        assert!(trace.fixed_points.iter().all(|f| f.pairs().iter().all(|q| *q == [0.5, 0.5])));
    }

    #[test]
    fn pair_model_exact_at_every_scale() {
        for (j, t) in [(3.0, 0.2), (-2.5, -0.7), (0.4, 1.0)] {
            let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
            let m = IsingModel::new(g, vec![j], vec![t, -0.3]).unwrap();
            let (p, trace) = run_sbp(&m, &SbpConfig::default()).unwrap();
            assert!(trace.reached_one);
            let exact = enumerate_exact(&m).unwrap();
            for (a, b) in p.singles.iter().zip(&exact.singles) {
                assert!((a[1] - b[1]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn trace_invariants_and_determinism() {
        let g = build_grid(5, 5).unwrap();
        for seed in 0..5 {
            let m = sample_model(&g, DistSpec::Constant(0.4), DistSpec::RademacherScaled(1.0), seed).unwrap();
            let cfg = SbpConfig::default();
            let (p, trace) = run_sbp(&m, &cfg).unwrap();
            assert_eq!(trace.zetas[0], 0.0);
            assert!(trace.zetas.windows(2).all(|w| w[1] > w[0]));
            assert!(*trace.zetas.last().unwrap() <= 1.0);
            assert!(trace.models_attempted <= cfg.max_models);
            assert!(trace.total_sweeps <= trace.models_attempted * cfg.bp_max_sweeps);
            assert_eq!(trace.total_sweeps, trace.step_sweeps.iter().sum::<usize>());
            for (z, f) in trace.fixed_point_zetas().iter().zip(&trace.fixed_points) {
                let scaled = scale_model(&m, *z).unwrap();
                assert!(residual(&scaled, f).unwrap() <= 10.0 * cfg.bp_tolerance);
            }
            let (p2, trace2) = run_sbp(&m, &cfg).unwrap();
            assert_eq!(p, p2);
            assert_eq!(trace, trace2);
        }
    }

    #[test]
    fn fixed_steps_respect_model_cap() {
        let g = build_grid(3, 3).unwrap();
        let m = sample_model(&g, DistSpec::Constant(0.3), DistSpec::Uniform(0.0, 0.5), 1).unwrap();
        let cfg = SbpConfig { adaptive: false, ..SbpConfig::default() };
        let (_, trace) = run_sbp(&m, &cfg).unwrap();
        assert!(trace.reached_one);
        assert_eq!(trace.models_attempted, 10);
        let expect = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0];
        for (a, b) in trace.zetas.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let cfg = SbpConfig { adaptive: false, max_models: 100, ..SbpConfig::default() };
        let (_, trace) = run_sbp(&m, &cfg).unwrap();
        assert_eq!(trace.models_attempted, 11);
        assert_eq!(*trace.zetas.last().unwrap(), 1.0);
    }

    #[test]
    fn stops_at_last_stable_fixed_point() {
        // A one-sweep budget converges only when the warm start is already a fixed point.
        let g = build_grid(4, 4).unwrap();
        let m = sample_model(&g, DistSpec::Constant(0.4), DistSpec::RademacherScaled(1.5), 3).unwrap();
        let cfg = SbpConfig { bp_max_sweeps: 1, ..SbpConfig::default() };
        let (p, trace) = run_sbp(&m, &cfg).unwrap();
        assert!(!trace.reached_one);
        assert_eq!(trace.terminal_zeta, 0.0);
        assert_eq!(trace.fixed_points.len(), 1);
        assert_eq!(trace.zetas.len(), 2);
        let independent = scale_model(&m, 0.0).unwrap();
        let expect = crate::bp::extract_pseudomarginals(&independent, &MessageSet::uniform(&g)).unwrap();
        assert_eq!(p, expect);
    }

    #[test]
    fn retry_mode_halves_the_step() {
        let g = build_grid(4, 4).unwrap();
        let m = sample_model(&g, DistSpec::Constant(0.4), DistSpec::RademacherScaled(1.5), 3).unwrap();
        let cfg = SbpConfig { bp_max_sweeps: 1, retry_halvings: 2, ..SbpConfig::default() };
        let (_, trace) = run_sbp(&m, &cfg).unwrap();
        assert_eq!(trace.rejected_zetas.len(), 2);
        assert!((trace.rejected_zetas[1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let m = sample_model(&build_grid(2, 2).unwrap(), DistSpec::Constant(0.1), DistSpec::Constant(0.1), 0).unwrap();
        for bad in [
            SbpConfig { step_init: 0.0, ..SbpConfig::default() },
            SbpConfig { step_init: -0.1, ..SbpConfig::default() },
            SbpConfig { max_models: 0, ..SbpConfig::default() },
        ] {
            assert!(matches!(run_sbp(&m, &bad), Err(Error::InvalidConfig(_))));
        }
    }
}
