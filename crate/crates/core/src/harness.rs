//! Batch experiments: sample models, run every requested method, score them
//! against exact marginals and write CSV/JSON results.
//!
//! All randomness is derived from the master seed and the (setting, model)
//! position, so a configuration always produces the same bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bethe::{approx_global_bethe_min, bethe_free_energy, BetheMin, BetheMinSource};
use crate::bp::{extract_pseudomarginals, init_messages, run_bp, BpParams, InitMode, Pseudomarginals, DEFAULT_TOLERANCE};
use crate::exact::{exact_inference, induced_width, min_degree_order, grid_sweep_order, ExactResult, MAX_INDUCED_WIDTH};
use crate::gibbs::{default_burn_in, run_gibbs};
use crate::graph::{build_complete, build_grid, build_random_tree, build_random_with, sample_model, scale_model, DistSpec, Graph, IsingModel};
use crate::homotopy::{run_sbp, SbpConfig};
use crate::model_io::fmt_f64;
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

/// Max message difference under which damped BP at `ζ = 1`, started from the
/// self-guided result, counts as landing on the same fixed point.
pub const FIXED_POINT_MATCH_TOL: f64 = 1e-6;

pub const RESULTS_HEADER: &str = "setting,beta,theta,model_seed,method,mse,mse_b,sweeps,converged,zeta_final,fb";
pub const SUMMARY_HEADER: &str = "setting,beta,theta,method,models,converged_models,convergence_ratio,runs,mean_mse,std_mse,model_avg_mse,mean_mse_b,mean_sweeps,fixed_point_matches";
pub const TRACE_HEADER: &str = "zeta,cumulative_sweeps,mse,mse_b,fb";

/// `(2/N) Σ_i (P_i(+1) - P̂_i(+1))²`.
pub fn mse(exact: &[f64], approx: &[f64]) -> Result<f64> {
    if exact.len() != approx.len() {
        return Err(Error::InvalidArgument(format!(
            "marginal counts differ: {} vs {}",
            exact.len(),
            approx.len()
        )));
    }
    if exact.is_empty() {
        return Ok(0.0);
    }
    let sq: f64 = exact.iter().zip(approx).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(2.0 * sq / exact.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GraphSpec {
    Grid {
        rows: usize,
        cols: usize,
    },
    Complete {
        n: usize,
    },
    Random {
        n: usize,
        avg_degree: f64,
        #[serde(default)]
        require_connected: bool,
    },
    Tree {
        n: usize,
    },
}

impl GraphSpec {
    /// Graph for one model; only the random families use `seed`.
    pub fn build(&self, seed: u64) -> Result<Graph> {
        match *self {
            GraphSpec::Grid { rows, cols } => build_grid(rows, cols),
            GraphSpec::Complete { n } => build_complete(n),
            GraphSpec::Random {
                n,
                avg_degree,
                require_connected,
            } => build_random_with(n, avg_degree, seed, require_connected),
            GraphSpec::Tree { n } => build_random_tree(n, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bp,
    BpDamped,
    Sbp,
    Gibbs,
    BetheMin,
    Exact,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Bp,
        Method::BpDamped,
        Method::Sbp,
        Method::Gibbs,
        Method::BetheMin,
        Method::Exact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bp => "bp",
            Method::BpDamped => "bp_damped",
            Method::Sbp => "sbp",
            Method::Gibbs => "gibbs",
            Method::BetheMin => "bethe_min",
            Method::Exact => "exact",
        }
    }

    fn averages_converged_only(self) -> bool {
        matches!(self, Method::Bp | Method::BpDamped)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpMethodConfig {
    pub max_sweeps: usize,
    #[serde(default)]
    pub damping: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl BpMethodConfig {
    pub fn params(&self) -> BpParams {
        BpParams {
            max_sweeps: self.max_sweeps,
            damping: self.damping,
            tolerance: self.tolerance,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.max_sweeps == 0 || !(self.tolerance > 0.0) || !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!(
                "{name}: need max_sweeps > 0, tolerance > 0 and damping in [0, 1)"
            )));
        }
        Ok(())
    }
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_bp() -> BpMethodConfig {
    let p = BpParams::default();
    BpMethodConfig {
        max_sweeps: p.max_sweeps,
        damping: p.damping,
        tolerance: p.tolerance,
    }
}

fn default_bp_damped() -> BpMethodConfig {
    let p = BpParams::damped();
    BpMethodConfig {
        max_sweeps: p.max_sweeps,
        damping: p.damping,
        tolerance: p.tolerance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsMethodConfig {
    pub total_updates: usize,
    /// Defaults to a tenth of `total_updates`.
    pub burn_in: Option<usize>,
}

impl Default for GibbsMethodConfig {
    fn default() -> Self {
        Self {
            total_updates: 100_000,
            burn_in: None,
        }
    }
}

impl GibbsMethodConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or_else(|| default_burn_in(self.total_updates))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetheMinConfig {
    pub restarts: usize,
}

impl Default for BetheMinConfig {
    fn default() -> Self {
        Self { restarts: 20 }
    }
}

/// Per-method parameters, shared by batch runs and single-model inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodParams {
    pub bp: BpMethodConfig,
    pub bp_damped: BpMethodConfig,
    pub sbp: SbpConfig,
    pub gibbs: GibbsMethodConfig,
    pub bethe_min: BetheMinConfig,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            bp: default_bp(),
            bp_damped: default_bp_damped(),
            sbp: SbpConfig::default(),
            gibbs: GibbsMethodConfig::default(),
            bethe_min: BetheMinConfig::default(),
        }
    }
}

impl MethodParams {
    pub fn validate(&self) -> Result<()> {
        self.bp.validate("bp")?;
        self.bp_damped.validate("bp_damped")?;
        self.sbp.validate()?;
        if self.gibbs.total_updates == 0 || self.gibbs.burn_in() >= self.gibbs.total_updates {
            return Err(Error::InvalidConfig("gibbs: need 0 <= burn_in < total_updates".into()));
        }
        if self.bethe_min.restarts == 0 {
            return Err(Error::InvalidConfig("bethe_min: restarts must be at least 1".into()));
        }
        Ok(())
    }
}

fn default_betas() -> Vec<f64> {
    vec![1.0]
}

fn default_models() -> usize {
    100
}

fn default_inits() -> usize {
    100
}

/// Experiment description as read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub field_spec: DistSpec,
    pub coupling_spec: DistSpec,
    /// Coupling scale factors; every value of `coupling_spec` is multiplied by β.
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    /// When present, each entry replaces `field_spec` by a constant field.
    #[serde(default)]
    pub thetas: Option<Vec<f64>>,
    #[serde(default = "default_models")]
    pub models_per_setting: usize,
    /// Random initializations per model for `bp` and `bp_damped`.
    #[serde(default = "default_inits")]
    pub inits_per_model: usize,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default = "default_bp")]
    pub bp: BpMethodConfig,
    #[serde(default = "default_bp_damped")]
    pub bp_damped: BpMethodConfig,
    #[serde(default)]
    pub sbp: SbpConfig,
    #[serde(default)]
    pub gibbs: GibbsMethodConfig,
    #[serde(default)]
    pub bethe_min: BetheMinConfig,
    #[serde(default)]
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// Minimal config with default parameters and no methods.
    pub fn new(graph: GraphSpec, field_spec: DistSpec, coupling_spec: DistSpec) -> Self {
        let p = MethodParams::default();
        Self {
            graph,
            field_spec,
            coupling_spec,
            betas: default_betas(),
            thetas: None,
            models_per_setting: default_models(),
            inits_per_model: default_inits(),
            methods: Vec::new(),
            bp: p.bp,
            bp_damped: p.bp_damped,
            sbp: p.sbp,
            gibbs: p.gibbs,
            bethe_min: p.bethe_min,
            master_seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn params(&self) -> MethodParams {
        MethodParams {
            bp: self.bp.clone(),
            bp_damped: self.bp_damped.clone(),
            sbp: self.sbp.clone(),
            gibbs: self.gibbs.clone(),
            bethe_min: self.bethe_min.clone(),
        }
    }

    /// Requested methods, deduplicated, in canonical order.
    pub fn method_set(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        m
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.models_per_setting == 0 {
            return bad("models_per_setting must be at least 1".into());
        }
        if self.inits_per_model == 0 {
            return bad("inits_per_model must be at least 1".into());
        }
        if self.betas.is_empty() || self.betas.iter().any(|b| !b.is_finite()) {
            return bad("betas must be a non-empty list of finite numbers".into());
        }
        if let Some(t) = &self.thetas {
            if t.is_empty() || t.iter().any(|v| !v.is_finite()) {
                return bad("thetas, when given, must be a non-empty list of finite numbers".into());
            }
        }
        self.field_spec.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.coupling_spec.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.params().validate()?;
        // Surfaces bad graph parameters (e.g. a 0x3 grid) as configuration errors.
        self.graph
            .build(self.master_seed)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// The `(β, θ)` grid in output order.
    pub fn settings(&self) -> Vec<Setting> {
        let thetas: Vec<Option<f64>> = match &self.thetas {
            Some(t) => t.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let mut out = Vec::new();
        for &beta in &self.betas {
            for &theta in &thetas {
                out.push(Setting {
                    index: out.len(),
                    beta,
                    theta,
                    field_spec: theta.map_or(self.field_spec, DistSpec::Constant),
                    coupling_spec: self.coupling_spec.scaled(beta),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Setting {
    pub index: usize,
    pub beta: f64,
    pub theta: Option<f64>,
    pub field_spec: DistSpec,
    pub coupling_spec: DistSpec,
}

impl Setting {
    fn theta_label(&self) -> String {
        self.theta.map_or_else(|| self.field_spec.to_string(), fmt_f64)
    }
}

/// Seed of model `l` in setting `setting`.
pub fn model_seed(master_seed: u64, setting: usize, l: usize) -> u64 {
    derive_seed(master_seed, stream::MODEL, ((setting as u64) << 32) | l as u64)
}

/// Samples the graph and potentials of one model.
pub fn generate_model(graph: &GraphSpec, setting: &Setting, seed: u64) -> Result<IsingModel> {
    let g = graph.build(derive_seed(seed, stream::GRAPH, 0))?;
    sample_model(&g, setting.field_spec, setting.coupling_spec, seed)
}

/// Every model a run of `config` would use, in output order.
pub fn generate_models(config: &ExperimentConfig) -> Result<Vec<(Setting, usize, u64, IsingModel)>> {
    config.validate()?;
    let mut out = Vec::new();
    for s in config.settings() {
        for l in 0..config.models_per_setting {
            let seed = model_seed(config.master_seed, s.index, l);
            out.push((s, l, seed, generate_model(&config.graph, &s, seed)?));
        }
    }
    Ok(out)
}

/// Fails with [`Error::Infeasible`] when exact inference on `graph` would exceed the width guard.
pub fn check_exact_feasible(graph: &Graph) -> Result<()> {
    if graph.num_nodes() <= 16 {
        return Ok(());
    }
    let mut width = induced_width(graph, &min_degree_order(graph));
    if let Some((r, c)) = graph.grid_shape() {
        width = width.min(induced_width(graph, &grid_sweep_order(r, c)));
    }
    if width > MAX_INDUCED_WIDTH {
        return Err(Error::Infeasible(format!(
            "graph with {} nodes has induced width {width} (limit {MAX_INDUCED_WIDTH})",
            graph.num_nodes()
        )));
    }
    Ok(())
}

/// Outcome of one method on one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRecord {
    pub method: Method,
    /// For `bp`/`bp_damped`: average over converged initializations.
    pub mse: Option<f64>,
    pub mse_b: Option<f64>,
    pub sweeps: Option<f64>,
    pub converged: bool,
    pub zeta_final: Option<f64>,
    pub fb: Option<f64>,
    /// Per-run MSEs that enter the flat average (converged runs only for BP).
    pub run_mses: Vec<f64>,
    pub run_sweeps: Vec<usize>,
    pub runs: usize,
    /// Self-guided runs only: whether the result is also a damped-BP fixed point of the full model.
    pub fixed_point_match: Option<bool>,
    pub error: Option<String>,
}

impl MethodRecord {
    fn empty(method: Method) -> Self {
        Self {
            method,
            mse: None,
            mse_b: None,
            sweeps: None,
            converged: false,
            zeta_final: None,
            fb: None,
            run_mses: Vec::new(),
            run_sweeps: Vec::new(),
            runs: 0,
            fixed_point_match: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub index: usize,
    pub model_seed: u64,
    pub log_z: f64,
    pub records: Vec<MethodRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub models: usize,
    pub converged_models: usize,
    pub convergence_ratio: f64,
    /// Runs entering `mean_mse`.
    pub runs: usize,
    pub mean_mse: Option<f64>,
    pub std_mse: Option<f64>,
    /// Mean of the per-model averages.
    pub model_avg_mse: Option<f64>,
    pub mean_mse_b: Option<f64>,
    pub mean_sweeps: Option<f64>,
    pub fixed_point_matches: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettingReport {
    pub setting: Setting,
    pub models: Vec<ModelReport>,
    pub summary: Vec<MethodSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub settings: Vec<SettingReport>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn std_dev(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    Some((xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt())
}

struct Scorer<'a> {
    model: &'a IsingModel,
    exact: &'a ExactResult,
    reference: Option<&'a BetheMin>,
}

impl Scorer<'_> {
    fn mse(&self, p: &[f64]) -> Result<f64> {
        mse(&self.exact.prob_plus(), p)
    }

    fn mse_b(&self, p: &[f64]) -> Result<Option<f64>> {
        self.reference
            .map(|r| mse(&r.pseudomarginals.prob_plus(), p))
            .transpose()
    }

    fn fb(&self, p: &Pseudomarginals) -> Result<f64> {
        Ok(bethe_free_energy(self.model, p)?.free_energy)
    }
}

fn run_bp_method(
    sc: &Scorer<'_>,
    cfg: &BpMethodConfig,
    method: Method,
    inits: usize,
    seed: u64,
) -> Result<MethodRecord> {
    let g = sc.model.graph();
    let params = cfg.params();
    let mut rec = MethodRecord::empty(method);
    let (mut mse_b, mut fb) = (Vec::new(), Vec::new());
    for k in 0..inits as u64 {
        let init = init_messages(g, InitMode::Random(derive_seed(seed, stream::INIT, k)));
        let out = run_bp(sc.model, &init, &params, derive_seed(seed, stream::SCHEDULE, k))?;
        if !out.converged {
            continue;
        }
        let p = extract_pseudomarginals(sc.model, &out.messages)?;
        let plus = p.prob_plus();
        rec.run_mses.push(sc.mse(&plus)?);
        rec.run_sweeps.push(out.sweeps_used);
        if let Some(b) = sc.mse_b(&plus)? {
            mse_b.push(b);
        }
        fb.push(sc.fb(&p)?);
    }
    rec.runs = inits;
    rec.converged = !rec.run_mses.is_empty();
    rec.mse = mean(&rec.run_mses);
    rec.mse_b = mean(&mse_b);
    rec.sweeps = mean(&rec.run_sweeps.iter().map(|&s| s as f64).collect::<Vec<_>>());
    rec.fb = mean(&fb);
    Ok(rec)
}

fn run_sbp_method(sc: &Scorer<'_>, cfg: &SbpConfig, seed: u64) -> Result<MethodRecord> {
    let mut cfg = cfg.clone();
    cfg.schedule_seed = derive_seed(seed, stream::SBP, cfg.schedule_seed);
    let (p, trace) = run_sbp(sc.model, &cfg)?;
    let plus = p.prob_plus();
    let mut rec = MethodRecord::empty(Method::Sbp);
    let m = sc.mse(&plus)?;
    rec.mse = Some(m);
    rec.run_mses.push(m);
    rec.mse_b = sc.mse_b(&plus)?;
    rec.sweeps = Some(trace.total_sweeps as f64);
    rec.run_sweeps.push(trace.total_sweeps);
    rec.runs = 1;
    rec.converged = trace.reached_one;
    rec.zeta_final = Some(trace.terminal_zeta);
    rec.fb = Some(sc.fb(&p)?);
    rec.fixed_point_match = Some(trace.reached_one || {
        let start = trace.final_messages();
        let out = run_bp(sc.model, start, &BpParams::damped(), derive_seed(seed, stream::SBP, u64::MAX))?;
        out.converged && out.messages.max_abs_diff(start) <= FIXED_POINT_MATCH_TOL
    });
    Ok(rec)
}

fn run_method(
    method: Method,
    sc: &Scorer<'_>,
    params: &MethodParams,
    inits: usize,
    seed: u64,
) -> Result<MethodRecord> {
    match method {
        Method::Bp => run_bp_method(sc, &params.bp, method, inits, seed),
        Method::BpDamped => run_bp_method(sc, &params.bp_damped, method, inits, seed),
        Method::Sbp => run_sbp_method(sc, &params.sbp, seed),
        Method::Gibbs => {
            let est = run_gibbs(
                sc.model,
                params.gibbs.total_updates,
                params.gibbs.burn_in(),
                derive_seed(seed, stream::GIBBS, 0),
            )?;
            let mut rec = MethodRecord::empty(method);
            let m = sc.mse(&est.singles)?;
            rec.mse = Some(m);
            rec.run_mses.push(m);
            rec.mse_b = sc.mse_b(&est.singles)?;
            rec.sweeps = Some(est.total_updates as f64);
            rec.run_sweeps.push(est.total_updates);
            rec.runs = 1;
            rec.converged = true;
            Ok(rec)
        }
        Method::BetheMin => {
            let r = sc
                .reference
                .ok_or_else(|| Error::Numerical("Bethe reference missing".into()))?;
            let plus = r.pseudomarginals.prob_plus();
            let mut rec = MethodRecord::empty(method);
            let m = sc.mse(&plus)?;
            rec.mse = Some(m);
            rec.run_mses.push(m);
            rec.mse_b = Some(0.0);
            rec.sweeps = Some(r.total_sweeps as f64);
            rec.run_sweeps.push(r.total_sweeps);
            rec.runs = 1;
            rec.converged = r.source == BetheMinSource::Restarts;
            rec.fb = Some(r.value.free_energy);
            Ok(rec)
        }
        Method::Exact => {
            let plus = sc.exact.prob_plus();
            let mut rec = MethodRecord::empty(method);
            rec.mse = Some(0.0);
            rec.run_mses.push(0.0);
            rec.mse_b = sc.mse_b(&plus)?;
            rec.sweeps = Some(0.0);
            rec.run_sweeps.push(0);
            rec.runs = 1;
            rec.converged = true;
            rec.fb = Some(sc.exact.free_energy());
            Ok(rec)
        }
    }
}

fn evaluate_model(
    config: &ExperimentConfig,
    methods: &[Method],
    params: &MethodParams,
    setting: &Setting,
    index: usize,
) -> Result<ModelReport> {
    let seed = model_seed(config.master_seed, setting.index, index);
    let model = generate_model(&config.graph, setting, seed)?;
    let exact = exact_inference(&model)?;
    let reference = if methods.contains(&Method::BetheMin) {
        Some(approx_global_bethe_min(
            &model,
            params.bethe_min.restarts,
            derive_seed(seed, stream::RESTART, 0),
        )?)
    } else {
        None
    };
    let sc = Scorer {
        model: &model,
        exact: &exact,
        reference: reference.as_ref(),
    };
    let records = methods
        .iter()
        .map(|&m| {
            run_method(m, &sc, params, config.inits_per_model, seed).unwrap_or_else(|e| MethodRecord {
                error: Some(e.to_string()),
                ..MethodRecord::empty(m)
            })
        })
        .collect();
    Ok(ModelReport {
        index,
        model_seed: seed,
        log_z: exact.log_z,
        records,
    })
}

fn summarize(method: Method, models: &[ModelReport]) -> MethodSummary {
    let recs: Vec<&MethodRecord> = models
        .iter()
        .flat_map(|m| m.records.iter().filter(|r| r.method == method))
        .collect();
    let converged_models = recs.iter().filter(|r| r.converged).count();
    let flat: Vec<f64> = recs.iter().flat_map(|r| r.run_mses.iter().copied()).collect();
    let sweeps: Vec<f64> = recs
        .iter()
        .flat_map(|r| r.run_sweeps.iter().map(|&s| s as f64))
        .collect();
    let per_model: Vec<f64> = recs.iter().filter_map(|r| r.mse).collect();
    let mse_b: Vec<f64> = if method.averages_converged_only() {
        recs.iter().filter(|r| r.converged).filter_map(|r| r.mse_b).collect()
    } else {
        recs.iter().filter_map(|r| r.mse_b).collect()
    };
    MethodSummary {
        method,
        models: recs.len(),
        converged_models,
        convergence_ratio: converged_models as f64 / recs.len().max(1) as f64,
        runs: flat.len(),
        mean_mse: mean(&flat),
        std_mse: std_dev(&flat),
        model_avg_mse: mean(&per_model),
        mean_mse_b: mean(&mse_b),
        mean_sweeps: mean(&sweeps),
        fixed_point_matches: (method == Method::Sbp)
            .then(|| recs.iter().filter(|r| r.fixed_point_match == Some(true)).count()),
    }
}

/// Runs every setting of `config`. Models within a setting run in parallel;
/// the report is ordered and does not depend on thread scheduling.
///
/// Fails with [`Error::Infeasible`] before any work if some model is too
/// large for exact inference. Individual method failures are recorded in
/// the report instead.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let methods = config.method_set();
    let mut report = RunReport {
        config: config.clone(),
        settings: Vec::new(),
    };
    if methods.is_empty() {
        return Ok(report);
    }
    let settings = config.settings();
    for s in &settings {
        for l in 0..config.models_per_setting {
            let seed = model_seed(config.master_seed, s.index, l);
            check_exact_feasible(generate_model(&config.graph, s, seed)?.graph())?;
        }
    }
    let params = config.params();
    for s in settings {
        let models = (0..config.models_per_setting)
            .into_par_iter()
            .map(|l| evaluate_model(config, &methods, &params, &s, l))
            .collect::<Result<Vec<_>>>()?;
        let summary = methods.iter().map(|&m| summarize(m, &models)).collect();
        report.settings.push(SettingReport {
            setting: s,
            models,
            summary,
        });
    }
    Ok(report)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

impl RunReport {
    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }

    /// One row per (setting, model, method).
    pub fn results_csv(&self) -> String {
        let mut out = format!("{RESULTS_HEADER}\n");
        for s in &self.settings {
            let st = &s.setting;
            for m in &s.models {
                for r in &m.records {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{},{}",
                        st.index,
                        fmt_f64(st.beta),
                        st.theta_label(),
                        m.model_seed,
                        r.method.as_str(),
                        opt(r.mse),
                        opt(r.mse_b),
                        opt(r.sweeps),
                        r.converged,
                        opt(r.zeta_final),
                        opt(r.fb),
                    );
                }
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for s in &self.settings {
            let st = &s.setting;
            for a in &s.summary {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    st.index,
                    fmt_f64(st.beta),
                    st.theta_label(),
                    a.method.as_str(),
                    a.models,
                    a.converged_models,
                    fmt_f64(a.convergence_ratio),
                    a.runs,
                    opt(a.mean_mse),
                    opt(a.std_mse),
                    opt(a.model_avg_mse),
                    opt(a.mean_mse_b),
                    opt(a.mean_sweeps),
                    a.fixed_point_matches.map(|c| c.to_string()).unwrap_or_default(),
                );
            }
        }
        out
    }

    /// Summary for `method` in setting `setting`.
    pub fn summary(&self, setting: usize, method: Method) -> Option<&MethodSummary> {
        self.settings
            .get(setting)?
            .summary
            .iter()
            .find(|a| a.method == method)
    }
}

/// Notes on units and thresholds, written next to the results.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub crate_version: &'static str,
    pub sweeps_unit: &'static str,
    pub gibbs_sweeps_unit: &'static str,
    pub bp_aggregation: &'static str,
    pub fb_column: &'static str,
    pub fixed_point_match_tolerance: f64,
}

impl Default for RunMeta {
    fn default() -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION"),
            sweeps_unit: "one sweep updates every directed message once",
            gibbs_sweeps_unit: "one single-site update",
            bp_aggregation: "mean_mse averages all converged runs of all models; model_avg_mse averages per-model means",
            fb_column: "Bethe free energy of the returned beliefs under the unscaled model; exact rows give -ln Z",
            fixed_point_match_tolerance: FIXED_POINT_MATCH_TOL,
        }
    }
}

/// Writes `results.csv`, `summary.csv`, `report.json` and `meta.json` into
/// `dir` and returns their paths. An empty report writes nothing.
pub fn write_outputs(report: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Ok(Vec::new());
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = [
        ("results.csv", report.results_csv()),
        ("summary.csv", report.summary_csv()),
        ("report.json", serde_json::to_string_pretty(report)?),
        ("meta.json", serde_json::to_string_pretty(&RunMeta::default())?),
    ];
    let mut paths = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body)?;
        paths.push(p);
    }
    Ok(paths)
}

/// One converged point of a self-guided run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub zeta: f64,
    pub cumulative_sweeps: usize,
    /// Against the exact marginals of the unscaled model.
    pub mse: f64,
    pub mse_b: Option<f64>,
    /// Bethe free energy of the beliefs under the model scaled to `zeta`.
    pub fb: f64,
}

/// Follows one self-guided run and scores every fixed point along the path.
/// `bethe_restarts = 0` skips the Bethe reference and leaves `mse_b` empty.
pub fn trace_experiment(model: &IsingModel, config: &SbpConfig, bethe_restarts: usize, seed: u64) -> Result<Vec<TraceRow>> {
    check_exact_feasible(model.graph())?;
    let exact = exact_inference(model)?.prob_plus();
    let reference = if bethe_restarts > 0 {
        Some(approx_global_bethe_min(model, bethe_restarts, seed)?.pseudomarginals.prob_plus())
    } else {
        None
    };
    let (_, trace) = run_sbp(model, config)?;
    let mut cumulative = 0;
    let mut rows = Vec::new();
    for (k, (&zeta, fp)) in trace.zetas.iter().zip(&trace.fixed_points).enumerate() {
        cumulative += trace.step_sweeps[k];
        let scaled = scale_model(model, zeta)?;
        let p = extract_pseudomarginals(&scaled, fp)?;
        let plus = p.prob_plus();
        rows.push(TraceRow {
            zeta,
            cumulative_sweeps: cumulative,
            mse: mse(&exact, &plus)?,
            mse_b: reference.as_ref().map(|r| mse(r, &plus)).transpose()?,
            fb: bethe_free_energy(&scaled, &p)?.free_energy,
        });
    }
    Ok(rows)
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(r.zeta),
            r.cumulative_sweeps,
            fmt_f64(r.mse),
            opt(r.mse_b),
            fmt_f64(r.fb)
        );
    }
    out
}

/// Marginals of one model under one method, as printed by the `infer` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferResult {
    pub method: Method,
    pub prob_plus: Vec<f64>,
    pub means: Vec<f64>,
    pub correlations: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub zeta_final: Option<f64>,
    pub bethe_free_energy: Option<f64>,
    pub log_z: Option<f64>,
}

/// Runs a single method on `model`. BP variants start from one random
/// initialization drawn from `seed`.
pub fn infer(model: &IsingModel, method: Method, params: &MethodParams, seed: u64) -> Result<InferResult> {
    params.validate()?;
    let from_beliefs = |p: &Pseudomarginals, converged, sweeps, zeta_final| -> Result<InferResult> {
        Ok(InferResult {
            method,
            prob_plus: p.prob_plus(),
            means: p.means(),
            correlations: p.correlations(),
            converged,
            sweeps,
            zeta_final,
            bethe_free_energy: Some(bethe_free_energy(model, p)?.free_energy),
            log_z: None,
        })
    };
    match method {
        Method::Bp | Method::BpDamped => {
            let cfg = if method == Method::Bp { &params.bp } else { &params.bp_damped };
            let init = init_messages(model.graph(), InitMode::Random(derive_seed(seed, stream::INIT, 0)));
            let out = run_bp(model, &init, &cfg.params(), derive_seed(seed, stream::SCHEDULE, 0))?;
            let p = extract_pseudomarginals(model, &out.messages)?;
            from_beliefs(&p, out.converged, out.sweeps_used, None)
        }
        Method::Sbp => {
            let mut cfg = params.sbp.clone();
            cfg.schedule_seed = derive_seed(seed, stream::SBP, cfg.schedule_seed);
            let (p, trace) = run_sbp(model, &cfg)?;
            from_beliefs(&p, trace.reached_one, trace.total_sweeps, Some(trace.terminal_zeta))
        }
        Method::BetheMin => {
            let r = approx_global_bethe_min(model, params.bethe_min.restarts, seed)?;
            from_beliefs(&r.pseudomarginals, r.source == BetheMinSource::Restarts, r.total_sweeps, None)
        }
        Method::Gibbs => {
            let est = run_gibbs(model, params.gibbs.total_updates, params.gibbs.burn_in(), seed)?;
            Ok(InferResult {
                method,
                means: est.singles.iter().map(|p| 2.0 * p - 1.0).collect(),
                prob_plus: est.singles,
                correlations: est.correlations,
                converged: true,
                sweeps: est.total_updates,
                zeta_final: None,
                bethe_free_energy: None,
                log_z: None,
            })
        }
        Method::Exact => {
            check_exact_feasible(model.graph())?;
            let r = exact_inference(model)?;
            let p = r.to_pseudomarginals();
            Ok(InferResult {
                method,
                prob_plus: p.prob_plus(),
                means: p.means(),
                correlations: p.correlations(),
                converged: true,
                sweeps: 0,
                zeta_final: None,
                bethe_free_energy: None,
                log_z: Some(r.log_z),
            })
        }
    }
}

/// Process exit code for an error: 2 for bad configuration or input, 3 for
/// infeasible exact inference, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Infeasible(_) => 3,
        Error::InvalidConfig(_)
        | Error::InvalidSpec(_)
        | Error::InvalidArgument(_)
        | Error::InvalidGraph(_)
        | Error::InvalidModel(_)
        | Error::Parse { .. }
        | Error::Json(_) => 2,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(methods: &[Method]) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            GraphSpec::Grid { rows: 3, cols: 3 },
            DistSpec::Constant(0.4),
            DistSpec::RademacherScaled(1.0),
        );
        c.models_per_setting = 3;
        c.inits_per_model = 4;
        c.methods = methods.to_vec();
        c.gibbs.total_updates = 5_000;
        c.bethe_min.restarts = 3;
        c.master_seed = 17;
        c
    }

    #[test]
    fn mse_formula() {
        assert_eq!(mse(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((mse(&[0.69], &[0.5]).unwrap() - 0.0722).abs() < 1e-12);
        assert!((mse(&[0.5, 0.5], &[0.6, 0.4]).unwrap() - 0.02).abs() < 1e-12);
        assert!(mse(&[0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn config_json_defaults_and_errors() {
        let c = ExperimentConfig::from_json(
            r#"{"graph": {"family": "grid", "rows": 5, "cols": 5},
                "field_spec": "constant:0.4", "coupling_spec": "rademacher:1",
                "methods": ["sbp", "exact"]}"#,
        )
        .unwrap();
        assert_eq!(c.models_per_setting, 100);
        assert_eq!(c.inits_per_model, 100);
        assert_eq!(c.bp_damped.damping, 0.9);
        assert_eq!(c.bp_damped.max_sweeps, 10_000);
        assert_eq!(c.sbp, SbpConfig::default());
        assert_eq!(c.betas, vec![1.0]);

        for bad in [
            r#"{"graph": {"family": "grid", "rows": 5, "cols": 5}, "field_spec": "constant:0", "coupling_spec": "rademacher:1", "models_per_setting": 0}"#,
            r#"{"graph": {"family": "grid", "rows": 0, "cols": 5}, "field_spec": "constant:0", "coupling_spec": "rademacher:1"}"#,
            r#"{"graph": {"family": "grid", "rows": 2, "cols": 2}, "field_spec": "gauss:0", "coupling_spec": "rademacher:1"}"#,
            r#"{"graph": {"family": "grid", "rows": 2, "cols": 2}, "field_spec": "constant:0", "coupling_spec": "rademacher:1", "colour": 3}"#,
            r#"{"graph": {"family": "grid", "rows": 2, "cols": 2}, "field_spec": "constant:0", "coupling_spec": "rademacher:1", "sbp": {"step_init": 0}}"#,
        ] {
            let err = ExperimentConfig::from_json(bad).unwrap_err();
            assert_eq!(exit_code(&err), 2, "{bad}: {err}");
        }
    }

    #[test]
    fn settings_grid() {
        let mut c = small_config(&[]);
        c.betas = vec![0.5, 2.0];
        c.thetas = Some(vec![0.0, 0.1, 0.4]);
        let s = c.settings();
        assert_eq!(s.len(), 6);
        assert_eq!(s[4].beta, 2.0);
        assert_eq!(s[4].field_spec, DistSpec::Constant(0.1));
        assert_eq!(s[4].coupling_spec, DistSpec::RademacherScaled(2.0));
        assert_eq!(s.iter().map(|x| x.index).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn empty_method_set_writes_nothing() {
        let report = run_experiment(&small_config(&[])).unwrap();
        assert!(report.is_empty());
        let dir = tempfile::tempdir().unwrap();
        assert!(write_outputs(&report, dir.path().join("out")).unwrap().is_empty());
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn full_run_shape_and_determinism() {
        let all = Method::ALL.to_vec();
        let c = small_config(&all);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.results_csv(), b.results_csv());
        assert_eq!(a.summary_csv(), b.summary_csv());

        let csv = a.results_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], RESULTS_HEADER);
        assert_eq!(lines.len(), 1 + 3 * all.len());
        for l in &lines[1..] {
            assert_eq!(l.split(',').count(), 11);
        }
        let s = &a.settings[0];
        for m in &s.models {
            assert_eq!(m.records.len(), all.len());
            assert!(m.records.iter().all(|r| r.error.is_none()));
            let exact = m.records.iter().find(|r| r.method == Method::Exact).unwrap();
            assert_eq!(exact.fb, Some(-m.log_z));
            let bm = m.records.iter().find(|r| r.method == Method::BetheMin).unwrap();
            assert_eq!(bm.mse_b, Some(0.0));
        }
        let sbp = a.summary(0, Method::Sbp).unwrap();
        assert_eq!(sbp.models, 3);
        assert_eq!(sbp.runs, 3);
        assert!(sbp.fixed_point_matches.is_some());
        let bp = a.summary(0, Method::Bp).unwrap();
        assert!(bp.runs <= 12);
        assert!((bp.convergence_ratio - bp.converged_models as f64 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bp_averages_only_converged_runs() {
        let mut c = small_config(&[Method::Bp]);
        c.bp.max_sweeps = 1;
        let r = run_experiment(&c).unwrap();
        let s = r.summary(0, Method::Bp).unwrap();
        assert_eq!(s.converged_models, 0);
        assert_eq!(s.runs, 0);
        assert_eq!(s.mean_mse, None);
        assert!(r.results_csv().lines().skip(1).all(|l| l.contains(",bp,,,,false,,")));
    }

    #[test]
    fn infeasible_exact_fails_fast() {
        let mut c = small_config(&[Method::Sbp]);
        c.graph = GraphSpec::Complete { n: 30 };
        let err = run_experiment(&c).unwrap_err();
        assert_eq!(exit_code(&err), 3);
    }

    #[test]
    fn trace_rows() {
        let g = build_grid(4, 4).unwrap();
        let m = sample_model(&g, DistSpec::Constant(0.3), DistSpec::Uniform(0.0, 1.5), 3).unwrap();
        let rows = trace_experiment(&m, &SbpConfig::default(), 3, 1).unwrap();
        assert_eq!(rows[0].zeta, 0.0);
        assert!(rows.windows(2).all(|w| w[1].fb <= w[0].fb + 1e-8));
        assert!(rows.windows(2).all(|w| w[1].cumulative_sweeps > w[0].cumulative_sweeps));
        assert!(rows.iter().all(|r| r.mse_b.is_some()));
        let csv = trace_csv(&rows);
        assert_eq!(csv.lines().count(), rows.len() + 1);

        let flat = sample_model(&g, DistSpec::Constant(0.0), DistSpec::Uniform(0.0, 1.5), 3).unwrap();
        let rows = trace_experiment(&flat, &SbpConfig::default(), 0, 1).unwrap();
        assert!(rows.iter().all(|r| r.mse < 1e-24 && r.mse_b.is_none()));
    }

    #[test]
    fn infer_every_method() {
        let g = build_grid(3, 3).unwrap();
        let m = sample_model(&g, DistSpec::Uniform(-0.5, 0.5), DistSpec::Uniform(0.0, 1.0), 2).unwrap();
        let mut params = MethodParams::default();
        params.gibbs.total_updates = 20_000;
        let exact = infer(&m, Method::Exact, &params, 0).unwrap();
        for method in Method::ALL {
            let r = infer(&m, method, &params, 5).unwrap();
            assert_eq!(r.prob_plus.len(), 9);
            assert_eq!(r.correlations.len(), g.num_edges());
            let tol = if method == Method::Gibbs { 0.05 } else { 0.02 };
            assert!(mse(&exact.prob_plus, &r.prob_plus).unwrap() < tol, "{method:?}");
        }
        assert!(exact.log_z.is_some());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        assert!("belief".parse::<Method>().is_err());
    }
}
