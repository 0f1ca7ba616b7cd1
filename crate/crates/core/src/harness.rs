//! Monte Carlo trials, threshold location, rate predictions and CSV sweeps.
//!
//! Every random draw in a trial comes from seeds derived from
//! `(master_seed, trial index)`, so outcomes do not depend on scheduling or on
//! which other trials run. Trials are spread over the global rayon pool and
//! collected in index order.

use std::collections::HashSet;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{corrupt, derive_seed, ChannelError};
use crate::graphs::{gen_graph, Graph, GraphError, GraphModel};
use crate::group::{Element, GroupError, GroupSpec, Relation, RelationOp};
use crate::recover::{
    recover_cycle_with, recover_exhaustive_with, recover_local_search, recover_spectral, success,
    Assignment, Diagnostics, RecoverError, RecoveryResult, DEFAULT_BUDGET, SPECTRAL_MAX_MODULUS,
};

const TRIAL_DOMAIN: u64 = 0x7472_6961_6c00_0001;
const GRAPH_DOMAIN: u64 = 0x6772_6170_6800_0002;
pub(crate) const TRUTH_DOMAIN: u64 = 0x7472_7574_6800_0003;
const CHANNEL_DOMAIN: u64 = 0x6368_616e_6e00_0004;
const SOLVER_DOMAIN: u64 = 0x736f_6c76_6500_0005;

pub const DEFAULT_REFINE_ROUNDS: usize = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("probability grid must be sorted and inside [0, 1]")]
    BadGrid,
    #[error("d_max must be at least 1")]
    BadDegree,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Exhaustive,
    Cycle { k: usize },
    Spectral { refine_rounds: usize },
    LocalSearch { restarts: usize },
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Exhaustive => write!(f, "exhaustive"),
            Algorithm::Cycle { k } => write!(f, "cycle({k})"),
            Algorithm::Spectral { refine_rounds } if *refine_rounds == DEFAULT_REFINE_ROUNDS => {
                write!(f, "spectral")
            }
            Algorithm::Spectral { refine_rounds } => write!(f, "spectral({refine_rounds})"),
            Algorithm::LocalSearch { restarts } => write!(f, "local_search({restarts})"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    /// Accepts `exhaustive`, `cycle(k)`, `spectral`, `spectral(r)`,
    /// `local_search(r)`, and the bare short forms `cycle` (k = 3) and
    /// `local` / `local_search` (no restarts).
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let (name, arg) = match s.split_once('(') {
            Some((name, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| format!("unbalanced parenthesis in '{s}'"))?;
                let v = inner
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| format!("bad argument in '{s}': {e}"))?;
                (name.trim(), Some(v))
            }
            None => (s, None),
        };
        match (name, arg) {
            ("exhaustive", None) => Ok(Algorithm::Exhaustive),
            ("cycle", k) => Ok(Algorithm::Cycle { k: k.unwrap_or(3) }),
            ("spectral", r) => Ok(Algorithm::Spectral {
                refine_rounds: r.unwrap_or(DEFAULT_REFINE_ROUNDS),
            }),
            ("local" | "local_search", r) => Ok(Algorithm::LocalSearch {
                restarts: r.unwrap_or(0),
            }),
            _ => Err(format!("unknown algorithm '{s}'")),
        }
    }
}

impl Serialize for Algorithm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Algorithm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Runs `alg` on one instance.
pub fn run_algorithm(
    alg: Algorithm,
    g: &Graph,
    obs: &crate::channel::ObservationSet,
    seed: u64,
    budget: u64,
) -> Result<RecoveryResult, RecoverError> {
    match alg {
        Algorithm::Exhaustive => recover_exhaustive_with(g, obs, budget),
        Algorithm::Cycle { k } => recover_cycle_with(g, obs, k, budget),
        Algorithm::Spectral { refine_rounds } => recover_spectral(g, obs, refine_rounds),
        Algorithm::LocalSearch { restarts } => recover_local_search(g, obs, restarts, seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub model: GraphModel,
    pub n: usize,
    pub modulus: u64,
    pub op: RelationOp,
    pub p: f64,
    pub algorithm: Algorithm,
    pub master_seed: u64,
    /// Reuse one graph for every trial instead of drawing a fresh one.
    #[serde(default)]
    pub fixed_graph: bool,
    /// State budget (exhaustive) or walk budget (cycle search).
    #[serde(default = "default_budget")]
    pub budget: u64,
}

fn default_budget() -> u64 {
    DEFAULT_BUDGET
}

impl TrialConfig {
    pub fn relation(&self) -> Result<Relation, HarnessError> {
        Ok(Relation::new(self.op, GroupSpec::new(self.modulus)?)?)
    }

    /// Checks parameter ranges and the algorithm's preconditions for `(n, M)`.
    pub fn validate(&self) -> Result<Relation, HarnessError> {
        self.model.validate(self.n)?;
        let rel = self.relation()?;
        if !(0.0..=1.0).contains(&self.p) {
            return Err(HarnessError::InvalidConfig(format!(
                "p = {} not in [0, 1]",
                self.p
            )));
        }
        let bad = |s: String| Err(HarnessError::InvalidConfig(s));
        match self.algorithm {
            Algorithm::Exhaustive => {
                let free = if self.op.is_difference() {
                    self.n - 1
                } else {
                    self.n
                };
                let log_states = free as f64 * (self.modulus as f64).log2();
                if log_states > (self.budget as f64).log2() + 1e-9 {
                    return bad(format!(
                        "exhaustive search over {}^{free} states exceeds the budget {}",
                        self.modulus, self.budget
                    ));
                }
            }
            Algorithm::Cycle { k } => {
                if !self.op.is_difference() {
                    return bad(format!(
                        "cycle recovery needs the difference op, got {}",
                        self.op
                    ));
                }
                if k < 3 {
                    return bad(format!("cycle order {k} must be at least 3"));
                }
            }
            Algorithm::Spectral { .. } => {
                if !self.op.is_difference() {
                    return bad(format!(
                        "spectral recovery needs the difference op, got {}",
                        self.op
                    ));
                }
                if self.modulus > SPECTRAL_MAX_MODULUS {
                    return bad(format!(
                        "M = {} exceeds the spectral limit {SPECTRAL_MAX_MODULUS}",
                        self.modulus
                    ));
                }
            }
            Algorithm::LocalSearch { .. } => {}
        }
        Ok(rel)
    }

    /// Seed of trial `t`.
    pub fn trial_seed(&self, t: usize) -> u64 {
        derive_seed(self.master_seed, TRIAL_DOMAIN, t as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub trial_seed: u64,
    pub success: bool,
    pub status: Option<String>,
    pub score: Option<u64>,
    /// Wall-clock milliseconds; only recorded when timing is requested.
    pub runtime_ms: Option<f64>,
    pub error: Option<String>,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub successes: usize,
    pub errors: usize,
    pub outcomes: Vec<TrialOutcome>,
}

impl TrialSummary {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.outcomes.len() as f64
    }
}

fn run_one(cfg: &TrialConfig, rel: Relation, t: usize, timing: bool) -> TrialOutcome {
    let trial_seed = cfg.trial_seed(t);
    let mut out = TrialOutcome {
        trial: t,
        trial_seed,
        success: false,
        status: None,
        score: None,
        runtime_ms: None,
        error: None,
        diagnostics: None,
    };
    let graph_seed = if cfg.fixed_graph {
        derive_seed(cfg.master_seed, GRAPH_DOMAIN, 0)
    } else {
        derive_seed(trial_seed, GRAPH_DOMAIN, 0)
    };
    let started = Instant::now();
    let g = match gen_graph(cfg.model, cfg.n, graph_seed) {
        Ok(g) => g,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trial_seed, TRUTH_DOMAIN, 0));
    let truth = Assignment::random(cfg.n, rel.group(), &mut rng);
    let obs = match corrupt(
        &truth,
        rel,
        &g,
        cfg.p,
        derive_seed(trial_seed, CHANNEL_DOMAIN, 0),
    ) {
        Ok(o) => o,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let res = run_algorithm(
        cfg.algorithm,
        &g,
        &obs,
        derive_seed(trial_seed, SOLVER_DOMAIN, 0),
        cfg.budget,
    );
    if timing {
        out.runtime_ms = Some(started.elapsed().as_secs_f64() * 1e3);
    }
    match res {
        Ok(r) => {
            out.success = r
                .assignment
                .as_ref()
                .is_some_and(|x| success(x, &truth, &rel));
            out.status = Some(r.status.to_string());
            out.score = Some(r.score);
            out.diagnostics = Some(r.diagnostics);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

/// Runs `trials` independent trials. Algorithm errors are recorded per trial.
pub fn run_trials(
    cfg: &TrialConfig,
    trials: usize,
    timing: bool,
) -> Result<TrialSummary, HarnessError> {
    if trials == 0 {
        return Err(HarnessError::NoTrials);
    }
    let rel = cfg.validate()?;
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| run_one(cfg, rel, t, timing))
        .collect();
    Ok(TrialSummary {
        successes: outcomes.iter().filter(|o| o.success).count(),
        errors: outcomes.iter().filter(|o| o.error.is_some()).count(),
        outcomes,
    })
}

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let phat = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (phat + z * z / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdEstimate {
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials_per_point: usize,
    pub grid: Vec<f64>,
    pub successes: Vec<usize>,
    /// Set when no grid point reaches a success rate of 0.5; the estimate is
    /// then open-ended above the last grid point.
    pub no_crossing: bool,
}

/// First point where `values` reaches `level`, interpolated linearly from the
/// previous grid point.
fn first_crossing(grid: &[f64], values: &[f64], level: f64) -> Option<f64> {
    let i = values.iter().position(|&v| v >= level)?;
    if i == 0 {
        return Some(grid[0]);
    }
    let (x0, x1, y0, y1) = (grid[i - 1], grid[i], values[i - 1], values[i]);
    Some(if y1 > y0 {
        x0 + (level - y0) / (y1 - y0) * (x1 - x0)
    } else {
        x1
    })
}

/// Threshold estimate from per-point success counts on a sorted grid.
pub fn threshold_from_counts(
    grid: &[f64],
    successes: &[usize],
    trials: usize,
) -> ThresholdEstimate {
    let rates: Vec<f64> = successes
        .iter()
        .map(|&s| s as f64 / trials as f64)
        .collect();
    let (lower, upper): (Vec<f64>, Vec<f64>) = successes
        .iter()
        .map(|&s| wilson_interval(s, trials))
        .unzip();
    let last = *grid.last().expect("nonempty grid");
    let (p_hat, no_crossing) = match first_crossing(grid, &rates, 0.5) {
        Some(p) => (p, false),
        None => (last, true),
    };
    let ci_low = first_crossing(grid, &upper, 0.5).unwrap_or(last).min(p_hat);
    let ci_high = if no_crossing {
        1.0
    } else {
        first_crossing(grid, &lower, 0.5).unwrap_or(last).max(p_hat)
    };
    ThresholdEstimate {
        p_hat,
        ci_low,
        ci_high,
        trials_per_point: trials,
        grid: grid.to_vec(),
        successes: successes.to_vec(),
        no_crossing,
    }
}

/// Locates the 50%-success crossing of `p` over `grid`; the template's `p` is
/// ignored.
pub fn estimate_threshold(
    template: &TrialConfig,
    grid: &[f64],
    trials: usize,
) -> Result<ThresholdEstimate, HarnessError> {
    if grid.is_empty()
        || grid.windows(2).any(|w| w[0] > w[1])
        || grid.iter().any(|p| !(0.0..=1.0).contains(p))
    {
        return Err(HarnessError::BadGrid);
    }
    let successes = grid
        .iter()
        .map(|&p| run_trials(&TrialConfig { p, ..*template }, trials, false).map(|s| s.successes))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(threshold_from_counts(grid, &successes, trials))
}

/// Evenly spaced grid `start, start + step, ...` up to `stop` inclusive, with
/// values rounded to 12 decimals so the printed grid is stable.
pub fn linear_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    General,
    /// Erdős–Rényi with edge probability `p_obs`; the rate uses `d = n·p_obs`.
    ErdosRenyi {
        p_obs: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    InformationLimited,
    Transition,
    ConnectivityLimited,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::InformationLimited => "information_limited",
            Regime::Transition => "transition",
            Regime::ConnectivityLimited => "connectivity_limited",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictedRate {
    pub regime: Regime,
    pub value: f64,
    pub lower_bound: f64,
    pub degree_used: f64,
}

/// Order-level recovery rate with unit constants and `log n` for the
/// poly-log factors (natural log). `M ≤ d/log n` is information limited,
/// `M > d` connectivity limited, and the band between is the transition.
pub fn predicted_rate(
    n: usize,
    modulus: u64,
    d_max: usize,
    kind: GraphKind,
) -> Result<PredictedRate, HarnessError> {
    if d_max < 1 {
        return Err(HarnessError::BadDegree);
    }
    let l = (n as f64).ln();
    let d = match kind {
        GraphKind::General => d_max as f64,
        GraphKind::ErdosRenyi { p_obs } => n as f64 * p_obs,
    };
    let m = modulus as f64;
    let (regime, value) = if m <= d / l {
        (Regime::InformationLimited, (l / (d * m)).sqrt())
    } else if m <= d {
        (Regime::Transition, l / (d * (2.0 * m * l / d).ln()))
    } else {
        (Regime::ConnectivityLimited, l / d)
    };
    let lower_bound = (((m - 1.0) * n as f64).ln() / ((d_max as f64 + 1.0) * (m - 1.0))).sqrt();
    Ok(PredictedRate {
        regime,
        value,
        lower_bound,
        degree_used: d,
    })
}

/// Cartesian grid of trial configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub models: Vec<GraphModel>,
    pub n: Vec<usize>,
    #[serde(rename = "M")]
    pub modulus: Vec<u64>,
    #[serde(default = "default_ops")]
    pub op: Vec<RelationOp>,
    pub p: Vec<f64>,
    pub algorithm: Vec<Algorithm>,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub fixed_graph: bool,
    #[serde(default = "default_budget")]
    pub budget: u64,
}

fn default_ops() -> Vec<RelationOp> {
    vec![RelationOp::Difference]
}

impl SweepConfig {
    /// Cells in row order: model, n, M, op, p, algorithm.
    pub fn cells(&self) -> Vec<TrialConfig> {
        let mut out = Vec::new();
        for &model in &self.models {
            for &n in &self.n {
                for &modulus in &self.modulus {
                    for &op in &self.op {
                        for &p in &self.p {
                            for &algorithm in &self.algorithm {
                                out.push(TrialConfig {
                                    model,
                                    n,
                                    modulus,
                                    op,
                                    p,
                                    algorithm,
                                    master_seed: self.master_seed,
                                    fixed_graph: self.fixed_graph,
                                    budget: self.budget,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub n: usize,
    pub param: String,
    #[serde(rename = "M")]
    pub modulus: u64,
    pub op: String,
    pub p: f64,
    pub algorithm: String,
    pub trials: usize,
    pub successes: usize,
    pub mean_runtime_ms: Option<f64>,
    pub master_seed: u64,
    pub error: String,
}

impl SweepRow {
    fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}",
            self.model, self.n, self.param, self.modulus, self.op, self.p, self.algorithm
        )
    }
}

fn op_label(cfg: &TrialConfig) -> String {
    GroupSpec::new(cfg.modulus)
        .map(|g| cfg.op.tag(&g))
        .unwrap_or_else(|_| cfg.op.to_string())
}

fn blank_row(cfg: &TrialConfig, trials: usize) -> SweepRow {
    SweepRow {
        model: cfg.model.tag().to_string(),
        n: cfg.n,
        param: cfg.model.param(),
        modulus: cfg.modulus,
        op: op_label(cfg),
        p: cfg.p,
        algorithm: cfg.algorithm.to_string(),
        trials,
        successes: 0,
        mean_runtime_ms: None,
        master_seed: cfg.master_seed,
        error: String::new(),
    }
}

/// Evaluates one cell. Invalid cells and failing trials are reported in the
/// `error` column rather than aborting the sweep.
pub fn sweep_cell(cfg: &TrialConfig, trials: usize, timing: bool) -> SweepRow {
    let mut row = blank_row(cfg, trials);
    match run_trials(cfg, trials, timing) {
        Ok(summary) => {
            row.successes = summary.successes;
            if timing {
                let total: f64 = summary.outcomes.iter().filter_map(|o| o.runtime_ms).sum();
                row.mean_runtime_ms = Some(total / trials as f64);
            }
            if let Some(first) = summary.outcomes.iter().find_map(|o| o.error.as_ref()) {
                row.error = format!("{} of {trials} trials failed: {first}", summary.errors);
            }
        }
        Err(e) => row.error = e.to_string(),
    }
    row
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SweepReport {
    pub written: usize,
    pub skipped: usize,
}

/// Runs every cell of `cfg` and writes one CSV row per cell to `out`. With
/// `resume`, cells already present in an existing `out` are skipped and new
/// rows are appended.
pub fn sweep_to_csv(
    cfg: &SweepConfig,
    out: &Path,
    resume: bool,
    timing: bool,
) -> Result<SweepReport, HarnessError> {
    if cfg.trials == 0 {
        return Err(HarnessError::NoTrials);
    }
    let mut done = HashSet::new();
    let existing = resume && out.exists() && std::fs::metadata(out)?.len() > 0;
    if existing {
        let mut rdr = csv::Reader::from_path(out)?;
        for row in rdr.deserialize::<SweepRow>() {
            done.insert(row?.key());
        }
    }
    let file = if existing {
        OpenOptions::new().append(true).open(out)?
    } else {
        File::create(out)?
    };
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(!existing)
        .from_writer(file);
    let mut report = SweepReport {
        written: 0,
        skipped: 0,
    };
    for cell in cfg.cells() {
        if done.contains(&blank_row(&cell, cfg.trials).key()) {
            report.skipped += 1;
            continue;
        }
        wtr.serialize(sweep_cell(&cell, cfg.trials, timing))?;
        // flush per cell so an interrupted sweep can resume
        wtr.flush()?;
        report.written += 1;
    }
    Ok(report)
}

/// Planted assignment used by trial `t` of `cfg`; exposed for tests.
pub fn trial_truth(cfg: &TrialConfig, t: usize) -> Result<Vec<Element>, HarnessError> {
    let rel = cfg.relation()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.trial_seed(t), TRUTH_DOMAIN, 0));
    Ok(Assignment::random(cfg.n, rel.group(), &mut rng).into_inner())
}

impl From<ChannelError> for HarnessError {
    fn from(e: ChannelError) -> Self {
        HarnessError::InvalidConfig(e.to_string())
    }
}
