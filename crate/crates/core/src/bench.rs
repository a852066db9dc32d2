//! Random-instance experiments: model generation, perturbation sweeps,
//! CSV output and plot scripts.
//!
//! Every random quantity of a trial is drawn from a stream derived from
//! `(config seed, s, trial)` alone. Levels and sweep modes therefore share
//! the same true model, the same Dirichlet draws and the same perturbation
//! directions, and only the scale factors change between cells.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use toml::Value;

use crate::ce::{measure_uncertainty, run_ce_pipeline};
use crate::error::{MjsError, Result};
use crate::linalg::{spectral_radius, Mat};
use crate::model::{CostSpec, MjsModel};
use crate::modelfile::parse_table;
use crate::rng::{derive_seed, stream, Normal, Stream};
use crate::solvers::SolverOptions;
use crate::stability::{build_augmented, ClosedLoop};

pub const CSV_HEADER: &str =
    "mode,level,s,trial,delta_P,delta_J,realized_eps,realized_eta,stabilized,solver_iters,runtime_ms";

/// Cost-matrix jitter that keeps the Gram matrices positive definite.
pub const GRAM_JITTER: f64 = 1e-8;

const MAX_RESAMPLES: u64 = 100;

// Stream tags.
const TAG_A: u64 = 1;
const TAG_B: u64 = 2;
const TAG_Q: u64 = 3;
const TAG_R: u64 = 4;
const TAG_T_HAT: u64 = 5;
const TAG_D: u64 = 6;
const TAG_DA: u64 = 7;
const TAG_DB: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSpec {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    /// Spectral radius every `A★_i` is rescaled to.
    pub rho_target: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(n: usize, p: usize, s: usize, seed: u64) -> Self {
        GenSpec { n, p, s, rho_target: 0.3, seed }
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.s == 0 {
            return Err(MjsError::InvalidArgument("n, p and s must be positive".into()));
        }
        if !(self.rho_target > 0.0 && self.rho_target.is_finite()) {
            return Err(MjsError::InvalidArgument("rho_target must be positive".into()));
        }
        Ok(())
    }
}

/// Standard normal matrix, filled column by column.
fn randn(g: &mut Normal, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| g.sample())
}

fn gram(g: &mut Normal, k: usize) -> Mat {
    let m = randn(g, k, k);
    &m * m.transpose() + Mat::identity(k, k) * GRAM_JITTER
}

fn scaled_dynamics(spec: &GenSpec, mode: usize) -> Result<Mat> {
    for attempt in 0..MAX_RESAMPLES {
        let mut g = Normal::new(derive_seed(spec.seed, &[TAG_A, mode as u64, attempt]));
        let a = randn(&mut g, spec.n, spec.n);
        let rho = spectral_radius(&a)?;
        if rho >= 1e-12 {
            return Ok(a * (spec.rho_target / rho));
        }
    }
    Err(MjsError::Degenerate(format!("mode {mode}: every draw of A had spectral radius below 1e-12")))
}

/// Row `i` drawn from a Dirichlet law with `α_j = (s−1)[i = j] + 1`, via
/// normalized Gamma variates.
pub fn dirichlet_transition(s: usize, rng: &mut Stream) -> Mat {
    let unit = Gamma::new(1.0, 1.0).expect("valid shape");
    let heavy = Gamma::new(s as f64, 1.0).expect("valid shape");
    let mut t = Mat::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            t[(i, j)] = if i == j { heavy.sample(rng) } else { unit.sample(rng) };
        }
        let total: f64 = t.row(i).sum();
        for j in 0..s {
            t[(i, j)] /= total;
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedModel {
    /// Carries a Dirichlet draw as its transition matrix.
    pub model: MjsModel,
    pub cost: CostSpec,
    /// `ρ(L̃)` of the open loop (`K = 0`).
    pub open_loop_rho: f64,
    pub open_loop_mss: bool,
}

pub fn generate_true_model(spec: &GenSpec) -> Result<GeneratedModel> {
    spec.check()?;
    let (n, p, s) = (spec.n, spec.p, spec.s);
    let a = (0..s).map(|i| scaled_dynamics(spec, i)).collect::<Result<Vec<_>>>()?;
    let mut gb = Normal::new(derive_seed(spec.seed, &[TAG_B]));
    let b = (0..s).map(|_| randn(&mut gb, n, p)).collect();
    let mut gq = Normal::new(derive_seed(spec.seed, &[TAG_Q]));
    let q = (0..s).map(|_| gram(&mut gq, n)).collect();
    let mut gr = Normal::new(derive_seed(spec.seed, &[TAG_R]));
    let r = (0..s).map(|_| gram(&mut gr, p)).collect();
    let t = dirichlet_transition(s, &mut stream(derive_seed(spec.seed, &[TAG_T_HAT])));
    let model = MjsModel::new(a, b, t)?;
    let open = ClosedLoop::new(model.a.clone())?;
    let open_loop_rho = spectral_radius(&build_augmented(&open, &model.t)?.m)?;
    Ok(GeneratedModel {
        model,
        cost: CostSpec::new(q, r, 1.0),
        open_loop_rho,
        open_loop_mss: open_loop_rho < 1.0 - crate::stability::MSS_MARGIN,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub truth: MjsModel,
    pub nominal: MjsModel,
    pub cost: CostSpec,
    pub open_loop_rho: f64,
}

/// `Â_i = A★_i + ε_A·randn`, `B̂_i = B★_i + ε_B·randn`, `T̂` Dirichlet and
/// `T★ = (1 − η_T) T̂ + η_T D` with `D` an independent Dirichlet draw.
pub fn generate_model_pair(spec: &GenSpec, eps_a: f64, eps_b: f64, eta_t: f64) -> Result<ModelPair> {
    if !(eps_a >= 0.0 && eps_b >= 0.0) {
        return Err(MjsError::InvalidArgument("perturbation scales must be nonnegative".into()));
    }
    if !(0.0..=1.0).contains(&eta_t) {
        return Err(MjsError::InvalidArgument(format!("eta_T = {eta_t} is outside [0, 1]")));
    }
    let base = generate_true_model(spec)?;
    let (n, p) = (spec.n, spec.p);
    let mut ga = Normal::new(derive_seed(spec.seed, &[TAG_DA]));
    let a_hat = base.model.a.iter().map(|a| a + randn(&mut ga, n, n) * eps_a).collect();
    let mut gb = Normal::new(derive_seed(spec.seed, &[TAG_DB]));
    let b_hat = base.model.b.iter().map(|b| b + randn(&mut gb, n, p) * eps_b).collect();
    let t_hat = base.model.t.clone();
    let d = dirichlet_transition(spec.s, &mut stream(derive_seed(spec.seed, &[TAG_D])));
    let t_star = &t_hat * (1.0 - eta_t) + d * eta_t;
    let nominal = MjsModel::new(a_hat, b_hat, t_hat)?;
    let truth = MjsModel::new(base.model.a, base.model.b, t_star)?;
    Ok(ModelPair { truth, nominal, cost: base.cost, open_loop_rho: base.open_loop_rho })
}

/// Which parameters a sweep perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SweepMode {
    AOnly,
    BOnly,
    TOnly,
    Coupled,
}

impl SweepMode {
    pub const ALL: [SweepMode; 4] = [SweepMode::AOnly, SweepMode::BOnly, SweepMode::TOnly, SweepMode::Coupled];

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepMode::AOnly => "A_only",
            SweepMode::BOnly => "B_only",
            SweepMode::TOnly => "T_only",
            SweepMode::Coupled => "coupled",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        SweepMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| MjsError::InvalidArgument(format!("unknown sweep mode `{s}`")))
    }

    /// `(ε_A, ε_B, η_T)` for a level.
    pub fn scales(&self, level: f64) -> (f64, f64, f64) {
        match self {
            SweepMode::AOnly => (level, 0.0, 0.0),
            SweepMode::BOnly => (0.0, level, 0.0),
            SweepMode::TOnly => (0.0, 0.0, level),
            SweepMode::Coupled => (level, level, level),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub modes: Vec<SweepMode>,
    pub eps_a: Vec<f64>,
    pub eps_b: Vec<f64>,
    pub eta_t: Vec<f64>,
    pub s_list: Vec<usize>,
    pub trials: usize,
    pub n: usize,
    pub p: usize,
    pub rho_target: f64,
    pub seed: u64,
    pub solver: SolverOptions,
    /// Record wall-clock time per trial. Off by default so output files do
    /// not depend on the machine.
    pub timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SweepConfig {
    /// Small instance sizes suitable for CI.
    pub fn desk() -> Self {
        let levels = vec![0.01, 0.02, 0.05, 0.1];
        SweepConfig {
            modes: SweepMode::ALL.to_vec(),
            eps_a: levels.clone(),
            eps_b: levels.clone(),
            eta_t: levels,
            s_list: vec![2, 5],
            trials: 20,
            n: 4,
            p: 2,
            rho_target: 0.3,
            seed: 0,
            solver: SolverOptions::default(),
            timing: false,
        }
    }

    /// The published experiment sizes.
    pub fn paper_scale() -> Self {
        let levels = vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.3];
        SweepConfig {
            eps_a: levels.clone(),
            eps_b: levels.clone(),
            eta_t: levels,
            s_list: vec![10, 20, 30, 40],
            trials: 100,
            n: 10,
            p: 5,
            ..Self::desk()
        }
    }

    pub fn levels(&self, mode: SweepMode) -> &[f64] {
        match mode {
            SweepMode::AOnly | SweepMode::Coupled => &self.eps_a,
            SweepMode::BOnly => &self.eps_b,
            SweepMode::TOnly => &self.eta_t,
        }
    }

    /// Cells in output order.
    pub fn cells(&self) -> Vec<(SweepMode, f64, usize)> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &level in self.levels(mode) {
                for &s in &self.s_list {
                    out.push((mode, level, s));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.s_list.is_empty() || self.trials == 0 {
            return Err(MjsError::InvalidArgument("sweep needs at least one mode, one s and one trial".into()));
        }
        if self.n == 0 || self.p == 0 || self.s_list.contains(&0) {
            return Err(MjsError::InvalidArgument("dimensions must be positive".into()));
        }
        for &mode in &self.modes {
            for &l in self.levels(mode) {
                if !(l >= 0.0) || (matches!(mode, SweepMode::TOnly | SweepMode::Coupled) && l > 1.0) {
                    return Err(MjsError::InvalidArgument(format!("level {l} invalid for {}", mode.as_str())));
                }
            }
        }
        Ok(())
    }
}

fn cfg_err(key: &str, msg: impl Into<String>) -> MjsError {
    MjsError::Parse { location: format!("sweep.{key}"), message: msg.into() }
}

fn float_list(v: &Value, key: &str) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| cfg_err(key, "expected an array of numbers"))?;
    arr.iter()
        .map(|x| match x {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(cfg_err(key, "expected a number")),
        })
        .collect()
}

fn count(v: &Value, key: &str) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(cfg_err(key, "expected a nonnegative integer")),
    }
}

/// Parses a `[sweep]` table over the desk or paper-scale defaults.
///
/// ```toml
/// [sweep]
/// modes = ["coupled"]          # or a single string
/// levels = [0.01, 0.02, 0.05]  # shorthand for eps_A = eps_B = eta_T
/// s_list = [2, 5]
/// trials = 20
/// n = 4
/// p = 2
/// seed = 7
/// ```
pub fn config_from_str(src: &str, paper_scale: bool) -> Result<SweepConfig> {
    let mut cfg = if paper_scale { SweepConfig::paper_scale() } else { SweepConfig::desk() };
    let doc = parse_table(src)?;
    let table = match doc.get("sweep") {
        Some(Value::Table(t)) => t,
        Some(_) => return Err(cfg_err("", "`sweep` must be a table")),
        None => return Err(MjsError::Parse { location: "document".into(), message: "missing section `sweep`".into() }),
    };
    if let Some(v) = table.get("levels") {
        let l = float_list(v, "levels")?;
        cfg.eps_a = l.clone();
        cfg.eps_b = l.clone();
        cfg.eta_t = l;
    }
    for (key, v) in table {
        match key.as_str() {
            "levels" => {}
            "modes" => {
                cfg.modes = match v {
                    Value::String(s) => vec![SweepMode::parse(s)?],
                    Value::Array(a) => a
                        .iter()
                        .map(|m| m.as_str().ok_or_else(|| cfg_err(key, "expected strings")).and_then(SweepMode::parse))
                        .collect::<Result<_>>()?,
                    _ => return Err(cfg_err(key, "expected a string or array of strings")),
                }
            }
            "eps_A" => cfg.eps_a = float_list(v, key)?,
            "eps_B" => cfg.eps_b = float_list(v, key)?,
            "eta_T" => cfg.eta_t = float_list(v, key)?,
            "s_list" => {
                cfg.s_list = v
                    .as_array()
                    .ok_or_else(|| cfg_err(key, "expected an array"))?
                    .iter()
                    .map(|x| count(x, key))
                    .collect::<Result<_>>()?
            }
            "trials" => cfg.trials = count(v, key)?,
            "n" => cfg.n = count(v, key)?,
            "p" => cfg.p = count(v, key)?,
            "seed" => cfg.seed = count(v, key)? as u64,
            "rho_target" => cfg.rho_target = v.as_float().ok_or_else(|| cfg_err(key, "expected a float"))?,
            "tol" => cfg.solver.tol = v.as_float().ok_or_else(|| cfg_err(key, "expected a float"))?,
            "max_iter" => cfg.solver.max_iter = count(v, key)?,
            "timing" => cfg.timing = v.as_bool().ok_or_else(|| cfg_err(key, "expected a boolean"))?,
            other => return Err(cfg_err(other, "unknown key")),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>, paper_scale: bool) -> Result<SweepConfig> {
    config_from_str(&fs::read_to_string(path)?, paper_scale)
}

/// The `trial` column: an index, or the statistic of an aggregate row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialLabel {
    Index(usize),
    Max,
    Mean,
    Median,
}

impl TrialLabel {
    fn render(&self) -> String {
        match self {
            TrialLabel::Index(i) => i.to_string(),
            TrialLabel::Max => "max".into(),
            TrialLabel::Mean => "mean".into(),
            TrialLabel::Median => "median".into(),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "max" => Some(TrialLabel::Max),
            "mean" => Some(TrialLabel::Mean),
            "median" => Some(TrialLabel::Median),
            _ => s.parse().ok().map(TrialLabel::Index),
        }
    }
}

/// The `stabilized` column. Aggregate rows hold the number of stabilized
/// trials in the cell; failed trials hold the error code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Stabilized,
    Unstable,
    Failed(String),
    Count(usize),
}

impl Outcome {
    fn render(&self) -> String {
        match self {
            Outcome::Stabilized => "true".into(),
            Outcome::Unstable => "false".into(),
            Outcome::Failed(code) => code.clone(),
            Outcome::Count(c) => c.to_string(),
        }
    }

    fn parse(s: &str) -> Self {
        match s {
            "true" => Outcome::Stabilized,
            "false" => Outcome::Unstable,
            _ => match s.parse() {
                Ok(c) => Outcome::Count(c),
                Err(_) => Outcome::Failed(s.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub mode: SweepMode,
    pub level: f64,
    pub s: usize,
    pub trial: TrialLabel,
    /// `max_i ‖P̂_i − P★_i‖ / ‖P★_i‖`
    pub delta_p: f64,
    /// `(Ĵ − J★)/J★`; NaN when `K̂` does not stabilize the truth.
    pub delta_j: f64,
    pub realized_eps: f64,
    pub realized_eta: f64,
    pub stabilized: Outcome,
    pub solver_iters: usize,
    pub runtime_ms: f64,
}

impl SweepRecord {
    pub fn is_stabilized(&self) -> bool {
        self.stabilized == Outcome::Stabilized
    }

    fn fields(&self) -> [String; 11] {
        [
            self.mode.as_str().to_string(),
            self.level.to_string(),
            self.s.to_string(),
            self.trial.render(),
            self.delta_p.to_string(),
            self.delta_j.to_string(),
            self.realized_eps.to_string(),
            self.realized_eta.to_string(),
            self.stabilized.render(),
            self.solver_iters.to_string(),
            self.runtime_ms.to_string(),
        ]
    }

    fn from_fields(row: &csv::StringRecord, line: usize) -> Result<Self> {
        let bad = |what: &str| MjsError::SchemaMismatch(format!("line {line}: bad {what}"));
        if row.len() != 11 {
            return Err(MjsError::SchemaMismatch(format!("line {line}: expected 11 fields, found {}", row.len())));
        }
        let float = |k: usize, what: &str| row[k].parse::<f64>().map_err(|_| bad(what));
        Ok(SweepRecord {
            mode: SweepMode::parse(&row[0]).map_err(|_| bad("mode"))?,
            level: float(1, "level")?,
            s: row[2].parse().map_err(|_| bad("s"))?,
            trial: TrialLabel::parse(&row[3]).ok_or_else(|| bad("trial"))?,
            delta_p: float(4, "delta_P")?,
            delta_j: float(5, "delta_J")?,
            realized_eps: float(6, "realized_eps")?,
            realized_eta: float(7, "realized_eta")?,
            stabilized: Outcome::parse(&row[8]),
            solver_iters: row[9].parse().map_err(|_| bad("solver_iters"))?,
            runtime_ms: float(10, "runtime_ms")?,
        })
    }
}

pub fn records_to_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.fields().join(","));
        out.push('\n');
    }
    out
}

/// Reads a sweep CSV. An empty file yields no records; any other header
/// than [`CSV_HEADER`] is a schema mismatch.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRecord>> {
    let text = fs::read_to_string(path)?;
    records_from_csv(&text)
}

pub fn records_from_csv(text: &str) -> Result<Vec<SweepRecord>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| MjsError::SchemaMismatch(e.to_string()))?;
    let got: Vec<&str> = header.iter().collect();
    if got.join(",") != CSV_HEADER {
        return Err(MjsError::SchemaMismatch(format!("header `{}`", got.join(","))));
    }
    let mut out = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let row = row.map_err(|e| MjsError::SchemaMismatch(e.to_string()))?;
        out.push(SweepRecord::from_fields(&row, k + 2)?);
    }
    Ok(out)
}

/// Runs a single trial. Failures become rows, never errors.
pub fn run_trial(cfg: &SweepConfig, mode: SweepMode, level: f64, s: usize, trial: usize) -> SweepRecord {
    let start = Instant::now();
    let mut rec = SweepRecord {
        mode,
        level,
        s,
        trial: TrialLabel::Index(trial),
        delta_p: f64::NAN,
        delta_j: f64::NAN,
        realized_eps: f64::NAN,
        realized_eta: f64::NAN,
        stabilized: Outcome::Unstable,
        solver_iters: 0,
        runtime_ms: 0.0,
    };
    let spec = GenSpec { n: cfg.n, p: cfg.p, s, rho_target: cfg.rho_target, seed: derive_seed(cfg.seed, &[s as u64, trial as u64]) };
    let (ea, eb, et) = mode.scales(level);
    let outcome = generate_model_pair(&spec, ea, eb, et).and_then(|pair| {
        let lv = measure_uncertainty(&pair.truth, &pair.nominal)?;
        rec.realized_eps = lv.epsilon;
        rec.realized_eta = lv.eta;
        run_ce_pipeline(&pair.truth, &pair.nominal, &pair.cost, &cfg.solver)
    });
    match outcome {
        Ok(report) => {
            rec.delta_p = report.delta_p;
            rec.solver_iters = report.p_star.iterations + report.p_hat.iterations;
            if let Some(dj) = report.delta_j() {
                rec.delta_j = dj;
                rec.stabilized = Outcome::Stabilized;
            }
        }
        Err(e) => rec.stabilized = Outcome::Failed(e.code().to_string()),
    }
    if cfg.timing {
        rec.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    }
    rec
}

fn finite(values: impl Iterator<Item = f64>) -> Vec<f64> {
    values.filter(|v| v.is_finite()).collect()
}

pub fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().reduce(f64::max).unwrap_or(f64::NAN)
}

pub fn mean_of(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn median_of(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut w = v.to_vec();
    w.sort_by(f64::total_cmp);
    let m = w.len() / 2;
    if w.len() % 2 == 1 {
        w[m]
    } else {
        0.5 * (w[m - 1] + w[m])
    }
}

/// Max, mean and median rows for one cell's trial rows. `Δ_J` statistics
/// only use stabilized trials.
pub fn cell_aggregates(trials: &[SweepRecord]) -> Vec<SweepRecord> {
    let Some(first) = trials.first() else { return Vec::new() };
    let dp = finite(trials.iter().map(|r| r.delta_p));
    let dj = finite(trials.iter().filter(|r| r.is_stabilized()).map(|r| r.delta_j));
    let eps = finite(trials.iter().map(|r| r.realized_eps));
    let eta = finite(trials.iter().map(|r| r.realized_eta));
    let rt: Vec<f64> = trials.iter().map(|r| r.runtime_ms).collect();
    let stabilized = trials.iter().filter(|r| r.is_stabilized()).count();
    let iters = trials.iter().map(|r| r.solver_iters).max().unwrap_or(0);
    let stats: [(TrialLabel, fn(&[f64]) -> f64); 3] =
        [(TrialLabel::Max, max_of), (TrialLabel::Mean, mean_of), (TrialLabel::Median, median_of)];
    stats
        .iter()
        .map(|(label, f)| SweepRecord {
            mode: first.mode,
            level: first.level,
            s: first.s,
            trial: *label,
            delta_p: f(&dp),
            delta_j: f(&dj),
            realized_eps: f(&eps),
            realized_eta: f(&eta),
            stabilized: Outcome::Count(stabilized),
            solver_iters: iters,
            runtime_ms: f(&rt),
        })
        .collect()
}

type CellKey = (SweepMode, u64, usize);

fn key_of(mode: SweepMode, level: f64, s: usize) -> CellKey {
    (mode, level.to_bits(), s)
}

/// Complete cells of a previous run: all trial rows plus the three
/// aggregates.
fn completed_cells(records: Vec<SweepRecord>, trials: usize) -> HashMap<CellKey, Vec<SweepRecord>> {
    let mut cells: HashMap<CellKey, Vec<SweepRecord>> = HashMap::new();
    for r in records {
        cells.entry(key_of(r.mode, r.level, r.s)).or_default().push(r);
    }
    cells.retain(|_, rows| {
        let want: Vec<TrialLabel> = (0..trials)
            .map(TrialLabel::Index)
            .chain([TrialLabel::Max, TrialLabel::Mean, TrialLabel::Median])
            .collect();
        rows.iter().map(|r| r.trial).collect::<Vec<_>>() == want
    });
    cells
}

/// Runs every cell of the sweep. Trials of a cell run in parallel; rows
/// are written in `(mode, level, s, trial)` order and the file is flushed
/// after each cell. When `out` already holds complete cells for this
/// configuration they are reused instead of recomputed.
pub fn run_sweep(cfg: &SweepConfig, out: Option<&Path>) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    let mut done = match out {
        Some(path) if path.exists() => completed_cells(read_csv(path)?, cfg.trials),
        _ => HashMap::new(),
    };
    let mut writer = match out {
        Some(path) => {
            let mut w = csv::Writer::from_path(path).map_err(|e| MjsError::Io(e.to_string()))?;
            w.write_record(CSV_HEADER.split(',')).map_err(|e| MjsError::Io(e.to_string()))?;
            Some(w)
        }
        None => None,
    };
    let mut all = Vec::new();
    for (mode, level, s) in cfg.cells() {
        let rows = match done.remove(&key_of(mode, level, s)) {
            Some(rows) => rows,
            None => {
                let mut rows: Vec<SweepRecord> =
                    (0..cfg.trials).into_par_iter().map(|k| run_trial(cfg, mode, level, s, k)).collect();
                let agg = cell_aggregates(&rows);
                rows.extend(agg);
                rows
            }
        };
        if let Some(w) = writer.as_mut() {
            for r in &rows {
                w.write_record(r.fields()).map_err(|e| MjsError::Io(e.to_string()))?;
            }
            w.flush()?;
        }
        all.extend(rows);
    }
    Ok(all)
}

/// [`run_sweep`] on a dedicated pool of `threads` workers.
pub fn run_sweep_with_threads(cfg: &SweepConfig, out: Option<&Path>, threads: usize) -> Result<Vec<SweepRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| MjsError::InvalidArgument(e.to_string()))?;
    pool.install(|| run_sweep(cfg, out))
}

/// Least-squares slope of `log y` against `log x`, over points where both
/// are positive and finite.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Generated scripts plus any warnings raised while reading the CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOutput {
    pub scripts: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn axis_label(mode: SweepMode) -> &'static str {
    match mode {
        SweepMode::AOnly => r"$\epsilon_A$ ($\epsilon_B = \eta_T = 0$)",
        SweepMode::BOnly => r"$\epsilon_B$ ($\epsilon_A = \eta_T = 0$)",
        SweepMode::TOnly => r"$\eta_T$ ($\epsilon_A = \epsilon_B = 0$)",
        SweepMode::Coupled => r"$\epsilon = \epsilon_A = \epsilon_B = \eta_T$",
    }
}

/// Curves for one panel: per `s`, the (level, value) points. `Δ_P` uses the
/// max over trials and `Δ_J` the median over stabilized trials.
fn panel_curves(records: &[SweepRecord], mode: SweepMode, metric: &str) -> Vec<(usize, Vec<(f64, f64)>)> {
    let mut cells: Vec<(usize, f64, Vec<f64>)> = Vec::new();
    for r in records.iter().filter(|r| r.mode == mode && matches!(r.trial, TrialLabel::Index(_))) {
        let v = if metric == "delta_P" {
            r.delta_p
        } else if r.is_stabilized() {
            r.delta_j
        } else {
            continue;
        };
        match cells.iter_mut().find(|c| c.0 == r.s && c.1 == r.level) {
            Some(c) => c.2.push(v),
            None => cells.push((r.s, r.level, vec![v])),
        }
    }
    let mut by_s: Vec<(usize, Vec<(f64, f64)>)> = Vec::new();
    for (s, level, vals) in cells {
        let vals = finite(vals.into_iter());
        let y = if metric == "delta_P" { max_of(&vals) } else { median_of(&vals) };
        if !(level > 0.0 && y > 0.0) {
            continue;
        }
        match by_s.iter_mut().find(|c| c.0 == s) {
            Some(c) => c.1.push((level, y)),
            None => by_s.push((s, vec![(level, y)])),
        }
    }
    by_s.sort_by_key(|c| c.0);
    for c in &mut by_s {
        c.1.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    by_s
}

fn plot_script(mode: SweepMode, metric: &str, curves: &[(usize, Vec<(f64, f64)>)]) -> String {
    let ylabel = if metric == "delta_P" { r"$\Delta_P$ (max over trials)" } else { r"$\Delta_J$ (median over trials)" };
    let png = format!("{metric}_{}.png", mode.as_str());
    let mut out = String::new();
    let _ = writeln!(out, "# {metric} versus perturbation level, panel {}; one curve per mode count s.", mode.as_str());
    out.push_str("import os\n\nimport matplotlib\n\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\n\ncurves = {\n");
    for (s, pts) in curves {
        let xs: Vec<String> = pts.iter().map(|p| format!("{:e}", p.0)).collect();
        let ys: Vec<String> = pts.iter().map(|p| format!("{:e}", p.1)).collect();
        let _ = writeln!(out, "    {s}: ([{}], [{}]),", xs.join(", "), ys.join(", "));
    }
    out.push_str("}\n\nfig, ax = plt.subplots(figsize=(4, 3))\n");
    out.push_str("for s, (x, y) in sorted(curves.items()):\n    ax.plot(x, y, marker=\"o\", label=f\"s = {s}\")\n");
    out.push_str("ax.set_xscale(\"log\")\nax.set_yscale(\"log\")\n");
    let _ = writeln!(out, "ax.set_xlabel(r\"{}\")", axis_label(mode));
    let _ = writeln!(out, "ax.set_ylabel(r\"{ylabel}\")");
    out.push_str("if curves:\n    ax.legend()\nfig.tight_layout()\n");
    let _ = writeln!(out, "fig.savefig(os.path.join(os.path.dirname(os.path.abspath(__file__)), \"{png}\"), dpi=150)");
    out
}

/// Writes one matplotlib script per panel and metric into `out_dir`.
pub fn emit_plots(csv_path: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<PlotOutput> {
    let csv_path = csv_path.as_ref();
    let records = read_csv(csv_path)?;
    let mut output = PlotOutput::default();
    if !records.iter().any(|r| matches!(r.trial, TrialLabel::Index(_))) {
        output.warnings.push(format!("{} has no trial rows; plots will be empty", csv_path.display()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    for metric in ["delta_P", "delta_J"] {
        for mode in SweepMode::ALL {
            let curves = panel_curves(&records, mode, metric);
            let path = out_dir.join(format!("{metric}_{}.py", mode.as_str()));
            fs::write(&path, plot_script(mode, metric, &curves))?;
            output.scripts.push(path);
        }
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;

    #[test]
    fn generated_radii_hit_target() {
        let g = generate_true_model(&GenSpec::new(10, 5, 10, 3)).unwrap();
        for a in &g.model.a {
            assert!((spectral_radius(a).unwrap() - 0.3).abs() < 1e-8);
        }
        for (q, r) in g.cost.q.iter().zip(&g.cost.r) {
            assert!(q.clone().cholesky().is_some() && r.clone().cholesky().is_some());
        }
        assert_eq!(g, generate_true_model(&GenSpec::new(10, 5, 10, 3)).unwrap());
    }

    #[test]
    fn eta_extremes() {
        let spec = GenSpec::new(3, 2, 4, 11);
        let zero = generate_model_pair(&spec, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(zero.truth, zero.nominal);
        let one = generate_model_pair(&spec, 0.0, 0.0, 1.0).unwrap();
        let d = dirichlet_transition(4, &mut stream(derive_seed(11, &[TAG_D])));
        assert_eq!(one.truth.t, d);
        assert!(validate_model(&one.truth).is_valid());
        assert!(generate_model_pair(&spec, 0.0, 0.0, 1.5).is_err());
    }

    #[test]
    fn dirichlet_rows_are_stochastic() {
        let t = dirichlet_transition(6, &mut stream(5));
        for i in 0..6 {
            assert!((t.row(i).sum() - 1.0).abs() < 1e-12);
            assert!(t.row(i).iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn config_parsing() {
        let cfg = config_from_str("[sweep]\nmodes = \"coupled\"\nlevels = [0.01, 0.1]\ns_list = [2]\ntrials = 3\nseed = 9\n", false).unwrap();
        assert_eq!(cfg.modes, vec![SweepMode::Coupled]);
        assert_eq!(cfg.eta_t, vec![0.01, 0.1]);
        assert_eq!((cfg.trials, cfg.seed, cfg.n), (3, 9, 4));
        let paper = config_from_str("[sweep]\ntrials = 1\n", true).unwrap();
        assert_eq!((paper.n, paper.p), (10, 5));
        assert_eq!(config_from_str("[sweep]\nbogus = 1\n", false).unwrap_err().code(), "PARSE_ERROR");
    }

    fn tiny() -> SweepConfig {
        SweepConfig {
            modes: vec![SweepMode::Coupled],
            eps_a: vec![0.0, 0.01],
            s_list: vec![2],
            trials: 3,
            n: 2,
            p: 1,
            ..SweepConfig::desk()
        }
    }

    #[test]
    fn zero_level_gives_zero_deltas_and_csv_roundtrips() {
        let recs = run_sweep(&tiny(), None).unwrap();
        assert_eq!(recs.len(), 2 * 6);
        for r in recs.iter().filter(|r| r.level == 0.0 && matches!(r.trial, TrialLabel::Index(_))) {
            assert_eq!(r.delta_p, 0.0);
            assert_eq!(r.delta_j, 0.0);
        }
        let text = records_to_csv(&recs);
        assert!(text.starts_with(CSV_HEADER));
        let back = records_from_csv(&text).unwrap();
        assert_eq!(records_to_csv(&back), text);
    }

    #[test]
    fn resume_reuses_complete_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let first = run_sweep(&tiny(), Some(&path)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        // Drop the last cell's aggregate rows to simulate an interrupted run.
        let cut: Vec<&str> = text.lines().collect();
        fs::write(&path, cut[..cut.len() - 2].join("\n") + "\n").unwrap();
        let second = run_sweep(&tiny(), Some(&path)).unwrap();
        assert_eq!(records_to_csv(&first), records_to_csv(&second));
        assert_eq!(fs::read_to_string(&path).unwrap(), text);
    }

    #[test]
    fn plots_reject_bad_header_and_warn_on_empty() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "a,b,c\n1,2,3\n").unwrap();
        assert_eq!(emit_plots(&bad, dir.path()).unwrap_err().code(), "SCHEMA_MISMATCH");
        let empty = dir.path().join("empty.csv");
        fs::write(&empty, "").unwrap();
        let out = emit_plots(&empty, dir.path().join("plots")).unwrap();
        assert_eq!(out.scripts.len(), 8);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn single_cell_gives_single_point() {
        let r = SweepRecord {
            mode: SweepMode::AOnly,
            level: 0.1,
            s: 2,
            trial: TrialLabel::Index(0),
            delta_p: 0.05,
            delta_j: 0.001,
            realized_eps: 0.2,
            realized_eta: 0.0,
            stabilized: Outcome::Stabilized,
            solver_iters: 10,
            runtime_ms: 0.0,
        };
        let curves = panel_curves(&[r], SweepMode::AOnly, "delta_P");
        assert_eq!(curves, vec![(2, vec![(0.1, 0.05)])]);
        assert!(plot_script(SweepMode::AOnly, "delta_P", &curves).contains("2: ([1e-1], [5e-2]),"));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.01, 0.02, 0.05, 0.1];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v * v).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
