//! Simulation harness: coverage tables, coverage curves, sample trajectories,
//! box summaries and the median variance check.
//!
//! Every replication draws its private data and its users' coin flips from
//! streams derived from `(seed, cell, replication)`, and results are gathered
//! in replication order before aggregation. Output is therefore identical for
//! any worker-thread count.

use std::io::Write;
use std::path::PathBuf;

use rand_distr::Distribution as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::Distribution;
use crate::error::{config, Error, Result};
use crate::estimator::{EstimatorConfig, OnlineQuantile, StepSchedule};
use crate::inference::{
    asymptotic_sd, infeasible_interval, normal_critical, offline_normalizer, self_normalizer, sn_interval,
    sn_interval_offline, Trajectory,
};
use crate::pivot::{PivotKind, PivotTable};
use crate::protocol::{run_session, Recording};
use crate::randomizer::{lrc_unchecked, PrivacyLevel};
use crate::rng;

fn default_taus() -> Vec<f64> {
    vec![0.5]
}
fn default_rates() -> Vec<f64> {
    vec![0.5]
}
fn default_ns() -> Vec<u64> {
    vec![10_000]
}
fn default_reps() -> usize {
    1000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_seed() -> u64 {
    20_240_601
}
fn default_levels() -> Vec<f64> {
    (0..=19).map(|i| i as f64 * 0.05).chain([0.99]).collect()
}

/// Everything a simulation run needs. Loadable from JSON; every field has a
/// default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub distribution: Distribution,
    pub tau: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<u64>,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub schedule: StepSchedule,
    pub q0: f64,
    /// Keep full iterate paths so the sup/absolute-value normalizers can be
    /// evaluated. Costs O(n) memory per replication.
    pub record_trajectories: bool,
    /// Squared-integral critical values.
    pub pivot_table: Option<PathBuf>,
    /// Tables for the path-based normalizers, used when trajectories are recorded.
    pub alt_pivot_tables: Vec<PathBuf>,
    /// Nominal coverage levels for [`coverage_curve`].
    pub nominal_levels: Vec<f64>,
    /// Sample sizes at which [`trajectory_run`] reports.
    pub checkpoints: Vec<u64>,
    /// Half-width of optional uniform jitter added to every datum.
    pub jitter: Option<f64>,
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            distribution: Distribution::STANDARD_NORMAL,
            tau: default_taus(),
            r: default_rates(),
            n: default_ns(),
            reps: default_reps(),
            alpha: default_alpha(),
            seed: default_seed(),
            schedule: StepSchedule::default(),
            q0: 0.0,
            record_trajectories: false,
            pivot_table: None,
            alt_pivot_tables: Vec::new(),
            nominal_levels: default_levels(),
            checkpoints: Vec::new(),
            jitter: None,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.distribution.validate()?;
        self.schedule.validate()?;
        if self.reps == 0 {
            return Err(config("reps must be at least 1"));
        }
        if self.tau.is_empty() || self.r.is_empty() || self.n.is_empty() {
            return Err(config("tau, r and n grids must be non-empty"));
        }
        for &tau in &self.tau {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(config(format!("tau must lie in (0, 1), got {tau}")));
            }
        }
        for &r in &self.r {
            PrivacyLevel::from_rate(r)?;
            if r == 0.0 {
                return Err(config("r = 0 carries no information about the quantile"));
            }
        }
        if self.n.contains(&0) {
            return Err(config("sample sizes must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// All `(tau, r, n)` cells in grid order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &n in &self.n {
            for &tau in &self.tau {
                for &r in &self.r {
                    cells.push(Cell { tau, r, n });
                }
            }
        }
        cells
    }

    fn estimator_config(&self, cell: &Cell) -> Result<EstimatorConfig> {
        let cfg = EstimatorConfig::new(cell.tau, PrivacyLevel::from_rate(cell.r)?)
            .with_schedule(self.schedule)
            .with_q0(self.q0);
        cfg.validate()?;
        Ok(cfg)
    }

    fn load_pivot(&self) -> Result<PivotTable> {
        let path = self.pivot_table.as_ref().ok_or_else(|| {
            Error::Pivot(
                "no pivot table configured; create one with `ldpq pivot --out pivot.json` and pass `--pivot pivot.json`"
                    .into(),
            )
        })?;
        let table = PivotTable::load(path)?;
        if table.kind != PivotKind::SquaredIntegral {
            return Err(Error::Pivot(format!("{} holds {} values, expected squared_integral", path.display(), table.kind)));
        }
        Ok(table)
    }

    fn load_alt_pivots(&self) -> Result<Vec<PivotTable>> {
        if !self.record_trajectories {
            return Ok(Vec::new());
        }
        self.alt_pivot_tables.iter().map(|p| PivotTable::load(p)).collect()
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = self.threads {
            builder = builder.num_threads(t.max(1));
        }
        builder.build().map_err(|e| config(format!("cannot start worker pool: {e}")))
    }
}

/// One `(tau, r, n)` grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub tau: f64,
    pub r: f64,
    pub n: u64,
}

impl Cell {
    /// Stream id; depends only on the cell itself, so cells never share draws.
    fn stream_id(&self, dist: &Distribution) -> u64 {
        rng::derive_seed(rng::label_id(&dist.label()), &[self.tau.to_bits(), self.r.to_bits(), self.n])
    }
}

/// Output of one replication.
#[derive(Debug, Clone)]
pub struct Replication {
    pub estimate: f64,
    /// Self-normalizer `N_n` from the online accumulators.
    pub normalizer: f64,
    pub n: u64,
    /// Offline normalizers, one per requested kind.
    pub offline: Vec<(PivotKind, f64)>,
}

/// Runs one replication of `cell`, reproducibly from `(seed, cell, rep)`.
pub fn replicate(
    exp: &ExperimentConfig,
    cell: &Cell,
    rep: u64,
    offline_kinds: &[PivotKind],
) -> Result<Replication> {
    let cfg = exp.estimator_config(cell)?;
    let source = exp.distribution.source(exp.jitter)?;
    let id = cell.stream_id(&exp.distribution);
    let mut data_rng = rng::stream(exp.seed, &[id, rep, 0]);
    let mut coin_rng = rng::stream(exp.seed, &[id, rep, 1]);
    let data = std::iter::from_fn(|| Some(source.sample(&mut data_rng)));
    let record = Recording { transcript: false, trajectory: !offline_kinds.is_empty() };
    let out = run_session(&cfg, data, cell.n, &mut coin_rng, record)?;
    let offline = match &out.trajectory {
        Some(traj) => offline_kinds
            .iter()
            .map(|&k| offline_normalizer(traj, k).map(|v| (k, v)))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    Ok(Replication {
        estimate: out.state.estimate()?,
        normalizer: self_normalizer(&out.state)?,
        n: out.state.n,
        offline,
    })
}

/// All replications of a cell, in replication order.
fn replicate_all(
    exp: &ExperimentConfig,
    pool: &rayon::ThreadPool,
    cell: &Cell,
    offline_kinds: &[PivotKind],
) -> Result<Vec<Replication>> {
    pool.install(|| {
        (0..exp.reps as u64)
            .into_par_iter()
            .map(|rep| replicate(exp, cell, rep, offline_kinds))
            .collect()
    })
}

/// Coverage and error summary for one cell and one interval construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub distribution: String,
    pub tau: f64,
    pub r: f64,
    pub n: u64,
    pub alpha: f64,
    /// `sn` (self-normalized), `infeasible`, or a path-normalizer kind.
    pub method: String,
    pub reps: usize,
    pub coverage: f64,
    /// Mean `|Q_n − Q|`.
    pub mae: f64,
    pub mean_width: f64,
}

fn half_width(rep: &Replication, critical: f64) -> f64 {
    critical * rep.normalizer.sqrt() / rep.n as f64
}

/// Coverage of the self-normalized interval (plus the infeasible baseline and,
/// when trajectories are recorded, the path-normalizer intervals) for every
/// cell of the grid.
pub fn coverage_experiment(exp: &ExperimentConfig) -> Result<Vec<CoverageReport>> {
    exp.validate()?;
    let pivot = exp.load_pivot()?;
    let alts = exp.load_alt_pivots()?;
    let critical = pivot.critical_value(exp.alpha)?;
    let alt_criticals = alts.iter().map(|t| t.critical_value(exp.alpha)).collect::<Result<Vec<_>>>()?;
    let kinds: Vec<PivotKind> = alt_criticals.iter().map(|c| c.kind).collect();
    let pool = exp.pool()?;
    let z = normal_critical(exp.alpha)?;

    let mut reports = Vec::new();
    for cell in exp.cells() {
        let truth = exp.distribution.quantile(cell.tau)?;
        let level = PrivacyLevel::from_rate(cell.r)?;
        let reps = replicate_all(exp, &pool, &cell, &kinds)?;
        let count = reps.len() as f64;
        let mae = reps.iter().map(|x| (x.estimate - truth).abs()).sum::<f64>() / count;
        let report = |method: String, widths: &mut dyn Iterator<Item = f64>| {
            let (mut hits, mut total_width) = (0usize, 0.0);
            for (rep, w) in reps.iter().zip(widths) {
                if (rep.estimate - truth).abs() <= w {
                    hits += 1;
                }
                total_width += 2.0 * w;
            }
            CoverageReport {
                distribution: exp.distribution.label(),
                tau: cell.tau,
                r: cell.r,
                n: cell.n,
                alpha: exp.alpha,
                method,
                reps: reps.len(),
                coverage: hits as f64 / count,
                mae,
                mean_width: total_width / count,
            }
        };
        reports.push(report("sn".into(), &mut reps.iter().map(|x| half_width(x, critical.value))));
        let density = exp.distribution.density(truth);
        let oracle_half = z * asymptotic_sd(cell.tau, &level, density, cell.n)?;
        reports.push(report("infeasible".into(), &mut std::iter::repeat(oracle_half)));
        for (i, crit) in alt_criticals.iter().enumerate() {
            let mut widths = reps.iter().map(|x| crit.value * x.offline[i].1 / x.n as f64);
            reports.push(report(crit.kind.to_string(), &mut widths));
        }
    }
    Ok(reports)
}

/// One point of a nominal-versus-empirical coverage curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub r: f64,
    pub n: u64,
    pub tau: f64,
    pub nominal: f64,
    pub empirical: f64,
}

/// Empirical coverage at each configured nominal level. The same replications
/// serve every level, so the intervals are nested and the curve is monotone.
pub fn coverage_curve(exp: &ExperimentConfig) -> Result<Vec<CurvePoint>> {
    exp.validate()?;
    let pivot = exp.load_pivot()?;
    let mut levels = Vec::with_capacity(exp.nominal_levels.len());
    for &nominal in &exp.nominal_levels {
        if !(0.0..1.0).contains(&nominal) {
            return Err(config(format!("nominal levels must lie in [0, 1), got {nominal}")));
        }
        // Level 0 is the degenerate point interval.
        let u = if nominal == 0.0 { 0.0 } else { pivot.critical_value(1.0 - nominal)?.value };
        levels.push((nominal, u));
    }
    let pool = exp.pool()?;
    let mut points = Vec::new();
    for cell in exp.cells() {
        let truth = exp.distribution.quantile(cell.tau)?;
        let reps = replicate_all(exp, &pool, &cell, &[])?;
        for &(nominal, u) in &levels {
            let hits = reps
                .iter()
                .filter(|x| u > 0.0 && (x.estimate - truth).abs() <= half_width(x, u))
                .count();
            points.push(CurvePoint { r: cell.r, n: cell.n, tau: cell.tau, nominal, empirical: hits as f64 / reps.len() as f64 });
        }
    }
    Ok(points)
}

/// Largest `|empirical − nominal|` over a set of curve points.
pub fn max_curve_gap(points: &[CurvePoint]) -> f64 {
    points.iter().map(|p| (p.empirical - p.nominal).abs()).fold(0.0, f64::max)
}

/// One checkpoint of a single sample path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub n: u64,
    pub q: f64,
    pub estimate: f64,
    pub sn_lo: f64,
    pub sn_hi: f64,
    pub oracle_lo: f64,
    pub oracle_hi: f64,
    /// `(kind, lo, hi)` for each path-normalizer table, when trajectories are recorded.
    pub offline: Vec<(PivotKind, f64, f64)>,
}

/// Follows a single replication of the first grid cell and reports both
/// intervals at each checkpoint.
pub fn trajectory_run(exp: &ExperimentConfig) -> Result<Vec<TrajectoryRow>> {
    exp.validate()?;
    let pivot = exp.load_pivot()?;
    let critical = pivot.critical_value(exp.alpha)?;
    let alts = exp.load_alt_pivots()?;
    let alt_criticals = alts.iter().map(|t| t.critical_value(exp.alpha)).collect::<Result<Vec<_>>>()?;
    let mut checkpoints = exp.checkpoints.clone();
    if checkpoints.is_empty() {
        checkpoints = exp.n.clone();
    }
    checkpoints.sort_unstable();
    checkpoints.dedup();
    if checkpoints.first() == Some(&0) {
        return Err(config("checkpoints must be positive"));
    }
    let last = *checkpoints.last().expect("non-empty");
    let cell = Cell { tau: exp.tau[0], r: exp.r[0], n: last };
    let cfg = exp.estimator_config(&cell)?;
    let level = cfg.level;
    let truth = exp.distribution.quantile(cell.tau)?;
    let density = exp.distribution.density(truth);
    let source = exp.distribution.source(exp.jitter)?;
    let id = cell.stream_id(&exp.distribution);
    let mut data_rng = rng::stream(exp.seed, &[id, 0, 0]);
    let mut coin_rng = rng::stream(exp.seed, &[id, 0, 1]);

    let mut est = OnlineQuantile::new(cfg)?;
    let mut traj = exp.record_trajectories.then(Trajectory::default);
    let mut rows = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    for step in 1..=last {
        let x = source.sample(&mut data_rng);
        let bit = lrc_unchecked(est.next_threshold(), &level, x, &mut coin_rng);
        est.update(bit);
        if let Some(t) = traj.as_mut() {
            t.push(est.state().q);
        }
        if next.peek() == Some(&&step) {
            next.next();
            let state = est.state();
            let (sn_lo, sn_hi) = if step >= 2 {
                let iv = sn_interval(state, critical.value)?;
                (iv.lo, iv.hi)
            } else {
                (state.qbar, state.qbar)
            };
            let oracle = infeasible_interval(state, cell.tau, &level, density, exp.alpha)?;
            let offline = match &traj {
                Some(t) => alt_criticals
                    .iter()
                    .map(|c| sn_interval_offline(t, c).map(|iv| (c.kind, iv.lo, iv.hi)))
                    .collect::<Result<_>>()?,
                None => Vec::new(),
            };
            rows.push(TrajectoryRow {
                n: step,
                q: state.q,
                estimate: state.qbar,
                sn_lo,
                sn_hi,
                oracle_lo: oracle.lo,
                oracle_hi: oracle.hi,
                offline,
            });
        }
    }
    Ok(rows)
}

/// Five-number summary of `Q_n` across replications, with 1.5·IQR whiskers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub distribution: String,
    pub tau: f64,
    pub r: f64,
    pub n: u64,
    pub reps: usize,
    pub truth: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme estimates within `[q1 − 1.5·IQR, q3 + 1.5·IQR]`.
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

impl BoxSummary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

fn type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_summary(exp: &ExperimentConfig) -> Result<Vec<BoxSummary>> {
    exp.validate()?;
    if exp.reps < 20 {
        return Err(config(format!("box summaries need at least 20 replications, got {}", exp.reps)));
    }
    let pool = exp.pool()?;
    let mut out = Vec::new();
    for cell in exp.cells() {
        let truth = exp.distribution.quantile(cell.tau)?;
        let mut est: Vec<f64> = replicate_all(exp, &pool, &cell, &[])?.iter().map(|x| x.estimate).collect();
        est.sort_by(f64::total_cmp);
        let (q1, q3) = (type7(&est, 0.25), type7(&est, 0.75));
        let fence = 1.5 * (q3 - q1);
        let whisker_lo = est.iter().copied().find(|&x| x >= q1 - fence).unwrap_or(est[0]);
        let whisker_hi = est.iter().rev().copied().find(|&x| x <= q3 + fence).unwrap_or(est[est.len() - 1]);
        out.push(BoxSummary {
            distribution: exp.distribution.label(),
            tau: cell.tau,
            r: cell.r,
            n: cell.n,
            reps: est.len(),
            truth,
            min: est[0],
            q1,
            median: type7(&est, 0.5),
            q3,
            max: est[est.len() - 1],
            whisker_lo,
            whisker_hi,
        });
    }
    Ok(out)
}

/// Result of the median variance check for one `(r, n)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub distribution: String,
    pub r: f64,
    pub n: u64,
    pub reps: usize,
    pub empirical_variance: f64,
    /// `(4·r²·n·f(Q)²)⁻¹`
    pub lower_bound: f64,
    pub ratio: f64,
}

/// Compares the across-replication variance of `Q_n` for the median with the
/// variance lower bound for one-bit randomized-response estimators. A ratio
/// near 1 means the bound is attained.
pub fn variance_optimality_check(exp: &ExperimentConfig) -> Result<Vec<OptimalityReport>> {
    exp.validate()?;
    if exp.tau.iter().any(|&t| t != 0.5) {
        return Err(config("the variance lower bound is only established for the median (tau = 0.5)"));
    }
    if exp.reps < 2 {
        return Err(config("a variance needs at least two replications"));
    }
    let pool = exp.pool()?;
    let truth = exp.distribution.quantile(0.5)?;
    let density = exp.distribution.density(truth);
    let mut out = Vec::new();
    for cell in exp.cells() {
        let est: Vec<f64> = replicate_all(exp, &pool, &cell, &[])?.iter().map(|x| x.estimate).collect();
        let k = est.len() as f64;
        let mean = est.iter().sum::<f64>() / k;
        let var = est.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let bound = 1.0 / (4.0 * cell.r * cell.r * cell.n as f64 * density * density);
        out.push(OptimalityReport {
            distribution: exp.distribution.label(),
            r: cell.r,
            n: cell.n,
            reps: est.len(),
            empirical_variance: var,
            lower_bound: bound,
            ratio: var / bound,
        });
    }
    Ok(out)
}

/// Estimates of `Q_n` for every replication of one cell, in order.
pub fn cell_estimates(exp: &ExperimentConfig, cell: &Cell) -> Result<Vec<f64>> {
    exp.validate()?;
    let pool = exp.pool()?;
    Ok(replicate_all(exp, &pool, cell, &[])?.iter().map(|x| x.estimate).collect())
}

// CSV output. Each file starts with a `# schema=…` line naming the column layout.

pub const COVERAGE_SCHEMA: &str = "ldpq.coverage.v1";
pub const CURVE_SCHEMA: &str = "ldpq.curve.v1";
pub const TRAJECTORY_SCHEMA: &str = "ldpq.trajectory.v1";
pub const BOX_SCHEMA: &str = "ldpq.boxes.v1";
pub const OPTIMALITY_SCHEMA: &str = "ldpq.optimality.v1";

fn csv_writer<W: Write>(mut out: W, schema: &str, header: &[&str]) -> Result<csv::Writer<W>> {
    writeln!(out, "# schema={schema}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub fn write_coverage_csv<W: Write>(out: W, reports: &[CoverageReport]) -> Result<()> {
    let mut w = csv_writer(out, COVERAGE_SCHEMA, &["distribution", "tau", "r", "n", "alpha", "method", "reps", "coverage", "mae", "mean_width"])?;
    for r in reports {
        w.write_record([
            r.distribution.clone(),
            num(r.tau),
            num(r.r),
            r.n.to_string(),
            num(r.alpha),
            r.method.clone(),
            r.reps.to_string(),
            num(r.coverage),
            num(r.mae),
            num(r.mean_width),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv<W: Write>(out: W, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv_writer(out, CURVE_SCHEMA, &["r", "n", "tau", "nominal", "empirical"])?;
    for p in points {
        w.write_record([num(p.r), p.n.to_string(), num(p.tau), num(p.nominal), num(p.empirical)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_csv<W: Write>(out: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut header: Vec<String> = ["n", "q_n", "Q_n", "sn_lo", "sn_hi", "oracle_lo", "oracle_hi"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if let Some(first) = rows.first() {
        for (kind, _, _) in &first.offline {
            header.push(format!("{kind}_lo"));
            header.push(format!("{kind}_hi"));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = csv_writer(out, TRAJECTORY_SCHEMA, &header_refs)?;
    for row in rows {
        let mut rec = vec![
            row.n.to_string(),
            num(row.q),
            num(row.estimate),
            num(row.sn_lo),
            num(row.sn_hi),
            num(row.oracle_lo),
            num(row.oracle_hi),
        ];
        for (_, lo, hi) in &row.offline {
            rec.push(num(*lo));
            rec.push(num(*hi));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_box_csv<W: Write>(out: W, boxes: &[BoxSummary]) -> Result<()> {
    let mut w = csv_writer(
        out,
        BOX_SCHEMA,
        &["distribution", "tau", "r", "n", "reps", "truth", "min", "q1", "median", "q3", "max", "whisker_lo", "whisker_hi"],
    )?;
    for b in boxes {
        w.write_record([
            b.distribution.clone(),
            num(b.tau),
            num(b.r),
            b.n.to_string(),
            b.reps.to_string(),
            num(b.truth),
            num(b.min),
            num(b.q1),
            num(b.median),
            num(b.q3),
            num(b.max),
            num(b.whisker_lo),
            num(b.whisker_hi),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_optimality_csv<W: Write>(out: W, reports: &[OptimalityReport]) -> Result<()> {
    let mut w = csv_writer(out, OPTIMALITY_SCHEMA, &["distribution", "r", "n", "reps", "empirical_variance", "lower_bound", "ratio"])?;
    for r in reports {
        w.write_record([
            r.distribution.clone(),
            num(r.r),
            r.n.to_string(),
            r.reps.to_string(),
            num(r.empirical_variance),
            num(r.lower_bound),
            num(r.ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig { n: vec![2000], reps: 40, ..Default::default() }
    }

    #[test]
    fn config_defaults_and_validation() {
        let exp = ExperimentConfig::from_json(r#"{"tau":[0.3,0.5],"reps":10}"#).unwrap();
        assert_eq!(exp.tau, vec![0.3, 0.5]);
        assert_eq!(exp.alpha, 0.05);
        assert!(ExperimentConfig::from_json(r#"{"bogus":1}"#).is_err());
        assert!(ExperimentConfig { reps: 0, ..small() }.validate().is_err());
        assert!(ExperimentConfig { r: vec![0.0], ..small() }.validate().is_err());
        assert!(ExperimentConfig { tau: vec![1.0], ..small() }.validate().is_err());
    }

    #[test]
    fn missing_pivot_names_subcommand() {
        let err = coverage_experiment(&small()).unwrap_err().to_string();
        assert!(err.contains("ldpq pivot"), "{err}");
    }

    #[test]
    fn replications_are_reproducible_and_distinct() {
        let exp = small();
        let cell = exp.cells()[0];
        let a = replicate(&exp, &cell, 3, &[]).unwrap();
        let b = replicate(&exp, &cell, 3, &[]).unwrap();
        let c = replicate(&exp, &cell, 4, &[]).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_ne!(a.estimate, c.estimate);
    }

    #[test]
    fn cells_use_disjoint_streams() {
        let exp = ExperimentConfig { n: vec![10_000, 20_000], ..small() };
        let cells = exp.cells();
        let ids: Vec<u64> = cells.iter().map(|c| c.stream_id(&exp.distribution)).collect();
        assert_ne!(ids[0], ids[1]);
        // The first 10k rounds of the n=20k cell are not the n=10k cell.
        let a = replicate(&exp, &cells[0], 0, &[]).unwrap();
        let b = replicate(&ExperimentConfig { n: vec![10_000], ..exp.clone() }, &Cell { n: 10_000, ..cells[1] }, 0, &[]).unwrap();
        assert_eq!(a.estimate, b.estimate);
        let c = replicate(&exp, &cells[1], 0, &[]).unwrap();
        assert_ne!(a.estimate, c.estimate);
    }

    #[test]
    fn box_summary_needs_reps() {
        assert!(box_summary(&ExperimentConfig { reps: 1, ..small() }).is_err());
        let boxes = box_summary(&small()).unwrap();
        let b = &boxes[0];
        assert!(b.min <= b.whisker_lo && b.whisker_lo <= b.q1 && b.q1 <= b.median);
        assert!(b.median <= b.q3 && b.q3 <= b.whisker_hi && b.whisker_hi <= b.max);
    }

    #[test]
    fn optimality_rejects_other_quantiles() {
        assert!(variance_optimality_check(&ExperimentConfig { tau: vec![0.3], ..small() }).is_err());
    }

    #[test]
    fn type7_matches_hand_values() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(type7(&v, 0.25), 1.75);
        assert_eq!(type7(&v, 0.5), 2.5);
    }

    #[test]
    fn csv_has_schema_line() {
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &[CurvePoint { r: 0.5, n: 10, tau: 0.3, nominal: 0.9, empirical: 0.875 }]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "# schema=ldpq.curve.v1\nr,n,tau,nominal,empirical\n0.5,10,0.3,0.9,0.875\n");
    }
}
