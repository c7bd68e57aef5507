//! Critical values of self-normalized Brownian functionals.
//!
//! Each supported pivot has the form `|W(1)| / N(B)` where `B(t) = W(t) − tW(1)`
//! is the Brownian bridge built from the same path and `N` is a path
//! functional:
//!
//! | kind               | `N(B)`                  |
//! |--------------------|-------------------------|
//! | `SquaredIntegral`  | `√∫ B(t)² dt`           |
//! | `SupAbs`           | `sup |B(t)|`            |
//! | `AbsIntegral`      | `∫ |B(t)| dt`           |
//!
//! None has a closed-form law, so the quantiles are estimated by simulating
//! random-walk approximations of `W` on a uniform grid of `m` steps. Because
//! each ratio is invariant to the scale of the path, the `1/√m` factor is
//! dropped and integrals become grid means, the sup a grid max.
//!
//! A table entry for significance level `α` stores the `(1 − α)`-quantile of the
//! *absolute* statistic, which by symmetry is the two-sided critical value
//! `𝒰_{1−α/2}` of the signed one.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::rng;

/// Minimum path count accepted by [`pivot_quantile`].
pub const MIN_PATHS: usize = 10_000;
/// Minimum grid resolution accepted by [`pivot_quantile`].
pub const MIN_GRID_STEPS: usize = 1_000;
/// Default simulation size.
pub const DEFAULT_PATHS: usize = 200_000;
pub const DEFAULT_GRID_STEPS: usize = 4096;
/// Batches used for the Monte Carlo standard error.
pub const BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotKind {
    SquaredIntegral,
    SupAbs,
    AbsIntegral,
}

impl PivotKind {
    pub const ALL: [PivotKind; 3] = [Self::SquaredIntegral, Self::SupAbs, Self::AbsIntegral];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SquaredIntegral => "squared_integral",
            Self::SupAbs => "sup_abs",
            Self::AbsIntegral => "abs_integral",
        }
    }

    /// Evaluates `|W(1)| / N(B)` on a path of partial sums `S_1..S_m`.
    pub fn statistic(&self, partial_sums: &[f64]) -> f64 {
        let m = partial_sums.len();
        let end = partial_sums[m - 1];
        let slope = end / m as f64;
        let bridge = partial_sums.iter().enumerate().map(|(k, s)| s - (k + 1) as f64 * slope);
        let norm = match self {
            Self::SquaredIntegral => (bridge.map(|b| b * b).sum::<f64>() / m as f64).sqrt(),
            Self::SupAbs => bridge.fold(0.0f64, |acc, b| acc.max(b.abs())),
            Self::AbsIntegral => bridge.map(f64::abs).sum::<f64>() / m as f64,
        };
        end.abs() / norm
    }
}

impl fmt::Display for PivotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PivotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| config(format!("unknown pivot kind '{s}' (expected squared_integral, sup_abs or abs_integral)")))
    }
}

/// A two-sided critical value for one significance level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalValue {
    pub kind: PivotKind,
    pub alpha: f64,
    pub value: f64,
}

/// Simulates `paths` statistics of the given kind. Path `i` always draws from
/// the stream `(seed, i)`, so the output is independent of the thread count.
pub fn simulate_statistics(kind: PivotKind, paths: usize, grid_steps: usize, seed: u64) -> Vec<f64> {
    (0..paths)
        .into_par_iter()
        .map_init(
            || vec![0.0f64; grid_steps],
            |buf, i| {
                let mut rng = rng::stream(seed, &[i as u64]);
                let mut s = 0.0;
                for slot in buf.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    s += g;
                    *slot = s;
                }
                kind.statistic(buf)
            },
        )
        .collect()
}

/// Type-7 (linear interpolation) empirical quantile of sorted data.
fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(config(format!("significance level must lie in (0, 1), got {alpha}")))
    }
}

fn validate_size(paths: usize, grid_steps: usize) -> Result<()> {
    if paths < MIN_PATHS {
        return Err(config(format!("at least {MIN_PATHS} paths are required, got {paths}")));
    }
    if grid_steps < MIN_GRID_STEPS {
        return Err(config(format!("at least {MIN_GRID_STEPS} grid steps are required, got {grid_steps}")));
    }
    Ok(())
}

/// Quantiles of simulated statistics at each `1 − α`, with batch standard errors.
fn quantiles_with_error(stats: &[f64], alphas: &[f64]) -> Vec<(f64, f64)> {
    let mut all = stats.to_vec();
    all.sort_by(f64::total_cmp);
    let batch_len = stats.len() / BATCHES;
    let batches: Vec<Vec<f64>> = stats
        .chunks_exact(batch_len)
        .take(BATCHES)
        .map(|c| {
            let mut v = c.to_vec();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    alphas
        .iter()
        .map(|&alpha| {
            let p = 1.0 - alpha;
            let u = sorted_quantile(&all, p);
            let per_batch: Vec<f64> = batches.iter().map(|b| sorted_quantile(b, p)).collect();
            let mean = per_batch.iter().sum::<f64>() / BATCHES as f64;
            let var = per_batch.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
            (u, (var / BATCHES as f64).sqrt())
        })
        .collect()
}

/// Two-sided critical value `𝒰_{1−α/2}` for the given pivot, with its Monte
/// Carlo standard error.
pub fn pivot_quantile(kind: PivotKind, alpha: f64, paths: usize, grid_steps: usize, seed: u64) -> Result<(f64, f64)> {
    validate_alpha(alpha)?;
    validate_size(paths, grid_steps)?;
    let stats = simulate_statistics(kind, paths, grid_steps, seed);
    Ok(quantiles_with_error(&stats, &[alpha])[0])
}

/// Significance levels `0.01, 0.02, …, 0.99`.
pub fn default_alphas() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

/// Tabulated critical values, serialized as
/// `{kind, alpha[], U[], std_err[], paths, grid_steps, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotTable {
    pub kind: PivotKind,
    pub alpha: Vec<f64>,
    #[serde(rename = "U")]
    pub u: Vec<f64>,
    pub std_err: Vec<f64>,
    pub paths: usize,
    pub grid_steps: usize,
    pub seed: u64,
}

const ALPHA_MATCH: f64 = 1e-9;

impl PivotTable {
    /// Simulates once and reads off every requested level.
    pub fn build(kind: PivotKind, alphas: &[f64], paths: usize, grid_steps: usize, seed: u64) -> Result<Self> {
        validate_size(paths, grid_steps)?;
        let mut alphas = alphas.to_vec();
        for &a in &alphas {
            validate_alpha(a)?;
        }
        alphas.sort_by(f64::total_cmp);
        alphas.dedup_by(|a, b| (*a - *b).abs() < ALPHA_MATCH);
        if alphas.is_empty() {
            return Err(config("no significance levels requested"));
        }
        let stats = simulate_statistics(kind, paths, grid_steps, seed);
        let (u, std_err) = quantiles_with_error(&stats, &alphas).into_iter().unzip();
        let table = Self { kind, alpha: alphas, u, std_err, paths, grid_steps, seed };
        table.validate()?;
        Ok(table)
    }

    /// Checks shape and the monotone decrease of `U` in `α`.
    pub fn validate(&self) -> Result<()> {
        let n = self.alpha.len();
        if n == 0 || self.u.len() != n || self.std_err.len() != n {
            return Err(Error::Pivot("alpha, U and std_err must be non-empty and of equal length".into()));
        }
        for w in self.alpha.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Pivot("alpha values must be strictly increasing".into()));
            }
        }
        for w in self.u.windows(2) {
            if w[0] <= w[1] {
                return Err(Error::Pivot("critical values must decrease strictly as alpha increases".into()));
            }
        }
        if self.u.iter().any(|&u| !(u > 0.0 && u.is_finite())) {
            return Err(Error::Pivot("critical values must be positive and finite".into()));
        }
        Ok(())
    }

    /// Critical value for `alpha`, which must be one of the tabulated levels.
    pub fn critical_value(&self, alpha: f64) -> Result<CriticalValue> {
        self.alpha
            .iter()
            .position(|&a| (a - alpha).abs() < ALPHA_MATCH)
            .map(|i| CriticalValue { kind: self.kind, alpha: self.alpha[i], value: self.u[i] })
            .ok_or_else(|| {
                Error::Pivot(format!(
                    "no {} critical value for alpha = {alpha}; rebuild the table with `ldpq pivot --alpha {alpha}`",
                    self.kind
                ))
            })
    }

    pub fn covers(&self, alphas: &[f64]) -> bool {
        alphas.iter().all(|&a| self.critical_value(a).is_ok())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let table: Self = serde_json::from_str(s)?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Pivot(format!(
                "cannot read pivot table {}: {e}; generate one with `ldpq pivot --out {}`",
                path.display(),
                path.display()
            ))
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// File name used by [`PivotTable::cached`] for a simulation key.
    pub fn cache_file(dir: &Path, kind: PivotKind, paths: usize, grid_steps: usize, seed: u64) -> PathBuf {
        dir.join(format!("pivot-{kind}-p{paths}-m{grid_steps}-s{seed}.json"))
    }

    /// Loads the table for `(kind, paths, grid_steps, seed)` from `dir`, or
    /// simulates and stores it when missing or lacking a requested level.
    pub fn cached(dir: &Path, kind: PivotKind, alphas: &[f64], paths: usize, grid_steps: usize, seed: u64) -> Result<Self> {
        let file = Self::cache_file(dir, kind, paths, grid_steps, seed);
        let mut wanted = alphas.to_vec();
        if let Ok(existing) = Self::load(&file) {
            if existing.covers(alphas) {
                return Ok(existing);
            }
            wanted.extend_from_slice(&existing.alpha);
        }
        let table = Self::build(kind, &wanted, paths, grid_steps, seed)?;
        table.save(&file)?;
        Ok(table)
    }
}
