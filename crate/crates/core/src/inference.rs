//! Confidence intervals for the averaged estimate.
//!
//! The main interval studentizes `Q_n` by the self-normalizer
//!
//! ```text
//! N_n = n⁻¹ Σ_{k≤n} (S_k − k·Q_n)²,    S_k = q_1 + … + q_k,
//! ```
//!
//! which scales with the same unknown nuisance factor as the estimation error,
//! so `n·(Q_n − Q)/√N_n` converges to the parameter-free law of
//! `W(1) / √∫(W(t) − tW(1))² dt`. Expanding the square gives
//!
//! ```text
//! n·N_n = va − 2·Q_n·vb + Q_n²·n(n+1)(2n+1)/6,
//! ```
//!
//! so the interval comes straight out of the estimator's O(1) state.
//!
//! Critical values of the limit law are tabulated by simulation in
//! [`crate::pivot`]. The infeasible Wald interval, which needs the true
//! density at the quantile, is provided as a baseline.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{config, domain, Error, Result};
use crate::estimator::EstimatorState;
use crate::pivot::{CriticalValue, PivotKind};
use crate::randomizer::PrivacyLevel;

/// Whether an interval has positive width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalStatus {
    Ok,
    /// The normalizer (or the critical value) is zero, so the interval
    /// collapsed to a point. Usually means a constant iterate path.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// Nominal coverage `1 − α`, when known.
    pub level: Option<f64>,
    pub status: IntervalStatus,
}

impl Interval {
    fn centered(center: f64, half_width: f64) -> Self {
        let status = if half_width > 0.0 { IntervalStatus::Ok } else { IntervalStatus::Degenerate };
        Self { lo: center - half_width, hi: center + half_width, level: None, status }
    }

    fn with_level(mut self, level: f64) -> Self {
        self.level = Some(level);
        self
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// `n⁻¹ Σ (S_k − k·Q_n)²` evaluated from the online accumulators.
pub fn self_normalizer(state: &EstimatorState) -> Result<f64> {
    if state.n == 0 {
        return Err(Error::NoData("the self-normalizer needs at least one round"));
    }
    let n = state.n as f64;
    let sum_k2 = n * (n + 1.0) * (2.0 * n + 1.0) / 6.0;
    let q = state.qbar;
    let total = state.va_total() - 2.0 * q * state.vb_total() + q * q * sum_k2;
    // Cancellation can leave a tiny negative residue for near-constant paths.
    Ok((total / n).max(0.0))
}

/// Self-normalized interval `Q_n ± U·√N_n / n`, where `U` is the two-sided
/// critical value of the squared-integral pivot.
pub fn sn_interval(state: &EstimatorState, critical: f64) -> Result<Interval> {
    if state.n < 2 {
        return Err(Error::NoData("the self-normalized interval needs at least two rounds"));
    }
    if !(critical >= 0.0 && critical.is_finite()) {
        return Err(domain(format!("critical value must be finite and non-negative, got {critical}")));
    }
    let half = critical * self_normalizer(state)?.sqrt() / state.n as f64;
    let interval = Interval::centered(state.qbar, half);
    if interval.status == IntervalStatus::Degenerate && critical > 0.0 {
        log::warn!("self-normalizer is zero after {} rounds; interval is a point", state.n);
    }
    Ok(interval)
}

/// [`sn_interval`] with the critical value taken from a pivot table entry.
pub fn sn_interval_at(state: &EstimatorState, critical: &CriticalValue) -> Result<Interval> {
    if critical.kind != PivotKind::SquaredIntegral {
        return Err(config(format!(
            "the online interval needs a squared-integral critical value, got {}",
            critical.kind
        )));
    }
    Ok(sn_interval(state, critical.value)?.with_level(1.0 - critical.alpha))
}

/// Full iterate path `q_1..q_n`, kept only when the offline normalizers are
/// requested.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub qs: Vec<f64>,
}

impl Trajectory {
    pub fn new(qs: Vec<f64>) -> Result<Self> {
        if qs.is_empty() {
            return Err(Error::NoData("a trajectory needs at least one iterate"));
        }
        Ok(Self { qs })
    }

    pub fn len(&self) -> usize {
        self.qs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qs.is_empty()
    }

    pub fn push(&mut self, q: f64) {
        self.qs.push(q);
    }

    /// Mean of the stored iterates.
    pub fn mean(&self) -> f64 {
        self.qs.iter().sum::<f64>() / self.qs.len() as f64
    }

    /// Deviations `S_k − k·Q_n` for `k = 1..n`.
    fn bridge(&self) -> impl Iterator<Item = f64> + '_ {
        let mean = self.mean();
        self.qs.iter().enumerate().scan(0.0, move |s, (i, q)| {
            *s += q;
            Some(*s - (i + 1) as f64 * mean)
        })
    }
}

/// Path normalizer of the given kind, computed from the stored trajectory.
///
/// * `SquaredIntegral`: `n⁻¹ Σ (S_k − kQ_n)²`, the same quantity as
///   [`self_normalizer`].
/// * `SupAbs`: `max_k |S_k − kQ_n|`.
/// * `AbsIntegral`: `n⁻¹ Σ |S_k − kQ_n|`.
pub fn offline_normalizer(traj: &Trajectory, kind: PivotKind) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::NoData("empty trajectory"));
    }
    let n = traj.len() as f64;
    Ok(match kind {
        PivotKind::SquaredIntegral => traj.bridge().map(|d| d * d).sum::<f64>() / n,
        PivotKind::SupAbs => traj.bridge().fold(0.0, |m, d| m.max(d.abs())),
        PivotKind::AbsIntegral => traj.bridge().map(f64::abs).sum::<f64>() / n,
    })
}

/// Interval from a stored trajectory. The half-width is `U·√N_n / n` for the
/// squared-integral normalizer and `U·N / n` for the two absolute-value
/// normalizers, which already carry the scale of `S_k`.
pub fn sn_interval_offline(traj: &Trajectory, critical: &CriticalValue) -> Result<Interval> {
    let normalizer = offline_normalizer(traj, critical.kind)?;
    let scale = match critical.kind {
        PivotKind::SquaredIntegral => normalizer.sqrt(),
        PivotKind::SupAbs | PivotKind::AbsIntegral => normalizer,
    };
    let half = critical.value * scale / traj.len() as f64;
    Ok(Interval::centered(traj.mean(), half).with_level(1.0 - critical.alpha))
}

/// Standard deviation of `Q_n` from the limiting normal law:
/// `√(1 − r²(2τ − 1)²) / (2·r·f(Q)·√n)`.
pub fn asymptotic_sd(tau: f64, level: &PrivacyLevel, density_at_q: f64, n: u64) -> Result<f64> {
    let r = level.rate();
    if r == 0.0 {
        return Err(Error::InfiniteVariance);
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(domain(format!("target quantile must lie in (0, 1), got {tau}")));
    }
    if !(density_at_q > 0.0 && density_at_q.is_finite()) {
        return Err(domain(format!("density at the quantile must be positive, got {density_at_q}")));
    }
    if n == 0 {
        return Err(domain("sample size must be at least 1"));
    }
    let skew = 2.0 * tau - 1.0;
    Ok((1.0 - r * r * skew * skew).sqrt() / (2.0 * r * density_at_q * (n as f64).sqrt()))
}

/// Two-sided standard normal critical value `z_{1−α/2}`.
pub fn normal_critical(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain(format!("significance level must lie in (0, 1), got {alpha}")));
    }
    Ok(Normal::standard().inverse_cdf(1.0 - alpha / 2.0))
}

/// Wald interval `Q_n ± z_{1−α/2}·sd` using a supplied density value at the
/// quantile. Infeasible in practice since that density is unknown.
pub fn infeasible_interval(
    state: &EstimatorState,
    tau: f64,
    level: &PrivacyLevel,
    density_estimate: f64,
    alpha: f64,
) -> Result<Interval> {
    let center = state.estimate()?;
    let sd = asymptotic_sd(tau, level, density_estimate, state.n)?;
    let z = normal_critical(alpha)?;
    Ok(Interval::centered(center, z * sd).with_level(1.0 - alpha))
}
