//! Online stochastic-approximation quantile estimator with Polyak averaging.
//!
//! Each round asks the next user whether their value exceeds the current
//! iterate `q`, then moves `q` up or down by a step whose two sizes are chosen
//! so that the expected move vanishes exactly at the target quantile once the
//! randomized-response noise is accounted for:
//!
//! ```text
//! up   = d_n · (1 − r + 2τr) / 2
//! down = d_n · (1 + r − 2τr) / 2
//! ```
//!
//! The estimate is the running mean of the iterates. Two further scalars,
//! `va = Σ k²·Q_k²` and `vb = Σ k²·Q_k` (with `Q_k` the running mean after
//! `k` rounds), let the self-normalizer be evaluated later in closed form
//! without storing the path.

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::randomizer::{PrivacyLevel, ResponseBit};

/// Step sizes `d_n = a / (n^β + c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub scale: f64,
    pub exponent: f64,
    pub offset: f64,
}

impl Default for StepSchedule {
    /// `d_n = 2 / (n^0.51 + 100)`.
    fn default() -> Self {
        Self { scale: 2.0, exponent: 0.51, offset: 100.0 }
    }
}

impl StepSchedule {
    pub fn new(scale: f64, exponent: f64, offset: f64) -> Result<Self> {
        let s = Self { scale, exponent, offset };
        s.validate()?;
        Ok(s)
    }

    /// `β ∈ (1/2, 1)` makes `Σ d_n` diverge while `Σ d_n²` converges.
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(config(format!("step scale must be positive, got {}", self.scale)));
        }
        if !(self.exponent > 0.5 && self.exponent < 1.0) {
            return Err(config(format!("step exponent must lie in (0.5, 1), got {}", self.exponent)));
        }
        if !(self.offset >= 0.0 && self.offset.is_finite()) {
            return Err(config(format!("step offset must be non-negative, got {}", self.offset)));
        }
        Ok(())
    }

    /// `d_n` for round `n ≥ 1`.
    pub fn step_size(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(domain("step sizes are indexed from n = 1"));
        }
        Ok(self.step_unchecked(n))
    }

    #[inline]
    fn step_unchecked(&self, n: u64) -> f64 {
        self.scale / ((n as f64).powf(self.exponent) + self.offset)
    }
}

/// How the `va`/`vb` accumulators are summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summation {
    /// Plain double-precision sums.
    #[default]
    Plain,
    /// Neumaier-compensated sums; worthwhile past ~10^8 rounds, where the
    /// `k²`-weighted terms dwarf the early ones.
    Compensated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Target quantile level `τ ∈ (0, 1)`.
    pub tau: f64,
    pub level: PrivacyLevel,
    #[serde(default)]
    pub schedule: StepSchedule,
    /// Initial iterate.
    #[serde(default)]
    pub q0: f64,
    #[serde(default)]
    pub summation: Summation,
}

impl EstimatorConfig {
    /// Default schedule, `q0 = 0`, plain summation.
    pub fn new(tau: f64, level: PrivacyLevel) -> Self {
        Self { tau, level, schedule: StepSchedule::default(), q0: 0.0, summation: Summation::Plain }
    }

    pub fn with_q0(mut self, q0: f64) -> Self {
        self.q0 = q0;
        self
    }

    pub fn with_schedule(mut self, schedule: StepSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_summation(mut self, summation: Summation) -> Self {
        self.summation = summation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(config(format!("target quantile must lie in (0, 1), got {}", self.tau)));
        }
        if !self.q0.is_finite() {
            return Err(config("initial iterate must be finite"));
        }
        self.schedule.validate()
    }

    /// Coefficient applied to `d_n` after a 1 response.
    pub fn up_coefficient(&self) -> f64 {
        let r = self.level.rate();
        (1.0 - r + 2.0 * self.tau * r) / 2.0
    }

    /// Coefficient applied to `d_n` after a 0 response.
    pub fn down_coefficient(&self) -> f64 {
        let r = self.level.rate();
        (1.0 + r - 2.0 * self.tau * r) / 2.0
    }
}

/// The complete estimator state: a counter and four reals.
///
/// Serialized as the flat record `{n, q, qbar, va, vb}`; compensated runs also
/// carry their two error terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub n: u64,
    /// Current iterate, which is also the next inquiry threshold.
    pub q: f64,
    /// Running mean of `q_1..q_n`.
    pub qbar: f64,
    /// `Σ k²·Q_k²`
    pub va: f64,
    /// `Σ k²·Q_k`
    pub vb: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub va_err: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub vb_err: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[inline]
fn neumaier(sum: &mut f64, err: &mut f64, term: f64) {
    let t = *sum + term;
    if sum.abs() >= term.abs() {
        *err += (*sum - t) + term;
    } else {
        *err += (term - t) + *sum;
    }
    *sum = t;
}

impl EstimatorState {
    /// Fresh state positioned at `q0`.
    pub fn new(q0: f64) -> Self {
        Self { n: 0, q: q0, qbar: 0.0, va: 0.0, vb: 0.0, va_err: 0.0, vb_err: 0.0 }
    }

    /// Records a new iterate: bumps `n`, moves `q`, refreshes the running mean
    /// and then the two accumulators with the updated mean.
    #[inline]
    pub fn push_iterate(&mut self, q: f64, summation: Summation) {
        self.n += 1;
        let k = self.n as f64;
        self.q = q;
        self.qbar += (q - self.qbar) / k;
        let w = k * k * self.qbar;
        match summation {
            Summation::Plain => {
                self.va += w * self.qbar;
                self.vb += w;
            }
            Summation::Compensated => {
                neumaier(&mut self.va, &mut self.va_err, w * self.qbar);
                neumaier(&mut self.vb, &mut self.vb_err, w);
            }
        }
    }

    /// Averaged estimate `Q_n`.
    pub fn estimate(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::NoData("no rounds have been completed"));
        }
        Ok(self.qbar)
    }

    /// `Σ k²Q_k²` including any compensation term.
    pub fn va_total(&self) -> f64 {
        self.va + self.va_err
    }

    /// `Σ k²Q_k` including any compensation term.
    pub fn vb_total(&self) -> f64 {
        self.vb + self.vb_err
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Estimator configuration plus its evolving state.
#[derive(Debug, Clone)]
pub struct OnlineQuantile {
    config: EstimatorConfig,
    state: EstimatorState,
    up: f64,
    down: f64,
}

impl OnlineQuantile {
    pub fn new(config: EstimatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::resume(config, EstimatorState::new(config.q0)))
    }

    /// Continues from a saved state.
    pub fn resume(config: EstimatorConfig, state: EstimatorState) -> Self {
        Self { up: config.up_coefficient(), down: config.down_coefficient(), config, state }
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn state(&self) -> &EstimatorState {
        &self.state
    }

    pub fn into_state(self) -> EstimatorState {
        self.state
    }

    /// Threshold to send with the next inquiry.
    pub fn next_threshold(&self) -> f64 {
        self.state.q
    }

    /// Applies one randomized response to the current inquiry.
    #[inline]
    pub fn update(&mut self, response: ResponseBit) {
        let d = self.config.schedule.step_unchecked(self.state.n + 1);
        let q = if response.is_one() {
            self.state.q + d * self.up
        } else {
            self.state.q - d * self.down
        };
        self.state.push_iterate(q, self.config.summation);
    }

    pub fn estimate(&self) -> Result<f64> {
        self.state.estimate()
    }
}
