//! One-bit locally randomized comparison and privacy accounting.
//!
//! A user holding `x` is asked "is `x` above `q`?". With probability `r` the
//! honest answer is returned, otherwise a fair coin. Both coins are flipped
//! before looking at `x`, so the work done (and the number of random draws
//! consumed) never depends on the private value.
//!
//! The mechanism is `(ε, 0)`-LDP with `ε = ln((1 + r) / (1 − r))`, equivalently
//! `r = tanh(ε / 2)`.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Truthful response rate `r` together with its privacy budget `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PrivacyLevel {
    rate: f64,
    // Bernoulli(r) threshold on a uniform u64; `u64::MAX` never occurs for r < 1.
    threshold: u64,
    non_private: bool,
}

impl PrivacyLevel {
    /// Builds a level from the truthful response rate, `0 ≤ r < 1`.
    pub fn from_rate(r: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&r) {
            return Err(domain(format!("truthful response rate must lie in [0, 1), got {r}")));
        }
        // r * 2^64, rounded down; r < 1 keeps this strictly below 2^64.
        let threshold = (r * 18_446_744_073_709_551_616.0) as u64;
        Ok(Self { rate: r, threshold, non_private: false })
    }

    /// Builds a level from a privacy budget `ε ≥ 0`.
    pub fn from_epsilon(eps: f64) -> Result<Self> {
        Self::from_rate(rate_from_epsilon(eps)?)
    }

    /// Always-truthful responder (`r = 1`, `ε = ∞`). Offers no privacy at all;
    /// intended only for sanity runs of the estimator.
    pub fn no_privacy_for_testing() -> Self {
        Self { rate: 1.0, threshold: u64::MAX, non_private: true }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// The privacy budget; infinite for the non-private testing level.
    pub fn epsilon(&self) -> f64 {
        if self.non_private {
            f64::INFINITY
        } else {
            epsilon_from_rate(self.rate).expect("validated at construction")
        }
    }

    pub fn is_private(&self) -> bool {
        !self.non_private
    }

    /// Rate in parts per million, as carried on the wire.
    pub fn rate_ppm(&self) -> u32 {
        (self.rate * 1e6).round().min(999_999.0) as u32
    }

    /// Inverse of [`rate_ppm`](Self::rate_ppm).
    pub fn from_rate_ppm(ppm: u32) -> Result<Self> {
        if ppm > 999_999 {
            return Err(domain(format!("rate_ppm must be at most 999999, got {ppm}")));
        }
        Self::from_rate(ppm as f64 / 1e6)
    }
}

impl TryFrom<f64> for PrivacyLevel {
    type Error = Error;

    fn try_from(r: f64) -> Result<Self> {
        Self::from_rate(r)
    }
}

impl From<PrivacyLevel> for f64 {
    fn from(level: PrivacyLevel) -> f64 {
        level.rate
    }
}

/// The comparison threshold sent to a user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inquiry(f64);

impl Inquiry {
    pub fn new(threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidInput(format!("inquiry threshold must be finite, got {threshold}")));
        }
        Ok(Self(threshold))
    }

    pub fn threshold(&self) -> f64 {
        self.0
    }
}

/// The single bit a user releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ResponseBit(bool);

impl ResponseBit {
    pub const ZERO: ResponseBit = ResponseBit(false);
    pub const ONE: ResponseBit = ResponseBit(true);

    pub fn is_one(self) -> bool {
        self.0
    }

    pub fn as_u8(self) -> u8 {
        self.0 as u8
    }

    pub fn from_u8(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Self::ZERO),
            1 => Some(Self::ONE),
            _ => None,
        }
    }
}

impl From<bool> for ResponseBit {
    fn from(b: bool) -> Self {
        Self(b)
    }
}

/// Locally randomized compare. Returns `1{x > q}` with probability `r`, and a
/// fair coin otherwise. Consumes exactly one `u64` and one `u32` from `rng` on
/// every call, whatever the inputs.
pub fn lrc_respond<R: RngCore + ?Sized>(
    inquiry: Inquiry,
    level: &PrivacyLevel,
    private_x: f64,
    rng: &mut R,
) -> Result<ResponseBit> {
    if !private_x.is_finite() {
        return Err(Error::InvalidInput("private value must be finite".into()));
    }
    Ok(lrc_unchecked(inquiry.threshold(), level, private_x, rng))
}

/// [`lrc_respond`] without input validation, for simulation hot loops.
#[inline]
pub(crate) fn lrc_unchecked<R: RngCore + ?Sized>(
    threshold: f64,
    level: &PrivacyLevel,
    private_x: f64,
    rng: &mut R,
) -> ResponseBit {
    let truthful = rng.next_u64() < level.threshold || level.non_private;
    let coin = rng.next_u32() & 1 == 1;
    if truthful {
        ResponseBit(private_x > threshold)
    } else {
        ResponseBit(coin)
    }
}

/// `ε = ln((1 + r) / (1 − r))` for `0 ≤ r < 1`.
pub fn epsilon_from_rate(r: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&r) {
        return Err(domain(format!("truthful response rate must lie in [0, 1), got {r}")));
    }
    // 2·atanh(r) is the same quantity with better accuracy near 0.
    Ok(2.0 * r.atanh())
}

/// `r = tanh(ε / 2)` for `ε ≥ 0`.
pub fn rate_from_epsilon(eps: f64) -> Result<f64> {
    if eps.is_nan() || eps < 0.0 {
        return Err(domain(format!("privacy budget must be non-negative, got {eps}")));
    }
    let r = (eps / 2.0).tanh();
    if r >= 1.0 {
        return Err(domain(format!("budget {eps} rounds to r = 1, which is not private")));
    }
    Ok(r)
}

/// Probability that the randomizer outputs 1 given the true comparison bit.
pub fn response_probability(level: &PrivacyLevel, truth: ResponseBit) -> f64 {
    let r = level.rate();
    if truth.is_one() {
        (1.0 + r) / 2.0
    } else {
        (1.0 - r) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    /// Counts draws passing through to an inner generator.
    struct Counting<R> {
        inner: R,
        draws: usize,
    }

    impl<R: RngCore> RngCore for Counting<R> {
        fn next_u32(&mut self) -> u32 {
            self.draws += 1;
            self.inner.next_u32()
        }
        fn next_u64(&mut self) -> u64 {
            self.draws += 1;
            self.inner.next_u64()
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            self.draws += 1;
            self.inner.fill_bytes(dst)
        }
    }

    #[test]
    fn epsilon_table_values() {
        let two_dp = |x: f64| (x * 100.0).round() / 100.0;
        assert_eq!(two_dp(epsilon_from_rate(0.25).unwrap()), 0.51);
        assert_eq!(two_dp(epsilon_from_rate(0.5).unwrap()), 1.10);
        assert_eq!(two_dp(epsilon_from_rate(0.9).unwrap()), 2.94);
        assert_eq!(epsilon_from_rate(0.0).unwrap(), 0.0);
        assert_eq!(two_dp(rate_from_epsilon(2.94).unwrap()), 0.90);
        assert_eq!(rate_from_epsilon(0.0).unwrap(), 0.0);
    }

    #[test]
    fn conversion_table_matches() {
        let table = [
            (0.05, 0.10), (0.1, 0.20), (0.15, 0.30), (0.2, 0.40), (0.25, 0.51),
            (0.3, 0.62), (0.35, 0.73), (0.4, 0.85), (0.45, 0.97), (0.5, 1.10),
            (0.55, 1.24), (0.6, 1.39), (0.65, 1.55), (0.7, 1.73), (0.75, 1.95),
            (0.8, 2.20), (0.85, 2.51), (0.9, 2.94), (0.95, 3.66),
        ];
        for (r, eps) in table {
            let got = epsilon_from_rate(r).unwrap();
            // The r = 0.2 entry (0.4055) is truncated rather than rounded.
            let tol = if r == 0.2 { 0.006 } else { 0.005 };
            assert!((got - eps).abs() <= tol, "r={r}: {got} vs {eps}");
        }
    }

    #[test]
    fn round_trip() {
        let eps = epsilon_from_rate(0.37).unwrap();
        assert_relative_eq!(rate_from_epsilon(eps).unwrap(), 0.37, max_relative = 1e-12);
        for i in 1..20 {
            let r = i as f64 * 0.05;
            let back = rate_from_epsilon(epsilon_from_rate(r).unwrap()).unwrap();
            assert_relative_eq!(back, r, max_relative = 1e-12);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(epsilon_from_rate(1.0).is_err());
        assert!(epsilon_from_rate(-0.1).is_err());
        assert!(rate_from_epsilon(-1.0).is_err());
        assert!(rate_from_epsilon(f64::NAN).is_err());
        assert!(PrivacyLevel::from_rate(1.0).is_err());
        assert!(PrivacyLevel::from_rate_ppm(1_000_000).is_err());
    }

    #[test]
    fn zero_rate_is_zero_budget() {
        let level = PrivacyLevel::from_rate(0.0).unwrap();
        assert_eq!(level.epsilon(), 0.0);
        assert_eq!(PrivacyLevel::from_epsilon(0.0).unwrap().rate(), 0.0);
    }

    #[test]
    fn response_probabilities() {
        let half = PrivacyLevel::from_rate(0.5).unwrap();
        assert_eq!(response_probability(&half, ResponseBit::ONE), 0.75);
        let none = PrivacyLevel::from_rate(0.0).unwrap();
        assert_eq!(response_probability(&none, ResponseBit::ZERO), 0.5);
        let high = PrivacyLevel::from_rate(0.9).unwrap();
        assert_relative_eq!(response_probability(&high, ResponseBit::ZERO), 0.05, max_relative = 1e-12);
    }

    #[test]
    fn response_probability_matches_enumeration() {
        // Enumerate (u, v) with P(u=1)=r, P(v=1)=1/2.
        for i in 0..20 {
            let r = i as f64 * 0.05;
            let level = PrivacyLevel::from_rate(r).unwrap();
            for truth in [false, true] {
                let mut p_one = 0.0;
                for u in [false, true] {
                    for v in [false, true] {
                        let w = if u { r } else { 1.0 - r } * 0.5;
                        let out = if u { truth } else { v };
                        if out {
                            p_one += w;
                        }
                    }
                }
                assert_relative_eq!(
                    response_probability(&level, truth.into()),
                    p_one,
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn truthful_limit_and_ties() {
        let level = PrivacyLevel::no_privacy_for_testing();
        let mut rng = stream(1, &[]);
        let q = Inquiry::new(0.0).unwrap();
        for _ in 0..100 {
            assert!(lrc_respond(q, &level, 0.5, &mut rng).unwrap().is_one());
            assert!(!lrc_respond(q, &level, 0.0, &mut rng).unwrap().is_one());
        }
        assert_eq!(level.epsilon(), f64::INFINITY);
    }

    #[test]
    fn rejects_non_finite_input() {
        let level = PrivacyLevel::from_rate(0.5).unwrap();
        let mut rng = stream(1, &[]);
        assert!(Inquiry::new(f64::NAN).is_err());
        let q = Inquiry::new(0.0).unwrap();
        assert!(lrc_respond(q, &level, f64::INFINITY, &mut rng).is_err());
    }

    #[test]
    fn draw_count_is_input_independent() {
        for level in [
            PrivacyLevel::from_rate(0.0).unwrap(),
            PrivacyLevel::from_rate(0.5).unwrap(),
            PrivacyLevel::no_privacy_for_testing(),
        ] {
            for x in [-3.0, 0.0, 3.0] {
                let mut rng = Counting { inner: stream(2, &[]), draws: 0 };
                for _ in 0..50 {
                    lrc_respond(Inquiry::new(0.0).unwrap(), &level, x, &mut rng).unwrap();
                }
                assert_eq!(rng.draws, 100);
            }
        }
    }

    #[test]
    fn pure_noise_ignores_data() {
        let level = PrivacyLevel::from_rate(0.0).unwrap();
        let q = Inquiry::new(0.0).unwrap();
        let n = 200_000;
        for x in [-1.0, 1.0] {
            let mut rng = stream(3, &[]);
            let ones = (0..n)
                .filter(|_| lrc_respond(q, &level, x, &mut rng).unwrap().is_one())
                .count();
            let se = (0.25 / n as f64).sqrt();
            assert!((ones as f64 / n as f64 - 0.5).abs() < 4.0 * se);
        }
    }

    #[test]
    fn ppm_round_trip() {
        let level = PrivacyLevel::from_rate(0.5).unwrap();
        assert_eq!(level.rate_ppm(), 500_000);
        assert_eq!(PrivacyLevel::from_rate_ppm(500_000).unwrap(), level);
    }
}
