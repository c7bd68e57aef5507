//! Online quantile estimation under local differential privacy.
//!
//! Users answer a single randomized yes/no question ("is your value above
//! `q`?"), the curator runs a stochastic-approximation update on the answers,
//! and the averaged iterate comes with a self-normalized confidence interval
//! computed from four running scalars.
//!
//! * [`randomizer`]: the one-bit randomized comparison and `r ↔ ε` conversion.
//! * [`estimator`]: the O(1)-state online estimator.
//! * [`inference`]: self-normalized, path-normalized and Wald intervals.
//! * [`pivot`]: Monte Carlo critical values for the self-normalized pivots.
//! * [`distributions`]: test populations with exact oracles.
//! * [`protocol`]: the curator/user loop, in-process and over TCP.
//! * [`experiments`]: reproducible coverage and error studies.
//!
//! ```
//! use ldp_quantile::{distributions::Distribution, estimator::EstimatorConfig,
//!     inference::sn_interval, protocol::{run_session, Recording},
//!     randomizer::PrivacyLevel, rng};
//! use rand_distr::Distribution as _;
//!
//! let config = EstimatorConfig::new(0.5, PrivacyLevel::from_rate(0.5)?);
//! let source = Distribution::STANDARD_NORMAL.sampler();
//! let mut data_rng = rng::stream(1, &[0]);
//! let data = std::iter::from_fn(|| Some(source.sample(&mut data_rng)));
//! let out = run_session(&config, data, 20_000, &mut rng::stream(1, &[1]), Recording::NONE)?;
//! let ci = sn_interval(&out.state, 6.75)?;
//! assert!(ci.lo < ci.hi);
//! # Ok::<(), ldp_quantile::Error>(())
//! ```

pub mod distributions;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod inference;
pub mod pivot;
pub mod protocol;
pub mod randomizer;
pub mod rng;

pub use error::{Error, Result};

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/privacy.md")]
    mod privacy {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    mod estimator {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/pivot.md")]
    mod pivot {}
    #[doc = include_str!("../../../book/src/distributions.md")]
    mod distributions {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
