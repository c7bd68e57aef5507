//! The sequential-interactive curator/user loop.
//!
//! Each round the curator sends its current iterate as the threshold to a
//! fresh user, who answers with one randomized bit; the curator folds the bit
//! into its state and moves on. No user is ever asked twice.
//!
//! [`run_session`] runs the loop in-process. [`net`] carries the same rounds
//! over TCP using the frames in [`wire`].

pub mod net;
pub mod wire;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, EstimatorState, OnlineQuantile};
use crate::inference::Trajectory;
use crate::randomizer::{lrc_unchecked, ResponseBit};

/// Ordered `(threshold, bit)` pairs, one per completed round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionTranscript {
    pub rounds: Vec<(f64, ResponseBit)>,
}

impl SessionTranscript {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }
}

/// What to keep besides the final state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Recording {
    pub transcript: bool,
    pub trajectory: bool,
}

impl Recording {
    pub const NONE: Recording = Recording { transcript: false, trajectory: false };
    pub const ALL: Recording = Recording { transcript: true, trajectory: true };
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub state: EstimatorState,
    pub transcript: Option<SessionTranscript>,
    pub trajectory: Option<Trajectory>,
}

/// Runs `n` rounds, consuming one private value per round from `data`. User
/// coin flips come from `rng`.
///
/// Fails with [`Error::Truncated`], carrying the partial state, if `data`
/// runs out first.
pub fn run_session<I, R>(
    config: &EstimatorConfig,
    data: I,
    n: u64,
    rng: &mut R,
    record: Recording,
) -> Result<SessionOutcome>
where
    I: IntoIterator<Item = f64>,
    R: RngCore + ?Sized,
{
    let mut est = OnlineQuantile::new(*config)?;
    let mut transcript = record.transcript.then(SessionTranscript::default);
    let mut trajectory = record.trajectory.then(Trajectory::default);
    let level = config.level;
    let mut data = data.into_iter();
    for completed in 0..n {
        let Some(x) = data.next() else {
            return Err(Error::Truncated { completed, requested: n, state: *est.state() });
        };
        let threshold = est.next_threshold();
        let bit = lrc_unchecked(threshold, &level, x, rng);
        est.update(bit);
        if let Some(t) = transcript.as_mut() {
            t.rounds.push((threshold, bit));
        }
        if let Some(t) = trajectory.as_mut() {
            t.push(est.state().q);
        }
    }
    Ok(SessionOutcome { state: est.into_state(), transcript, trajectory })
}
