//! Mask propagation through a prompted pseudo video.

mod external;
mod mock;

use serde::{Deserialize, Serialize};

pub use external::ExternalTracker;
pub use mock::{MockTracker, MockTrackerConfig};

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::sequence::PseudoVideoSequence;

/// A prompted sequence ready for propagation. Frames are immutable once opened.
#[derive(Debug, Clone)]
pub struct TrackerSession {
    seq: PseudoVideoSequence,
}

impl TrackerSession {
    pub fn open(seq: PseudoVideoSequence) -> Result<Self> {
        if seq.prompted_indices().is_empty() {
            return Err(Error::input("tracker session needs at least one prompt"));
        }
        Ok(Self { seq })
    }

    pub fn sequence(&self) -> &PseudoVideoSequence {
        &self.seq
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub masks: Vec<Mask>,
}

impl TrackResult {
    pub fn target_mask(&self) -> &Mask {
        self.masks.last().expect("track results are never empty")
    }
}

pub trait Tracker {
    fn propagate(&mut self, session: &TrackerSession) -> Result<TrackResult>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackerKind {
    #[serde(rename = "mock")]
    Mock,
    #[serde(rename = "sam2-tiny")]
    Sam2Tiny,
    #[serde(rename = "deva")]
    Deva,
}

impl std::str::FromStr for TrackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(TrackerKind::Mock),
            "sam2-tiny" => Ok(TrackerKind::Sam2Tiny),
            "deva" => Ok(TrackerKind::Deva),
            other => Err(Error::Config(format!("unknown tracker {other:?} (mock|sam2-tiny|deva)"))),
        }
    }
}

/// Builds the tracker named by `kind`. External trackers need a bridge command.
pub fn build_tracker(
    kind: TrackerKind,
    mock: MockTrackerConfig,
    command: Option<&[String]>,
) -> Result<Box<dyn Tracker + Send>> {
    match kind {
        TrackerKind::Mock => Ok(Box::new(MockTracker::new(mock))),
        TrackerKind::Sam2Tiny | TrackerKind::Deva => {
            let cmd = command
                .filter(|c| !c.is_empty())
                .ok_or_else(|| Error::Config(format!("tracker {kind:?} requires tracker_command")))?;
            Ok(Box::new(ExternalTracker::new(&cmd[0], cmd[1..].to_vec())))
        }
    }
}
