//! Evaluation harness: manifests, episode sampling, the per-episode pipeline
//! and parallel, journaled runs.

mod config;
mod manifest;
mod pipeline;
mod run;
mod sampler;
pub mod synth;

pub use config::{BackendKind, Method, RunConfig, TtgaSettings};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use pipeline::{build_backend, build_sequence, episode_seed, segment_episode, SegmentOutput, SegmentSummary};
pub use run::{read_journal, report_from_journal, run_evaluation, run_specs, EvalOptions, EvalOutcome, JournalRecord};
pub use sampler::{sample_episodes, sample_negative_episodes, EpisodeSpec};
