//! Single-episode pipeline: build a sequence, prompt it, track to the target.

use serde::Serialize;

use super::config::{BackendKind, Method, RunConfig};
use crate::baselines::{affine_sequence, concat_sequence, mixup_sequence};
use crate::dbst::{generate_sequence, DbstPreset, ExternalDiffusionBackend, FrameCache, InterpolationBackend, SyntheticMorphBackend};
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::ivos::{build_tracker, TrackResult, TrackerSession};
use crate::metrics::{iou, EpisodeScore};
use crate::sequence::PseudoVideoSequence;
use crate::ttga::{
    finetune, make_prompts, medoid_reference, prompt_candidates, reference_prototypes, ConvExtractor, PromptReport,
    StepRecord,
};

/// Everything produced for one episode.
#[derive(Debug, Clone)]
pub struct SegmentOutput {
    /// The prompted sequence handed to the tracker.
    pub sequence: PseudoVideoSequence,
    pub result: TrackResult,
    /// Reference the sequence starts from.
    pub reference: usize,
    pub adaptation_log: Vec<StepRecord>,
    pub prompts: PromptReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentSummary {
    pub episode_id: String,
    pub method: Method,
    pub frames: usize,
    pub prompted: Vec<usize>,
    pub target_fg_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
}

impl SegmentOutput {
    pub fn score(&self, episode: &Episode) -> Result<EpisodeScore> {
        let gt = episode
            .target_gt
            .as_ref()
            .ok_or_else(|| Error::input(format!("episode {} has no target ground truth", episode.id)))?;
        let pred = self.result.target_mask();
        Ok(EpisodeScore {
            episode_id: episode.id.clone(),
            class_id: episode.class_id.clone(),
            iou: iou(pred, gt)?,
            pred_fg_fraction: pred.fraction(),
        })
    }

    pub fn summary(&self, episode: &Episode, method: Method) -> SegmentSummary {
        SegmentSummary {
            episode_id: episode.id.clone(),
            method,
            frames: self.sequence.len(),
            prompted: self.sequence.prompted_indices(),
            target_fg_fraction: self.result.target_mask().fraction(),
            iou: self.score(episode).ok().map(|s| s.iou),
        }
    }
}

/// Seed for episode `index` of a run seeded with `seed`.
pub fn episode_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn build_backend(cfg: &RunConfig, class_id: &str, seed: u64) -> Result<Box<dyn InterpolationBackend>> {
    match cfg.backend {
        BackendKind::Synthetic => Ok(Box::new(SyntheticMorphBackend::new(seed))),
        BackendKind::External => {
            let cmd = cfg
                .backend_command
                .as_ref()
                .filter(|c| !c.is_empty())
                .ok_or_else(|| Error::Config("backend external requires backend_command".into()))?;
            Ok(Box::new(ExternalDiffusionBackend::new(&cmd[0], cmd[1..].to_vec(), class_id, seed)?))
        }
    }
}

/// Builds the method's pseudo video from reference `k` without prompts beyond frame 0.
pub fn build_sequence(cfg: &RunConfig, episode: &Episode, k: usize, seed: u64) -> Result<PseudoVideoSequence> {
    let r = &episode.references[k];
    match cfg.method {
        Method::Concat => concat_sequence(&r.image, &r.mask, &episode.target),
        Method::Mixup => mixup_sequence(&r.image, &r.mask, &episode.target, &cfg.schedule()?),
        Method::Affine => {
            let ranges = cfg.ttga.augment.affine;
            let a = affine_sequence(&r.image, &r.mask, &episode.target, cfg.n_frames, seed, &ranges)?;
            let mut seq = a.sequence;
            if cfg.prompt_intermediate {
                for i in prompt_candidates(seq.len()) {
                    seq.set_prompt(i, Some(a.masks[i - 1].clone()))?;
                }
            }
            Ok(seq)
        }
        Method::Cav => {
            let preset = DbstPreset::by_name(&cfg.preset)?;
            let mut backend = build_backend(cfg, &episode.class_id, seed)?;
            let schedule = cfg.schedule()?;
            let mut seq = match &cfg.cache_dir {
                Some(dir) => FrameCache::new(dir)?.get_or_generate(&r.image, &episode.target, &schedule, backend.as_mut(), &preset)?,
                None => generate_sequence(&r.image, &episode.target, &schedule, backend.as_mut(), &preset)?,
            };
            seq.clear_prompts();
            seq.set_prompt(0, Some(r.mask.clone()))?;
            Ok(seq)
        }
    }
}

fn uses_ttga_prompts(cfg: &RunConfig) -> bool {
    match cfg.method {
        Method::Cav => cfg.ttga.enabled,
        Method::Mixup => cfg.prompt_intermediate,
        Method::Concat | Method::Affine => false,
    }
}

/// Runs the configured pipeline on an episode already at working resolution.
pub fn segment_episode(cfg: &RunConfig, episode: &Episode, seed: u64) -> Result<SegmentOutput> {
    episode.validate()?;
    let extractor = ConvExtractor::new(cfg.ttga.extractor_stride, cfg.ttga.extractor_seed);
    let k = if episode.shots() > 1 { medoid_reference(&reference_prototypes(&extractor, episode)?) } else { 0 };
    let seq = build_sequence(cfg, episode, k, seed)?;

    let (seq, prompts, log) = if uses_ttga_prompts(cfg) {
        let adapted = finetune(episode, extractor, &cfg.ttga.finetune_config(seed))?;
        let (seq, report) =
            make_prompts(&seq, &episode.references[k].mask, &adapted.extractor, &adapted.prototype, &cfg.ttga.prompts)?;
        (seq, report, adapted.log)
    } else {
        let report = PromptReport { prompted: seq.prompted_indices(), gated: Vec::new() };
        (seq, report, Vec::new())
    };

    let mut tracker = build_tracker(cfg.tracker, cfg.tracker_config(), cfg.tracker_command.as_deref())?;
    let result = tracker.propagate(&TrackerSession::open(seq.clone())?)?;
    if result.masks.len() != seq.len() {
        return Err(Error::Tracker(format!("expected {} masks, got {}", seq.len(), result.masks.len())));
    }
    Ok(SegmentOutput { sequence: seq, result, reference: k, adaptation_log: log, prompts })
}

