//! Pseudo-label prompts for the first half of a pseudo video.

use serde::{Deserialize, Serialize};

use super::extractor::FeatureExtractor;
use super::ops::{otsu_mask, similarity_map, Prototype};
use crate::error::Result;
use crate::image::Mask;
use crate::sequence::PseudoVideoSequence;

/// Foreground-fraction bounds of the semantic-consistency gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    pub min_fg: f64,
    pub max_fg: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self { min_fg: 0.001, max_fg: 0.95 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReason {
    DegenerateMap,
    TooSmall,
    TooLarge,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptReport {
    pub prompted: Vec<usize>,
    pub gated: Vec<(usize, GateReason)>,
}

/// Generated frames eligible for a pseudo-label: `1..=floor(len / 2)`, never the target.
pub fn prompt_candidates(len: usize) -> std::ops::RangeInclusive<usize> {
    1..=(len / 2).min(len.saturating_sub(2))
}

/// Prompts frame 0 with the reference mask and the first half of the generated
/// frames with Otsu-binarized activations of `prototype`.
///
/// Similarities are computed on the feature grid and bilinearly upsampled to
/// frame resolution before thresholding.
pub fn make_prompts<E: FeatureExtractor>(
    seq: &PseudoVideoSequence,
    reference_mask: &Mask,
    extractor: &E,
    prototype: &Prototype,
    cfg: &PromptConfig,
) -> Result<(PseudoVideoSequence, PromptReport)> {
    let mut out = seq.clone();
    out.clear_prompts();
    out.set_prompt(0, Some(reference_mask.clone()))?;
    let mut report = PromptReport { prompted: vec![0], gated: Vec::new() };

    for i in prompt_candidates(seq.len()) {
        let frame = seq.frame(i);
        let sim = similarity_map(&extractor.encode(frame), prototype)?.resized(frame.dims());
        let gate = match otsu_mask(&sim)? {
            None => Err(GateReason::DegenerateMap),
            Some(m) if m.fraction() < cfg.min_fg => Err(GateReason::TooSmall),
            Some(m) if m.fraction() > cfg.max_fg => Err(GateReason::TooLarge),
            Some(m) => Ok(m),
        };
        match gate {
            Ok(m) => {
                out.set_prompt(i, Some(m))?;
                report.prompted.push(i);
            }
            Err(reason) => {
                log::debug!("frame {i} gated: {reason:?}");
                report.gated.push((i, reason));
            }
        }
    }
    Ok((out, report))
}
