//! Heuristic pseudo-video builders used as comparison points.
//!
//! Each builder prompts frame 0 with the reference mask; everything else is
//! left to the tracker unless the caller adds prompts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::affine::{AffineParams, AffineRanges};
use crate::dbst::AlphaSchedule;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::sequence::PseudoVideoSequence;

/// Transforms resampled when the reference foreground leaves the frame.
const MAX_RESAMPLES: usize = 10;

fn prompted(frames: Vec<Image>, alphas: Vec<f64>, mask: &Mask) -> Result<PseudoVideoSequence> {
    mask.ensure_same_dims(frames[0].dims())?;
    let mut seq = PseudoVideoSequence::new(frames, alphas)?;
    seq.set_prompt(0, Some(mask.clone()))?;
    Ok(seq)
}

/// `[reference, target]`.
pub fn concat_sequence(reference: &Image, mask: &Mask, target: &Image) -> Result<PseudoVideoSequence> {
    prompted(vec![reference.clone(), target.clone()], vec![0.0, 1.0], mask)
}

/// Pixelwise cross-fades `(1 - a) * reference + a * target` for each scheduled `a`.
pub fn mixup_sequence(
    reference: &Image,
    mask: &Mask,
    target: &Image,
    schedule: &AlphaSchedule,
) -> Result<PseudoVideoSequence> {
    if reference.dims() != target.dims() || reference.channels() != target.channels() {
        return Err(Error::DimensionMismatch { left: reference.dims(), right: target.dims() });
    }
    let mut frames = vec![reference.clone()];
    for &a in schedule.values() {
        let a = a as f32;
        let data = reference.data().iter().zip(target.data()).map(|(r, t)| (1.0 - a) * r + a * t).collect();
        frames.push(Image::new(reference.height(), reference.width(), reference.channels(), data)?);
    }
    frames.push(target.clone());
    prompted(frames, schedule.sequence_alphas(), mask)
}

/// A transform-ramp sequence plus the reference mask carried through each frame.
#[derive(Debug, Clone)]
pub struct AffineSequence {
    pub sequence: PseudoVideoSequence,
    /// Warped reference mask per intermediate frame, in frame order.
    pub masks: Vec<Mask>,
    /// Full-strength transform the ramp moves towards.
    pub transform: AffineParams,
}

/// Frame `k` of `n` warps the reference by the sampled transform at strength
/// `k / (n + 1)`; the last frame is the target.
pub fn affine_sequence(
    reference: &Image,
    mask: &Mask,
    target: &Image,
    n: usize,
    seed: u64,
    ranges: &AffineRanges,
) -> Result<AffineSequence> {
    if n == 0 {
        return Err(Error::input("affine sequence needs at least one intermediate frame"));
    }
    if reference.dims() != target.dims() {
        return Err(Error::DimensionMismatch { left: reference.dims(), right: target.dims() });
    }
    mask.ensure_same_dims(reference.dims())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strengths: Vec<f64> = (1..=n).map(|k| k as f64 / (n + 1) as f64).collect();

    for _ in 0..=MAX_RESAMPLES {
        let transform = ranges.sample(&mut rng);
        let masks: Vec<Mask> = strengths.iter().map(|&s| transform.scaled(s).warp_mask(mask)).collect();
        if !mask.is_empty() && masks.iter().any(Mask::is_empty) {
            continue;
        }
        let mut frames = vec![reference.clone()];
        frames.extend(strengths.iter().map(|&s| transform.scaled(s).warp_image(reference)));
        frames.push(target.clone());
        let mut alphas = vec![0.0];
        alphas.extend(&strengths);
        alphas.push(1.0);
        let sequence = prompted(frames, alphas, mask)?;
        return Ok(AffineSequence { sequence, masks, transform });
    }
    Err(Error::input("could not sample an affine ramp that keeps the reference in frame"))
}
