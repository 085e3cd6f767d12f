//! Deterministic episode sampling from a manifest.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::episode::{Episode, Reference};
use crate::error::{Error, Result};
use crate::image::Mask;

/// Manifest indices making up one episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub id: String,
    pub class_id: String,
    pub references: Vec<usize>,
    pub target: usize,
    /// The target is drawn from another class and its ground truth is empty.
    #[serde(default)]
    pub negative: bool,
}

impl EpisodeSpec {
    pub fn load(&self, manifest: &DatasetManifest) -> Result<Episode> {
        let references = self
            .references
            .iter()
            .map(|&i| {
                let (image, mask) = manifest.load_entry(i)?;
                Ok(Reference { image, mask })
            })
            .collect::<Result<Vec<_>>>()?;
        let (target, gt) = manifest.load_entry(self.target)?;
        let gt = if self.negative { Mask::zeros(gt.height(), gt.width()) } else { gt };
        Episode::new(&self.id, references, target, Some(gt), &self.class_id, &manifest.dataset_id)
    }
}

fn check_shots(manifest: &DatasetManifest, shots: usize) -> Result<()> {
    if shots == 0 {
        return Err(Error::Config("shots must be at least 1".into()));
    }
    for (class, idx) in manifest.by_class() {
        if idx.len() < shots + 1 {
            return Err(Error::Manifest(format!(
                "class {class} has {} samples, {shots}-shot sampling needs {}",
                idx.len(),
                shots + 1
            )));
        }
    }
    Ok(())
}

/// Samples `n` episodes, visiting classes round-robin.
///
/// With one shot each class cycles through a shuffled list of all its ordered
/// (reference, target) pairs and only reshuffles once the list is exhausted.
/// With more shots, references and target are distinct random draws.
pub fn sample_episodes(manifest: &DatasetManifest, shots: usize, n: usize, seed: u64) -> Result<Vec<EpisodeSpec>> {
    check_shots(manifest, shots)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = manifest.by_class();
    let classes: Vec<(&str, Vec<usize>)> = classes.into_iter().collect();
    let mut queues: Vec<VecDeque<(usize, usize)>> = vec![VecDeque::new(); classes.len()];

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes.len();
        let (class, members) = &classes[c];
        let (references, target) = if shots == 1 {
            if queues[c].is_empty() {
                let mut pairs: Vec<(usize, usize)> = members
                    .iter()
                    .flat_map(|&r| members.iter().filter(move |&&t| t != r).map(move |&t| (r, t)))
                    .collect();
                pairs.shuffle(&mut rng);
                queues[c] = pairs.into();
            }
            let (r, t) = queues[c].pop_front().expect("refilled above");
            (vec![r], t)
        } else {
            let picked: Vec<usize> = members.choose_multiple(&mut rng, shots + 1).copied().collect();
            (picked[..shots].to_vec(), picked[shots])
        };
        out.push(EpisodeSpec {
            id: format!("{}-{i:05}", manifest.dataset_id),
            class_id: class.to_string(),
            references,
            target,
            negative: false,
        });
    }
    Ok(out)
}

/// Episodes whose target comes from a different class than the references.
pub fn sample_negative_episodes(
    manifest: &DatasetManifest,
    shots: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<EpisodeSpec>> {
    check_shots(manifest, shots)?;
    let classes: Vec<(&str, Vec<usize>)> = manifest.by_class().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::Manifest("negative episodes need at least two classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes.len();
        let (class, members) = &classes[c];
        let references: Vec<usize> = members.choose_multiple(&mut rng, shots).copied().collect();
        let other = (c + rng.gen_range(1..classes.len())) % classes.len();
        let target = *classes[other].1.choose(&mut rng).expect("classes are non-empty");
        out.push(EpisodeSpec {
            id: format!("{}-neg-{i:05}", manifest.dataset_id),
            class_id: class.to_string(),
            references,
            target,
            negative: true,
        });
    }
    Ok(out)
}
