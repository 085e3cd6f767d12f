//! Segmentation metrics and the evaluation report.
//!
//! Reduction order: episodes are sorted by id, IoUs are summed in that order
//! per class, classes are visited in lexicographic order, and the aggregate is
//! the unweighted mean of the per-class means. The report can therefore be
//! recomputed bit-for-bit from its `per_episode` entries in any order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Mask;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Foreground intersection-over-union. Two empty masks score 1.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    a.ensure_same_dims(b.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub episode_id: String,
    pub class_id: String,
    pub iou: f64,
    /// Fraction of target pixels predicted as foreground.
    #[serde(default)]
    pub pred_fg_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_id: String,
    pub episodes: usize,
    pub miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub per_episode: Vec<EpisodeScore>,
    pub per_class: Vec<ClassScore>,
    pub aggregate_miou: f64,
    pub config_fingerprint: String,
}

/// Class-balanced mean IoU: episode IoUs are averaged per class, then across classes.
pub fn aggregate_miou(per_episode: &[EpisodeScore]) -> Result<EvaluationReport> {
    if per_episode.is_empty() {
        return Err(Error::input("cannot aggregate an empty episode list"));
    }
    let mut episodes = per_episode.to_vec();
    episodes.sort_by(|a, b| {
        a.episode_id
            .cmp(&b.episode_id)
            .then_with(|| a.class_id.cmp(&b.class_id))
            .then_with(|| a.iou.total_cmp(&b.iou))
    });

    let mut by_class: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for e in &episodes {
        if !e.iou.is_finite() {
            return Err(Error::input(format!("episode {} has non-finite IoU", e.episode_id)));
        }
        let slot = by_class.entry(e.class_id.as_str()).or_insert((0.0, 0));
        slot.0 += e.iou;
        slot.1 += 1;
    }
    let per_class: Vec<ClassScore> = by_class
        .into_iter()
        .map(|(class_id, (sum, n))| ClassScore {
            class_id: class_id.to_string(),
            episodes: n,
            miou: sum / n as f64,
        })
        .collect();
    let aggregate = per_class.iter().map(|c| c.miou).sum::<f64>() / per_class.len() as f64;

    Ok(EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        per_episode: episodes,
        per_class,
        aggregate_miou: aggregate,
        config_fingerprint: String::new(),
    })
}

impl EvaluationReport {
    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.config_fingerprint = fingerprint.into();
        self
    }

    /// Recomputes the aggregate from `per_episode` and checks it matches exactly.
    pub fn is_consistent(&self) -> bool {
        match aggregate_miou(&self.per_episode) {
            Ok(r) => {
                r.aggregate_miou.to_bits() == self.aggregate_miou.to_bits()
                    && r.per_class == self.per_class
            }
            Err(_) => false,
        }
    }

    /// Aggregate mIoU in percent, the unit the report tables use.
    pub fn miou_percent(&self) -> f64 {
        self.aggregate_miou * 100.0
    }
}
