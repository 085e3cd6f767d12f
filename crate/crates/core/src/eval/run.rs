//! Episode-parallel evaluation with an append-only journal.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::manifest::DatasetManifest;
use super::pipeline::{episode_seed, segment_episode};
use super::sampler::{sample_episodes, EpisodeSpec};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_miou, EpisodeScore, EvaluationReport};

/// One line of the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JournalRecord {
    Header { config_fingerprint: String, dataset_id: String },
    Score(EpisodeScore),
    Failure { episode_id: String, class_id: String, error: String },
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Journal file. An existing journal for the same config is resumed.
    pub journal: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    /// Absent when no episode succeeded.
    pub report: Option<EvaluationReport>,
    pub failures: Vec<(String, String)>,
    pub attempted: usize,
}

impl EvalOutcome {
    pub fn failure_rate(&self) -> f64 {
        if self.attempted == 0 {
            return 0.0;
        }
        self.failures.len() as f64 / self.attempted as f64
    }

    pub fn within(&self, max_failure_rate: f64) -> bool {
        self.report.is_some() && self.failure_rate() <= max_failure_rate
    }
}

/// Samples `cfg.episodes` episodes and evaluates them.
pub fn run_evaluation(cfg: &RunConfig, manifest: &DatasetManifest, opts: &EvalOptions) -> Result<EvalOutcome> {
    cfg.validate()?;
    let specs = sample_episodes(manifest, cfg.shots, cfg.episodes, cfg.seed)?;
    run_specs(cfg, manifest, &specs, opts)
}

/// Evaluates the given episodes; episode `i` is seeded from `(cfg.seed, i)`.
pub fn run_specs(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    specs: &[EpisodeSpec],
    opts: &EvalOptions,
) -> Result<EvalOutcome> {
    let fingerprint = cfg.fingerprint();
    let mut done: BTreeMap<String, JournalRecord> = BTreeMap::new();
    let journal = match &opts.journal {
        Some(path) => {
            done = resume(path, &fingerprint)?;
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            if f.metadata()?.len() == 0 {
                let header = JournalRecord::Header {
                    config_fingerprint: fingerprint.clone(),
                    dataset_id: manifest.dataset_id.clone(),
                };
                writeln!(f, "{}", serde_json::to_string(&header)?)?;
            }
            Some(Mutex::new(f))
        }
        None => None,
    };
    if !done.is_empty() {
        log::info!("resuming: {} of {} episodes already journaled", done.len(), specs.len());
    }

    let todo: Vec<(usize, &EpisodeSpec)> = specs.iter().enumerate().filter(|(_, s)| !done.contains_key(&s.id)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let fresh: Vec<Result<JournalRecord>> = pool.install(|| {
        todo.par_iter()
            .map(|&(i, spec)| {
                let record = match evaluate_one(cfg, manifest, spec, i) {
                    Ok(score) => JournalRecord::Score(score),
                    Err(e) => {
                        log::warn!("episode {} failed: {e}", spec.id);
                        JournalRecord::Failure {
                            episode_id: spec.id.clone(),
                            class_id: spec.class_id.clone(),
                            error: e.to_string(),
                        }
                    }
                };
                if let Some(j) = &journal {
                    let line = serde_json::to_string(&record)?;
                    let mut f = j.lock().expect("journal lock");
                    writeln!(f, "{line}")?;
                    f.flush()?;
                }
                Ok(record)
            })
            .collect()
    });

    let wanted: std::collections::BTreeSet<&str> = specs.iter().map(|s| s.id.as_str()).collect();
    let mut records: Vec<JournalRecord> = done.into_iter().filter(|(id, _)| wanted.contains(id.as_str())).map(|(_, r)| r).collect();
    for r in fresh {
        records.push(r?);
    }
    outcome(records, &fingerprint)
}

fn evaluate_one(cfg: &RunConfig, manifest: &DatasetManifest, spec: &EpisodeSpec, index: usize) -> Result<EpisodeScore> {
    let episode = spec.load(manifest)?.at_resolution((cfg.resolution, cfg.resolution))?;
    let out = segment_episode(cfg, &episode, episode_seed(cfg.seed, index as u64))?;
    let score = out.score(&episode)?;
    log::debug!("episode {} iou {:.4}", spec.id, score.iou);
    Ok(score)
}

fn outcome(records: Vec<JournalRecord>, fingerprint: &str) -> Result<EvalOutcome> {
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for r in records {
        match r {
            JournalRecord::Score(s) => scores.push(s),
            JournalRecord::Failure { episode_id, error, .. } => failures.push((episode_id, error)),
            JournalRecord::Header { .. } => {}
        }
    }
    failures.sort();
    let attempted = scores.len() + failures.len();
    let report = if scores.is_empty() { None } else { Some(aggregate_miou(&scores)?.with_fingerprint(fingerprint)) };
    Ok(EvalOutcome { report, failures, attempted })
}

/// Reads the completed episodes of a journal written for `fingerprint`.
fn resume(path: &Path, fingerprint: &str) -> Result<BTreeMap<String, JournalRecord>> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    drop_torn_tail(path)?;
    for (n, rec) in read_journal(path)?.into_iter().enumerate() {
        match rec {
            JournalRecord::Header { config_fingerprint, .. } => {
                if n != 0 || config_fingerprint != fingerprint {
                    return Err(Error::Config(format!(
                        "journal {} was written for a different config",
                        path.display()
                    )));
                }
            }
            JournalRecord::Score(ref s) => {
                done.insert(s.episode_id.clone(), rec);
            }
            JournalRecord::Failure { ref episode_id, .. } => {
                done.insert(episode_id.clone(), rec);
            }
        }
    }
    Ok(done)
}

/// Truncates an interrupted last line so appended records start on their own line.
fn drop_torn_tail(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    if bytes.last().is_some_and(|&b| b != b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        log::warn!("dropping incomplete journal line in {}", path.display());
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

/// Parses a journal; a torn final line from an interrupted run is dropped.
pub fn read_journal(path: &Path) -> Result<Vec<JournalRecord>> {
    let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<std::io::Result<_>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => log::warn!("dropping incomplete journal line {}", i + 1),
            Err(e) => return Err(Error::Manifest(format!("journal line {}: {e}", i + 1))),
        }
    }
    Ok(out)
}

/// Rebuilds the report from a journal alone.
pub fn report_from_journal(path: &Path) -> Result<EvaluationReport> {
    let records = read_journal(path)?;
    let fingerprint = match records.first() {
        Some(JournalRecord::Header { config_fingerprint, .. }) => config_fingerprint.clone(),
        _ => return Err(Error::Manifest("journal has no header".into())),
    };
    outcome(records, &fingerprint)?.report.ok_or_else(|| Error::input("journal holds no scored episode"))
}
