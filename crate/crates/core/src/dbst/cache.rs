//! Content-addressed on-disk cache of generated sequences.
//!
//! Layout: `<root>/<sha256>/frame_000.png ... frame_NNN.png` plus
//! `manifest.json` holding the alphas, preset, backend fingerprint and key.
//! Entries are written to a private temporary directory and renamed into
//! place, so concurrent writers of the same key never expose partial entries.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{generate_sequence, AlphaSchedule, DbstPreset, InterpolationBackend};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::sequence::PseudoVideoSequence;

#[derive(Debug, Clone)]
pub struct FrameCache {
    root: PathBuf,
}

fn hash_image(h: &mut Sha256, img: &Image) {
    h.update((img.height() as u64).to_le_bytes());
    h.update((img.width() as u64).to_le_bytes());
    h.update((img.channels() as u64).to_le_bytes());
    for v in img.data() {
        h.update(v.to_bits().to_le_bytes());
    }
}

impl FrameCache {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key(
        reference: &Image,
        target: &Image,
        schedule: &AlphaSchedule,
        preset: &DbstPreset,
        backend_fingerprint: &str,
    ) -> String {
        let mut h = Sha256::new();
        hash_image(&mut h, reference);
        hash_image(&mut h, target);
        for a in schedule.values() {
            h.update(a.to_bits().to_le_bytes());
        }
        h.update(serde_json::to_vec(preset).expect("preset serializes"));
        h.update(backend_fingerprint.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn get_or_generate<B: InterpolationBackend + ?Sized>(
        &self,
        reference: &Image,
        target: &Image,
        schedule: &AlphaSchedule,
        backend: &mut B,
        preset: &DbstPreset,
    ) -> Result<PseudoVideoSequence> {
        let fingerprint = backend.fingerprint();
        let key = Self::key(reference, target, schedule, preset, &fingerprint);
        let dir = self.root.join(&key);
        if dir.join("manifest.json").exists() {
            return self.read_entry(&dir, &key, reference, target, schedule);
        }

        let seq = generate_sequence(reference, target, schedule, backend, preset)?;
        let tmp = tempfile::Builder::new().prefix(".partial-").tempdir_in(&self.root)?;
        let extra = serde_json::json!({
            "key": key,
            "preset": preset,
            "backend": fingerprint,
        });
        seq.write_dir(tmp.path(), extra)?;
        let tmp_path = tmp.keep();
        if std::fs::rename(&tmp_path, &dir).is_err() {
            // another worker published the same key first
            let _ = std::fs::remove_dir_all(&tmp_path);
            if !dir.join("manifest.json").exists() {
                return Err(Error::Cache { path: dir, reason: "could not publish entry".into() });
            }
        }
        log::debug!("cached sequence {key}");
        Ok(seq)
    }

    fn read_entry(
        &self,
        dir: &Path,
        key: &str,
        reference: &Image,
        target: &Image,
        schedule: &AlphaSchedule,
    ) -> Result<PseudoVideoSequence> {
        let corrupt = |reason: String| Error::Cache { path: dir.to_path_buf(), reason };
        let (seq, manifest) = PseudoVideoSequence::read_dir(dir).map_err(|e| corrupt(e.to_string()))?;
        if manifest.extra.get("key").and_then(|k| k.as_str()) != Some(key) {
            return Err(corrupt("manifest key does not match directory".into()));
        }
        if manifest.alphas != schedule.sequence_alphas() {
            return Err(corrupt("manifest alphas do not match the schedule".into()));
        }
        if seq.dims() != reference.dims() {
            return Err(corrupt("cached frames have the wrong size".into()));
        }
        // endpoints come from the caller; PNG would quantize them
        let n = seq.len();
        let mut frames = seq.frames().to_vec();
        frames[0] = reference.clone();
        frames[n - 1] = target.clone();
        log::debug!("frame cache hit {key}");
        PseudoVideoSequence::new(frames, manifest.alphas)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbst::{make_alpha_schedule, SyntheticMorphBackend};

    fn img(shift: usize) -> Image {
        Image::from_fn(24, 24, 3, |y, x, c| {
            let inside = (y as isize - 10 - shift as isize).abs() < 5 && (x as isize - 9 - shift as isize).abs() < 4;
            if inside {
                [0.8, 0.2, 0.3][c]
            } else {
                0.3 + ((x * 5 + y * 3) % 7) as f32 * 0.013
            }
        })
        .unwrap()
    }

    #[test]
    fn hit_equals_miss_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FrameCache::new(dir.path()).unwrap();
        let s = make_alpha_schedule(4, 0.2, 0.8).unwrap();
        let p = DbstPreset::fast();
        let mut b = SyntheticMorphBackend::new(1);
        let first = cache.get_or_generate(&img(0), &img(4), &s, &mut b, &p).unwrap();
        let second = cache.get_or_generate(&img(0), &img(4), &s, &mut b, &p).unwrap();
        assert_eq!(first, second);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn corrupt_entry_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FrameCache::new(dir.path()).unwrap();
        let s = make_alpha_schedule(2, 0.3, 0.6).unwrap();
        let p = DbstPreset::fast();
        let mut b = SyntheticMorphBackend::new(1);
        cache.get_or_generate(&img(0), &img(3), &s, &mut b, &p).unwrap();
        let key = FrameCache::key(&img(0), &img(3), &s, &p, &b.fingerprint());
        std::fs::write(dir.path().join(&key).join("frame_001.png"), b"garbage").unwrap();
        assert!(matches!(
            cache.get_or_generate(&img(0), &img(3), &s, &mut b, &p),
            Err(Error::Cache { .. })
        ));
    }

    #[test]
    fn concurrent_writers_agree() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FrameCache::new(dir.path()).unwrap();
        let s = make_alpha_schedule(3, 0.2, 0.8).unwrap();
        let p = DbstPreset::fast();
        let results: Vec<PseudoVideoSequence> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..4)
                .map(|_| {
                    let cache = cache.clone();
                    let (s, p) = (s.clone(), p.clone());
                    scope.spawn(move || {
                        let mut b = SyntheticMorphBackend::new(9);
                        cache.get_or_generate(&img(1), &img(5), &s, &mut b, &p).unwrap()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(results.windows(2).all(|w| w[0] == w[1]));
        let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }
}
