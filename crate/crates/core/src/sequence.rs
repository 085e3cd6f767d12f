//! Pseudo video sequences: reference frame, generated intermediates, target frame.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoVideoSequence {
    frames: Vec<Image>,
    alphas: Vec<f64>,
    prompts: Vec<Option<Mask>>,
}

impl PseudoVideoSequence {
    /// Frames must share dimensions; alphas start at 0, end at 1 and strictly increase.
    pub fn new(frames: Vec<Image>, alphas: Vec<f64>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::input("a sequence needs at least the reference and target frames"));
        }
        if frames.len() != alphas.len() {
            return Err(Error::input(format!(
                "{} frames but {} alphas",
                frames.len(),
                alphas.len()
            )));
        }
        if alphas[0] != 0.0 || *alphas.last().unwrap() != 1.0 {
            return Err(Error::input("sequence alphas must start at 0 and end at 1"));
        }
        if alphas.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::input("sequence alphas must be strictly increasing"));
        }
        let dims = frames[0].dims();
        if let Some(f) = frames.iter().find(|f| f.dims() != dims) {
            return Err(Error::DimensionMismatch { left: dims, right: f.dims() });
        }
        let n = frames.len();
        Ok(Self { frames, alphas, prompts: vec![None; n] })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Number of generated intermediate frames.
    pub fn generated(&self) -> usize {
        self.frames.len() - 2
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Image {
        &self.frames[i]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn prompts(&self) -> &[Option<Mask>] {
        &self.prompts
    }

    pub fn prompt(&self, i: usize) -> Option<&Mask> {
        self.prompts[i].as_ref()
    }

    pub fn set_prompt(&mut self, i: usize, mask: Option<Mask>) -> Result<()> {
        if i >= self.frames.len() {
            return Err(Error::input(format!("frame index {i} out of range")));
        }
        if let Some(m) = &mask {
            m.ensure_same_dims(self.dims())?;
        }
        self.prompts[i] = mask;
        Ok(())
    }

    pub fn clear_prompts(&mut self) {
        self.prompts.iter_mut().for_each(|p| *p = None);
    }

    pub fn prompted_indices(&self) -> Vec<usize> {
        self.prompts
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|_| i))
            .collect()
    }

    /// Writes `frame_000.png ...` and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, f) in self.frames.iter().enumerate() {
            f.save(dir.join(frame_name(i)))?;
        }
        for (i, p) in self.prompts.iter().enumerate() {
            if let Some(m) = p {
                m.save(dir.join(format!("prompt_{i:03}.png")))?;
            }
        }
        let manifest = SequenceManifest {
            frames: self.frames.len(),
            alphas: self.alphas.clone(),
            prompted: self.prompted_indices(),
            extra,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<(Self, SequenceManifest)> {
        let manifest: SequenceManifest =
            serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        let frames = (0..manifest.frames)
            .map(|i| Image::load(dir.join(frame_name(i))))
            .collect::<Result<Vec<_>>>()?;
        let mut seq = Self::new(frames, manifest.alphas.clone())?;
        for &i in &manifest.prompted {
            let m = Mask::load(dir.join(format!("prompt_{i:03}.png")))?;
            seq.set_prompt(i, Some(m))?;
        }
        Ok((seq, manifest))
    }
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:03}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub frames: usize,
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub prompted: Vec<usize>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(v: f32) -> Image {
        Image::filled(3, 3, 3, v).unwrap()
    }

    #[test]
    fn validates_alphas() {
        assert!(PseudoVideoSequence::new(vec![frame(0.0), frame(1.0)], vec![0.0, 1.0]).is_ok());
        assert!(PseudoVideoSequence::new(vec![frame(0.0), frame(1.0)], vec![0.1, 1.0]).is_err());
        assert!(PseudoVideoSequence::new(
            vec![frame(0.0), frame(0.5), frame(1.0)],
            vec![0.0, 0.0, 1.0]
        )
        .is_err());
        assert!(PseudoVideoSequence::new(vec![frame(0.0)], vec![0.0]).is_err());
    }

    #[test]
    fn round_trips_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut seq = PseudoVideoSequence::new(
            vec![frame(0.0), frame(0.4), frame(1.0)],
            vec![0.0, 0.5, 1.0],
        )
        .unwrap();
        seq.set_prompt(0, Some(Mask::ones(3, 3))).unwrap();
        seq.write_dir(dir.path(), serde_json::json!({"k": 1})).unwrap();
        let (back, manifest) = PseudoVideoSequence::read_dir(dir.path()).unwrap();
        assert_eq!(manifest.prompted, vec![0]);
        assert_eq!(back.prompted_indices(), vec![0]);
        assert_eq!(back.frame(1), &frame(0.4).quantized());
    }
}
