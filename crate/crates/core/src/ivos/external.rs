//! Bridge to an out-of-process video object segmentation model.
//!
//! The session is written to a scratch directory as `frame_NNN.png` plus
//! `prompt_NNN.png` for each prompted frame, then `<program> [args..] <dir>`
//! is run. It must leave one `mask_NNN.png` per frame in the same directory.

use std::path::{Path, PathBuf};
use std::process::Command;

use super::{TrackResult, Tracker, TrackerSession};
use crate::error::{Error, Result};
use crate::image::Mask;
use crate::sequence::frame_name;

#[derive(Debug, Clone)]
pub struct ExternalTracker {
    program: PathBuf,
    args: Vec<String>,
}

impl ExternalTracker {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self { program: program.into(), args }
    }

    fn write_session(dir: &Path, session: &TrackerSession) -> Result<()> {
        let seq = session.sequence();
        for (i, frame) in seq.frames().iter().enumerate() {
            frame.save(dir.join(frame_name(i)))?;
            if let Some(p) = seq.prompt(i) {
                p.save(dir.join(format!("prompt_{i:03}.png")))?;
            }
        }
        Ok(())
    }
}

impl Tracker for ExternalTracker {
    fn propagate(&mut self, session: &TrackerSession) -> Result<TrackResult> {
        let dir = tempfile::tempdir()?;
        Self::write_session(dir.path(), session)?;
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(dir.path())
            .output()
            .map_err(|e| Error::Tracker(format!("cannot launch {}: {e}", self.program.display())))?;
        if !output.status.success() {
            return Err(Error::Tracker(format!(
                "{} exited with {}: {}",
                self.program.display(),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let seq = session.sequence();
        let mut masks = Vec::with_capacity(seq.len());
        for i in 0..seq.len() {
            let path = dir.path().join(format!("mask_{i:03}.png"));
            if !path.exists() {
                return Err(Error::Tracker(format!("tracker produced no {}", path.display())));
            }
            let m = Mask::load(&path)?;
            m.ensure_same_dims(seq.dims())?;
            masks.push(m);
        }
        Ok(TrackResult { masks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::sequence::PseudoVideoSequence;

    fn session() -> (TrackerSession, Mask) {
        let frames = vec![Image::filled(8, 8, 3, 0.5).unwrap(); 3];
        let mut seq = PseudoVideoSequence::new(frames, vec![0.0, 0.5, 1.0]).unwrap();
        let m = Mask::from_fn(8, 8, |y, x| y < 4 && x > 2);
        seq.set_prompt(0, Some(m.clone())).unwrap();
        (TrackerSession::open(seq).unwrap(), m)
    }

    #[test]
    fn copies_prompt_through_shell_bridge() {
        let script = r#"for i in 000 001 002; do cp "$1/prompt_000.png" "$1/mask_$i.png"; done"#;
        let mut t = ExternalTracker::new("sh", vec!["-c".into(), script.into(), "bridge".into()]);
        let (s, m) = session();
        let r = t.propagate(&s).unwrap();
        assert_eq!(r.masks.len(), 3);
        assert!(r.masks.iter().all(|x| x == &m));
    }

    #[test]
    fn missing_output_is_error() {
        let mut t = ExternalTracker::new("true", vec![]);
        assert!(matches!(t.propagate(&session().0), Err(Error::Tracker(_))));
    }

    #[test]
    fn failing_program_is_error() {
        let mut t = ExternalTracker::new("false", vec![]);
        assert!(matches!(t.propagate(&session().0), Err(Error::Tracker(_))));
    }
}
