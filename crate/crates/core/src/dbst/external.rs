//! Bridge to an out-of-process latent-diffusion system.
//!
//! The external program is invoked once per capability with a subcommand:
//!
//! ```text
//! <program> [args..] fit-adapter --image in.png --out adapter.json --steps N --rank R --lr LR --prompt TEXT --seed S
//! <program> [args..] invert      --image in.png --out latent.json  --steps N --prompt TEXT --seed S
//! <program> [args..] denoise     --latent latent.json --adapter adapter.json --out frame.png --steps N --prompt TEXT --seed S
//! ```
//!
//! `adapter.json` and `latent.json` are the serde forms of [`AdapterDelta`]
//! and [`LatentNoise`]. A nonzero exit status is a backend failure.

use std::path::PathBuf;
use std::process::Command;

use super::{AdapterDelta, DbstPreset, InterpolationBackend, LatentNoise};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug)]
pub struct ExternalDiffusionBackend {
    program: PathBuf,
    args: Vec<String>,
    /// Text conditioning, usually the class name.
    prompt: String,
    seed: u64,
    scratch: tempfile::TempDir,
    calls: usize,
}

impl ExternalDiffusionBackend {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, prompt: impl Into<String>, seed: u64) -> Result<Self> {
        Ok(Self {
            program: program.into(),
            args,
            prompt: prompt.into(),
            seed,
            scratch: tempfile::tempdir()?,
            calls: 0,
        })
    }

    fn scratch_path(&mut self, stem: &str, ext: &str) -> PathBuf {
        self.calls += 1;
        self.scratch.path().join(format!("{stem}-{}.{ext}", self.calls))
    }

    fn run(&self, sub: &str, extra: &[String], steps: usize) -> Result<()> {
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(sub)
            .args(extra)
            .args(["--steps", &steps.to_string(), "--prompt", &self.prompt, "--seed", &self.seed.to_string()])
            .output()
            .map_err(|e| Error::Backend(format!("cannot launch {}: {e}", self.program.display())))?;
        if !output.status.success() {
            return Err(Error::Backend(format!(
                "{sub} exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        Ok(())
    }
}

fn path_arg(p: &std::path::Path) -> String {
    p.to_string_lossy().into_owned()
}

impl InterpolationBackend for ExternalDiffusionBackend {
    fn fingerprint(&self) -> String {
        format!(
            "external/{}/{}/prompt={}/seed={}",
            self.program.display(),
            self.args.join(" "),
            self.prompt,
            self.seed
        )
    }

    fn fit_adapter(&mut self, image: &Image, preset: &DbstPreset) -> Result<AdapterDelta> {
        let input = self.scratch_path("fit", "png");
        let out = self.scratch_path("adapter", "json");
        image.save(&input)?;
        self.run(
            "fit-adapter",
            &[
                "--image".into(),
                path_arg(&input),
                "--out".into(),
                path_arg(&out),
                "--rank".into(),
                preset.lora_rank.to_string(),
                "--lr".into(),
                preset.learning_rate.to_string(),
            ],
            preset.lora_steps,
        )?;
        let delta: AdapterDelta = serde_json::from_slice(&std::fs::read(&out)?)?;
        AdapterDelta::new(delta.rank, delta.tensors)
    }

    fn invert(&mut self, image: &Image, preset: &DbstPreset) -> Result<LatentNoise> {
        let input = self.scratch_path("invert", "png");
        let out = self.scratch_path("latent", "json");
        image.save(&input)?;
        self.run(
            "invert",
            &["--image".into(), path_arg(&input), "--out".into(), path_arg(&out)],
            preset.inversion_steps,
        )?;
        let z: LatentNoise = serde_json::from_slice(&std::fs::read(&out)?)?;
        LatentNoise::new(z.shape, z.data, z.timesteps)
    }

    fn denoise(&mut self, latent: &LatentNoise, adapter: &AdapterDelta, preset: &DbstPreset) -> Result<Image> {
        let lat = self.scratch_path("latent-in", "json");
        let ada = self.scratch_path("adapter-in", "json");
        let out = self.scratch_path("frame", "png");
        std::fs::write(&lat, serde_json::to_vec(latent)?)?;
        std::fs::write(&ada, serde_json::to_vec(adapter)?)?;
        self.run(
            "denoise",
            &[
                "--latent".into(),
                path_arg(&lat),
                "--adapter".into(),
                path_arg(&ada),
                "--out".into(),
                path_arg(&out),
            ],
            preset.denoise_steps,
        )?;
        Image::load(&out)
    }
}
