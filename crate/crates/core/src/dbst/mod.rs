//! Semantic transition sequences built by interpolating fitted adapters and
//! inverted latents between a reference and a target image.
//!
//! A backend fits a low-rank adapter residual to each endpoint image and
//! inverts each image to its initial latent. For every ratio `alpha` the two
//! adapters are mixed linearly, the two latents are mixed along the great
//! circle joining them, and the backend decodes the mixed latent under the
//! mixed adapter into an intermediate frame.

mod cache;
mod external;
mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use cache::FrameCache;
pub use external::ExternalDiffusionBackend;
pub use synthetic::SyntheticMorphBackend;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::sequence::PseudoVideoSequence;

/// Angles below this (radians) make slerp fall back to linear interpolation.
pub const SLERP_ANGLE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::input(format!(
                "tensor shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![v; n] }
    }
}

/// Named collection of low-rank residual arrays fitted to one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterDelta {
    pub rank: usize,
    pub tensors: BTreeMap<String, Tensor>,
}

impl AdapterDelta {
    pub fn new(rank: usize, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        if rank == 0 {
            return Err(Error::input("adapter rank must be positive"));
        }
        for (name, t) in &tensors {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("adapter tensor {name} has non-finite values")));
            }
        }
        Ok(Self { rank, tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    fn check_compatible(&self, other: &AdapterDelta) -> Result<()> {
        if self.rank != other.rank {
            return Err(Error::IncompatibleAdapter(format!(
                "rank {} vs {}",
                self.rank, other.rank
            )));
        }
        if self.tensors.len() != other.tensors.len()
            || self.tensors.keys().zip(other.tensors.keys()).any(|(a, b)| a != b)
        {
            return Err(Error::IncompatibleAdapter("tensor names differ".into()));
        }
        for (name, t) in &self.tensors {
            if t.shape != other.tensors[name].shape {
                return Err(Error::IncompatibleAdapter(format!(
                    "tensor {name}: shape {:?} vs {:?}",
                    t.shape, other.tensors[name].shape
                )));
            }
        }
        Ok(())
    }
}

/// Latent noise recovered by inverting an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentNoise {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub timesteps: usize,
}

impl LatentNoise {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, timesteps: usize) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::input("latent shape does not match its data"));
        }
        if timesteps == 0 {
            return Err(Error::input("latent timestep count must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("latent has non-finite values"));
        }
        Ok(Self { shape, data, timesteps })
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::input(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Elementwise `(1 - alpha) * dr + alpha * dt` for every named array.
pub fn interpolate_adapter(dr: &AdapterDelta, dt: &AdapterDelta, alpha: f64) -> Result<AdapterDelta> {
    check_alpha(alpha)?;
    dr.check_compatible(dt)?;
    let tensors = dr
        .tensors
        .iter()
        .map(|(name, a)| {
            let b = &dt.tensors[name];
            let data = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| (1.0 - alpha) * x + alpha * y)
                .collect();
            (name.clone(), Tensor { shape: a.shape.clone(), data })
        })
        .collect();
    Ok(AdapterDelta { rank: dr.rank, tensors })
}

/// Spherical linear interpolation between two flattened latents.
///
/// Falls back to linear interpolation when the angle between them is below
/// [`SLERP_ANGLE_TOLERANCE`]. Antipodal latents have no unique great circle
/// and are rejected.
pub fn slerp(zr: &LatentNoise, zt: &LatentNoise, alpha: f64) -> Result<LatentNoise> {
    check_alpha(alpha)?;
    if zr.shape != zt.shape {
        return Err(Error::input(format!(
            "latent shapes differ: {:?} vs {:?}",
            zr.shape, zt.shape
        )));
    }
    let (nr, nt) = (zr.norm(), zt.norm());
    if nr == 0.0 || nt == 0.0 {
        return Err(Error::input("cannot interpolate a zero latent"));
    }
    let dot: f64 = zr.data.iter().zip(&zt.data).map(|(a, b)| a * b).sum();
    let phi = (dot / (nr * nt)).clamp(-1.0, 1.0).acos();

    let (wr, wt) = if phi < SLERP_ANGLE_TOLERANCE {
        (1.0 - alpha, alpha)
    } else if std::f64::consts::PI - phi < SLERP_ANGLE_TOLERANCE {
        return Err(Error::input("latents are antipodal; slerp is undefined"));
    } else {
        let s = phi.sin();
        (((1.0 - alpha) * phi).sin() / s, (alpha * phi).sin() / s)
    };
    let data = zr.data.iter().zip(&zt.data).map(|(a, b)| wr * a + wt * b).collect();
    Ok(LatentNoise { shape: zr.shape.clone(), data, timesteps: zr.timesteps })
}

/// Strictly increasing interpolation ratios inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    values: Vec<f64>,
}

impl AlphaSchedule {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::input("schedule values must lie in (0, 1)"));
        }
        if values.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(Error::input("schedule values must be strictly increasing"));
        }
        Ok(Self { values })
    }

    pub fn empty() -> Self {
        Self { values: Vec::new() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Alphas of the full sequence: `0`, the schedule, then `1`.
    pub fn sequence_alphas(&self) -> Vec<f64> {
        let mut a = Vec::with_capacity(self.values.len() + 2);
        a.push(0.0);
        a.extend_from_slice(&self.values);
        a.push(1.0);
        a
    }
}

/// `n` equally spaced ratios from `lo` to `hi`, both included.
pub fn make_alpha_schedule(n: usize, lo: f64, hi: f64) -> Result<AlphaSchedule> {
    if n == 0 {
        return Err(Error::input("schedule length must be at least 1"));
    }
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(Error::input(format!(
            "schedule bounds must satisfy 0 < lo <= hi < 1, got lo={lo} hi={hi}"
        )));
    }
    if n > 1 && lo == hi {
        return Err(Error::input("more than one value needs lo < hi"));
    }
    let values = (0..n)
        .map(|i| {
            if n == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    AlphaSchedule::new(values)
}

/// Generation budget for adapter fitting and inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbstPreset {
    pub name: String,
    pub lora_steps: usize,
    pub lora_rank: usize,
    pub inversion_steps: usize,
    pub denoise_steps: usize,
    pub learning_rate: f64,
    /// Visual refinement stages; never enabled by the shipped presets.
    pub refinement_enabled: bool,
}

impl DbstPreset {
    pub fn fast() -> Self {
        Self {
            name: "fast".into(),
            lora_steps: 50,
            lora_rank: 4,
            inversion_steps: 10,
            denoise_steps: 10,
            learning_rate: 2e-4,
            refinement_enabled: false,
        }
    }

    pub fn standard() -> Self {
        Self {
            name: "standard".into(),
            lora_steps: 200,
            lora_rank: 16,
            inversion_steps: 20,
            denoise_steps: 20,
            learning_rate: 2e-4,
            refinement_enabled: false,
        }
    }

    pub fn full() -> Self {
        Self {
            name: "full".into(),
            lora_steps: 200,
            lora_rank: 16,
            inversion_steps: 50,
            denoise_steps: 50,
            learning_rate: 2e-4,
            refinement_enabled: false,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "fast" => Ok(Self::fast()),
            "standard" => Ok(Self::standard()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!("unknown preset {other:?} (fast|standard|full)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lora_steps == 0 || self.lora_rank == 0 || self.inversion_steps == 0 || self.denoise_steps == 0 {
            return Err(Error::Config(format!("preset {} has a zero budget", self.name)));
        }
        Ok(())
    }
}

impl Default for DbstPreset {
    fn default() -> Self {
        Self::standard()
    }
}

/// Contract for the generative model behind the transition sequence.
pub trait InterpolationBackend {
    /// Identifies the backend configuration for cache keys.
    fn fingerprint(&self) -> String;

    fn fit_adapter(&mut self, image: &Image, preset: &DbstPreset) -> Result<AdapterDelta>;

    fn invert(&mut self, image: &Image, preset: &DbstPreset) -> Result<LatentNoise>;

    fn denoise(&mut self, latent: &LatentNoise, adapter: &AdapterDelta, preset: &DbstPreset) -> Result<Image>;
}

/// Builds `[reference, intermediates..., target]`, one intermediate per alpha.
///
/// Generated frames are quantized to 8-bit levels so that a sequence read back
/// from the frame cache is identical to a freshly generated one.
pub fn generate_sequence<B: InterpolationBackend + ?Sized>(
    reference: &Image,
    target: &Image,
    schedule: &AlphaSchedule,
    backend: &mut B,
    preset: &DbstPreset,
) -> Result<PseudoVideoSequence> {
    if reference.dims() != target.dims() {
        return Err(Error::DimensionMismatch { left: reference.dims(), right: target.dims() });
    }
    preset.validate()?;
    let mut frames = Vec::with_capacity(schedule.len() + 2);
    frames.push(reference.clone());

    if !schedule.is_empty() {
        let at_start = |e: Error| Error::Generation { alpha: schedule.values()[0], source: Box::new(e) };
        let dr = backend.fit_adapter(reference, preset).map_err(at_start)?;
        let dt = backend.fit_adapter(target, preset).map_err(at_start)?;
        let zr = backend.invert(reference, preset).map_err(at_start)?;
        let zt = backend.invert(target, preset).map_err(at_start)?;
        for &alpha in schedule.values() {
            let frame = (|| {
                let delta = interpolate_adapter(&dr, &dt, alpha)?;
                let z = slerp(&zr, &zt, alpha)?;
                let img = backend.denoise(&z, &delta, preset)?;
                if img.dims() != reference.dims() {
                    return Err(Error::Backend(format!(
                        "decoded frame is {:?}, expected {:?}",
                        img.dims(),
                        reference.dims()
                    )));
                }
                Ok(img.quantized())
            })()
            .map_err(|e| Error::Generation { alpha, source: Box::new(e) })?;
            frames.push(frame);
        }
    }

    frames.push(target.clone());
    PseudoVideoSequence::new(frames, schedule.sequence_alphas())
}
