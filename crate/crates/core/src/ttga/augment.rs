//! Geometric and photometric augmentation of a reference pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{AffineParams, AffineRanges};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub affine: AffineRanges,
    /// Maximum additive brightness shift.
    pub brightness: f64,
    /// Maximum relative contrast change.
    pub contrast: f64,
    /// Transforms resampled when all foreground leaves the frame.
    pub max_retries: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { affine: AffineRanges::default(), brightness: 0.1, contrast: 0.1, max_retries: 10 }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { affine: AffineRanges::none(), brightness: 0.0, contrast: 0.0, max_retries: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Photometric {
    pub brightness: f64,
    pub contrast: f64,
}

impl Photometric {
    pub fn is_identity(&self) -> bool {
        self.brightness == 0.0 && self.contrast == 1.0
    }

    pub fn apply(&self, img: &Image) -> Image {
        if self.is_identity() {
            return img.clone();
        }
        let (b, c) = (self.brightness as f32, self.contrast as f32);
        Image::from_fn(img.height(), img.width(), img.channels(), |y, x, ch| {
            (img.get(y, x, ch) - 0.5) * c + 0.5 + b
        })
        .expect("dimensions unchanged")
    }
}

/// Augmented image with its pixel-corresponding mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub image: Image,
    pub mask: Mask,
    pub transform: AffineParams,
    pub photometric: Photometric,
}

/// Applies one random affine to image and mask alike, then jitters the image.
pub fn augment(image: &Image, mask: &Mask, seed: u64, cfg: &AugmentConfig) -> Result<AugmentedPair> {
    mask.ensure_same_dims(image.dims())?;
    if mask.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..=cfg.max_retries {
        let transform = cfg.affine.sample(&mut rng);
        let warped = transform.warp_mask(mask);
        let photometric = Photometric {
            brightness: if cfg.brightness > 0.0 { rng.gen_range(-cfg.brightness..=cfg.brightness) } else { 0.0 },
            contrast: if cfg.contrast > 0.0 { rng.gen_range(1.0 - cfg.contrast..=1.0 + cfg.contrast) } else { 1.0 },
        };
        if warped.is_empty() {
            continue;
        }
        return Ok(apply_pair(image, warped, transform, photometric));
    }
    Err(Error::EmptySupport)
}

/// Applies known parameters; the mask is warped by exactly the same transform.
pub fn augment_with(image: &Image, mask: &Mask, transform: AffineParams, photometric: Photometric) -> Result<AugmentedPair> {
    mask.ensure_same_dims(image.dims())?;
    Ok(apply_pair(image, transform.warp_mask(mask), transform, photometric))
}

fn apply_pair(image: &Image, mask: Mask, transform: AffineParams, photometric: Photometric) -> AugmentedPair {
    let image = photometric.apply(&transform.warp_image(image));
    AugmentedPair { image, mask, transform, photometric }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> (Image, Mask) {
        let img = Image::from_fn(40, 40, 3, |y, x, c| ((y * 3 + x * 7 + c) % 17) as f32 / 16.0).unwrap();
        let mask = Mask::from_fn(40, 40, |y, x| (14..26).contains(&y) && (12..28).contains(&x));
        (img, mask)
    }

    #[test]
    fn identity_config_is_unchanged() {
        let (img, mask) = pair();
        let a = augment(&img, &mask, 42, &AugmentConfig::none()).unwrap();
        assert_eq!(a.image, img);
        assert_eq!(a.mask, mask);
        assert!(a.transform.is_identity());
    }

    #[test]
    fn deterministic_for_seed() {
        let (img, mask) = pair();
        let cfg = AugmentConfig::default();
        assert_eq!(augment(&img, &mask, 5, &cfg).unwrap(), augment(&img, &mask, 5, &cfg).unwrap());
    }

    #[test]
    fn flip_reverses_mask_columns() {
        let (img, mask) = pair();
        let t = AffineParams { flip_horizontal: true, ..AffineParams::identity() };
        let p = Photometric { brightness: 0.0, contrast: 1.0 };
        let a = augment_with(&img, &mask, t, p).unwrap();
        assert_eq!(a.mask, Mask::from_fn(40, 40, |y, x| mask.get(y, 39 - x)));
    }

    #[test]
    fn area_scales_with_square_of_scale() {
        let (img, mask) = pair();
        for seed in 0..20 {
            let a = augment(&img, &mask, seed, &AugmentConfig::default()).unwrap();
            let expected = mask.count() as f64 * a.transform.scale.powi(2);
            let got = a.mask.count() as f64;
            // nearest-neighbour sampling of a 12x16 block: perimeter-sized slack
            assert!((got - expected).abs() <= 0.15 * expected, "seed {seed}: {got} vs {expected}");
        }
    }

    #[test]
    fn mask_outside_frame_fails() {
        let (img, _) = pair();
        assert!(matches!(augment(&img, &Mask::zeros(40, 40), 0, &AugmentConfig::default()), Err(Error::EmptySupport)));
    }
}
