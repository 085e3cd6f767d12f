//! Affine warps applied identically to an image and its mask.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::{Image, Mask};

/// Geometric transform about the image centre, in pixel-centre coordinates.
/// Translation is a fraction of the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translate_x: f64,
    pub translate_y: f64,
    pub flip_horizontal: bool,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

/// Sampling ranges for random affine transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRanges {
    /// Maximum absolute rotation in degrees.
    pub max_rotation_deg: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    /// Maximum absolute translation as a fraction of the image size.
    pub max_translate: f64,
    pub flip_probability: f64,
}

impl Default for AffineRanges {
    fn default() -> Self {
        Self {
            max_rotation_deg: 25.0,
            min_scale: 0.8,
            max_scale: 1.2,
            max_translate: 0.1,
            flip_probability: 0.5,
        }
    }
}

impl AffineRanges {
    /// Ranges that only ever produce the identity transform.
    pub fn none() -> Self {
        Self {
            max_rotation_deg: 0.0,
            min_scale: 1.0,
            max_scale: 1.0,
            max_translate: 0.0,
            flip_probability: 0.0,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> AffineParams {
        let mut sym = |m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let rotation_deg = sym(self.max_rotation_deg);
        let translate_x = sym(self.max_translate);
        let translate_y = sym(self.max_translate);
        let scale = if self.max_scale > self.min_scale {
            rng.gen_range(self.min_scale..=self.max_scale)
        } else {
            self.min_scale
        };
        let flip_horizontal = self.flip_probability > 0.0 && rng.gen_bool(self.flip_probability.min(1.0));
        AffineParams { rotation_deg, scale, translate_x, translate_y, flip_horizontal }
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: 1.0,
            translate_x: 0.0,
            translate_y: 0.0,
            flip_horizontal: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    /// Moves the continuous parameters a fraction `strength` of the way from identity.
    /// Flips are kept only at full strength.
    pub fn scaled(&self, strength: f64) -> Self {
        Self {
            rotation_deg: self.rotation_deg * strength,
            scale: 1.0 + (self.scale - 1.0) * strength,
            translate_x: self.translate_x * strength,
            translate_y: self.translate_y * strength,
            flip_horizontal: self.flip_horizontal && strength >= 1.0,
        }
    }

    /// Maps a destination pixel back to its source location.
    fn inverse_map(&self, h: usize, w: usize) -> impl Fn(f64, f64) -> (f64, f64) {
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let (ty, tx) = (self.translate_y * h as f64, self.translate_x * w as f64);
        let theta = self.rotation_deg.to_radians();
        let (s, c) = theta.sin_cos();
        let inv_scale = 1.0 / self.scale;
        let flip = self.flip_horizontal;
        move |y: f64, x: f64| {
            let dy = y - cy - ty;
            let dx = x - cx - tx;
            // inverse rotation
            let ry = -s * dx + c * dy;
            let rx = c * dx + s * dy;
            let (sy, mut sx) = (ry * inv_scale, rx * inv_scale);
            if flip {
                sx = -sx;
            }
            (sy + cy, sx + cx)
        }
    }

    /// Bilinear warp; samples outside the frame clamp to the nearest edge pixel.
    pub fn warp_image(&self, img: &Image) -> Image {
        if self.is_identity() {
            return img.clone();
        }
        let (h, w) = img.dims();
        let map = self.inverse_map(h, w);
        let mut coords = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                coords.push(map(y as f64, x as f64));
            }
        }
        Image::from_fn(h, w, img.channels(), |y, x, c| {
            let (sy, sx) = coords[y * w + x];
            bilinear(img, sy, sx, c)
        })
        .expect("warp preserves dimensions")
    }

    /// Nearest-neighbour warp; samples outside the frame are background.
    pub fn warp_mask(&self, mask: &Mask) -> Mask {
        if self.is_identity() {
            return mask.clone();
        }
        let (h, w) = mask.dims();
        let map = self.inverse_map(h, w);
        Mask::from_fn(h, w, |y, x| {
            let (sy, sx) = map(y as f64, x as f64);
            let (ry, rx) = (sy.round(), sx.round());
            mask.get_signed(ry as isize, rx as isize)
        })
    }
}

pub(crate) fn bilinear(img: &Image, y: f64, x: f64, c: usize) -> f32 {
    let (h, w) = img.dims();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let ty = (y - y0 as f64) as f32;
    let tx = (x - x0 as f64) as f32;
    let top = img.get(y0, x0, c) * (1.0 - tx) + img.get(y0, x1, c) * tx;
    let bot = img.get(y1, x0, c) * (1.0 - tx) + img.get(y1, x1, c) * tx;
    top * (1.0 - ty) + bot * ty
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_reverses_columns() {
        let mask = Mask::from_rows(&["11000", "01000", "00001"]).unwrap();
        let p = AffineParams { flip_horizontal: true, ..AffineParams::identity() };
        let flipped = p.warp_mask(&mask);
        let oracle = Mask::from_fn(3, 5, |y, x| mask.get(y, 4 - x));
        assert_eq!(flipped, oracle);
    }

    #[test]
    fn scaled_zero_is_identity() {
        let p = AffineParams {
            rotation_deg: 12.0,
            scale: 1.1,
            translate_x: 0.05,
            translate_y: -0.02,
            flip_horizontal: true,
        };
        assert!(p.scaled(0.0).is_identity());
        assert_eq!(p.scaled(1.0), p);
    }

    #[test]
    fn integer_translation_shifts_mask() {
        let mask = Mask::from_fn(10, 10, |y, x| (3..5).contains(&y) && (2..6).contains(&x));
        let p = AffineParams { translate_x: 0.2, ..AffineParams::identity() };
        let moved = p.warp_mask(&mask);
        assert_eq!(moved, Mask::from_fn(10, 10, |y, x| x >= 2 && mask.get(y, x - 2)));
    }
}
