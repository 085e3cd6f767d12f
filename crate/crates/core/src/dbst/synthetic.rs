//! Closed-form stand-in for a diffusion backend.
//!
//! The "adapter" of an image is its salient-object offset from the frame
//! centre plus its mean colour; the "latent" is the image re-centred on that
//! object with the mean colour removed. Decoding shifts a latent to the
//! adapter's offset and adds the adapter's colour back. Because the shift is a
//! whole-pixel circular shift, `denoise(invert(x), fit_adapter(x)) == x`.
//! Interpolated states therefore cross-dissolve object-aligned content while
//! the object travels smoothly from the reference position to the target one.

use std::collections::BTreeMap;

use super::{AdapterDelta, DbstPreset, InterpolationBackend, LatentNoise, Tensor};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::ttga::otsu_threshold_values;

#[derive(Debug, Clone)]
pub struct SyntheticMorphBackend {
    seed: u64,
}

impl SyntheticMorphBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

/// Offset `(dy, dx)` of the salient region's centroid from the frame centre.
pub(crate) fn salient_offset(img: &Image) -> (f64, f64) {
    let (h, w) = img.dims();
    let c = img.channels();
    let border = 2.min(h.min(w) / 2).max(1);
    let mut background = vec![0.0f32; c];
    for (ch, bg) in background.iter_mut().enumerate() {
        let mut vals: Vec<f32> = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if y < border || x < border || y >= h - border || x >= w - border {
                    vals.push(img.get(y, x, ch));
                }
            }
        }
        vals.sort_by(f32::total_cmp);
        *bg = vals[vals.len() / 2];
    }
    let saliency: Vec<f64> = (0..h * w)
        .map(|i| {
            let p = &img.data()[i * c..(i + 1) * c];
            p.iter().zip(&background).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    let Ok(tau) = otsu_threshold_values(&saliency) else {
        return (0.0, 0.0);
    };
    let (mut sw, mut sy, mut sx) = (0.0, 0.0, 0.0);
    for (i, &s) in saliency.iter().enumerate() {
        if s > tau {
            sw += s;
            sy += s * (i / w) as f64;
            sx += s * (i % w) as f64;
        }
    }
    if sw == 0.0 {
        return (0.0, 0.0);
    }
    (sy / sw - (h as f64 - 1.0) / 2.0, sx / sw - (w as f64 - 1.0) / 2.0)
}

fn mean_color(img: &Image) -> Vec<f64> {
    let c = img.channels();
    let mut sums = vec![0.0; c];
    for px in img.data().chunks_exact(c) {
        for (s, &v) in sums.iter_mut().zip(px) {
            *s += v as f64;
        }
    }
    let n = (img.height() * img.width()) as f64;
    sums.into_iter().map(|s| s / n).collect()
}

/// `out[(y + dy) mod h][(x + dx) mod w] = src[y][x]` on an `h x w x c` buffer.
fn circular_shift(src: &[f64], h: usize, w: usize, c: usize, dy: i64, dx: i64) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    let sy = dy.rem_euclid(h as i64) as usize;
    let sx = dx.rem_euclid(w as i64) as usize;
    for y in 0..h {
        let ty = (y + sy) % h;
        for x in 0..w {
            let tx = (x + sx) % w;
            let s = (y * w + x) * c;
            let t = (ty * w + tx) * c;
            out[t..t + c].copy_from_slice(&src[s..s + c]);
        }
    }
    out
}

fn whole_pixels(offset: &Tensor) -> (i64, i64) {
    (offset.data[0].round() as i64, offset.data[1].round() as i64)
}

impl InterpolationBackend for SyntheticMorphBackend {
    fn fingerprint(&self) -> String {
        format!("synthetic-morph/v1/seed={}", self.seed)
    }

    fn fit_adapter(&mut self, image: &Image, preset: &DbstPreset) -> Result<AdapterDelta> {
        let (dy, dx) = salient_offset(image);
        let mut tensors = BTreeMap::new();
        tensors.insert("offset".to_string(), Tensor::new(vec![2], vec![dy, dx])?);
        tensors.insert("tone".to_string(), Tensor::new(vec![image.channels()], mean_color(image))?);
        AdapterDelta::new(preset.lora_rank, tensors)
    }

    fn invert(&mut self, image: &Image, preset: &DbstPreset) -> Result<LatentNoise> {
        let (h, w) = image.dims();
        let c = image.channels();
        let adapter = self.fit_adapter(image, preset)?;
        let tone = &adapter.tensors["tone"].data;
        let (dy, dx) = whole_pixels(&adapter.tensors["offset"]);
        let centred: Vec<f64> = image
            .data()
            .chunks_exact(c)
            .flat_map(|px| px.iter().zip(tone).map(|(&v, t)| v as f64 - t))
            .collect();
        let data = circular_shift(&centred, h, w, c, -dy, -dx);
        if data.iter().all(|&v| v == 0.0) {
            return Err(Error::Backend("image is constant; its latent would be zero".into()));
        }
        LatentNoise::new(vec![h, w, c], data, preset.inversion_steps)
    }

    fn denoise(&mut self, latent: &LatentNoise, adapter: &AdapterDelta, _preset: &DbstPreset) -> Result<Image> {
        let [h, w, c] = latent.shape[..] else {
            return Err(Error::Backend(format!("latent shape {:?} is not HxWxC", latent.shape)));
        };
        let (Some(offset), Some(tone)) = (adapter.get("offset"), adapter.get("tone")) else {
            return Err(Error::Backend("adapter lacks offset/tone tensors".into()));
        };
        if tone.data.len() != c {
            return Err(Error::Backend("adapter tone does not match latent channels".into()));
        }
        let (dy, dx) = whole_pixels(offset);
        let shifted = circular_shift(&latent.data, h, w, c, dy, dx);
        let data = shifted
            .chunks_exact(c)
            .flat_map(|px| px.iter().zip(&tone.data).map(|(v, t)| (v + t).clamp(0.0, 1.0) as f32))
            .collect();
        Image::new(h, w, c, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dbst::{generate_sequence, interpolate_adapter, make_alpha_schedule, slerp, AlphaSchedule};

    fn blob(h: usize, w: usize, cy: f64, cx: f64, r: f64, color: [f32; 3]) -> Image {
        Image::from_fn(h, w, 3, |y, x, c| {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            let tex = ((y * 7 + x * 3) % 5) as f32 * 0.01;
            if d <= r {
                color[c] + tex
            } else {
                0.2 + tex
            }
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let img = blob(32, 40, 10.0, 25.0, 5.0, [0.9, 0.3, 0.1]);
        let mut b = SyntheticMorphBackend::new(0);
        let p = DbstPreset::fast();
        let z = b.invert(&img, &p).unwrap();
        let d = b.fit_adapter(&img, &p).unwrap();
        let back = b.denoise(&z, &d, &p).unwrap();
        for (a, e) in back.data().iter().zip(img.data()) {
            assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn offset_tracks_object() {
        let img = blob(32, 32, 8.0, 22.0, 4.0, [0.9, 0.1, 0.1]);
        let (dy, dx) = salient_offset(&img);
        assert!((dy - (8.0 - 15.5)).abs() < 0.6, "dy={dy}");
        assert!((dx - (22.0 - 15.5)).abs() < 0.6, "dx={dx}");
    }

    #[test]
    fn middle_frame_matches_closed_form() {
        let r = blob(32, 32, 10.0, 10.0, 5.0, [0.9, 0.3, 0.1]);
        let t = blob(32, 32, 20.0, 22.0, 6.0, [0.8, 0.4, 0.1]);
        let p = DbstPreset::fast();
        let mut b = SyntheticMorphBackend::new(3);
        let seq = generate_sequence(&r, &t, &AlphaSchedule::new(vec![0.5]).unwrap(), &mut b, &p).unwrap();
        assert_eq!(seq.len(), 3);

        // oracle: compose the closed-form morph by hand
        let (zr, zt) = (b.invert(&r, &p).unwrap(), b.invert(&t, &p).unwrap());
        let (dr, dt) = (b.fit_adapter(&r, &p).unwrap(), b.fit_adapter(&t, &p).unwrap());
        let z = slerp(&zr, &zt, 0.5).unwrap();
        let d = interpolate_adapter(&dr, &dt, 0.5).unwrap();
        let expected = b.denoise(&z, &d, &p).unwrap().quantized();
        assert_eq!(seq.frame(1), &expected);
        assert_eq!(seq.frame(0), &r);
        assert_eq!(seq.frame(2), &t);
    }

    #[test]
    fn empty_schedule_gives_concat_pair() {
        let r = blob(16, 16, 5.0, 5.0, 3.0, [0.9, 0.3, 0.1]);
        let t = blob(16, 16, 9.0, 9.0, 3.0, [0.9, 0.3, 0.1]);
        let mut b = SyntheticMorphBackend::new(0);
        let seq = generate_sequence(&r, &t, &AlphaSchedule::empty(), &mut b, &DbstPreset::fast()).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.alphas(), &[0.0, 1.0]);
    }

    #[test]
    fn nine_step_schedule_gives_eleven_frames() {
        let r = blob(24, 24, 8.0, 8.0, 4.0, [0.9, 0.3, 0.1]);
        let t = blob(24, 24, 15.0, 14.0, 4.0, [0.8, 0.3, 0.2]);
        let s = make_alpha_schedule(9, 0.2, 0.8).unwrap();
        let mut b = SyntheticMorphBackend::new(0);
        let seq = generate_sequence(&r, &t, &s, &mut b, &DbstPreset::standard()).unwrap();
        assert_eq!(seq.len(), 11);
        assert_eq!(seq.alphas()[0], 0.0);
        assert_eq!(seq.alphas()[10], 1.0);
        assert_eq!(&seq.alphas()[1..10], s.values());
    }

    #[test]
    fn constant_image_fails_with_alpha() {
        let r = Image::filled(8, 8, 3, 0.5).unwrap();
        let t = blob(8, 8, 4.0, 4.0, 2.0, [0.9, 0.3, 0.1]);
        let mut b = SyntheticMorphBackend::new(0);
        let s = AlphaSchedule::new(vec![0.3, 0.6]).unwrap();
        match generate_sequence(&r, &t, &s, &mut b, &DbstPreset::fast()) {
            Err(Error::Generation { alpha, .. }) => assert_eq!(alpha, 0.3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
