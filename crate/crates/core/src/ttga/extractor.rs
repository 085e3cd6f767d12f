//! Feature extractors with a frozen stem and a tunable tail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::FeatureMap;
use crate::image::Image;

/// Encoder contract for test-time adaptation.
///
/// `encode = tail(frozen_stage(image))`. Only the tail's parameters are
/// exposed through [`tunable`](Self::tunable); a frozen extractor returns an
/// empty slice. The frozen stage output is reusable across optimisation steps.
pub trait FeatureExtractor: Clone + Send {
    type Frozen: Send;

    fn stride(&self) -> usize;

    fn dim(&self) -> usize;

    fn frozen_stage(&self, image: &Image) -> Self::Frozen;

    fn tail(&self, frozen: &Self::Frozen) -> FeatureMap;

    /// Adds `d loss / d tunable` to `grad_out` given `d loss / d features`.
    fn tail_backward(&self, frozen: &Self::Frozen, feature_grad: &[f64], grad_out: &mut [f64]);

    fn tunable(&self) -> &[f64];

    fn tunable_mut(&mut self) -> &mut [f64];

    fn encode(&self, image: &Image) -> FeatureMap {
        self.tail(&self.frozen_stage(image))
    }
}

/// Stem output pooled to the feature grid.
#[derive(Debug, Clone)]
pub struct StemFeatures {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

const RANDOM_FILTERS: usize = 5;
/// centred colour (3) + |dx|, |dy| of luminance (2) + rectified random filters
pub const STEM_DIM: usize = 5 + RANDOM_FILTERS;

/// Small deterministic convolutional encoder.
///
/// The stem computes centred colour, luminance gradient magnitudes and a bank
/// of seeded 3x3 filters with ReLU, averaged over `stride x stride` cells. The
/// tail is an affine map `W x + b`, initialised to the identity.
#[derive(Debug, Clone)]
pub struct ConvExtractor {
    stride: usize,
    filters: Vec<[f64; 9]>,
    /// `W` (row-major, `dim x STEM_DIM`) followed by `b` (`dim`).
    params: Vec<f64>,
    frozen: bool,
}

impl ConvExtractor {
    pub fn new(stride: usize, seed: u64) -> Self {
        assert!(stride >= 1, "stride must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filters = (0..RANDOM_FILTERS)
            .map(|_| {
                let mut k = [0.0; 9];
                k.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
                let mean = k.iter().sum::<f64>() / 9.0;
                k.iter_mut().for_each(|v| *v -= mean);
                k
            })
            .collect();
        let mut params = vec![0.0; STEM_DIM * STEM_DIM + STEM_DIM];
        for i in 0..STEM_DIM {
            params[i * STEM_DIM + i] = 1.0;
        }
        Self { stride, filters, params, frozen: false }
    }

    /// Freezes every parameter; adaptation becomes a no-op.
    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn grid_dims(&self, image: &Image) -> (usize, usize) {
        let (h, w) = image.dims();
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }
}

impl Default for ConvExtractor {
    fn default() -> Self {
        Self::new(4, 0)
    }
}

impl FeatureExtractor for ConvExtractor {
    type Frozen = StemFeatures;

    fn stride(&self) -> usize {
        self.stride
    }

    fn dim(&self) -> usize {
        STEM_DIM
    }

    fn frozen_stage(&self, image: &Image) -> StemFeatures {
        let (h, w) = image.dims();
        let lum: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                (0.299 * image.rgb(y, x, 0) + 0.587 * image.rgb(y, x, 1) + 0.114 * image.rgb(y, x, 2)) as f64
            })
            .collect();
        let l = |y: isize, x: isize| {
            let yy = y.clamp(0, h as isize - 1) as usize;
            let xx = x.clamp(0, w as isize - 1) as usize;
            lum[yy * w + xx]
        };

        let (gh, gw) = self.grid_dims(image);
        let mut data = vec![0.0; gh * gw * STEM_DIM];
        let mut counts = vec![0usize; gh * gw];
        let mut px = [0.0; STEM_DIM];
        for y in 0..h {
            for x in 0..w {
                let (yi, xi) = (y as isize, x as isize);
                for (c, v) in px.iter_mut().take(3).enumerate() {
                    *v = image.rgb(y, x, c) as f64 - 0.5;
                }
                px[3] = (l(yi, xi + 1) - l(yi, xi - 1)).abs() * 0.5;
                px[4] = (l(yi + 1, xi) - l(yi - 1, xi)).abs() * 0.5;
                for (k, filt) in self.filters.iter().enumerate() {
                    let mut acc = 0.0;
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            acc += filt[((dy + 1) * 3 + dx + 1) as usize] * l(yi + dy, xi + dx);
                        }
                    }
                    px[5 + k] = acc.max(0.0);
                }
                let cell = (y / self.stride) * gw + x / self.stride;
                counts[cell] += 1;
                for (d, v) in data[cell * STEM_DIM..(cell + 1) * STEM_DIM].iter_mut().zip(&px) {
                    *d += v;
                }
            }
        }
        for (cell, &n) in counts.iter().enumerate() {
            data[cell * STEM_DIM..(cell + 1) * STEM_DIM].iter_mut().for_each(|v| *v /= n as f64);
        }
        StemFeatures { height: gh, width: gw, dim: STEM_DIM, data }
    }

    fn tail(&self, frozen: &StemFeatures) -> FeatureMap {
        let d0 = frozen.dim;
        let (weight, bias) = self.params.split_at(STEM_DIM * d0);
        let n = frozen.height * frozen.width;
        let mut out = Vec::with_capacity(n * STEM_DIM);
        for i in 0..n {
            let x = &frozen.data[i * d0..(i + 1) * d0];
            for (o, b) in bias.iter().enumerate() {
                let row = &weight[o * d0..(o + 1) * d0];
                out.push(b + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        FeatureMap::new(frozen.height, frozen.width, STEM_DIM, self.stride, out)
            .expect("tail output is finite for finite parameters")
    }

    fn tail_backward(&self, frozen: &StemFeatures, feature_grad: &[f64], grad_out: &mut [f64]) {
        if self.frozen {
            return;
        }
        let d0 = frozen.dim;
        let (gw, gb) = grad_out.split_at_mut(STEM_DIM * d0);
        for i in 0..frozen.height * frozen.width {
            let x = &frozen.data[i * d0..(i + 1) * d0];
            let g = &feature_grad[i * STEM_DIM..(i + 1) * STEM_DIM];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                gb[o] += go;
                for (w, xv) in gw[o * d0..(o + 1) * d0].iter_mut().zip(x) {
                    *w += go * xv;
                }
            }
        }
    }

    fn tunable(&self) -> &[f64] {
        if self.frozen {
            &[]
        } else {
            &self.params
        }
    }

    fn tunable_mut(&mut self) -> &mut [f64] {
        if self.frozen {
            &mut []
        } else {
            &mut self.params
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_is_deterministic_and_shaped() {
        let img = Image::from_fn(10, 13, 3, |y, x, c| ((y * 3 + x * 5 + c) % 11) as f32 / 10.0).unwrap();
        let e = ConvExtractor::new(4, 7);
        let a = e.encode(&img);
        assert_eq!(a, ConvExtractor::new(4, 7).encode(&img));
        assert_eq!((a.height, a.width, a.dim), (3, 4, STEM_DIM));
    }

    #[test]
    fn identity_tail_passes_stem_through() {
        let img = Image::from_fn(8, 8, 1, |y, x, _| ((y + x) % 3) as f32 / 2.0).unwrap();
        let e = ConvExtractor::new(2, 1);
        let stem = e.frozen_stage(&img);
        assert_eq!(e.tail(&stem).data, stem.data);
    }

    #[test]
    fn frozen_has_no_tunables() {
        let mut e = ConvExtractor::default().frozen();
        assert!(e.tunable().is_empty());
        assert!(e.tunable_mut().is_empty());
    }

    #[test]
    fn backward_matches_finite_difference() {
        let img = Image::from_fn(6, 6, 3, |y, x, c| ((y * 7 + x * 3 + c * 5) % 13) as f32 / 12.0).unwrap();
        let mut e = ConvExtractor::new(2, 3);
        let stem = e.frozen_stage(&img);
        // loss = sum(features * coeff)
        let n = stem.height * stem.width * STEM_DIM;
        let coeff: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5).collect();
        let loss = |e: &ConvExtractor| e.tail(&stem).data.iter().zip(&coeff).map(|(a, b)| a * b).sum::<f64>();
        let mut grad = vec![0.0; e.tunable().len()];
        e.tail_backward(&stem, &coeff, &mut grad);
        for idx in [0, 13, 57, STEM_DIM * STEM_DIM + 2] {
            let orig = e.tunable()[idx];
            e.tunable_mut()[idx] = orig + 1e-6;
            let lp = loss(&e);
            e.tunable_mut()[idx] = orig - 1e-6;
            let lm = loss(&e);
            e.tunable_mut()[idx] = orig;
            assert!(((lp - lm) / 2e-6 - grad[idx]).abs() < 1e-5);
        }
    }
}
