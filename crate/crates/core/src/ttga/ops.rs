//! Prototype pooling, cosine activation, Otsu thresholding and BCE.

use crate::error::{Error, Result};
use crate::image::Mask;

/// Number of histogram bins used to threshold similarity maps.
pub const OTSU_BINS: usize = 256;

/// `H x W x D` feature grid. `stride` is the image-to-feature size ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub stride: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, stride: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || height == 0 || width == 0 {
            return Err(Error::input("feature map dimensions must be positive"));
        }
        if data.len() != height * width * dim {
            return Err(Error::input("feature buffer size mismatch"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("feature map has non-finite values"));
        }
        Ok(Self { height, width, dim, stride, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn at(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Class descriptor of dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub vector: Vec<f64>,
}

impl Prototype {
    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Prototype) -> f64 {
        let dot: f64 = self.vector.iter().zip(&other.vector).map(|(a, b)| a * b).sum();
        let n = self.norm() * other.norm();
        if n == 0.0 {
            0.0
        } else {
            dot / n
        }
    }

    /// Elementwise mean of several prototypes.
    pub fn mean(protos: &[Prototype]) -> Result<Prototype> {
        let first = protos.first().ok_or_else(|| Error::input("no prototypes to average"))?;
        let mut v = vec![0.0; first.vector.len()];
        for p in protos {
            if p.vector.len() != v.len() {
                return Err(Error::input("prototype dimensions differ"));
            }
            for (a, b) in v.iter_mut().zip(&p.vector) {
                *a += b;
            }
        }
        v.iter_mut().for_each(|a| *a /= protos.len() as f64);
        Ok(Prototype { vector: v })
    }
}

/// Per-pixel cosine similarity, bounded by `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl SimilarityMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::input("similarity map size mismatch"));
        }
        Ok(Self { height, width, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Bilinear resampling with half-pixel centres.
    pub fn resized(&self, (h, w): (usize, usize)) -> SimilarityMap {
        if (h, w) == self.dims() {
            return self.clone();
        }
        let sy = self.height as f64 / h as f64;
        let sx = self.width as f64 / w as f64;
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..w {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                let g = |yy: usize, xx: usize| self.data[yy * self.width + xx];
                let top = g(y0, x0) * (1.0 - tx) + g(y0, x1) * tx;
                let bot = g(y1, x0) * (1.0 - tx) + g(y1, x1) * tx;
                data.push(top * (1.0 - ty) + bot * ty);
            }
        }
        SimilarityMap { height: h, width: w, data }
    }
}

/// Masked average pooling: the mean feature vector over foreground pixels.
pub fn masked_average_pool(f: &FeatureMap, m: &Mask) -> Result<Prototype> {
    m.ensure_same_dims(f.dims())?;
    let mut acc = vec![0.0; f.dim];
    let mut n = 0usize;
    for (i, &on) in m.data().iter().enumerate() {
        if on {
            for (a, v) in acc.iter_mut().zip(f.at(i)) {
                *a += v;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptySupport);
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(Prototype { vector: acc })
}

/// Cosine similarity of every feature vector with the prototype; zero-norm pixels map to 0.
pub fn similarity_map(f: &FeatureMap, p: &Prototype) -> Result<SimilarityMap> {
    if p.vector.len() != f.dim {
        return Err(Error::input(format!(
            "prototype has dimension {}, features {}",
            p.vector.len(),
            f.dim
        )));
    }
    let pn = p.norm();
    if pn == 0.0 || !pn.is_finite() {
        return Err(Error::input("prototype must be a finite nonzero vector"));
    }
    let data = (0..f.height * f.width)
        .map(|i| {
            let v = f.at(i);
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if vn == 0.0 {
                0.0
            } else {
                let dot: f64 = v.iter().zip(&p.vector).map(|(a, b)| a * b).sum();
                (dot / (vn * pn)).clamp(-1.0, 1.0)
            }
        })
        .collect();
    SimilarityMap::new(f.height, f.width, data)
}

/// Result of Otsu thresholding over a uniform histogram of the value range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuThreshold {
    /// Last bin of the low class.
    pub bin: usize,
    /// Upper edge of `bin`.
    pub tau: f64,
    pub min: f64,
    pub max: f64,
}

/// Histogram bin of `v` for a range `[min, max]` split into [`OTSU_BINS`] bins.
#[inline]
pub fn histogram_bin(v: f64, min: f64, max: f64) -> usize {
    let t = ((v - min) / (max - min) * OTSU_BINS as f64).floor();
    (t.max(0.0) as usize).min(OTSU_BINS - 1)
}

/// Otsu's method on real values: bins are levels `0..256`, the between-class
/// variance is compared exactly in integer arithmetic, ties go to the lower bin.
pub fn otsu(values: &[f64]) -> Result<OtsuThreshold> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("cannot threshold non-finite values"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || max.partial_cmp(&min) != Some(std::cmp::Ordering::Greater) || !(max - min).is_finite() {
        return Err(Error::DegenerateMap);
    }
    let mut hist = [0u64; OTSU_BINS];
    for &v in values {
        hist[histogram_bin(v, min, max)] += 1;
    }
    let total = values.len() as u128;
    let sum_total: u128 = hist.iter().enumerate().map(|(k, &h)| k as u128 * h as u128).sum();

    // sigma_b^2 * N^2 = (N * s0 - sT * n0)^2 / (n0 * n1)
    let (mut n0, mut s0) = (0u128, 0u128);
    let mut best: Option<(usize, u128, u128)> = None;
    for (k, &h) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        n0 += h as u128;
        s0 += k as u128 * h as u128;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (total * s0).abs_diff(sum_total * n0);
        let num = diff * diff;
        let den = n0 * n1;
        let better = match best {
            None => true,
            Some((_, bn, bd)) => ratio_greater(num, den, bn, bd),
        };
        if better {
            best = Some((k, num, den));
        }
    }
    let (bin, _, _) = best.ok_or(Error::DegenerateMap)?;
    let tau = min + (bin + 1) as f64 * (max - min) / OTSU_BINS as f64;
    Ok(OtsuThreshold { bin, tau, min, max })
}

/// `a / b > c / d` for nonnegative integers, exact unless the products overflow.
fn ratio_greater(a: u128, b: u128, c: u128, d: u128) -> bool {
    match (a.checked_mul(d), c.checked_mul(b)) {
        (Some(l), Some(r)) => l > r,
        _ => (a as f64 / b as f64) > (c as f64 / d as f64),
    }
}

pub fn otsu_threshold_values(values: &[f64]) -> Result<f64> {
    otsu(values).map(|t| t.tau)
}

/// Otsu threshold of a similarity map; constant maps yield [`Error::DegenerateMap`].
pub fn otsu_threshold(s: &SimilarityMap) -> Result<f64> {
    otsu_threshold_values(&s.data)
}

/// Strict `s > tau` per pixel.
pub fn binarize(s: &SimilarityMap, tau: f64) -> Mask {
    Mask::new(s.height, s.width, s.data.iter().map(|&v| v > tau).collect())
        .expect("similarity map dimensions are valid")
}

/// `binarize(s, otsu(s))`, or an empty mask for degenerate maps.
pub fn otsu_mask(s: &SimilarityMap) -> Result<Option<Mask>> {
    match otsu_threshold(s) {
        Ok(tau) => Ok(Some(binarize(s, tau))),
        Err(Error::DegenerateMap) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Mean binary cross entropy between `sigmoid(s)` and `m`.
pub fn bce_loss(s: &SimilarityMap, m: &Mask) -> Result<f64> {
    bce_with_grad(s, m, 1.0).map(|(l, _)| l)
}

/// BCE on logits `s / temperature`; also returns `dL/ds` per pixel.
pub fn bce_with_grad(s: &SimilarityMap, m: &Mask, temperature: f64) -> Result<(f64, Vec<f64>)> {
    m.ensure_same_dims(s.dims())?;
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::input("temperature must be positive"));
    }
    let n = s.data.len() as f64;
    let mut loss = 0.0;
    let grad = s
        .data
        .iter()
        .zip(m.data())
        .map(|(&v, &on)| {
            let x = v / temperature;
            let y = if on { 1.0 } else { 0.0 };
            // softplus(x) - y * x, stable for large |x|
            loss += x.max(0.0) + (-x.abs()).exp().ln_1p() - y * x;
            (sigmoid(x) - y) / (n * temperature)
        })
        .collect();
    Ok((loss / n, grad))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fmap(h: usize, w: usize, d: usize, data: Vec<f64>) -> FeatureMap {
        FeatureMap::new(h, w, d, 1, data).unwrap()
    }

    #[test]
    fn map_examples() {
        let f = fmap(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let m = Mask::from_rows(&["10", "01"]).unwrap();
        assert_eq!(masked_average_pool(&f, &m).unwrap().vector, vec![2.5]);
        assert_eq!(masked_average_pool(&f, &Mask::ones(2, 2)).unwrap().vector, vec![2.5]);
        let single = Mask::from_rows(&["00", "10"]).unwrap();
        assert_eq!(masked_average_pool(&f, &single).unwrap().vector, vec![3.0]);
        assert!(matches!(masked_average_pool(&f, &Mask::zeros(2, 2)), Err(Error::EmptySupport)));
    }

    #[test]
    fn similarity_examples() {
        let p = Prototype { vector: vec![4.0, 3.0] };
        let f = fmap(1, 4, 2, vec![4.0, 3.0, -4.0, -3.0, 3.0, 4.0, 0.0, 0.0]);
        let s = similarity_map(&f, &p).unwrap();
        assert!((s.data[0] - 1.0).abs() < 1e-12);
        assert!((s.data[1] + 1.0).abs() < 1e-12);
        assert!((s.data[2] - 0.96).abs() < 1e-12);
        assert_eq!(s.data[3], 0.0);
        assert!(similarity_map(&f, &Prototype { vector: vec![0.0, 0.0] }).is_err());
    }

    #[test]
    fn otsu_separates_two_levels() {
        let mut v = vec![0.1; 50];
        v.extend(vec![0.9; 50]);
        let s = SimilarityMap::new(10, 10, v.clone()).unwrap();
        let tau = otsu_threshold(&s).unwrap();
        assert!(tau > 0.1 && tau < 0.9);
        let m = binarize(&s, tau);
        assert!(m.data().iter().zip(&v).all(|(&on, &x)| on == (x > 0.5)));
        // every bin between the two modes gives the same variance; lowest wins
        assert_eq!(otsu(&v).unwrap().bin, 0);
    }

    #[test]
    fn otsu_constant_is_degenerate() {
        let s = SimilarityMap::new(2, 2, vec![0.3; 4]).unwrap();
        assert!(matches!(otsu_threshold(&s), Err(Error::DegenerateMap)));
        assert_eq!(otsu_mask(&s).unwrap(), None);
    }

    #[test]
    fn binarize_examples() {
        let s = SimilarityMap::new(1, 2, vec![0.2, 0.8]).unwrap();
        assert_eq!(binarize(&s, 0.5), Mask::from_rows(&["01"]).unwrap());
        let full = SimilarityMap::new(1, 3, vec![-1.0, 0.0, 1.0]).unwrap();
        assert!(binarize(&full, 1.0).is_empty());
        assert_eq!(binarize(&full, -1.0 - 1e-9).count(), 3);
    }

    #[test]
    fn bce_closed_forms() {
        let m = Mask::from_rows(&["1100"]).unwrap();
        let s = SimilarityMap::new(1, 4, vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((bce_loss(&s, &m).unwrap() - expected).abs() < 1e-12);
        let zero = SimilarityMap::new(1, 4, vec![0.0; 4]).unwrap();
        assert!((bce_loss(&zero, &m).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(&zero, &m.inverted()).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_flip_symmetry() {
        let m = Mask::from_rows(&["1010", "0110"]).unwrap();
        let s = SimilarityMap::new(2, 4, vec![0.3, -0.2, 0.9, 0.1, -0.7, 0.4, 0.0, 0.5]).unwrap();
        let neg = SimilarityMap::new(2, 4, s.data.iter().map(|v| -v).collect()).unwrap();
        let a = bce_loss(&s, &m).unwrap();
        let b = bce_loss(&neg, &m.inverted()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bce_gradient_matches_finite_difference() {
        let m = Mask::from_rows(&["101"]).unwrap();
        let base = vec![0.3, -0.4, 0.8];
        let s = SimilarityMap::new(1, 3, base.clone()).unwrap();
        let (_, g) = bce_with_grad(&s, &m, 0.5).unwrap();
        for i in 0..3 {
            let mut plus = base.clone();
            plus[i] += 1e-6;
            let mut minus = base.clone();
            minus[i] -= 1e-6;
            let lp = bce_with_grad(&SimilarityMap::new(1, 3, plus).unwrap(), &m, 0.5).unwrap().0;
            let lm = bce_with_grad(&SimilarityMap::new(1, 3, minus).unwrap(), &m, 0.5).unwrap().0;
            assert!(((lp - lm) / 2e-6 - g[i]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn similarity_scale_invariant(
            data in proptest::collection::vec(-5.0f64..5.0, 12),
            p in proptest::collection::vec(-5.0f64..5.0, 3),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(p.iter().any(|v| v.abs() > 1e-3));
            let f = fmap(2, 2, 3, data);
            let a = similarity_map(&f, &Prototype { vector: p.clone() }).unwrap();
            let b = similarity_map(&f, &Prototype { vector: p.iter().map(|v| v * c).collect() }).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((x - y).abs() < 1e-6);
                prop_assert!(x.abs() <= 1.0 + 1e-6);
            }
        }

        #[test]
        fn two_level_maps_recover_high_set(
            bits in proptest::collection::vec(any::<bool>(), 2..64),
            lo in -1.0f64..0.0,
            gap in 0.01f64..1.0,
        ) {
            prop_assume!(bits.iter().any(|&b| b) && bits.iter().any(|&b| !b));
            let vals: Vec<f64> = bits.iter().map(|&b| if b { lo + gap } else { lo }).collect();
            let s = SimilarityMap::new(1, vals.len(), vals).unwrap();
            let m = binarize(&s, otsu_threshold(&s).unwrap());
            prop_assert_eq!(m.data(), &bits[..]);
        }
    }
}
