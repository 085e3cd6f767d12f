//! Raster types: color images with values in `[0, 1]` and binary masks.

use std::path::Path;

use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};

/// Row-major `H x W x C` image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input(format!("image size {height}x{width} is empty")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::input(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::input(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::input(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from a per-pixel generator; values are clamped into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = f(y, x, c);
                    data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Value of channel `c` with three-channel semantics (gray images replicate).
    #[inline]
    pub fn rgb(&self, y: usize, x: usize, c: usize) -> f32 {
        if self.channels == 1 {
            self.get(y, x, 0)
        } else {
            self.get(y, x, c)
        }
    }

    /// Converts to three channels, replicating gray values.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image { height: self.height, width: self.width, channels: 3, data }
    }

    /// Rounds every value to the nearest 8-bit level, which is what a PNG round trip stores.
    pub fn quantized(&self) -> Image {
        let data = self.data.iter().map(|&v| quantize(v) as f32 / 255.0).collect();
        Image { data, ..*self }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let dynamic = image::open(path.as_ref())?;
        let img = match dynamic.color() {
            image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 => {
                let gray = dynamic.to_luma8();
                let data = gray.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
                Self::new(gray.height() as usize, gray.width() as usize, 1, data)?
            }
            _ => {
                let rgb = dynamic.to_rgb8();
                let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
                Self::new(rgb.height() as usize, rgb.width() as usize, 3, data)?
            }
        };
        Ok(img)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            let raw = self.data.iter().map(|&v| quantize(v)).collect();
            GrayImage::from_raw(w, h, raw)
                .expect("buffer size checked at construction")
                .save(path.as_ref())?;
        } else {
            self.to_rgb8().save(path.as_ref())?;
        }
        Ok(())
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let rgb = self.to_rgb();
        let raw = rgb.data.iter().map(|&v| quantize(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size checked at construction")
    }

    pub fn from_rgb8(img: &RgbImage) -> Image {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Image { height: img.height() as usize, width: img.width() as usize, channels: 3, data }
    }
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary `H x W` mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input(format!("mask size {height}x{width} is empty")));
        }
        if data.len() != height * width {
            return Err(Error::input(format!(
                "mask buffer has {} values, expected {}",
                data.len(),
                height * width
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        Self { height, width, data: vec![true; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    /// Parses rows of `0`/`1` characters, e.g. `["0110", "0110"]`.
    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(height * width);
        for row in rows {
            if row.len() != width {
                return Err(Error::input("ragged mask rows"));
            }
            for ch in row.chars() {
                match ch {
                    '0' => data.push(false),
                    '1' => data.push(true),
                    other => return Err(Error::input(format!("mask character {other:?}"))),
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-frame positions read as background.
    #[inline]
    pub fn get_signed(&self, y: isize, x: isize) -> bool {
        y >= 0
            && x >= 0
            && (y as usize) < self.height
            && (x as usize) < self.width
            && self.data[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn ensure_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::DimensionMismatch { left: self.dims(), right: other });
        }
        Ok(())
    }

    pub fn inverted(&self) -> Mask {
        Mask { data: self.data.iter().map(|v| !v).collect(), ..*self }
    }

    /// Inclusive bounding box `(y0, x0, y1, x1)` of the foreground.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    bb = Some(match bb {
                        None => (y, x, y, x),
                        Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
                    });
                }
            }
        }
        bb
    }

    /// Square-neighbourhood dilation with the given radius.
    pub fn dilated(&self, radius: usize) -> Mask {
        self.morph(radius, true)
    }

    pub fn eroded(&self, radius: usize) -> Mask {
        self.morph(radius, false)
    }

    fn morph(&self, radius: usize, dilate: bool) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as isize;
        // separable: rows then columns; out-of-frame counts as background
        let pass = |src: &Mask, horizontal: bool| {
            Mask::from_fn(src.height, src.width, |y, x| {
                let (y, x) = (y as isize, x as isize);
                let mut hit = !dilate;
                for d in -r..=r {
                    let v = if horizontal { src.get_signed(y, x + d) } else { src.get_signed(y + d, x) };
                    if dilate && v {
                        hit = true;
                        break;
                    }
                    if !dilate && !v {
                        hit = false;
                        break;
                    }
                }
                hit
            })
        };
        pass(&pass(self, true), false)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let gray = image::open(path.as_ref())?.to_luma8();
        let data = gray.pixels().map(|p| p.0[0] >= 128).collect();
        Self::new(gray.height() as usize, gray.width() as usize, data)
    }

    /// Writes a single-channel PNG: 0 background, 255 foreground.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for (i, p) in img.pixels_mut().enumerate() {
            *p = Luma([if self.data[i] { 255 } else { 0 }]);
        }
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Resizes an image bilinearly and its mask by nearest neighbour.
pub fn resize_pair(img: &Image, mask: &Mask, size: (usize, usize)) -> Result<(Image, Mask)> {
    mask.ensure_same_dims(img.dims())?;
    Ok((resize_image(img, size)?, resize_mask(mask, size)?))
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_image(img: &Image, (h, w): (usize, usize)) -> Result<Image> {
    if h == 0 || w == 0 {
        return Err(Error::input(format!("target size {h}x{w} must be positive")));
    }
    if (h, w) == img.dims() {
        return Ok(img.clone());
    }
    let sy = img.height as f64 / h as f64;
    let sx = img.width as f64 / w as f64;
    let c = img.channels;
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let ty = (fy - y0 as f64) as f32;
        for x in 0..w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let tx = (fx - x0 as f64) as f32;
            for ch in 0..c {
                let top = img.get(y0, x0, ch) * (1.0 - tx) + img.get(y0, x1, ch) * tx;
                let bottom = img.get(y1, x0, ch) * (1.0 - tx) + img.get(y1, x1, ch) * tx;
                data.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(h, w, c, data)
}

/// Nearest-neighbour resize: destination pixel `i` samples source `floor((i + 0.5) * src / dst)`.
pub fn resize_mask(mask: &Mask, (h, w): (usize, usize)) -> Result<Mask> {
    if h == 0 || w == 0 {
        return Err(Error::input(format!("target size {h}x{w} must be positive")));
    }
    if (h, w) == mask.dims() {
        return Ok(mask.clone());
    }
    let map = |i: usize, src: usize, dst: usize| (((2 * i + 1) * src) / (2 * dst)).min(src - 1);
    Ok(Mask::from_fn(h, w, |y, x| {
        mask.get(map(y, mask.height, h), map(x, mask.width, w))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range_values() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(Image::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn identity_resize_is_unchanged() {
        let img = Image::from_fn(3, 5, 3, |y, x, c| (y * 5 + x + c) as f32 / 30.0).unwrap();
        let mask = Mask::from_fn(3, 5, |y, x| (x + y) % 2 == 0);
        let (i2, m2) = resize_pair(&img, &mask, (3, 5)).unwrap();
        assert_eq!(i2, img);
        assert_eq!(m2, mask);
    }

    #[test]
    fn checkerboard_upsamples_to_blocks() {
        let mask = Mask::from_rows(&["10", "01"]).unwrap();
        let up = resize_mask(&mask, (4, 4)).unwrap();
        // oracle: each destination pixel maps to source (y / 2, x / 2)
        let expected = Mask::from_fn(4, 4, |y, x| mask.get(y / 2, x / 2));
        assert_eq!(up, expected);
        assert_eq!(up, Mask::from_rows(&["1100", "1100", "0011", "0011"]).unwrap());
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::filled(7, 3, 3, 0.37).unwrap();
        let mask = Mask::ones(7, 3);
        let (r, _) = resize_pair(&img, &mask, (11, 13)).unwrap();
        assert_eq!(r.dims(), (11, 13));
        assert!(r.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn nonpositive_size_is_rejected() {
        let img = Image::filled(2, 2, 1, 0.0).unwrap();
        let mask = Mask::zeros(2, 2);
        assert!(matches!(resize_pair(&img, &mask, (0, 4)), Err(Error::Input(_))));
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        let img = Image::filled(2, 2, 1, 0.0).unwrap();
        let mask = Mask::zeros(2, 3);
        assert!(matches!(
            resize_pair(&img, &mask, (4, 4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dilate_and_erode() {
        let m = Mask::from_rows(&["00000", "00000", "00100", "00000", "00000"]).unwrap();
        let d = m.dilated(1);
        assert_eq!(d.count(), 9);
        assert_eq!(d.eroded(1), m);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mask = Mask::from_rows(&["0110", "1001"]).unwrap();
        let p = dir.path().join("m.png");
        mask.save(&p).unwrap();
        assert_eq!(Mask::load(&p).unwrap(), mask);

        let img = Image::from_fn(4, 6, 3, |y, x, c| ((y + x * c) % 7) as f32 / 7.0).unwrap();
        let p = dir.path().join("i.png");
        img.save(&p).unwrap();
        assert_eq!(Image::load(&p).unwrap(), img.quantized());
    }

    proptest::proptest! {
        #[test]
        fn resize_keeps_range(h in 1usize..9, w in 1usize..9, th in 1usize..17, tw in 1usize..17, seed in 0u64..1000) {
            let img = Image::from_fn(h, w, 3, |y, x, c| (((y * 31 + x * 17 + c * 7) as u64 ^ seed) % 101) as f32 / 100.0).unwrap();
            let mask = Mask::from_fn(h, w, |y, x| ((y * 3 + x) as u64 + seed) % 3 == 0);
            let (ri, rm) = resize_pair(&img, &mask, (th, tw)).unwrap();
            proptest::prop_assert!(ri.data().iter().all(|v| (0.0..=1.0).contains(v)));
            proptest::prop_assert_eq!(rm.dims(), (th, tw));
        }
    }
}
