//! Deterministic template-matching tracker.
//!
//! Unprompted frames are labelled in waves outward from the prompted ones.
//! Each new frame takes the mask of its nearest labelled neighbour (earlier
//! frame on ties): the source mask's bounding box is tiled into patches
//! anchored at its top-left corner, every patch touching the foreground is
//! matched into the new frame by normalized cross-correlation within the
//! search radius, the per-patch displacements are median-filtered and the
//! mask is splatted along them and closed.
//!
//! Propagated masks inherit the prompted frame they descend from. If the
//! colour under a propagated mask drifts away from that prompt's foreground
//! colour by more than `presence_ratio` times the prompt's
//! foreground/background contrast, the object is declared lost and the mask
//! cleared.

use serde::{Deserialize, Serialize};

use super::{TrackResult, Tracker, TrackerSession};
use crate::error::Result;
use crate::image::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockTrackerConfig {
    pub patch_size: usize,
    pub search_radius: usize,
    pub presence_ratio: f64,
    /// Width of the background ring around a prompt used for its contrast.
    pub ring_width: usize,
}

impl Default for MockTrackerConfig {
    fn default() -> Self {
        Self { patch_size: 32, search_radius: 16, presence_ratio: 0.5, ring_width: 4 }
    }
}

impl MockTrackerConfig {
    /// Scales patch size and radius from their 512-pixel defaults.
    pub fn for_resolution(size: usize) -> Self {
        let s = size as f64 / 512.0;
        let base = Self::default();
        Self {
            patch_size: ((base.patch_size as f64 * s).round() as usize).max(4),
            search_radius: ((base.search_radius as f64 * s).round() as usize).max(2),
            ..base
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockTracker {
    cfg: MockTrackerConfig,
}

#[derive(Debug, Clone)]
struct Appearance {
    fg: [f64; 3],
    contrast: f64,
}

impl MockTracker {
    pub fn new(cfg: MockTrackerConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &MockTrackerConfig {
        &self.cfg
    }

    fn appearance(&self, frame: &Image, mask: &Mask) -> Option<Appearance> {
        let fg = mean_color(frame, mask)?;
        let ring = Mask::new(
            mask.height(),
            mask.width(),
            mask.dilated(self.cfg.ring_width)
                .data()
                .iter()
                .zip(mask.data())
                .map(|(&d, &m)| d && !m)
                .collect(),
        )
        .expect("same dimensions");
        let contrast = mean_color(frame, &ring).map_or(f64::INFINITY, |bg| dist(&fg, &bg));
        Some(Appearance { fg, contrast })
    }

    fn step(&self, src: &Image, src_mask: &Mask, dst: &Image) -> Mask {
        let Some((y0, x0, y1, x1)) = src_mask.bbox() else {
            return Mask::zeros(dst.height(), dst.width());
        };
        let p = self.cfg.patch_size;
        let rows = (y1 - y0) / p + 1;
        let cols = (x1 - x0) / p + 1;

        // per-patch displacement, None where the patch has no foreground or no texture
        let mut disp: Vec<Option<(isize, isize)>> = vec![None; rows * cols];
        let mut occupied = vec![false; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let (py, px) = (y0 + r * p, x0 + c * p);
                let has_fg = (py..(py + p).min(src.height()))
                    .any(|y| (px..(px + p).min(src.width())).any(|x| src_mask.get(y, x)));
                if has_fg {
                    occupied[r * cols + c] = true;
                    disp[r * cols + c] = self.match_patch(src, dst, py as isize, px as isize);
                }
            }
        }

        let known: Vec<(isize, isize)> = disp.iter().flatten().copied().collect();
        let fallback = median_pair(&known).unwrap_or((0, 0));
        let mut smoothed = vec![(0isize, 0isize); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                if !occupied[r * cols + c] {
                    continue;
                }
                let mut near = Vec::with_capacity(9);
                for rr in r.saturating_sub(1)..(r + 2).min(rows) {
                    for cc in c.saturating_sub(1)..(c + 2).min(cols) {
                        if let Some(d) = disp[rr * cols + cc] {
                            near.push(d);
                        }
                    }
                }
                smoothed[r * cols + c] = median_pair(&near).unwrap_or(fallback);
            }
        }

        let (h, w) = dst.dims();
        let mut out = Mask::zeros(h, w);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if !src_mask.get(y, x) {
                    continue;
                }
                let (dy, dx) = smoothed[((y - y0) / p) * cols + (x - x0) / p];
                let (ty, tx) = (y as isize + dy, x as isize + dx);
                if ty >= 0 && tx >= 0 && (ty as usize) < h && (tx as usize) < w {
                    out.set(ty as usize, tx as usize, true);
                }
            }
        }
        out.dilated(1).eroded(1)
    }

    /// Best NCC displacement for the patch at `(py, px)`; ties prefer small shifts.
    fn match_patch(&self, src: &Image, dst: &Image, py: isize, px: isize) -> Option<(isize, isize)> {
        let p = self.cfg.patch_size as isize;
        let template = patch_values(src, py, px, p);
        let t_mean = template.iter().sum::<f64>() / template.len() as f64;
        let t: Vec<f64> = template.iter().map(|v| v - t_mean).collect();
        let t_norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        if t_norm < 1e-9 {
            return None;
        }
        let r = self.cfg.search_radius as isize;
        let mut best: Option<((isize, isize), f64, isize)> = None;
        for dy in -r..=r {
            for dx in -r..=r {
                let cand = patch_values(dst, py + dy, px + dx, p);
                let c_mean = cand.iter().sum::<f64>() / cand.len() as f64;
                let mut cross = 0.0;
                let mut c_sq = 0.0;
                for (a, b) in t.iter().zip(&cand) {
                    let b = b - c_mean;
                    cross += a * b;
                    c_sq += b * b;
                }
                let score = if c_sq < 1e-18 { 0.0 } else { cross / (t_norm * c_sq.sqrt()) };
                let dist2 = dy * dy + dx * dx;
                let better = match best {
                    None => true,
                    Some((_, s, d2)) => score > s + 1e-12 || ((score - s).abs() <= 1e-12 && dist2 < d2),
                };
                if better {
                    best = Some(((dy, dx), score, dist2));
                }
            }
        }
        best.map(|(d, _, _)| d)
    }
}

/// `p x p x 3` block at `(y, x)`, zero outside the frame.
fn patch_values(img: &Image, y: isize, x: isize, p: isize) -> Vec<f64> {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let mut out = Vec::with_capacity((p * p * 3) as usize);
    for yy in y..y + p {
        for xx in x..x + p {
            if yy < 0 || xx < 0 || yy >= h || xx >= w {
                out.extend([0.0; 3]);
            } else {
                for c in 0..3 {
                    out.push(img.rgb(yy as usize, xx as usize, c) as f64);
                }
            }
        }
    }
    out
}

fn median_pair(v: &[(isize, isize)]) -> Option<(isize, isize)> {
    if v.is_empty() {
        return None;
    }
    let med = |mut xs: Vec<isize>| {
        xs.sort_unstable();
        xs[(xs.len() - 1) / 2]
    };
    Some((med(v.iter().map(|d| d.0).collect()), med(v.iter().map(|d| d.1).collect())))
}

fn mean_color(img: &Image, mask: &Mask) -> Option<[f64; 3]> {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if mask.get(y, x) {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += img.rgb(y, x, c) as f64;
                }
                n += 1;
            }
        }
    }
    (n > 0).then(|| acc.map(|a| a / n as f64))
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

impl Tracker for MockTracker {
    fn propagate(&mut self, session: &TrackerSession) -> Result<TrackResult> {
        let seq = session.sequence();
        let n = seq.len();
        let (h, w) = seq.dims();
        let mut labels: Vec<Option<Mask>> = seq.prompts().to_vec();
        // prompt each label descends from
        let mut anchor: Vec<Option<usize>> = (0..n).map(|i| labels[i].as_ref().map(|_| i)).collect();
        let appearances: Vec<Option<Appearance>> = (0..n)
            .map(|i| labels[i].as_ref().and_then(|m| self.appearance(seq.frame(i), m)))
            .collect();

        loop {
            let wave: Vec<(usize, usize)> = (0..n)
                .filter(|&i| labels[i].is_none())
                .filter_map(|i| {
                    if i > 0 && labels[i - 1].is_some() {
                        Some((i, i - 1))
                    } else if i + 1 < n && labels[i + 1].is_some() {
                        Some((i, i + 1))
                    } else {
                        None
                    }
                })
                .collect();
            if wave.is_empty() {
                break;
            }
            let computed: Vec<(usize, usize, Mask)> = wave
                .iter()
                .map(|&(i, src)| {
                    let src_mask = labels[src].as_ref().expect("source is labelled");
                    let mut m = self.step(seq.frame(src), src_mask, seq.frame(i));
                    let a = anchor[src].expect("labelled frames have an anchor");
                    if !m.is_empty() && !self.present(seq.frame(i), &m, appearances[a].as_ref()) {
                        m = Mask::zeros(h, w);
                    }
                    (i, a, m)
                })
                .collect();
            for (i, a, m) in computed {
                labels[i] = Some(m);
                anchor[i] = Some(a);
            }
        }

        Ok(TrackResult {
            masks: labels.into_iter().map(|m| m.unwrap_or_else(|| Mask::zeros(h, w))).collect(),
        })
    }
}

impl MockTracker {
    fn present(&self, frame: &Image, mask: &Mask, anchor: Option<&Appearance>) -> bool {
        let Some(anchor) = anchor else {
            return false;
        };
        let Some(fg) = mean_color(frame, mask) else {
            return false;
        };
        dist(&fg, &anchor.fg) <= self.cfg.presence_ratio * anchor.contrast
    }
}
