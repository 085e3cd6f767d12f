//! Side-by-side strip of a tracked pseudo video.
//!
//! Ground truth is drawn in magenta, predictions in cyan, and prompted frames
//! get a green dashed border.

use image::{Rgb, RgbImage};
use vidref_core::{Mask, PseudoVideoSequence};

pub const GROUND_TRUTH: [u8; 3] = [200, 0, 200];
pub const PREDICTION: [u8; 3] = [0, 200, 200];
pub const PROMPT_BORDER: [u8; 3] = [0, 200, 0];
const GUTTER_FILL: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, Copy)]
pub struct StripStyle {
    pub gutter: usize,
    pub border: usize,
    pub dash: usize,
    pub dash_gap: usize,
    /// Overlay opacity.
    pub alpha: f32,
}

impl Default for StripStyle {
    fn default() -> Self {
        Self { gutter: 4, border: 2, dash: 6, dash_gap: 4, alpha: 0.5 }
    }
}

/// `(1 - alpha) * px + alpha * color`, rounded per channel.
pub fn blend(px: [u8; 3], color: [u8; 3], alpha: f32) -> [u8; 3] {
    std::array::from_fn(|c| ((1.0 - alpha) * px[c] as f32 + alpha * color[c] as f32).round() as u8)
}

/// Strip width for `n` panels of width `w`.
pub fn strip_width(w: usize, n: usize, gutter: usize) -> usize {
    w * n + gutter * n.saturating_sub(1)
}

/// Renders every frame left to right.
///
/// `masks` are the tracker outputs; frame 0 shows `reference_gt` instead of its
/// prediction and the last frame shows `target_gt` under the prediction.
pub fn render_strip(
    seq: &PseudoVideoSequence,
    masks: &[Mask],
    reference_gt: Option<&Mask>,
    target_gt: Option<&Mask>,
    style: &StripStyle,
) -> RgbImage {
    let (h, w) = seq.dims();
    let n = seq.len();
    let width = strip_width(w, n, style.gutter);
    let mut out = RgbImage::from_pixel(width as u32, h as u32, Rgb(GUTTER_FILL));
    for i in 0..n {
        let mut panel = seq.frame(i).to_rgb8();
        let gt = match i {
            0 => reference_gt,
            _ if i == n - 1 => target_gt,
            _ => None,
        };
        if let Some(m) = gt {
            overlay(&mut panel, m, GROUND_TRUTH, style.alpha);
        }
        if i > 0 {
            if let Some(m) = masks.get(i) {
                overlay(&mut panel, m, PREDICTION, style.alpha);
            }
        }
        if seq.prompt(i).is_some() {
            dashed_border(&mut panel, style);
        }
        let x0 = (i * (w + style.gutter)) as u32;
        for (x, y, p) in panel.enumerate_pixels() {
            out.put_pixel(x0 + x, y, *p);
        }
    }
    out
}

fn overlay(panel: &mut RgbImage, mask: &Mask, color: [u8; 3], alpha: f32) {
    if mask.dims() != (panel.height() as usize, panel.width() as usize) {
        log::warn!("overlay mask {:?} does not match panel size, skipped", mask.dims());
        return;
    }
    for (x, y, p) in panel.enumerate_pixels_mut() {
        if mask.get(y as usize, x as usize) {
            p.0 = blend(p.0, color, alpha);
        }
    }
}

/// Dashes run along the perimeter, so corners stay continuous.
fn dashed_border(panel: &mut RgbImage, style: &StripStyle) {
    let (w, h) = (panel.width() as usize, panel.height() as usize);
    let period = style.dash + style.dash_gap;
    for y in 0..h {
        for x in 0..w {
            let depth = x.min(y).min(w - 1 - x).min(h - 1 - y);
            if depth >= style.border {
                continue;
            }
            // arc length of the nearest perimeter point
            let along = if y == depth || y == h - 1 - depth { x } else { w + y };
            if along % period < style.dash {
                panel.put_pixel(x as u32, y as u32, Rgb(PROMPT_BORDER));
            }
        }
    }
}

/// Number of panels whose border contains prompt green.
pub fn outlined_panels(strip: &RgbImage, panel_width: usize, panels: usize, gutter: usize) -> Vec<usize> {
    (0..panels)
        .filter(|&i| {
            let x0 = i * (panel_width + gutter);
            (0..panel_width).any(|x| strip.get_pixel((x0 + x) as u32, 0).0 == PROMPT_BORDER)
        })
        .collect()
}
