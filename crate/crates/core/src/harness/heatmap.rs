//! Attribution heatmaps: the map is min-max normalized onto a blue (low)
//! to red (high) gradient and blended at alpha 0.5 over the image.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{invalid, Result};
use crate::types::{ColorSpace, Image, PixelMap};

pub const LOW_COLOR: [u8; 3] = [0, 0, 255];
pub const HIGH_COLOR: [u8; 3] = [255, 0, 0];
pub const ALPHA: f64 = 0.5;

/// 8-bit RGB view of `image`. Normalized images are min-max stretched.
pub fn to_rgb8(image: &Image) -> RgbImage {
    let (lo, hi) = match image.space {
        ColorSpace::Unit0To1 => (0.0, 1.0),
        ColorSpace::Raw0To255 => (0.0, 255.0),
        ColorSpace::NormalizedZeroMean => image
            .data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            }),
    };
    let span = if hi > lo { hi - lo } else { 1.0 };
    let to8 = |v: f32| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8;
    RgbImage::from_fn(image.width as u32, image.height as u32, |x, y| {
        let px = image.pixel(y as usize * image.width + x as usize);
        if image.channels == 3 {
            Rgb([to8(px[0]), to8(px[1]), to8(px[2])])
        } else {
            let g = to8(px[0]);
            Rgb([g, g, g])
        }
    })
}

pub fn heatmap_rgb(map: &PixelMap, base: &Image) -> Result<RgbImage> {
    if map.height != base.height || map.width != base.width {
        return Err(invalid("heatmap and image dimensions differ"));
    }
    let (lo, hi) = map.min_max().unwrap_or((0.0, 0.0));
    let mut out = to_rgb8(base);
    for (i, px) in out.pixels_mut().enumerate() {
        // A constant map has no spread; it renders as the gradient midpoint.
        let t = if hi > lo {
            (map.data[i] - lo) / (hi - lo)
        } else {
            0.5
        };
        for c in 0..3 {
            let overlay = LOW_COLOR[c] as f64 * (1.0 - t) + HIGH_COLOR[c] as f64 * t;
            px[c] = ((1.0 - ALPHA) * px[c] as f64 + ALPHA * overlay).round() as u8;
        }
    }
    Ok(out)
}

pub fn render_heatmap(map: &PixelMap, base: &Image, path: &Path) -> Result<()> {
    heatmap_rgb(map, base)?.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
