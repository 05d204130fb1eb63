//! Image partitioning: regular grids and SLIC superpixels.

mod lab;
mod slic;

pub use lab::srgb_to_lab;
pub use slic::{slic_segment, SlicOutcome, SlicParams};

use crate::error::{invalid, Result};
use crate::types::SegmentMap;

/// Split an `height`×`width` image into `rows`×`cols` cells.
///
/// Pixel `(r, c)` is labeled `floor(r·rows/height)·cols + floor(c·cols/width)`.
pub fn grid_segment(height: usize, width: usize, rows: usize, cols: usize) -> Result<SegmentMap> {
    if rows == 0 || cols == 0 {
        return Err(invalid("grid needs at least one row and one column"));
    }
    if rows > height || cols > width {
        return Err(invalid(format!(
            "a {rows}x{cols} grid does not fit a {height}x{width} image"
        )));
    }
    if rows * cols < 2 {
        return Err(invalid("a grid segmentation needs at least 2 cells"));
    }
    let mut labels = Vec::with_capacity(height * width);
    for r in 0..height {
        let gr = r * rows / height;
        for c in 0..width {
            let gc = c * cols / width;
            labels.push((gr * cols + gc) as u32);
        }
    }
    SegmentMap::new(height, width, labels, rows * cols)
}

/// Whether `segments` is exactly the `rows`×`cols` grid of its dimensions.
pub fn is_grid(segments: &SegmentMap, rows: usize, cols: usize) -> bool {
    match grid_segment(segments.height, segments.width, rows, cols) {
        Ok(g) => g.labels == segments.labels,
        Err(_) => false,
    }
}

/// Relabel so ids are dense and assigned in first-occurrence scan order.
pub(crate) fn relabel_dense(labels: &[u32]) -> (Vec<u32>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|&l| {
            let next = map.len() as u32;
            *map.entry(l).or_insert(next)
        })
        .collect();
    (out, map.len())
}
