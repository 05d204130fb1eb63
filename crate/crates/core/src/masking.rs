//! Per-segment perturbedness masks and their smoothing.
//!
//! Masks use the perturbedness convention: 1 means the pixel is fully
//! replaced by the perturbation color, 0 means it is untouched.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::segmentation::grid_segment;
use crate::types::{PixelMap, SegmentMap, SegmentMaskStack, SmoothingConfig, SmoothingMethod};

/// Unsmoothed 0/1 indicator mask for every segment.
pub fn indicator_masks(segments: &SegmentMap) -> SegmentMaskStack {
    let n = segments.height * segments.width;
    let mut masks = vec![vec![0.0; n]; segments.n_segments];
    for (p, &l) in segments.labels.iter().enumerate() {
        masks[l as usize][p] = 1.0;
    }
    SegmentMaskStack {
        n_segments: segments.n_segments,
        height: segments.height,
        width: segments.width,
        masks,
        smoothing: SmoothingConfig::NONE,
    }
}

/// Build the mask stack for `segments` under `smoothing`.
pub fn build_masks(segments: &SegmentMap, smoothing: &SmoothingConfig) -> Result<SegmentMaskStack> {
    let stack = indicator_masks(segments);
    match smoothing.method {
        SmoothingMethod::None => Ok(stack),
        SmoothingMethod::GaussianFilter => {
            let sigma = smoothing
                .sigma
                .ok_or_else(|| invalid("gaussian smoothing needs sigma"))?;
            smooth_gaussian(&stack, sigma)
        }
        SmoothingMethod::BilinearUpsample => {
            let shape = smoothing
                .grid_shape
                .ok_or_else(|| invalid("bilinear smoothing needs a grid shape"))?;
            smooth_bilinear(&stack, shape)
        }
    }
}

/// Upsample each segment's one-hot cell of a `rows`×`cols` grid to the
/// stack's resolution, with cell centers aligned to pixel centers and
/// edge values held constant beyond the outermost centers.
///
/// Only defined for stacks built from the matching grid segmentation.
pub fn smooth_bilinear(
    stack: &SegmentMaskStack,
    grid_shape: (usize, usize),
) -> Result<SegmentMaskStack> {
    let (rows, cols) = grid_shape;
    let (h, w) = (stack.height, stack.width);
    if stack.smoothing.method != SmoothingMethod::None || !derives_from_grid(stack, rows, cols) {
        return Err(invalid("bilinear smoothing requires a grid"));
    }
    let wy = axis_weights(h, rows);
    let wx = axis_weights(w, cols);
    let masks = (0..rows * cols)
        .into_par_iter()
        .map(|s| {
            let (i, j) = (s / cols, s % cols);
            let mut m = vec![0.0; h * w];
            for r in 0..h {
                let a = wy[r * rows + i];
                if a == 0.0 {
                    continue;
                }
                for c in 0..w {
                    m[r * w + c] = a * wx[c * cols + j];
                }
            }
            m
        })
        .collect();
    Ok(SegmentMaskStack {
        n_segments: stack.n_segments,
        height: h,
        width: w,
        masks,
        smoothing: SmoothingConfig::bilinear(rows, cols),
    })
}

fn derives_from_grid(stack: &SegmentMaskStack, rows: usize, cols: usize) -> bool {
    if stack.n_segments != rows * cols {
        return false;
    }
    let Ok(grid) = grid_segment(stack.height, stack.width, rows, cols) else {
        return false;
    };
    stack.masks.iter().enumerate().all(|(s, m)| {
        m.iter()
            .zip(&grid.labels)
            .all(|(&v, &l)| v == if l as usize == s { 1.0 } else { 0.0 })
    })
}

/// Interpolation weight of grid cell `i` at each output pixel, laid out as
/// `out[p * cells + i]`.
fn axis_weights(n_out: usize, cells: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_out * cells];
    for p in 0..n_out {
        let u =
            ((p as f64 + 0.5) * cells as f64 / n_out as f64 - 0.5).clamp(0.0, (cells - 1) as f64);
        let i0 = u.floor() as usize;
        let frac = u - i0 as f64;
        out[p * cells + i0] += 1.0 - frac;
        if i0 + 1 < cells {
            out[p * cells + i0 + 1] += frac;
        }
    }
    out
}

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`, radius = ceil(3σ).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(data: &[f64], height: usize, width: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; height * width];
    for r in 0..height {
        let row = &data[r * width..(r + 1) * width];
        for c in 0..width {
            let mut acc = 0.0;
            for (k, &t) in kernel.iter().enumerate() {
                acc += t * row[reflect(c as isize + k as isize - radius, width)];
            }
            tmp[r * width + c] = acc;
        }
    }
    let mut out = vec![0.0; height * width];
    for r in 0..height {
        for (k, &t) in kernel.iter().enumerate() {
            let src = reflect(r as isize + k as isize - radius, height);
            let src_row = &tmp[src * width..(src + 1) * width];
            let dst_row = &mut out[r * width..(r + 1) * width];
            for (d, &s) in dst_row.iter_mut().zip(src_row) {
                *d += t * s;
            }
        }
    }
    out
}

pub fn smooth_gaussian(stack: &SegmentMaskStack, sigma: f64) -> Result<SegmentMaskStack> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let masks = stack
        .masks
        .par_iter()
        .map(|m| {
            gaussian_blur(m, stack.height, stack.width, &kernel)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    Ok(SegmentMaskStack {
        n_segments: stack.n_segments,
        height: stack.height,
        width: stack.width,
        masks,
        smoothing: SmoothingConfig::gaussian(sigma),
    })
}

/// Perturbedness map of one sample: the sum of the masks of the perturbed
/// segments, clipped to [0, 1].
pub fn combine(stack: &SegmentMaskStack, sample: &[bool]) -> Result<PixelMap> {
    if sample.len() != stack.n_segments {
        return Err(invalid(format!(
            "sample has {} entries, stack has {} segments",
            sample.len(),
            stack.n_segments
        )));
    }
    let mut out = vec![0.0; stack.n_pixels()];
    for (m, _) in stack.masks.iter().zip(sample).filter(|(_, &on)| on) {
        for (acc, &v) in out.iter_mut().zip(m) {
            *acc += v;
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(PixelMap {
        height: stack.height,
        width: stack.width,
        data: out,
    })
}
