//! Per-segment attribution from (samples, outputs) pairs and its projection
//! to per-pixel maps.

mod averages;
pub mod lstsq;
mod surrogate;

pub use averages::{attribute_ciu, attribute_pda, attribute_rise, CiuMode, CiuWeights};
pub use surrogate::{fit_kernel_shap, fit_lime, shapley_kernel, SurrogateFit};

use crate::error::{invalid, Result};
use crate::types::{AttributionResult, Method, PixelMap, SampleSet, SegmentMaskStack};

/// Model outputs for the two reference inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct References {
    /// Explained-class score on the unperturbed image (Y).
    pub unperturbed: f64,
    /// Explained-class score with every segment perturbed.
    pub fully_perturbed: f64,
}

pub fn attribute(
    method: Method,
    samples: &SampleSet,
    outputs: &[f64],
    refs: References,
) -> Result<AttributionResult> {
    let mut flags = Vec::new();
    let segment_weights = match method {
        Method::Pda => attribute_pda(samples, outputs, refs.unperturbed)?,
        Method::Rise => attribute_rise(samples, outputs)?,
        Method::Ciu => {
            let mode = CiuMode::for_origin(samples.origin)?;
            let out = attribute_ciu(samples, outputs, refs.unperturbed, mode)?;
            if out.degenerate {
                flags.push("degenerate: constant outputs".to_string());
            }
            out.weights
        }
        Method::Lime => {
            let fit = fit_lime(samples, outputs)?;
            if fit.rank_deficient {
                flags.push("rank deficient surrogate".to_string());
            }
            fit.weights
        }
        Method::Shap => {
            let fit = fit_kernel_shap(samples, outputs, refs.unperturbed, refs.fully_perturbed)?;
            if fit.rank_deficient {
                flags.push("rank deficient surrogate".to_string());
            }
            fit.weights
        }
    };
    Ok(AttributionResult {
        segment_weights,
        pixel_map: None,
        method,
        reference_output: refs.unperturbed,
        flags,
    })
}

/// Denominators below this leave the pixel at 0.
pub const MIN_MASK_MASS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub map: PixelMap,
    /// Pixels whose total mask mass was below [`MIN_MASK_MASS`].
    pub uncovered_pixels: usize,
}

/// `w_p = Σ_s w_s·M_s(p) / Σ_s M_s(p)`: each pixel averages the segment
/// weights by how strongly each segment's mask perturbs it.
pub fn project_per_pixel(weights: &[f64], stack: &SegmentMaskStack) -> Result<Projection> {
    if weights.len() != stack.n_segments {
        return Err(invalid(format!(
            "{} weights for {} segments",
            weights.len(),
            stack.n_segments
        )));
    }
    let n = stack.n_pixels();
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for (mask, &w) in stack.masks.iter().zip(weights) {
        for p in 0..n {
            let m = mask[p];
            if m != 0.0 {
                num[p] += w * m;
                den[p] += m;
            }
        }
    }
    let mut uncovered = 0;
    let data = num
        .into_iter()
        .zip(den)
        .map(|(a, d)| {
            if d < MIN_MASK_MASS {
                uncovered += 1;
                0.0
            } else {
                a / d
            }
        })
        .collect();
    Ok(Projection {
        map: PixelMap {
            height: stack.height,
            width: stack.width,
            data,
        },
        uncovered_pixels: uncovered,
    })
}

/// Piecewise-constant expansion of segment weights over their pixels.
pub fn expand_segments(weights: &[f64], segments: &crate::types::SegmentMap) -> Result<PixelMap> {
    if weights.len() != segments.n_segments {
        return Err(invalid("weight count does not match the segmentation"));
    }
    Ok(PixelMap {
        height: segments.height,
        width: segments.width,
        data: segments
            .labels
            .iter()
            .map(|&l| weights[l as usize])
            .collect(),
    })
}

/// Segment indices from most to least influential; ties keep index order.
pub fn ranking(weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    idx
}

/// [`ranking`] after snapping weights to a grid of `quantum`.
pub fn ranking_rounded(weights: &[f64], quantum: f64) -> Vec<usize> {
    let snapped: Vec<f64> = weights.iter().map(|w| (w / quantum).round()).collect();
    ranking(&snapped)
}
