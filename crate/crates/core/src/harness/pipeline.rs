//! One image through segment → mask → sample → perturb → predict → attribute.

use serde::Serialize;

use super::config::{Granularity, PipelineConfig, SamplerConfig, SegmenterConfig};
use crate::attribution::{attribute, expand_segments, project_per_pixel, References};
use crate::error::{invalid, Result};
use crate::masking::{build_masks, combine};
use crate::model::{top_class, Predictor};
use crate::perturbation::{apply_perturbation, perturb_batch};
use crate::sampling::{sample_all_but_one, sample_entropic, sample_only_one, sample_random_stream};
use crate::segmentation::{grid_segment, slic_segment, SlicParams};
use crate::types::{AttributionResult, Image, SampleSet, SegmentMap, SegmentMaskStack};

pub const DEFAULT_BATCH_SIZE: usize = 64;

/// Everything produced before attribution. Shared by every pipeline that
/// agrees on segmenter, smoothing, sampler and occlusion color.
#[derive(Debug, Clone)]
pub struct ModelCalls {
    pub segments: SegmentMap,
    pub stack: SegmentMaskStack,
    pub samples: SampleSet,
    pub outputs: Vec<f64>,
    pub references: References,
    pub target_class: usize,
    pub color: Vec<f64>,
    /// Images sent to the model, references included.
    pub images_predicted: usize,
    pub flags: Vec<String>,
}

pub fn segment(image: &Image, segmenter: &SegmenterConfig) -> Result<(SegmentMap, Vec<String>)> {
    match *segmenter {
        SegmenterConfig::Grid { rows, cols } => {
            Ok((grid_segment(image.height, image.width, rows, cols)?, vec![]))
        }
        SegmenterConfig::Slic {
            n_segments,
            compactness,
            max_iter,
        } => {
            let out = slic_segment(
                image,
                SlicParams {
                    n_segments,
                    compactness,
                    max_iter,
                },
            )?;
            let flags = if out.degenerate_fallback {
                vec!["slic fell back to a grid".to_string()]
            } else {
                vec![]
            };
            Ok((out.segments, flags))
        }
    }
}

/// Draw the sample set; `stream` separates random draws between images.
pub fn draw_samples(sampler: &SamplerConfig, n_segments: usize, stream: u64) -> Result<SampleSet> {
    match *sampler {
        SamplerConfig::OnlyOne => sample_only_one(n_segments),
        SamplerConfig::AllButOne => sample_all_but_one(n_segments),
        SamplerConfig::Random { n_samples, seed } => {
            sample_random_stream(n_segments, n_samples, seed, stream)
        }
        SamplerConfig::Entropic { n_samples } => sample_entropic(n_segments, n_samples),
    }
}

fn predict_targets<P: Predictor + ?Sized>(
    predictor: &P,
    images: &[Image],
    target_class: usize,
) -> Result<Vec<f64>> {
    let scores = predictor.predict_batch(images)?;
    if scores.len() != images.len() {
        return Err(invalid("model returned the wrong number of score vectors"));
    }
    scores
        .into_iter()
        .map(|s| {
            s.get(target_class)
                .copied()
                .ok_or_else(|| invalid(format!("target class {target_class} out of range")))
        })
        .collect()
}

/// Run every model call a pipeline needs for `image`.
///
/// The explained class is `target_class` when given, otherwise the top
/// class of the unperturbed prediction.
pub fn collect_model_calls<P: Predictor + ?Sized>(
    predictor: &P,
    image: &Image,
    image_index: u64,
    config: &PipelineConfig,
    target_class: Option<usize>,
    batch_size: usize,
) -> Result<ModelCalls> {
    let (segments, mut flags) = segment(image, &config.segmenter)?;
    let stack = build_masks(&segments, &config.smoothing)?;
    let samples = draw_samples(&config.sampler, segments.n_segments, image_index)?;
    if samples.truncated {
        flags.push(format!(
            "sampler truncated to {} unique samples",
            samples.n_samples
        ));
    }
    let color = config.color.resolve(image)?;

    let all = vec![true; segments.n_segments];
    let fully = apply_perturbation(image, &combine(&stack, &all)?, &color)?;
    let ref_scores = predictor.predict_batch(&[image.clone(), fully])?;
    if ref_scores.len() != 2 {
        return Err(invalid("model returned the wrong number of score vectors"));
    }
    let target_class = target_class.unwrap_or_else(|| top_class(&ref_scores[0]));
    let pick = |s: &Vec<f64>| {
        s.get(target_class)
            .copied()
            .ok_or_else(|| invalid(format!("target class {target_class} out of range")))
    };
    let references = References {
        unperturbed: pick(&ref_scores[0])?,
        fully_perturbed: pick(&ref_scores[1])?,
    };

    let mut outputs = Vec::with_capacity(samples.n_samples);
    let mut perturbed = perturb_batch(image, &stack, &samples, &color)?;
    while perturbed.remaining() > 0 {
        let chunk = perturbed.next_chunk(batch_size.max(1))?;
        outputs.extend(predict_targets(predictor, &chunk, target_class)?);
    }
    Ok(ModelCalls {
        images_predicted: outputs.len() + 2,
        segments,
        stack,
        samples,
        outputs,
        references,
        target_class,
        color,
        flags,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Explanation {
    pub result: AttributionResult,
    pub target_class: usize,
    pub n_samples: usize,
    pub images_predicted: usize,
}

/// Attribute from collected model calls and attach the pixel map.
pub fn attribute_calls(calls: &ModelCalls, config: &PipelineConfig) -> Result<Explanation> {
    let mut result = attribute(
        config.attribution,
        &calls.samples,
        &calls.outputs,
        calls.references,
    )?;
    let map = match config.granularity {
        Granularity::Segment => expand_segments(&result.segment_weights, &calls.segments)?,
        Granularity::Pixel => {
            let p = project_per_pixel(&result.segment_weights, &calls.stack)?;
            if p.uncovered_pixels > 0 {
                result
                    .flags
                    .push(format!("{} pixels without mask mass", p.uncovered_pixels));
            }
            p.map
        }
    };
    result.pixel_map = Some(map);
    result.flags.extend(calls.flags.iter().cloned());
    Ok(Explanation {
        result,
        target_class: calls.target_class,
        n_samples: calls.samples.n_samples,
        images_predicted: calls.images_predicted,
    })
}

/// Full pipeline for one image.
pub fn explain<P: Predictor + ?Sized>(
    predictor: &P,
    image: &Image,
    config: &PipelineConfig,
    target_class: Option<usize>,
    batch_size: usize,
) -> Result<Explanation> {
    config.check()?;
    let calls = collect_model_calls(predictor, image, 0, config, target_class, batch_size)?;
    attribute_calls(&calls, config)
}
