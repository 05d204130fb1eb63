//! Blend images toward a replacement color according to a perturbedness map.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::masking::combine;
use crate::types::{Image, PixelMap, SampleSet, SegmentMaskStack};

/// `out = image·(1 − map) + color·map`, per pixel and channel.
pub fn apply_perturbation(image: &Image, map: &PixelMap, color: &[f64]) -> Result<Image> {
    if map.height != image.height || map.width != image.width {
        return Err(invalid(format!(
            "perturbation map is {}x{}, image is {}x{}",
            map.height, map.width, image.height, image.width
        )));
    }
    if color.len() != image.channels {
        return Err(invalid(format!(
            "color has {} channels, image has {}",
            color.len(),
            image.channels
        )));
    }
    if map.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("perturbation map values must lie in [0,1]"));
    }
    let ch = image.channels;
    let mut data = Vec::with_capacity(image.data.len());
    for (px, &m) in image.data.chunks_exact(ch).zip(&map.data) {
        for (&v, &c) in px.iter().zip(color) {
            data.push((f64::from(v) * (1.0 - m) + c * m) as f32);
        }
    }
    Ok(Image {
        height: image.height,
        width: image.width,
        channels: ch,
        data,
        space: image.space,
    })
}

/// Lazily yields one perturbed image per sample row, in sample order.
pub struct PerturbedImages<'a> {
    image: &'a Image,
    stack: &'a SegmentMaskStack,
    samples: &'a SampleSet,
    color: &'a [f64],
    next: usize,
}

impl<'a> PerturbedImages<'a> {
    /// Materialize the next `n` images (or fewer at the end), built in
    /// parallel but returned in sample order.
    pub fn next_chunk(&mut self, n: usize) -> Result<Vec<Image>> {
        let end = (self.next + n).min(self.samples.n_samples);
        let range = self.next..end;
        self.next = end;
        range
            .into_par_iter()
            .map(|i| perturb_one(self.image, self.stack, self.samples.row(i), self.color))
            .collect()
    }

    pub fn remaining(&self) -> usize {
        self.samples.n_samples - self.next
    }
}

impl Iterator for PerturbedImages<'_> {
    type Item = Result<Image>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.samples.n_samples {
            return None;
        }
        let i = self.next;
        self.next += 1;
        Some(perturb_one(
            self.image,
            self.stack,
            self.samples.row(i),
            self.color,
        ))
    }
}

pub fn perturb_one(
    image: &Image,
    stack: &SegmentMaskStack,
    row: &[bool],
    color: &[f64],
) -> Result<Image> {
    let map = combine(stack, row)?;
    apply_perturbation(image, &map, color)
}

pub fn perturb_batch<'a>(
    image: &'a Image,
    stack: &'a SegmentMaskStack,
    samples: &'a SampleSet,
    color: &'a [f64],
) -> Result<PerturbedImages<'a>> {
    if stack.height != image.height || stack.width != image.width {
        return Err(invalid("mask stack and image dimensions differ"));
    }
    if samples.n_segments != stack.n_segments {
        return Err(invalid(format!(
            "samples cover {} segments, stack has {}",
            samples.n_segments, stack.n_segments
        )));
    }
    if color.len() != image.channels {
        return Err(invalid("color channel count does not match the image"));
    }
    Ok(PerturbedImages {
        image,
        stack,
        samples,
        color,
        next: 0,
    })
}
