use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{OutputSemantics, Predictor, PredictorSpec};
use crate::error::{invalid, Result};
use crate::types::{Image, PixelMap, SegmentMap};

/// Linear model: `score(target) = Σ_p coeff(p)·mean_over_channels(pixel p)`,
/// every other class scores 0.
#[derive(Debug, Clone)]
pub struct AdditiveModel {
    spec: PredictorSpec,
    coefficients: PixelMap,
    target_class: usize,
}

pub fn make_additive_model(
    coefficients: PixelMap,
    channels: usize,
    target_class: usize,
    n_classes: usize,
) -> Result<AdditiveModel> {
    if target_class >= n_classes {
        return Err(invalid(format!(
            "target class {target_class} >= {n_classes} classes"
        )));
    }
    if channels != 1 && channels != 3 {
        return Err(invalid("channels must be 1 or 3"));
    }
    let spec = PredictorSpec {
        input: (coefficients.height, coefficients.width, channels),
        n_classes,
        output_semantics: OutputSemantics::Logits,
        identity: format!(
            "additive-{}x{}x{channels}-class{target_class}",
            coefficients.height, coefficients.width
        ),
        determinism_tolerance: 0.0,
    };
    crate::types::Validate::validate(&spec).map_err(crate::error::Error::Invalid)?;
    Ok(AdditiveModel {
        spec,
        coefficients,
        target_class,
    })
}

impl AdditiveModel {
    /// Coefficients drawn uniformly from `[0, 1)` with ChaCha20 seeded by `seed`.
    pub fn random_coefficients(height: usize, width: usize, seed: u64) -> PixelMap {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        PixelMap {
            height,
            width,
            data: (0..height * width).map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub fn coefficients(&self) -> &PixelMap {
        &self.coefficients
    }

    pub fn target_class(&self) -> usize {
        self.target_class
    }

    pub fn with_identity(mut self, identity: impl Into<String>) -> Self {
        self.spec.identity = identity.into();
        self
    }

    pub fn score(&self, image: &Image) -> f64 {
        let ch = image.channels as f64;
        image
            .data
            .chunks_exact(image.channels)
            .zip(&self.coefficients.data)
            .map(|(px, &k)| k * px.iter().map(|&v| f64::from(v)).sum::<f64>() / ch)
            .sum()
    }

    /// Per-pixel contribution relative to replacing the pixel by `color`:
    /// `coeff(p)·(mean(pixel) − mean(color))`.
    pub fn contribution_map(&self, image: &Image, color: &[f64]) -> PixelMap {
        let ch = image.channels as f64;
        let base = color.iter().sum::<f64>() / ch;
        PixelMap {
            height: image.height,
            width: image.width,
            data: image
                .data
                .chunks_exact(image.channels)
                .zip(&self.coefficients.data)
                .map(|(px, &k)| k * (px.iter().map(|&v| f64::from(v)).sum::<f64>() / ch - base))
                .collect(),
        }
    }

    /// Exact effect of fully perturbing each segment to `color`.
    pub fn segment_contributions(
        &self,
        image: &Image,
        segments: &SegmentMap,
        color: &[f64],
    ) -> Vec<f64> {
        let map = self.contribution_map(image, color);
        let mut out = vec![0.0; segments.n_segments];
        for (&l, &v) in segments.labels.iter().zip(&map.data) {
            out[l as usize] += v;
        }
        out
    }
}

impl Predictor for AdditiveModel {
    fn spec(&self) -> &PredictorSpec {
        &self.spec
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        self.spec.check_images(images)?;
        Ok(images
            .iter()
            .map(|img| {
                let mut scores = vec![0.0; self.spec.n_classes];
                scores[self.target_class] = self.score(img);
                scores
            })
            .collect())
    }
}
