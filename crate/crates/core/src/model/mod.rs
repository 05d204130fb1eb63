//! Black-box predictor contract, a synthetic additive model for desk-scale
//! verification, and the client/server sides of the external model protocol.

mod additive;
mod external;
pub mod protocol;
mod server;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

pub use additive::{make_additive_model, AdditiveModel};
pub use external::{
    connect_external, connect_streams, Endpoint, ExternalOptions, ExternalPredictor,
};
pub use server::serve;

use crate::error::{invalid, Result};
use crate::types::{Image, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSemantics {
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    /// (height, width, channels)
    pub input: (usize, usize, usize),
    pub n_classes: usize,
    pub output_semantics: OutputSemantics,
    pub identity: String,
    /// Largest score difference tolerated between identical requests.
    #[serde(default)]
    pub determinism_tolerance: f64,
}

impl crate::types::Validate for PredictorSpec {
    fn violations(&self) -> Vec<Violation> {
        let (h, w, c) = self.input;
        let mut out = Vec::new();
        if h == 0 || w == 0 || c == 0 || self.n_classes == 0 {
            out.push(Violation {
                code: "dimension",
                detail: format!(
                    "input {:?} and n_classes {} must all be >= 1",
                    self.input, self.n_classes
                ),
            });
        }
        if self.determinism_tolerance.is_nan() || self.determinism_tolerance < 0.0 {
            out.push(Violation {
                code: "tolerance",
                detail: "determinism tolerance must be non-negative".into(),
            });
        }
        out
    }
}

impl PredictorSpec {
    pub fn check_images(&self, images: &[Image]) -> Result<()> {
        let (h, w, c) = self.input;
        for (i, img) in images.iter().enumerate() {
            if img.height != h || img.width != w || img.channels != c {
                return Err(invalid(format!(
                    "image {i} is {}x{}x{}, model expects {h}x{w}x{c}",
                    img.height, img.width, img.channels
                )));
            }
        }
        Ok(())
    }
}

/// An image classifier treated as a black box.
///
/// Implementations return one length-`n_classes` score vector per input
/// image, in input order.
pub trait Predictor: Send + Sync {
    fn spec(&self) -> &PredictorSpec;

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>>;
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn spec(&self) -> &PredictorSpec {
        (**self).spec()
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        (**self).predict_batch(images)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn spec(&self) -> &PredictorSpec {
        (**self).spec()
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        (**self).predict_batch(images)
    }
}

/// Index of the highest score; the first one wins ties.
pub fn top_class(scores: &[f64]) -> usize {
    scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &s)| {
            if s > best.1 {
                (i, s)
            } else {
                best
            }
        })
        .0
}

/// Wraps a predictor and counts calls and images.
pub struct CountingPredictor<P> {
    inner: P,
    calls: AtomicUsize,
    images: AtomicUsize,
}

impl<P> CountingPredictor<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            images: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn images(&self) -> usize {
        self.images.load(Ordering::SeqCst)
    }
}

impl<P: Predictor> Predictor for CountingPredictor<P> {
    fn spec(&self) -> &PredictorSpec {
        self.inner.spec()
    }

    fn predict_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.images.fetch_add(images.len(), Ordering::SeqCst);
        self.inner.predict_batch(images)
    }
}
