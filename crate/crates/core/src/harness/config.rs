//! Pipeline and experiment configuration.
//!
//! A configuration file is one JSON document:
//!
//! ```json
//! {
//!   "pipeline": {
//!     "segmenter": {"kind": "grid", "rows": 7, "cols": 7},
//!     "smoothing": {"method": "gaussian_filter", "sigma": 10.0},
//!     "sampler": {"kind": "random", "n_samples": 400, "seed": 1},
//!     "attribution": "rise",
//!     "granularity": "pixel",
//!     "color": {"kind": "image_mean"},
//!     "steps": 10
//!   },
//!   "matrix": {"attribution": ["pda", "rise", "lime", "shap"]},
//!   "images": {"kind": "synthetic", "count": 4, "height": 32, "width": 32, "seed": 0},
//!   "model": "additive:7",
//!   "batch_size": 64
//! }
//! ```
//!
//! Every key of `matrix` names a `pipeline` field and lists values for it;
//! the run covers the cross product. Omitted `pipeline` fields take their
//! defaults.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Endpoint;
use crate::segmentation::SlicParams;
use crate::types::{Image, Method, SampleOrigin, SmoothingConfig, SmoothingMethod, Validate};

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmenterConfig {
    Grid {
        rows: usize,
        cols: usize,
    },
    Slic {
        n_segments: usize,
        #[serde(default = "default_compactness")]
        compactness: f64,
        #[serde(default = "default_iters")]
        max_iter: usize,
    },
}

fn default_compactness() -> f64 {
    SlicParams::new(1).compactness
}

fn default_iters() -> usize {
    SlicParams::new(1).max_iter
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerConfig {
    OnlyOne,
    AllButOne,
    Random { n_samples: usize, seed: u64 },
    Entropic { n_samples: usize },
}

impl SamplerConfig {
    pub fn origin(&self) -> SampleOrigin {
        match self {
            SamplerConfig::OnlyOne => SampleOrigin::OnlyOne,
            SamplerConfig::AllButOne => SampleOrigin::AllButOne,
            SamplerConfig::Random { .. } => SampleOrigin::Random,
            SamplerConfig::Entropic { .. } => SampleOrigin::Entropic,
        }
    }

    /// Label used for grouping: the random seed is left out.
    pub fn group_label(&self) -> String {
        match self {
            SamplerConfig::Random { n_samples, .. } => format!("random:{n_samples}"),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Segment,
    Pixel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ColorPolicy {
    /// Per-channel mean of the image being explained.
    ImageMean,
    /// A fixed per-channel color, e.g. a dataset mean.
    Fixed { color: Vec<f64> },
}

impl ColorPolicy {
    pub fn resolve(&self, image: &Image) -> Result<Vec<f64>> {
        match self {
            ColorPolicy::ImageMean => Ok(image.channel_means()),
            ColorPolicy::Fixed { color } if color.len() == image.channels => Ok(color.clone()),
            ColorPolicy::Fixed { color } => Err(config_err(format!(
                "fixed color has {} channels, image has {}",
                color.len(),
                image.channels
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub segmenter: SegmenterConfig,
    pub smoothing: SmoothingConfig,
    pub sampler: SamplerConfig,
    pub attribution: Method,
    pub granularity: Granularity,
    pub color: ColorPolicy,
    pub steps: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segmenter: SegmenterConfig::Grid { rows: 7, cols: 7 },
            smoothing: SmoothingConfig::NONE,
            sampler: SamplerConfig::OnlyOne,
            attribution: Method::Pda,
            granularity: Granularity::Segment,
            color: ColorPolicy::ImageMean,
            steps: crate::evaluation::DEFAULT_STEPS,
        }
    }
}

impl PipelineConfig {
    /// Check cross-field rules and fill the bilinear grid shape from the
    /// segmenter when it was left out.
    pub fn normalized(mut self) -> Result<Self> {
        self.smoothing_for_segmenter()?;
        if self.smoothing.method == SmoothingMethod::BilinearUpsample
            && self.smoothing.grid_shape.is_none()
        {
            if let SegmenterConfig::Grid { rows, cols } = self.segmenter {
                self.smoothing.grid_shape = Some((rows, cols));
            }
        }
        self.check()?;
        Ok(self)
    }

    fn smoothing_for_segmenter(&self) -> Result<()> {
        if self.smoothing.method != SmoothingMethod::BilinearUpsample {
            return Ok(());
        }
        match (self.segmenter, self.smoothing.grid_shape) {
            (SegmenterConfig::Grid { .. }, None) => Ok(()),
            (SegmenterConfig::Grid { rows, cols }, Some(shape)) if shape == (rows, cols) => Ok(()),
            (SegmenterConfig::Grid { rows, cols }, Some(shape)) => Err(config_err(format!(
                "bilinear grid shape {shape:?} does not match the {rows}x{cols} grid segmenter"
            ))),
            (SegmenterConfig::Slic { .. }, _) => {
                Err(config_err("bilinear smoothing requires the grid segmenter"))
            }
        }
    }

    /// Validation without normalization.
    pub fn check(&self) -> Result<()> {
        self.smoothing_for_segmenter()?;
        self.smoothing
            .validate()
            .map_err(|v| config_err(Error::Invalid(v).to_string()))?;
        if self.attribution == Method::Ciu
            && !matches!(
                self.sampler,
                SamplerConfig::OnlyOne | SamplerConfig::AllButOne
            )
        {
            return Err(config_err("CIU requires only_one or all_but_one sampling"));
        }
        match self.segmenter {
            SegmenterConfig::Grid { rows, cols } if rows * cols < 2 => {
                return Err(config_err("a grid needs at least two cells"))
            }
            SegmenterConfig::Slic {
                n_segments,
                compactness,
                ..
            } if n_segments < 2 || !(compactness > 0.0 && compactness.is_finite()) => {
                return Err(config_err(
                    "slic needs n_segments >= 2 and a positive compactness",
                ))
            }
            _ => {}
        }
        match self.sampler {
            SamplerConfig::Random { n_samples: 0, .. }
            | SamplerConfig::Entropic { n_samples: 0 } => {
                return Err(config_err("samplers need at least one sample"))
            }
            _ => {}
        }
        if self.steps < 2 {
            return Err(config_err("steps must be at least 2"));
        }
        if let ColorPolicy::Fixed { color } = &self.color {
            if color.is_empty() || color.iter().any(|c| !c.is_finite()) {
                return Err(config_err(
                    "fixed color must be a non-empty list of finite values",
                ));
            }
        }
        Ok(())
    }

    /// Short stable identifier: the first 16 hex digits of the SHA-256 of
    /// the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configs serialize");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn segmentation_label(&self) -> String {
        format!("{}+{}", self.segmenter, smoothing_label(&self.smoothing))
    }

    pub fn label(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.segmenter,
            smoothing_label(&self.smoothing),
            self.sampler,
            self.attribution,
            self.granularity
        )
    }
}

pub fn smoothing_label(s: &SmoothingConfig) -> String {
    match s.method {
        SmoothingMethod::None => "none".into(),
        SmoothingMethod::BilinearUpsample => "bilinear".into(),
        SmoothingMethod::GaussianFilter => format!("gaussian:{}", s.sigma.unwrap_or(f64::NAN)),
    }
}

// Compact text forms used on the command line and in labels.

impl fmt::Display for SegmenterConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmenterConfig::Grid { rows, cols } => write!(f, "grid:{rows}x{cols}"),
            SegmenterConfig::Slic {
                n_segments,
                compactness,
                max_iter,
            } => write!(f, "slic:{n_segments}:{compactness}:{max_iter}"),
        }
    }
}

impl FromStr for SegmenterConfig {
    type Err = Error;

    /// `grid:RxC`, `slic:N`, `slic:N:COMPACTNESS` or `slic:N:COMPACTNESS:ITERS`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            config_err(format!(
                "bad segmenter {s:?} (expected grid:RxC or slic:N[:m[:iters]])"
            ))
        };
        let mut parts = s.split(':');
        match parts.next() {
            Some("grid") => {
                let (r, c) = parts
                    .next()
                    .and_then(|d| d.split_once('x'))
                    .ok_or_else(bad)?;
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(SegmenterConfig::Grid {
                    rows: r.parse().map_err(|_| bad())?,
                    cols: c.parse().map_err(|_| bad())?,
                })
            }
            Some("slic") => {
                let n = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                let m: Option<f64> = parts
                    .next()
                    .map(str::parse)
                    .transpose()
                    .map_err(|_| bad())?;
                if m.is_some_and(|m| !m.is_finite()) {
                    return Err(bad());
                }
                let it = parts
                    .next()
                    .map(str::parse)
                    .transpose()
                    .map_err(|_| bad())?;
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(SegmenterConfig::Slic {
                    n_segments: n,
                    compactness: m.unwrap_or_else(default_compactness),
                    max_iter: it.unwrap_or_else(default_iters),
                })
            }
            _ => Err(bad()),
        }
    }
}

/// `none`, `bilinear` or `gaussian:SIGMA`.
pub fn parse_smoothing(s: &str) -> Result<SmoothingConfig> {
    match s.split_once(':') {
        None if s == "none" => Ok(SmoothingConfig::NONE),
        None if s == "bilinear" => Ok(SmoothingConfig {
            method: SmoothingMethod::BilinearUpsample,
            sigma: None,
            grid_shape: None,
        }),
        Some(("gaussian", sigma)) => sigma
            .parse()
            .map(SmoothingConfig::gaussian)
            .map_err(|_| config_err(format!("bad sigma in {s:?}"))),
        _ => Err(config_err(format!(
            "bad smoothing {s:?} (expected none, bilinear or gaussian:SIGMA)"
        ))),
    }
}

impl fmt::Display for SamplerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerConfig::OnlyOne => f.write_str("only_one"),
            SamplerConfig::AllButOne => f.write_str("all_but_one"),
            SamplerConfig::Random { n_samples, seed } => write!(f, "random:{n_samples}:{seed}"),
            SamplerConfig::Entropic { n_samples } => write!(f, "entropic:{n_samples}"),
        }
    }
}

impl FromStr for SamplerConfig {
    type Err = Error;

    /// `only_one`, `all_but_one`, `random:N[:SEED]` or `entropic:N`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || config_err(format!("bad sampler {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.parse::<u64>().map_err(|_| bad());
        match parts.as_slice() {
            ["only_one"] => Ok(SamplerConfig::OnlyOne),
            ["all_but_one"] => Ok(SamplerConfig::AllButOne),
            ["random", n] => Ok(SamplerConfig::Random {
                n_samples: num(n)? as usize,
                seed: 0,
            }),
            ["random", n, seed] => Ok(SamplerConfig::Random {
                n_samples: num(n)? as usize,
                seed: num(seed)?,
            }),
            ["entropic", n] => Ok(SamplerConfig::Entropic {
                n_samples: num(n)? as usize,
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Segment => "segment",
            Granularity::Pixel => "pixel",
        })
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segment" => Ok(Granularity::Segment),
            "pixel" => Ok(Granularity::Pixel),
            _ => Err(config_err(format!(
                "bad granularity {s:?} (expected segment or pixel)"
            ))),
        }
    }
}

/// `image_mean` or comma-free `fixed:R/G/B` (one value per channel).
pub fn parse_color(s: &str) -> Result<ColorPolicy> {
    if s == "image_mean" {
        return Ok(ColorPolicy::ImageMean);
    }
    let values = s.strip_prefix("fixed:").ok_or_else(|| {
        config_err(format!(
            "bad color {s:?} (expected image_mean or fixed:R/G/B)"
        ))
    })?;
    let color = values
        .split('/')
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| config_err(format!("bad color value {v:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ColorPolicy::Fixed { color })
}

// ---------------------------------------------------------------------------

/// Where the images of an experiment come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageSource {
    /// Deterministic smooth color fields; see [`super::synthetic_image`].
    Synthetic {
        count: usize,
        height: usize,
        width: usize,
        #[serde(default)]
        seed: u64,
    },
    /// PNG files, loaded as RGB in `unit_0_1`.
    Files { paths: Vec<PathBuf> },
}

impl Default for ImageSource {
    fn default() -> Self {
        ImageSource::Synthetic {
            count: 4,
            height: 32,
            width: 32,
            seed: 0,
        }
    }
}

/// How to obtain the model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    /// Synthetic additive model with coefficients seeded by the value.
    Additive {
        seed: u64,
    },
    External(Endpoint),
}

impl FromStr for ModelSource {
    type Err = Error;

    /// `additive:SEED`, `tcp://host:port` or `exec:command args`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(seed) = s.strip_prefix("additive:") {
            return seed
                .parse()
                .map(|seed| ModelSource::Additive { seed })
                .map_err(|_| config_err(format!("bad additive model seed in {s:?}")));
        }
        s.parse().map(ModelSource::External)
    }
}

impl fmt::Display for ModelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSource::Additive { seed } => write!(f, "additive:{seed}"),
            ModelSource::External(Endpoint::Tcp(addr)) => write!(f, "tcp://{addr}"),
            ModelSource::External(Endpoint::Command(argv)) => write!(f, "exec:{}", argv.join(" ")),
        }
    }
}

/// Order in which matrix dimensions expand; the last varies fastest.
pub const MATRIX_FIELDS: [&str; 7] = [
    "segmenter",
    "smoothing",
    "sampler",
    "color",
    "steps",
    "granularity",
    "attribution",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub pipeline: serde_json::Map<String, Value>,
    #[serde(default)]
    pub matrix: serde_json::Map<String, Value>,
    #[serde(default)]
    pub images: ImageSource,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

/// A combination excluded from the matrix because its fields conflict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedCombination {
    pub config: Value,
    pub reason: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err(format!("config file: {e}")))
    }

    /// Replace (or create) one matrix dimension.
    pub fn set_dimension(&mut self, field: &str, values: Vec<Value>) -> Result<()> {
        if !MATRIX_FIELDS.contains(&field) {
            return Err(config_err(format!("unknown pipeline field {field:?}")));
        }
        self.pipeline.remove(field);
        self.matrix.insert(field.to_string(), Value::Array(values));
        Ok(())
    }

    /// Expand the matrix into concrete pipelines.
    ///
    /// With a matrix, combinations whose fields conflict (CIU with random
    /// sampling, bilinear smoothing over SLIC) are skipped and reported.
    /// A single configuration that conflicts is an error.
    pub fn expand(&self) -> Result<(Vec<PipelineConfig>, Vec<SkippedCombination>)> {
        for key in self.matrix.keys().chain(self.pipeline.keys()) {
            if !MATRIX_FIELDS.contains(&key.as_str()) {
                return Err(config_err(format!("unknown pipeline field {key:?}")));
            }
        }
        let mut combos = vec![self.pipeline.clone()];
        for field in MATRIX_FIELDS {
            let Some(values) = self.matrix.get(field) else {
                continue;
            };
            let values = values
                .as_array()
                .filter(|v| !v.is_empty())
                .ok_or_else(|| config_err(format!("matrix.{field} must be a non-empty list")))?;
            combos = combos
                .into_iter()
                .flat_map(|base| {
                    values.iter().map(move |v| {
                        let mut c = base.clone();
                        c.insert(field.to_string(), v.clone());
                        c
                    })
                })
                .collect();
        }
        let single = combos.len() == 1;
        let mut configs = Vec::new();
        let mut skipped = Vec::new();
        for combo in combos {
            let value = Value::Object(combo);
            let parsed: PipelineConfig = serde_json::from_value(value.clone())
                .map_err(|e| config_err(format!("pipeline {value}: {e}")))?;
            match parsed.normalized() {
                Ok(cfg) => {
                    if !configs.contains(&cfg) {
                        configs.push(cfg);
                    }
                }
                Err(e) if !single => skipped.push(SkippedCombination {
                    config: value,
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            }
        }
        if configs.is_empty() {
            return Err(config_err("every matrix combination is invalid"));
        }
        Ok((configs, skipped))
    }
}
