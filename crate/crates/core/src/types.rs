//! Data model shared by every pipeline stage.
//!
//! Types here carry no behavior beyond construction, validation and
//! (de)serialization. Constructors validate; decoded values should be passed
//! through [`Validate::validate`] (the `from_json` helpers do this).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};

/// Pixel value space of an [`Image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    #[serde(rename = "raw_0_255")]
    Raw0To255,
    #[serde(rename = "unit_0_1")]
    Unit0To1,
    NormalizedZeroMean,
}

/// A single invariant violation reported by [`Validate::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: &'static str,
    pub detail: String,
}

impl Violation {
    fn new(code: &'static str, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.detail)
    }
}

pub trait Validate {
    fn violations(&self) -> Vec<Violation>;

    fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

fn checked<T: Validate>(value: T) -> Result<T> {
    value.validate().map_err(Error::Invalid)?;
    Ok(value)
}

/// Decode any core type from JSON and check its invariants.
pub fn from_json<T>(text: &str) -> Result<T>
where
    T: Validate + for<'de> Deserialize<'de>,
{
    checked(serde_json::from_str(text)?)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major, channel-interleaved.
    #[serde(with = "codec::serde_f32")]
    pub data: Vec<f32>,
    pub space: ColorSpace,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        space: ColorSpace,
    ) -> Result<Self> {
        checked(Self {
            height,
            width,
            channels,
            data,
            space,
        })
    }

    pub fn filled(
        height: usize,
        width: usize,
        channels: usize,
        value: f32,
        space: ColorSpace,
    ) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
            space,
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Per-channel mean over all pixels.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += f64::from(v);
            }
        }
        let n = self.n_pixels().max(1) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

impl Validate for Image {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.channels != 1 && self.channels != 3 {
            out.push(Violation::new(
                "channel count",
                format!("channels must be 1 or 3, got {}", self.channels),
            ));
        }
        let expected = self
            .height
            .checked_mul(self.width)
            .and_then(|p| p.checked_mul(self.channels));
        if expected != Some(self.data.len()) {
            out.push(Violation::new(
                "data length",
                format!(
                    "expected {}x{}x{} values, got {}",
                    self.height,
                    self.width,
                    self.channels,
                    self.data.len()
                ),
            ));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            out.push(Violation::new(
                "non-finite value",
                "image contains NaN or infinity",
            ));
        }
        if self.space == ColorSpace::Unit0To1
            && self.data.iter().any(|&v| !(0.0..=1.0).contains(&v))
        {
            out.push(Violation::new(
                "value range",
                "unit_0_1 image has values outside [0,1]",
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------

/// A dense H×W map of reals, row-major. Used for perturbedness maps and
/// per-pixel attribution maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelMap {
    pub height: usize,
    pub width: usize,
    #[serde(with = "codec::serde_f64")]
    pub data: Vec<f64>,
}

impl PixelMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        checked(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.data.iter().fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

impl Validate for PixelMap {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.height.checked_mul(self.width) != Some(self.data.len()) {
            out.push(Violation::new(
                "data length",
                format!(
                    "expected {}x{} values, got {}",
                    self.height,
                    self.width,
                    self.data.len()
                ),
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMap {
    pub height: usize,
    pub width: usize,
    /// One label per pixel, row-major.
    pub labels: Vec<u32>,
    pub n_segments: usize,
}

impl SegmentMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>, n_segments: usize) -> Result<Self> {
        checked(Self {
            height,
            width,
            labels,
            n_segments,
        })
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col] as usize
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_segments];
        for &l in &self.labels {
            if let Some(s) = sizes.get_mut(l as usize) {
                *s += 1;
            }
        }
        sizes
    }
}

impl Validate for SegmentMap {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.n_segments < 2 {
            out.push(Violation::new(
                "segment count",
                format!("need at least 2 segments, got {}", self.n_segments),
            ));
        }
        if self.height.checked_mul(self.width) != Some(self.labels.len()) {
            out.push(Violation::new(
                "label count",
                format!(
                    "expected {}x{} labels, got {}",
                    self.height,
                    self.width,
                    self.labels.len()
                ),
            ));
        }
        if let Some(bad) = self
            .labels
            .iter()
            .position(|&l| l as usize >= self.n_segments)
        {
            out.push(Violation::new(
                "label out of range",
                format!(
                    "pixel {bad} has label {} >= {}",
                    self.labels[bad], self.n_segments
                ),
            ));
        }
        // Guard the allocation: a decoded map may claim an absurd count.
        if self.n_segments <= self.labels.len() {
            let missing: Vec<usize> = self
                .segment_sizes()
                .iter()
                .enumerate()
                .filter(|(_, &n)| n == 0)
                .map(|(s, _)| s)
                .collect();
            if !missing.is_empty() {
                out.push(Violation::new(
                    "empty segment",
                    format!("segments without pixels: {missing:?}"),
                ));
            }
        } else {
            out.push(Violation::new(
                "empty segment",
                format!(
                    "{} segments cannot all occur in {} pixels",
                    self.n_segments,
                    self.labels.len()
                ),
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMethod {
    None,
    BilinearUpsample,
    GaussianFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub method: SmoothingMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_shape: Option<(usize, usize)>,
}

impl SmoothingConfig {
    pub const NONE: SmoothingConfig = SmoothingConfig {
        method: SmoothingMethod::None,
        sigma: None,
        grid_shape: None,
    };

    pub fn gaussian(sigma: f64) -> Self {
        Self {
            method: SmoothingMethod::GaussianFilter,
            sigma: Some(sigma),
            grid_shape: None,
        }
    }

    pub fn bilinear(rows: usize, cols: usize) -> Self {
        Self {
            method: SmoothingMethod::BilinearUpsample,
            sigma: None,
            grid_shape: Some((rows, cols)),
        }
    }
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self::NONE
    }
}

impl Validate for SmoothingConfig {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        match self.method {
            SmoothingMethod::GaussianFilter => match self.sigma {
                Some(s) if s > 0.0 && s.is_finite() => {}
                other => out.push(Violation::new(
                    "sigma",
                    format!("gaussian smoothing needs a positive sigma, got {other:?}"),
                )),
            },
            SmoothingMethod::BilinearUpsample => match self.grid_shape {
                Some((r, c)) if r >= 1 && c >= 1 => {}
                other => out.push(Violation::new(
                    "grid shape",
                    format!("bilinear smoothing needs a grid shape, got {other:?}"),
                )),
            },
            SmoothingMethod::None => {}
        }
        out
    }
}

// ---------------------------------------------------------------------------

/// One perturbedness mask per segment (1 = fully perturbed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMaskStack {
    pub n_segments: usize,
    pub height: usize,
    pub width: usize,
    #[serde(with = "codec::serde_masks")]
    pub masks: Vec<Vec<f64>>,
    pub smoothing: SmoothingConfig,
}

/// Slack allowed on the pixelwise partition sum.
pub const PARTITION_TOLERANCE: f64 = 1e-6;

impl SegmentMaskStack {
    pub fn mask(&self, segment: usize) -> &[f64] {
        &self.masks[segment]
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Pixelwise sum over all segment masks.
    pub fn partition_sum(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.n_pixels()];
        for m in &self.masks {
            for (acc, &v) in sum.iter_mut().zip(m) {
                *acc += v;
            }
        }
        sum
    }
}

impl Validate for SegmentMaskStack {
    fn violations(&self) -> Vec<Violation> {
        let mut out = self.smoothing.violations();
        if self.masks.len() != self.n_segments {
            out.push(Violation::new(
                "mask count",
                format!(
                    "expected {} masks, got {}",
                    self.n_segments,
                    self.masks.len()
                ),
            ));
        }
        let n = self.height.checked_mul(self.width);
        if let Some(bad) = self.masks.iter().position(|m| Some(m.len()) != n) {
            out.push(Violation::new(
                "mask size",
                format!(
                    "mask {bad} does not have {}x{} values",
                    self.height, self.width
                ),
            ));
            return out;
        }
        if self
            .masks
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            out.push(Violation::new("mask range", "mask value outside [0,1]"));
        }
        if let Some((p, s)) = self
            .partition_sum()
            .into_iter()
            .enumerate()
            .find(|(_, s)| *s > 1.0 + PARTITION_TOLERANCE)
        {
            out.push(Violation::new(
                "partition sum exceeded",
                format!("masks sum to {s} at pixel {p}"),
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOrigin {
    OnlyOne,
    AllButOne,
    Random,
    Entropic,
}

/// Binary matrix of samples × segments; `true` means the segment is perturbed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSet {
    pub n_samples: usize,
    pub n_segments: usize,
    #[serde(with = "codec::serde_bits")]
    pub indicators: Vec<Vec<bool>>,
    pub origin: SampleOrigin,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Set when fewer rows than requested could be produced.
    #[serde(default)]
    pub truncated: bool,
}

impl SampleSet {
    pub fn row(&self, i: usize) -> &[bool] {
        &self.indicators[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[bool]> {
        self.indicators.iter().map(Vec::as_slice)
    }

    /// Surrogate features: 1 where the segment is kept, 0 where perturbed.
    pub fn kept(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.indicators[i]
            .iter()
            .map(|&p| if p { 0.0 } else { 1.0 })
    }
}

impl Validate for SampleSet {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.indicators.len() != self.n_samples {
            out.push(Violation::new(
                "sample count",
                format!(
                    "expected {} rows, got {}",
                    self.n_samples,
                    self.indicators.len()
                ),
            ));
        }
        if let Some(bad) = self
            .indicators
            .iter()
            .position(|r| r.len() != self.n_segments)
        {
            out.push(Violation::new(
                "row width",
                format!("row {bad} does not have {} entries", self.n_segments),
            ));
        }
        if matches!(self.origin, SampleOrigin::OnlyOne | SampleOrigin::AllButOne) {
            if self.n_samples != self.n_segments + 1 {
                out.push(Violation::new(
                    "sample count",
                    format!(
                        "{:?} sampling needs n_segments + 1 = {} rows, got {}",
                        self.origin,
                        self.n_segments + 1,
                        self.n_samples
                    ),
                ));
            }
            if !self.indicators.iter().any(|r| r.iter().all(|&b| !b)) {
                out.push(Violation::new("reference row", "missing the all-zeros row"));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_index: usize,
    /// Score of the explained class.
    pub output: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_scores: Option<Vec<f32>>,
}

/// A batch of prediction records for one sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionRecords(pub Vec<PredictionRecord>);

impl PredictionRecords {
    pub fn from_outputs(outputs: &[f64]) -> Self {
        Self(
            outputs
                .iter()
                .enumerate()
                .map(|(i, &output)| PredictionRecord {
                    sample_index: i,
                    output,
                    full_scores: None,
                })
                .collect(),
        )
    }

    /// Outputs ordered by sample index. Assumes the records validate.
    pub fn outputs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.0.len()];
        for r in &self.0 {
            out[r.sample_index] = r.output;
        }
        out
    }
}

impl Validate for PredictionRecords {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = vec![false; self.0.len()];
        for r in &self.0 {
            match seen.get_mut(r.sample_index) {
                Some(s) if !*s => *s = true,
                Some(_) => out.push(Violation::new(
                    "duplicate index",
                    format!("sample {} recorded twice", r.sample_index),
                )),
                None => out.push(Violation::new(
                    "sparse index",
                    format!("sample index {} out of 0..{}", r.sample_index, self.0.len()),
                )),
            }
            if !r.output.is_finite() {
                out.push(Violation::new(
                    "non-finite value",
                    format!("sample {} has output {}", r.sample_index, r.output),
                ));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ciu,
    Pda,
    Lime,
    Shap,
    Rise,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ciu,
        Method::Pda,
        Method::Lime,
        Method::Shap,
        Method::Rise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ciu => "ciu",
            Method::Pda => "pda",
            Method::Lime => "lime",
            Method::Shap => "shap",
            Method::Rise => "rise",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ciu" => Ok(Method::Ciu),
            "pda" => Ok(Method::Pda),
            "lime" => Ok(Method::Lime),
            "shap" => Ok(Method::Shap),
            "rise" => Ok(Method::Rise),
            _ => Err(Error::InvalidArgument(format!(
                "unknown attribution method {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub segment_weights: Vec<f64>,
    #[serde(default)]
    pub pixel_map: Option<PixelMap>,
    pub method: Method,
    pub reference_output: f64,
    /// Conditions worth surfacing (rank deficiency, degenerate outputs, ...).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl AttributionResult {
    pub fn n_segments(&self) -> usize {
        self.segment_weights.len()
    }

    /// Checks against the image and segmentation the result belongs to.
    pub fn violations_for(&self, n_segments: usize, height: usize, width: usize) -> Vec<Violation> {
        let mut out = self.violations();
        if self.segment_weights.len() != n_segments {
            out.push(Violation::new(
                "weight count",
                format!(
                    "expected {n_segments} weights, got {}",
                    self.segment_weights.len()
                ),
            ));
        }
        if let Some(m) = &self.pixel_map {
            if m.height != height || m.width != width {
                out.push(Violation::new(
                    "pixel map dims",
                    format!(
                        "pixel map is {}x{}, image is {height}x{width}",
                        m.height, m.width
                    ),
                ));
            }
        }
        out
    }
}

impl Validate for AttributionResult {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.segment_weights.is_empty() {
            out.push(Violation::new("weight count", "no segment weights"));
        }
        if let Some(m) = &self.pixel_map {
            out.extend(m.violations());
        }
        out
    }
}
