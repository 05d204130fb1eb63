//! Configuration-driven pipelines, the evaluation matrix, result files and
//! heatmaps.

pub mod config;
mod heatmap;
mod matrix;
mod pipeline;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

pub use config::{
    ColorPolicy, ExperimentConfig, Granularity, ImageSource, ModelSource, PipelineConfig,
    SamplerConfig, SegmenterConfig, SkippedCombination,
};
pub use heatmap::{heatmap_rgb, render_heatmap, to_rgb8, ALPHA, HIGH_COLOR, LOW_COLOR};
pub use matrix::{
    aggregate, aggregate_csv, grouped, grouped_csv, records_csv, run_matrix, AggregateRow,
    GroupRow, MatrixOptions, MatrixOutput, RunFailure, RunRecord, RECORD_COLUMNS,
};
pub use pipeline::{
    attribute_calls, collect_model_calls, draw_samples, explain, segment, Explanation, ModelCalls,
    DEFAULT_BATCH_SIZE,
};

use crate::error::{Error, Result};
use crate::model::{
    connect_external, make_additive_model, AdditiveModel, ExternalOptions, Predictor, PredictorSpec,
};
use crate::types::{ColorSpace, Image};

/// A smooth RGB test image: a few colored Gaussian blobs over a gradient,
/// drawn from ChaCha20 seeded with `seed`. Values lie in `[0, 1]`.
pub fn synthetic_image(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let base: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            (
                rng.random::<f64>() * height as f64,
                rng.random::<f64>() * width as f64,
                (0.1 + 0.3 * rng.random::<f64>()) * height.max(width) as f64,
                [
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                ],
            )
        })
        .collect();
    let mut data = Vec::with_capacity(height * width * 3);
    for r in 0..height {
        for c in 0..width {
            let g = (r + c) as f64 / (height + width).max(1) as f64;
            for ch in 0..3 {
                let mut v = 0.25 + 0.5 * base[ch] * g;
                for &(br, bc, s, amp) in &blobs {
                    let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
                    v += amp[ch] * (-d2 / (2.0 * s * s)).exp();
                }
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Image::new(height, width, 3, data, ColorSpace::Unit0To1).expect("synthetic image is valid")
}

/// Load a PNG (or any format the build supports) as RGB in `unit_0_1`.
pub fn load_image(path: &Path) -> Result<Image> {
    let rgb = image::open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb
        .into_raw()
        .into_iter()
        .map(|v| f32::from(v) / 255.0)
        .collect();
    Image::new(h as usize, w as usize, 3, data, ColorSpace::Unit0To1)
}

pub fn load_images(source: &ImageSource) -> Result<Vec<(String, Image)>> {
    match source {
        ImageSource::Synthetic {
            count,
            height,
            width,
            seed,
        } => {
            if *count == 0 || *height == 0 || *width == 0 {
                return Err(Error::Config(
                    "synthetic images need a positive count and size".into(),
                ));
            }
            Ok((0..*count)
                .map(|i| {
                    let s = seed.wrapping_add(i as u64);
                    (
                        format!("synthetic-{s}"),
                        synthetic_image(*height, *width, s),
                    )
                })
                .collect())
        }
        ImageSource::Files { paths } => {
            if paths.is_empty() {
                return Err(Error::Config("no image files listed".into()));
            }
            paths
                .iter()
                .map(|p| {
                    let id = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| p.display().to_string());
                    Ok((id, load_image(p)?))
                })
                .collect()
        }
    }
}

/// The synthetic model behind `additive:SEED`: coefficients from
/// [`AdditiveModel::random_coefficients`] divided by `H·W`, so unit-range
/// images score in `[0, 1]`. Class 0 is explained.
pub fn synthetic_model(
    seed: u64,
    input: (usize, usize, usize),
    n_classes: usize,
) -> Result<AdditiveModel> {
    let (h, w, c) = input;
    let mut coeff = AdditiveModel::random_coefficients(h, w, seed);
    let scale = (h * w) as f64;
    coeff.data.iter_mut().for_each(|k| *k /= scale);
    Ok(make_additive_model(coeff, c, 0, n_classes)?
        .with_identity(format!("additive:{seed}:{h}x{w}x{c}")))
}

/// Instantiate a model. Additive models take their input shape from
/// `input` and have 2 classes.
pub fn build_model(
    source: &ModelSource,
    input: (usize, usize, usize),
    options: ExternalOptions,
) -> Result<Box<dyn Predictor>> {
    match source {
        ModelSource::Additive { seed } => Ok(Box::new(synthetic_model(*seed, input, 2)?)),
        ModelSource::External(endpoint) => Ok(Box::new(connect_external(endpoint, options)?)),
    }
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    tool: &'static str,
    version: &'static str,
    model_source: String,
    model: &'a PredictorSpec,
    sampler_prng: &'static str,
    batch_size: usize,
    configs: Vec<SidecarConfig<'a>>,
    skipped: &'a [SkippedCombination],
    images: Vec<&'a str>,
    record_columns: [&'static str; 14],
    wall_time_ms: Vec<(&'a str, &'a str, f64)>,
    attribution_images: usize,
    cache_hits: usize,
    failures: &'a [RunFailure],
    environment: Environment,
}

#[derive(Debug, Serialize)]
struct SidecarConfig<'a> {
    hash: String,
    config: &'a PipelineConfig,
}

#[derive(Debug, Serialize)]
struct Environment {
    os: &'static str,
    arch: &'static str,
    threads: usize,
}

/// Paths written by [`write_results`].
#[derive(Debug, Clone)]
pub struct ResultFiles {
    pub records: PathBuf,
    pub aggregate: PathBuf,
    pub grouped: PathBuf,
    pub sidecar: PathBuf,
}

/// What a matrix run was asked to do, for the result files.
#[derive(Debug, Clone, Copy)]
pub struct RunInputs<'a> {
    pub configs: &'a [PipelineConfig],
    pub skipped: &'a [SkippedCombination],
    pub images: &'a [(String, Image)],
    pub model_source: &'a ModelSource,
    pub spec: &'a PredictorSpec,
    pub batch_size: usize,
}

/// Write `records.csv`, `aggregate.csv`, `grouped.csv` and `run.json` into `dir`.
pub fn write_results(dir: &Path, run: RunInputs<'_>, output: &MatrixOutput) -> Result<ResultFiles> {
    let RunInputs {
        configs,
        skipped,
        images,
        model_source,
        spec,
        batch_size,
    } = run;
    fs::create_dir_all(dir)?;
    let files = ResultFiles {
        records: dir.join("records.csv"),
        aggregate: dir.join("aggregate.csv"),
        grouped: dir.join("grouped.csv"),
        sidecar: dir.join("run.json"),
    };
    fs::write(&files.records, records_csv(configs, &output.records))?;
    fs::write(
        &files.aggregate,
        aggregate_csv(&aggregate(configs, &output.records)),
    )?;
    fs::write(
        &files.grouped,
        grouped_csv(&grouped(configs, &output.records)),
    )?;
    let sidecar = Sidecar {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        model_source: model_source.to_string(),
        model: spec,
        sampler_prng: crate::sampling::PRNG_NAME,
        batch_size,
        configs: configs
            .iter()
            .map(|c| SidecarConfig {
                hash: c.hash(),
                config: c,
            })
            .collect(),
        skipped,
        images: images.iter().map(|(id, _)| id.as_str()).collect(),
        record_columns: RECORD_COLUMNS,
        wall_time_ms: output
            .records
            .iter()
            .map(|r| (r.config_hash.as_str(), r.image_id.as_str(), r.wall_time_ms))
            .collect(),
        attribution_images: output.attribution_images,
        cache_hits: output.cache_hits,
        failures: &output.failures,
        environment: Environment {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            threads: rayon::current_num_threads(),
        },
    };
    fs::write(&files.sidecar, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(files)
}
