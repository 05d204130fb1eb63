//! Run many pipelines over many images, sharing model calls where the
//! pipelines agree on everything before attribution.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{smoothing_label, PipelineConfig};
use super::pipeline::{attribute_calls, collect_model_calls, ModelCalls};
use crate::error::Result;
use crate::evaluation::srg;
use crate::model::Predictor;
use crate::types::Image;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config_index: usize,
    pub image_id: String,
    pub model: String,
    pub target_class: usize,
    pub lif: f64,
    pub mif: f64,
    pub srg: f64,
    pub n_samples: usize,
    /// Not written to the CSV, which must not depend on timing.
    pub wall_time_ms: f64,
    /// True when the model calls were reused from an earlier pipeline.
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub config_hash: String,
    pub config_index: usize,
    pub image_id: String,
    pub error: String,
    pub transport: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub config_hash: String,
    pub label: String,
    pub n_images: usize,
    pub lif_pct: f64,
    pub mif_pct: f64,
    pub srg_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub table: &'static str,
    pub key: Vec<String>,
    pub n_records: usize,
    pub lif_pct: f64,
    pub mif_pct: f64,
    pub srg_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixOutput {
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
    /// Images sent to the model while building attributions (references
    /// included, faithfulness scoring excluded).
    pub attribution_images: usize,
    pub cache_hits: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct MatrixOptions {
    pub batch_size: usize,
    pub target_class: Option<usize>,
    pub parallel: bool,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        Self {
            batch_size: super::pipeline::DEFAULT_BATCH_SIZE,
            target_class: None,
            parallel: true,
        }
    }
}

/// Key for sharing model calls within one image.
fn cache_key(config: &PipelineConfig) -> String {
    serde_json::to_string(&(
        &config.segmenter,
        &config.smoothing,
        &config.sampler,
        &config.color,
    ))
    .expect("config parts serialize")
}

struct ImageOutcome {
    records: Vec<RunRecord>,
    failures: Vec<RunFailure>,
    images: usize,
    hits: usize,
}

fn run_image<P: Predictor + ?Sized>(
    predictor: &P,
    configs: &[PipelineConfig],
    hashes: &[String],
    index: usize,
    id: &str,
    image: &Image,
    options: MatrixOptions,
) -> ImageOutcome {
    // Failed model calls are cached too, as (message, is_transport).
    let mut cache: HashMap<String, std::result::Result<ModelCalls, (String, bool)>> =
        HashMap::new();
    let mut out = ImageOutcome {
        records: Vec::new(),
        failures: Vec::new(),
        images: 0,
        hits: 0,
    };
    let model = predictor.spec().identity.clone();
    for (ci, config) in configs.iter().enumerate() {
        let started = Instant::now();
        let key = cache_key(config);
        let cached = cache.contains_key(&key);
        let calls = cache.entry(key).or_insert_with(|| {
            collect_model_calls(
                predictor,
                image,
                index as u64,
                config,
                options.target_class,
                options.batch_size,
            )
            .map_err(|e| (e.to_string(), e.is_transport()))
        });
        let fail = |(error, transport): (String, bool), out: &mut ImageOutcome| {
            out.failures.push(RunFailure {
                config_hash: hashes[ci].clone(),
                config_index: ci,
                image_id: id.to_string(),
                error,
                transport,
            })
        };
        let calls = match calls {
            Ok(c) => c,
            Err(e) => {
                fail(e.clone(), &mut out);
                continue;
            }
        };
        if cached {
            out.hits += 1;
        } else {
            out.images += calls.images_predicted;
        }
        let scored: Result<_> = attribute_calls(calls, config).and_then(|exp| {
            let map = exp
                .result
                .pixel_map
                .as_ref()
                .expect("pipeline attaches a map");
            let score = srg(
                predictor,
                image,
                map,
                exp.target_class,
                config.steps,
                &calls.color,
            )?;
            Ok((exp, score))
        });
        match scored {
            Ok((exp, score)) => out.records.push(RunRecord {
                config_hash: hashes[ci].clone(),
                config_index: ci,
                image_id: id.to_string(),
                model: model.clone(),
                target_class: exp.target_class,
                lif: score.lif,
                mif: score.mif,
                srg: score.srg,
                n_samples: exp.n_samples,
                wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
                cached,
            }),
            Err(e) => fail((e.to_string(), e.is_transport()), &mut out),
        }
    }
    out
}

/// Every (config, image) pair. Failures are recorded and never stop the run.
/// Records come back ordered by image, then config.
pub fn run_matrix<P: Predictor + ?Sized>(
    configs: &[PipelineConfig],
    images: &[(String, Image)],
    predictor: &P,
    options: MatrixOptions,
) -> MatrixOutput {
    let hashes: Vec<String> = configs.iter().map(PipelineConfig::hash).collect();
    let work = |(i, (id, img)): (usize, &(String, Image))| {
        run_image(predictor, configs, &hashes, i, id, img, options)
    };
    let outcomes: Vec<ImageOutcome> = if options.parallel {
        images.par_iter().enumerate().map(work).collect()
    } else {
        images.iter().enumerate().map(work).collect()
    };
    let mut out = MatrixOutput {
        records: Vec::new(),
        failures: Vec::new(),
        attribution_images: 0,
        cache_hits: 0,
    };
    for o in outcomes {
        out.records.extend(o.records);
        out.failures.extend(o.failures);
        out.attribution_images += o.images;
        out.cache_hits += o.hits;
    }
    out
}

fn mean_pct<'a>(records: impl Iterator<Item = &'a RunRecord>) -> (usize, f64, f64, f64) {
    let (mut n, mut l, mut m, mut s) = (0, 0.0, 0.0, 0.0);
    for r in records {
        n += 1;
        l += r.lif;
        m += r.mif;
        s += r.srg;
    }
    let d = n.max(1) as f64;
    (n, 100.0 * l / d, 100.0 * m / d, 100.0 * s / d)
}

/// One row per configuration with at least one record, in config order.
pub fn aggregate(configs: &[PipelineConfig], records: &[RunRecord]) -> Vec<AggregateRow> {
    configs
        .iter()
        .enumerate()
        .filter_map(|(ci, cfg)| {
            let (n, lif_pct, mif_pct, srg_pct) =
                mean_pct(records.iter().filter(|r| r.config_index == ci));
            (n > 0).then(|| AggregateRow {
                config_hash: cfg.hash(),
                label: cfg.label(),
                n_images: n,
                lif_pct,
                mif_pct,
                srg_pct,
            })
        })
        .collect()
}

/// Means in percent grouped as (sampling × attribution) and
/// (segmentation × granularity × attribution).
pub fn grouped(configs: &[PipelineConfig], records: &[RunRecord]) -> Vec<GroupRow> {
    type Key = fn(&PipelineConfig) -> Vec<String>;
    let tables: [(&'static str, Key); 2] = [
        ("sampling_attribution", |c| {
            vec![c.sampler.group_label(), c.attribution.to_string()]
        }),
        ("segmentation_granularity_attribution", |c| {
            vec![
                format!("{}+{}", c.segmenter, smoothing_label(&c.smoothing)),
                c.granularity.to_string(),
                c.attribution.to_string(),
            ]
        }),
    ];
    let mut rows = Vec::new();
    for (table, key) in tables {
        let mut groups: BTreeMap<Vec<String>, Vec<&RunRecord>> = BTreeMap::new();
        for r in records {
            groups
                .entry(key(&configs[r.config_index]))
                .or_default()
                .push(r);
        }
        for (k, rs) in groups {
            let (n, lif_pct, mif_pct, srg_pct) = mean_pct(rs.into_iter());
            rows.push(GroupRow {
                table,
                key: k,
                n_records: n,
                lif_pct,
                mif_pct,
                srg_pct,
            });
        }
    }
    rows
}

/// Column order of [`records_csv`].
pub const RECORD_COLUMNS: [&str; 14] = [
    "config_hash",
    "image_id",
    "model",
    "segmenter",
    "smoothing",
    "sampler",
    "attribution",
    "granularity",
    "steps",
    "target_class",
    "n_samples",
    "lif",
    "mif",
    "srg",
];

fn write_csv<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.write_record(row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("fields are UTF-8")
}

/// One row per record, columns as in [`RECORD_COLUMNS`]. Scores use Rust's
/// shortest round-trip float formatting in exponent form.
pub fn records_csv(configs: &[PipelineConfig], records: &[RunRecord]) -> String {
    write_csv(
        &RECORD_COLUMNS,
        records.iter().map(|r| {
            let c = &configs[r.config_index];
            [
                r.config_hash.clone(),
                r.image_id.clone(),
                r.model.clone(),
                c.segmenter.to_string(),
                smoothing_label(&c.smoothing),
                c.sampler.to_string(),
                c.attribution.to_string(),
                c.granularity.to_string(),
                c.steps.to_string(),
                r.target_class.to_string(),
                r.n_samples.to_string(),
                format!("{:e}", r.lif),
                format!("{:e}", r.mif),
                format!("{:e}", r.srg),
            ]
        }),
    )
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    write_csv(
        &[
            "config_hash",
            "label",
            "n_images",
            "lif_pct",
            "mif_pct",
            "srg_pct",
        ],
        rows.iter().map(|r| {
            [
                r.config_hash.clone(),
                r.label.clone(),
                r.n_images.to_string(),
                format!("{:.4}", r.lif_pct),
                format!("{:.4}", r.mif_pct),
                format!("{:.4}", r.srg_pct),
            ]
        }),
    )
}

pub fn grouped_csv(rows: &[GroupRow]) -> String {
    write_csv(
        &[
            "table",
            "group",
            "n_records",
            "lif_pct",
            "mif_pct",
            "srg_pct",
        ],
        rows.iter().map(|r| {
            [
                r.table.to_string(),
                r.key.join(" | "),
                r.n_records.to_string(),
                format!("{:.4}", r.lif_pct),
                format!("{:.4}", r.mif_pct),
                format!("{:.4}", r.srg_pct),
            ]
        }),
    )
}
