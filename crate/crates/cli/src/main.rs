use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::Value;

use perturb_xai::evaluation::srg;
use perturb_xai::harness::config::{parse_color, parse_smoothing};
use perturb_xai::harness::{
    build_model, explain, load_images, render_heatmap, run_matrix, synthetic_image,
    synthetic_model, write_results, ExperimentConfig, ImageSource, MatrixOptions, ModelSource,
    PipelineConfig, RunInputs, SamplerConfig, SegmenterConfig, DEFAULT_BATCH_SIZE,
};
use perturb_xai::model::{serve, Endpoint, ExternalOptions, Predictor};
use perturb_xai::types::{ColorSpace, Image, Method, Validate};
use perturb_xai::Error;

const MODEL_ENV: &str = "PERTURB_XAI_MODEL";

#[derive(Parser)]
#[command(
    name = "perturb-xai",
    version,
    about = "Perturbation-based image attribution and faithfulness scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain one image: writes heatmap.png and weights.json.
    Explain(ExplainArgs),
    /// Run a pipeline matrix and write CSV results.
    Evaluate(EvaluateArgs),
    /// Check that a model server speaks the protocol correctly.
    ServeCheck(ServeCheckArgs),
    /// Serve a synthetic additive model over stdin/stdout.
    #[command(hide = true)]
    ServeAdditive(ServeAdditiveArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// additive:SEED, tcp://HOST:PORT or exec:COMMAND. Falls back to the
    /// config file, then to $PERTURB_XAI_MODEL.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seconds to wait for each model response.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
}

/// Pipeline fields. `evaluate` accepts comma-separated lists, which become
/// matrix dimensions.
#[derive(Args, Default)]
struct PipelineFlags {
    /// grid:RxC or slic:N[:COMPACTNESS[:ITERS]]
    #[arg(long)]
    segmenter: Option<String>,
    /// none, bilinear or gaussian:SIGMA
    #[arg(long)]
    smoothing: Option<String>,
    /// only_one, all_but_one, random:N[:SEED] or entropic:N
    #[arg(long)]
    sampler: Option<String>,
    /// ciu, pda, lime, shap or rise
    #[arg(long)]
    attribution: Option<String>,
    /// segment or pixel
    #[arg(long)]
    granularity: Option<String>,
    /// image_mean or fixed:R/G/B
    #[arg(long)]
    color: Option<String>,
    #[arg(long)]
    steps: Option<String>,
}

#[derive(Args)]
struct ExplainArgs {
    /// PNG path, or synthetic:SEED:HxW
    #[arg(long)]
    image: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineFlags,
    #[command(flatten)]
    model: ModelArgs,
    /// Class to explain; defaults to the top predicted class.
    #[arg(long)]
    target_class: Option<usize>,
    /// Also compute LIF, MIF and SRG for the attribution.
    #[arg(long)]
    score: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineFlags,
    #[command(flatten)]
    model: ModelArgs,
    /// synthetic:COUNT:HxW[:SEED], or a comma-separated list of PNG paths
    #[arg(long)]
    images: Option<String>,
    #[arg(long)]
    target_class: Option<usize>,
    /// Process images one at a time.
    #[arg(long)]
    sequential: bool,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeCheckArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct ServeAdditiveArgs {
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    classes: usize,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

type ParseFn = fn(&str) -> perturb_xai::Result<Value>;

fn parse_values(field: &str, raw: &str, allow_list: bool, parse: ParseFn) -> Result<Vec<Value>> {
    let parts: Vec<&str> = if allow_list {
        raw.split(',').collect()
    } else {
        vec![raw]
    };
    parts
        .into_iter()
        .map(|p| parse(p.trim()).with_context(|| format!("--{field}")))
        .collect()
}

impl PipelineFlags {
    fn apply(&self, exp: &mut ExperimentConfig, allow_list: bool) -> Result<()> {
        let dims: [(&str, &Option<String>, ParseFn); 7] = [
            ("segmenter", &self.segmenter, |s| {
                Ok(serde_json::to_value(s.parse::<SegmenterConfig>()?)?)
            }),
            ("smoothing", &self.smoothing, |s| {
                Ok(serde_json::to_value(parse_smoothing(s)?)?)
            }),
            ("sampler", &self.sampler, |s| {
                Ok(serde_json::to_value(s.parse::<SamplerConfig>()?)?)
            }),
            ("attribution", &self.attribution, |s| {
                s.parse::<Method>()
                    .map_err(|e| Error::Config(e.to_string()))
                    .and_then(|m| Ok(serde_json::to_value(m)?))
            }),
            ("granularity", &self.granularity, |s| {
                Ok(serde_json::to_value(
                    s.parse::<perturb_xai::harness::Granularity>()?,
                )?)
            }),
            ("color", &self.color, |s| {
                Ok(serde_json::to_value(parse_color(s)?)?)
            }),
            ("steps", &self.steps, |s| {
                s.parse::<usize>()
                    .map(Value::from)
                    .map_err(|_| Error::Config(format!("bad steps {s:?}")))
            }),
        ];
        for (field, raw, parse) in dims {
            if let Some(raw) = raw {
                let values = parse_values(field, raw, allow_list, parse)?;
                if allow_list {
                    exp.set_dimension(field, values)?;
                } else {
                    exp.matrix.remove(field);
                    exp.pipeline.insert(
                        field.to_string(),
                        values.into_iter().next().expect("one value"),
                    );
                }
            }
        }
        Ok(())
    }
}

fn read_experiment(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| config_error(format!("reading {}: {e}", p.display())))?;
            Ok(ExperimentConfig::parse(&text)?)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn model_string(arg: Option<&str>, file: Option<&str>) -> Result<String> {
    arg.or(file)
        .map(str::to_string)
        .or_else(|| std::env::var(MODEL_ENV).ok().filter(|v| !v.is_empty()))
        .ok_or_else(|| config_error(format!("no model given: pass --model or set {MODEL_ENV}")))
}

fn model_source(arg: Option<&str>, file: Option<&str>) -> Result<ModelSource> {
    Ok(model_string(arg, file)?.parse()?)
}

fn external_options(args: &ModelArgs, file_batch: Option<usize>) -> Result<ExternalOptions> {
    let batch_size = args.batch_size.or(file_batch).unwrap_or(DEFAULT_BATCH_SIZE);
    if batch_size == 0 {
        return Err(config_error("batch size must be positive"));
    }
    Ok(ExternalOptions {
        timeout: Duration::from_secs(args.timeout.max(1)),
        batch_size,
    })
}

fn parse_image_arg(raw: &str) -> Result<(String, Image)> {
    if let Some(rest) = raw.strip_prefix("synthetic:") {
        let (seed, dims) = rest
            .split_once(':')
            .ok_or_else(|| config_error("expected synthetic:SEED:HxW"))?;
        let (h, w) = dims
            .split_once('x')
            .ok_or_else(|| config_error("expected synthetic:SEED:HxW"))?;
        let (seed, h, w): (u64, usize, usize) = match (seed.parse(), h.parse(), w.parse()) {
            (Ok(s), Ok(h), Ok(w)) if h > 0 && w > 0 => (s, h, w),
            _ => return Err(config_error(format!("bad synthetic image {raw:?}"))),
        };
        return Ok((format!("synthetic-{seed}"), synthetic_image(h, w, seed)));
    }
    let path = PathBuf::from(raw);
    let mut images = load_images(&ImageSource::Files { paths: vec![path] })
        .map_err(|e| config_error(format!("loading {raw}: {e}")))?;
    Ok(images.remove(0))
}

fn parse_images_arg(raw: &str) -> Result<ImageSource> {
    if let Some(rest) = raw.strip_prefix("synthetic:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let bad = || {
            config_error(format!(
                "bad image source {raw:?} (expected synthetic:COUNT:HxW[:SEED])"
            ))
        };
        let (count, dims, seed) = match parts.as_slice() {
            [c, d] => (c, d, "0"),
            [c, d, s] => (c, d, *s),
            _ => return Err(bad()),
        };
        let (h, w) = dims.split_once('x').ok_or_else(bad)?;
        return Ok(ImageSource::Synthetic {
            count: count.parse().map_err(|_| bad())?,
            height: h.parse().map_err(|_| bad())?,
            width: w.parse().map_err(|_| bad())?,
            seed: seed.parse().map_err(|_| bad())?,
        });
    }
    Ok(ImageSource::Files {
        paths: raw.split(',').map(PathBuf::from).collect(),
    })
}

fn single_pipeline(exp: &ExperimentConfig) -> Result<PipelineConfig> {
    let (mut configs, _) = exp.expand()?;
    if configs.len() != 1 {
        return Err(config_error(
            "explain takes a single pipeline; remove the matrix section",
        ));
    }
    Ok(configs.remove(0))
}

fn run_explain(args: ExplainArgs) -> Result<u8> {
    let mut exp = read_experiment(args.config.as_deref())?;
    args.pipeline.apply(&mut exp, false)?;
    let config = single_pipeline(&exp)?;
    let (id, image) = parse_image_arg(&args.image)?;
    let source = model_source(args.model.model.as_deref(), exp.model.as_deref())?;
    let options = external_options(&args.model, exp.batch_size)?;
    let model = build_model(
        &source,
        (image.height, image.width, image.channels),
        options,
    )?;
    model.spec().check_images(std::slice::from_ref(&image))?;

    info!("explaining {id} with {}", config.label());
    let explanation = explain(
        &model,
        &image,
        &config,
        args.target_class,
        options.batch_size,
    )?;
    let map = explanation
        .result
        .pixel_map
        .as_ref()
        .expect("pipeline attaches a map");
    fs::create_dir_all(&args.out)?;
    let heatmap = args.out.join("heatmap.png");
    render_heatmap(map, &image, &heatmap)?;

    let score = if args.score {
        let color = config.color.resolve(&image)?;
        Some(srg(
            &model,
            &image,
            map,
            explanation.target_class,
            config.steps,
            &color,
        )?)
    } else {
        None
    };
    let report = serde_json::json!({
        "image": id,
        "model": model.spec().identity,
        "config": config,
        "config_hash": config.hash(),
        "target_class": explanation.target_class,
        "n_samples": explanation.n_samples,
        "images_predicted": explanation.images_predicted,
        "segment_weights": explanation.result.segment_weights,
        "reference_output": explanation.result.reference_output,
        "flags": explanation.result.flags,
        "faithfulness": score,
    });
    fs::write(
        args.out.join("weights.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "wrote {} and {}",
        heatmap.display(),
        args.out.join("weights.json").display()
    );
    if let Some(s) = score {
        println!("lif={:.6} mif={:.6} srg={:.6}", s.lif, s.mif, s.srg);
    }
    Ok(0)
}

fn run_evaluate(args: EvaluateArgs) -> Result<u8> {
    let mut exp = read_experiment(args.config.as_deref())?;
    args.pipeline.apply(&mut exp, true)?;
    if let Some(raw) = &args.images {
        exp.images = parse_images_arg(raw)?;
    }
    let (configs, skipped) = exp.expand()?;
    for s in &skipped {
        warn!("skipping {}: {}", s.config, s.reason);
    }
    let images = load_images(&exp.images).map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(format!("loading images: {other}")),
    })?;
    let first = &images[0].1;
    if images.iter().any(|(_, img)| !img.same_dims(first)) {
        return Err(config_error("all images must share one size"));
    }
    let source = model_source(args.model.model.as_deref(), exp.model.as_deref())?;
    let options = external_options(&args.model, exp.batch_size)?;
    let model = build_model(
        &source,
        (first.height, first.width, first.channels),
        options,
    )?;
    model.spec().check_images(std::slice::from_ref(first))?;

    info!("{} pipelines x {} images", configs.len(), images.len());
    let output = run_matrix(
        &configs,
        &images,
        &model,
        MatrixOptions {
            batch_size: options.batch_size,
            target_class: args.target_class,
            parallel: !args.sequential,
        },
    );
    let run = RunInputs {
        configs: &configs,
        skipped: &skipped,
        images: &images,
        model_source: &source,
        spec: model.spec(),
        batch_size: options.batch_size,
    };
    let files = write_results(&args.out, run, &output)?;
    println!(
        "{} records, {} failures -> {}",
        output.records.len(),
        output.failures.len(),
        files.records.display()
    );
    if output.failures.is_empty() {
        return Ok(0);
    }
    for f in &output.failures {
        warn!("{} on {}: {}", f.config_hash, f.image_id, f.error);
    }
    if output.records.is_empty() && output.failures.iter().all(|f| f.transport) {
        return Ok(2);
    }
    Ok(3)
}

/// Probe a server: handshake, empty batch, repeated images, ordering and
/// batch splitting. Prints one line per check.
fn run_serve_check(args: ServeCheckArgs) -> Result<u8> {
    let endpoint: Endpoint = model_string(args.model.model.as_deref(), None)?.parse()?;
    let mut options = external_options(&args.model, None)?;
    options.batch_size = options.batch_size.min(3);
    let model = perturb_xai::model::connect_external(&endpoint, options)?;
    let spec = model.spec().clone();
    println!(
        "PASS handshake: {} input {:?}, {} classes",
        spec.identity, spec.input, spec.n_classes
    );

    let mut failed = 0;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed += 1;
        }
    };
    check(
        "spec",
        spec.validate().is_ok(),
        format!("{:?}", spec.output_semantics),
    );

    let empty = model.predict_batch(&[])?;
    check(
        "empty batch",
        empty.is_empty(),
        format!("{} vectors", empty.len()),
    );

    let (h, w, c) = spec.input;
    let probes: Vec<Image> = (0..5)
        .map(|i| {
            let img = synthetic_image(h, w, i);
            if c == 3 {
                img
            } else {
                let data = img
                    .data
                    .chunks_exact(3)
                    .map(|p| (p[0] + p[1] + p[2]) / 3.0)
                    .collect();
                Image::new(h, w, 1, data, ColorSpace::Unit0To1).expect("gray probe")
            }
        })
        .collect();
    let repeated = vec![probes[0].clone(); 4];
    let scores = model.predict_batch(&repeated)?;
    let tol = spec.determinism_tolerance;
    let max_dev = scores
        .iter()
        .flat_map(|s| s.iter().zip(&scores[0]).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    check(
        "determinism",
        scores.len() == 4 && scores.iter().all(|s| s.len() == spec.n_classes) && max_dev <= tol,
        format!("max deviation {max_dev:e} (tolerance {tol:e})"),
    );

    let together = model.predict_batch(&probes)?;
    let mut max_dev: f64 = 0.0;
    for (i, img) in probes.iter().enumerate() {
        let alone = model.predict_batch(std::slice::from_ref(img))?;
        for (a, b) in alone[0].iter().zip(&together[i]) {
            max_dev = max_dev.max((a - b).abs());
        }
    }
    check(
        "order across batches",
        together.len() == probes.len() && max_dev <= tol,
        format!(
            "{} images split into batches of {}, max deviation {max_dev:e}",
            probes.len(),
            options.batch_size
        ),
    );

    Ok(if failed == 0 { 0 } else { 2 })
}

fn run_serve_additive(args: ServeAdditiveArgs) -> Result<u8> {
    let model = synthetic_model(
        args.seed,
        (args.height, args.width, args.channels),
        args.classes,
    )?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve(&model, stdin.lock(), stdout.lock())?;
    Ok(0)
}

fn exit_status(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_transport() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Explain(a) => run_explain(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::ServeCheck(a) => run_serve_check(a),
        Command::ServeAdditive(a) => run_serve_additive(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
