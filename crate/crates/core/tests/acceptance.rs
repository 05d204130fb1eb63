//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails without a recorded waiver.
//!
//! Run with `cargo test --test acceptance`.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::{
    brute_force_shapley, full_factorial, pearson, play, random_game, random_image,
    upsample_bilinear,
};
use perturb_xai::attribution::{
    attribute, attribute_pda, attribute_rise, expand_segments, fit_kernel_shap, fit_lime, ranking,
    ranking_rounded, References,
};
use perturb_xai::evaluation::{srg, DEFAULT_STEPS};
use perturb_xai::harness::{
    build_model, collect_model_calls, load_images, run_matrix, synthetic_image, synthetic_model,
    write_results, ExperimentConfig, MatrixOptions, ModelSource, PipelineConfig, RunInputs,
    SamplerConfig, SegmenterConfig,
};
use perturb_xai::masking::{combine, indicator_masks, smooth_bilinear, smooth_gaussian};
use perturb_xai::model::{make_additive_model, AdditiveModel, ExternalOptions, Predictor};
use perturb_xai::perturbation::perturb_batch;
use perturb_xai::segmentation::grid_segment;
use perturb_xai::types::{Image, Method, PixelMap, SampleSet, SegmentMaskStack};

struct Outcome {
    pass: bool,
    detail: String,
    /// Why a failure does not fail the run. Only set when the failing part
    /// is a documented deviation; every other part must still pass.
    waiver: Option<&'static str>,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome {
            pass,
            detail,
            waiver: None,
        }
    }
}

type Check = fn() -> Outcome;

const CIU_WAIVER: &str = "CIU as printed is not monotone in the output drop; see decisions ledger";

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let took = start.elapsed();
    (
        took < limit,
        format!("{:.2}s of {}s", took.as_secs_f64(), limit.as_secs()),
    )
}

fn exhaustive_rank_equivalence() -> Outcome {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut trials = 0;
    for n in 4..=10 {
        for seed in 0..8 {
            let game = random_game(n, 1000 * n as u64 + seed);
            let samples = full_factorial(n);
            let y = play(&game, &samples);
            let pda = attribute_pda(&samples, &y, game[(1 << n) - 1]).unwrap();
            let rise = attribute_rise(&samples, &y).unwrap();
            trials += 1;
            if ranking(&pda) != ranking(&rise) {
                mismatches.push((n, seed));
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(10), start);
    Outcome::new(
        mismatches.is_empty() && fast,
        format!("{trials} random games n=4..10, mismatches {mismatches:?}, {time}"),
    )
}

fn shapley_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut trials = 0;
    for n in 2..=10 {
        for seed in 0..4 {
            let game = random_game(n, 7 + 31 * n as u64 + seed);
            let samples = full_factorial(n);
            let y = play(&game, &samples);
            let fit = fit_kernel_shap(&samples, &y, game[(1 << n) - 1], game[0]).unwrap();
            for (w, phi) in fit.weights.iter().zip(brute_force_shapley(n, &game)) {
                worst = worst.max((w - phi).abs());
            }
            trials += 1;
        }
    }
    let (fast, time) = within(Duration::from_secs(30), start);
    Outcome::new(
        worst <= 1e-6 && fast,
        format!("{trials} games n=2..10, max |error| {worst:.2e} (limit 1e-6), {time}"),
    )
}

fn predict_rows(
    model: &AdditiveModel,
    image: &Image,
    stack: &SegmentMaskStack,
    samples: &SampleSet,
    color: &[f64],
) -> Vec<f64> {
    let mut batch = perturb_batch(image, stack, samples, color).unwrap();
    let mut out = Vec::new();
    while batch.remaining() > 0 {
        out.extend(
            batch
                .next_chunk(256)
                .unwrap()
                .iter()
                .map(|x| model.score(x)),
        );
    }
    out
}

fn additive_oracle() -> Outcome {
    let color = [0.5, 0.25, 0.75];
    let mut worst = 0.0f64;
    let mut rank_fail = Vec::new();
    let mut ciu_fail = Vec::new();
    let mut trials = 0;
    for (rows, cols) in [(2, 2), (2, 3), (3, 3), (3, 4)] {
        for seed in 0..3u64 {
            let img = random_image(16, 16, 100 + seed);
            let model = make_additive_model(
                AdditiveModel::random_coefficients(16, 16, 200 + seed),
                3,
                0,
                1,
            )
            .unwrap();
            let seg = grid_segment(16, 16, rows, cols).unwrap();
            let stack = indicator_masks(&seg);
            let n = seg.n_segments;
            let truth = model.segment_contributions(&img, &seg, &color);

            let samples = full_factorial(n);
            let y = predict_rows(&model, &img, &stack, &samples, &color);
            let refs = References {
                unperturbed: y[0],
                fully_perturbed: y[(1 << n) - 1],
            };
            let lime = fit_lime(&samples, &y).unwrap().weights;
            let shap = fit_kernel_shap(&samples, &y, refs.unperturbed, refs.fully_perturbed)
                .unwrap()
                .weights;
            for (w, t) in lime.iter().chain(&shap).zip(truth.iter().chain(&truth)) {
                worst = worst.max((w - t).abs());
            }
            let want = ranking(&truth);
            for m in [Method::Pda, Method::Rise] {
                if ranking(&attribute(m, &samples, &y, refs).unwrap().segment_weights) != want {
                    rank_fail.push(format!("{}@{rows}x{cols}/{seed}", m.name()));
                }
            }
            // CIU is only defined on only-one and all-but-one rows.
            for sampler in [SamplerConfig::OnlyOne, SamplerConfig::AllButOne] {
                let rows_set = perturb_xai::harness::draw_samples(&sampler, n, 0).unwrap();
                let yc = predict_rows(&model, &img, &stack, &rows_set, &color);
                let w = attribute(Method::Ciu, &rows_set, &yc, refs)
                    .unwrap()
                    .segment_weights;
                if ranking(&w) != want {
                    ciu_fail.push(format!("{}@{rows}x{cols}/{seed}", sampler.group_label()));
                }
            }
            trials += 1;
        }
    }
    let core_ok = worst <= 1e-8 && rank_fail.is_empty();
    let mut out = Outcome::new(
        core_ok && ciu_fail.is_empty(),
        format!(
            "{trials} models, LIME/SHAP max |w - truth| {worst:.2e} (limit 1e-8), PDA/RISE rank misses {rank_fail:?}, \
             CIU rank misses {}/{} (e.g. {:?})",
            ciu_fail.len(),
            2 * trials,
            &ciu_fail[..ciu_fail.len().min(3)]
        ),
    );
    if core_ok && !ciu_fail.is_empty() {
        out.waiver = Some(CIU_WAIVER);
    }
    out
}

fn scaled_additive(h: usize, w: usize, seed: u64) -> AdditiveModel {
    synthetic_model(seed, (h, w, 3), 2).unwrap()
}

fn method_collapse() -> Outcome {
    let methods = [
        Method::Pda,
        Method::Rise,
        Method::Ciu,
        Method::Lime,
        Method::Shap,
    ];
    let mut misses = vec![0usize; methods.len()];
    let mut sets = 0;
    for seed in 0..8u64 {
        let img = synthetic_image(16, 16, seed);
        let model = scaled_additive(16, 16, 50 + seed);
        for (rows, cols) in [(2, 2), (3, 3), (4, 4)] {
            for sampler in [SamplerConfig::OnlyOne, SamplerConfig::AllButOne] {
                let config = PipelineConfig {
                    segmenter: SegmenterConfig::Grid { rows, cols },
                    sampler,
                    ..Default::default()
                };
                let calls = collect_model_calls(&model, &img, 0, &config, Some(0), 64).unwrap();
                let rankings: Vec<Vec<usize>> = methods
                    .iter()
                    .map(|&m| {
                        let w = attribute(m, &calls.samples, &calls.outputs, calls.references)
                            .unwrap()
                            .segment_weights;
                        ranking_rounded(&w, 1e-9)
                    })
                    .collect();
                for (k, r) in rankings.iter().enumerate() {
                    if *r != rankings[0] {
                        misses[k] += 1;
                    }
                }
                sets += 1;
            }
        }
    }
    let summary: Vec<String> = methods
        .iter()
        .zip(&misses)
        .map(|(m, k)| format!("{} {}/{sets}", m.name(), sets - k))
        .collect();
    let others_ok = misses
        .iter()
        .enumerate()
        .all(|(k, &n)| methods[k] == Method::Ciu || n == 0);
    let mut out = Outcome::new(
        misses.iter().all(|&n| n == 0),
        format!("sets agreeing with PDA ranking: {}", summary.join(", ")),
    );
    if others_ok && !out.pass {
        out.waiver = Some(CIU_WAIVER);
    }
    out
}

/// Direct 2-D convolution with a normalized Gaussian, radius ceil(3σ),
/// mirrored borders (the edge pixel repeats).
fn direct_gaussian(data: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let g: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - 1 - i;
            } else {
                return i as usize;
            }
        }
    };
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (a, &gy) in g.iter().enumerate() {
                let rr = mirror(r as isize + a as isize - radius, h);
                for (b, &gx) in g.iter().enumerate() {
                    let cc = mirror(c as isize + b as isize - radius, w);
                    acc += gy * gx * data[rr * w + cc];
                }
            }
            out[r * w + c] = acc / norm;
        }
    }
    out
}

fn random_subsets(n: usize, count: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..n).map(|_| rng.random_bool(0.4)).collect())
        .collect()
}

fn max_partition_error(stack: &SegmentMaskStack) -> f64 {
    stack
        .partition_sum()
        .iter()
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

fn mask_linearity_and_partition() -> Outcome {
    let (size, cells, sigma) = (224, 7, 10.0);
    let seg = grid_segment(size, size, cells, cells).unwrap();
    let bilinear = smooth_bilinear(&indicator_masks(&seg), (cells, cells)).unwrap();
    let gaussian = smooth_gaussian(&indicator_masks(&seg), sigma).unwrap();
    let subsets = random_subsets(cells * cells, 3, 9);

    let mut bil_err = 0.0f64;
    let mut gau_err = 0.0f64;
    for subset in &subsets {
        let cell_union: Vec<f64> = subset.iter().map(|&b| f64::from(u8::from(b))).collect();
        let want = upsample_bilinear(&cell_union, cells, cells, size, size);
        let got = combine(&bilinear, subset).unwrap();
        bil_err = bil_err.max(
            got.data
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );

        let pixel_union: Vec<f64> = seg
            .labels
            .iter()
            .map(|&l| f64::from(u8::from(subset[l as usize])))
            .collect();
        let want = direct_gaussian(&pixel_union, size, size, sigma);
        let got = combine(&gaussian, subset).unwrap();
        gau_err = gau_err.max(
            got.data
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }
    let (bp, gp) = (
        max_partition_error(&bilinear),
        max_partition_error(&gaussian),
    );
    Outcome::new(
        bil_err <= 1e-6 && gau_err <= 1e-6 && bp <= 1e-6 && gp <= 1e-6,
        format!(
            "224x224 7x7 grid, {} unions: bilinear union {bil_err:.1e} partition {bp:.1e}; \
             gaussian(10) union {gau_err:.1e} partition {gp:.1e} (limit 1e-6)",
            subsets.len()
        ),
    )
}

fn gaussian_bilinear_similarity() -> Outcome {
    let seg = grid_segment(224, 224, 7, 7).unwrap();
    let bilinear = smooth_bilinear(&indicator_masks(&seg), (7, 7)).unwrap();
    let gaussian = smooth_gaussian(&indicator_masks(&seg), 10.0).unwrap();
    let corr: Vec<f64> = (0..49)
        .map(|s| pearson(bilinear.mask(s), gaussian.mask(s)))
        .collect();
    let min = corr.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = corr.iter().sum::<f64>() / corr.len() as f64;
    Outcome::new(
        min >= 0.9,
        format!("per-segment correlation min {min:.4}, mean {mean:.4} (limit 0.9)"),
    )
}

fn random_segment_map(seg: &perturb_xai::types::SegmentMap, rng: &mut ChaCha20Rng) -> PixelMap {
    let w: Vec<f64> = (0..seg.n_segments).map(|_| rng.random::<f64>()).collect();
    expand_segments(&w, seg).unwrap()
}

fn srg_sanity() -> Outcome {
    let start = Instant::now();
    let mut beaten = Vec::new();
    let mut worst_mean = 0.0f64;
    let mut true_srgs = Vec::new();
    for seed in 0..5u64 {
        let img = synthetic_image(16, 16, 300 + seed);
        let model = scaled_additive(16, 16, 400 + seed);
        let seg = grid_segment(16, 16, 4, 4).unwrap();
        let color = img.channel_means();
        let truth =
            expand_segments(&model.segment_contributions(&img, &seg, &color), &seg).unwrap();
        let t = srg(&model, &img, &truth, 0, DEFAULT_STEPS, &color)
            .unwrap()
            .srg;
        true_srgs.push(t);
        let mut rng = ChaCha20Rng::seed_from_u64(500 + seed);
        let random: Vec<f64> = (0..100)
            .map(|_| {
                srg(
                    &model,
                    &img,
                    &random_segment_map(&seg, &mut rng),
                    0,
                    DEFAULT_STEPS,
                    &color,
                )
                .unwrap()
                .srg
            })
            .collect();
        if let Some(r) = random[..20].iter().find(|&&r| r >= t) {
            beaten.push((seed, *r, t));
        }
        let mean = random.iter().sum::<f64>() / random.len() as f64;
        if mean.abs() > worst_mean.abs() {
            worst_mean = mean;
        }
    }
    let (fast, time) = within(Duration::from_secs(60), start);
    let min_true = true_srgs.iter().cloned().fold(f64::INFINITY, f64::min);
    Outcome::new(
        beaten.is_empty() && worst_mean.abs() <= 0.05 && fast,
        format!(
            "5 models, 16x16 image, 4x4 grid: true map SRG min {min_true:.4}, beaten by random {beaten:?}, \
             worst mean random SRG {worst_mean:+.5} (limit 0.05; {:.1}% of the smallest true SRG), {time}",
            100.0 * worst_mean.abs() / min_true
        ),
    )
}

fn srg_antisymmetry_and_invariance() -> Outcome {
    let mut failures = 0;
    let mut trials = 0;
    for seed in 0..20u64 {
        let img = synthetic_image(12, 12, seed);
        let model = scaled_additive(12, 12, 600 + seed);
        let color = img.channel_means();
        let mut rng = ChaCha20Rng::seed_from_u64(700 + seed);
        let data: Vec<f64> = (0..144).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut sorted = data.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(
            sorted.windows(2).all(|w| w[0] < w[1]),
            "map must be tie-free"
        );
        let map = PixelMap::new(12, 12, data.clone()).unwrap();
        let base = srg(&model, &img, &map, 0, DEFAULT_STEPS, &color).unwrap();
        let transforms: [fn(f64) -> f64; 3] = [|v| -v, |v| v.exp(), |v| 5.0 * v.powi(3) + 2.0];
        for (k, f) in transforms.iter().enumerate() {
            let m = PixelMap::new(12, 12, data.iter().map(|&v| f(v)).collect()).unwrap();
            let s = srg(&model, &img, &m, 0, DEFAULT_STEPS, &color).unwrap();
            let ok = if k == 0 {
                s.srg == -base.srg && s.lif == base.mif && s.mif == base.lif
            } else {
                s == base
            };
            failures += usize::from(!ok);
            trials += 1;
        }
    }
    Outcome::new(
        failures == 0,
        format!("{failures}/{trials} exact-equality failures (negation, exp, cubic)"),
    )
}

fn evaluate_twice_is_byte_identical() -> Outcome {
    let text = r#"{
        "pipeline": {"steps": 8},
        "matrix": {
            "segmenter": [{"kind": "grid", "rows": 4, "cols": 4}, {"kind": "slic", "n_segments": 12}],
            "smoothing": [{"method": "none"}, {"method": "gaussian_filter", "sigma": 2.0}],
            "sampler": [{"kind": "only_one"}, {"kind": "random", "n_samples": 32, "seed": 3}, {"kind": "entropic", "n_samples": 24}],
            "attribution": ["ciu", "pda", "rise", "lime", "shap"]
        },
        "images": {"kind": "synthetic", "count": 3, "height": 24, "width": 24, "seed": 5},
        "model": "additive:9"
    }"#;
    let run = || {
        let exp = ExperimentConfig::parse(text).unwrap();
        let (configs, skipped) = exp.expand().unwrap();
        let images = load_images(&exp.images).unwrap();
        let source: ModelSource = exp.model.as_deref().unwrap().parse().unwrap();
        let model = build_model(&source, (24, 24, 3), ExternalOptions::default()).unwrap();
        let out = run_matrix(&configs, &images, &model, MatrixOptions::default());
        let dir = tempfile::tempdir().unwrap();
        let run = RunInputs {
            configs: &configs,
            skipped: &skipped,
            images: &images,
            model_source: &source,
            spec: model.spec(),
            batch_size: 64,
        };
        let files = write_results(dir.path(), run, &out).unwrap();
        let bytes: Vec<Vec<u8>> = [files.records, files.aggregate, files.grouped]
            .iter()
            .map(|p| fs::read(p).unwrap())
            .collect();
        (bytes, out.records.len(), out.failures.len())
    };
    let (a, n, failed) = run();
    let (b, _, _) = run();
    let identical = a == b;
    Outcome::new(
        identical && n > 0 && failed == 0,
        format!(
            "{n} records, {failed} failures, records/aggregate/grouped CSV {}",
            if identical {
                "byte-identical"
            } else {
                "differ"
            }
        ),
    )
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 9] = [
        ("exhaustive rank equivalence", exhaustive_rank_equivalence),
        ("shapley oracle", shapley_oracle),
        ("additive-model oracle", additive_oracle),
        ("method collapse at small samples", method_collapse),
        ("mask linearity and partition", mask_linearity_and_partition),
        (
            "gaussian vs bilinear similarity",
            gaussian_bilinear_similarity,
        ),
        ("srg sanity", srg_sanity),
        (
            "srg antisymmetry and monotone invariance",
            srg_antisymmetry_and_invariance,
        ),
        ("determinism", evaluate_twice_is_byte_identical),
    ];
    let mut blocking = 0;
    for (name, check) in checks {
        let out = check();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {}", out.detail);
        match (out.pass, out.waiver) {
            (true, _) => {}
            (false, Some(why)) => println!("     waived: {why}"),
            (false, None) => blocking += 1,
        }
    }
    if blocking > 0 {
        println!("{blocking} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
