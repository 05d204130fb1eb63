mod common;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use common::{brute_force_shapley, full_factorial, order, play, random_game, random_image};
use perturb_xai::attribution::{
    attribute, attribute_pda, attribute_rise, fit_kernel_shap, fit_lime, project_per_pixel,
    ranking, References,
};
use perturb_xai::evaluation::{rank_pixels, srg, Direction};
use perturb_xai::masking::{combine, indicator_masks, smooth_gaussian};
use perturb_xai::model::protocol::Message;
use perturb_xai::model::{make_additive_model, AdditiveModel};
use perturb_xai::sampling::{sample_all_but_one, sample_entropic, sample_only_one, sample_random};
use perturb_xai::segmentation::grid_segment;
use perturb_xai::types::{
    from_json, to_json, Method, PixelMap, SampleSet, SegmentMap, SegmentMaskStack,
};

fn grid_stack(h: usize, w: usize, rows: usize, cols: usize) -> SegmentMaskStack {
    indicator_masks(&grid_segment(h, w, rows, cols).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grid_partitions_every_pixel(h in 1usize..40, w in 1usize..40, r in 1usize..8, c in 1usize..8) {
        prop_assume!(r <= h && c <= w);
        if r * c < 2 {
            prop_assert!(grid_segment(h, w, r, c).is_err());
            return Ok(());
        }
        let seg = grid_segment(h, w, r, c).unwrap();
        prop_assert_eq!(seg.n_segments, r * c);
        prop_assert!(seg.segment_sizes().iter().all(|&n| n > 0));
        let sizes = seg.segment_sizes();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        // Cells differ by at most one row and one column.
        prop_assert!(*hi <= (h / r + 1) * (w / c + 1) && *lo >= (h / r) * (w / c));
    }

    #[test]
    fn gaussian_masks_partition_unity(h in 4usize..30, w in 4usize..30, r in 1usize..5, c in 1usize..5, sigma in 0.3f64..6.0) {
        prop_assume!(r <= h && c <= w && r * c >= 2);
        let stack = smooth_gaussian(&grid_stack(h, w, r, c), sigma).unwrap();
        for s in stack.partition_sum() {
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }
        prop_assert!(stack.masks.iter().flatten().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn combine_is_additive_over_disjoint_sets(bits in proptest::collection::vec(0u8..3, 12), sigma in 0.5f64..4.0) {
        let stack = smooth_gaussian(&grid_stack(18, 24, 3, 4), sigma).unwrap();
        let a: Vec<bool> = bits.iter().map(|&b| b == 1).collect();
        let b: Vec<bool> = bits.iter().map(|&b| b == 2).collect();
        let ab: Vec<bool> = bits.iter().map(|&b| b != 0).collect();
        let (ma, mb, mab) = (combine(&stack, &a).unwrap(), combine(&stack, &b).unwrap(), combine(&stack, &ab).unwrap());
        for p in 0..mab.data.len() {
            prop_assert!((mab.data[p] - ma.data[p] - mb.data[p]).abs() <= 1e-9);
        }
    }

    #[test]
    fn projection_stays_within_segment_weights(weights in proptest::collection::vec(-5.0f64..5.0, 9), sigma in 0.5f64..5.0) {
        let stack = smooth_gaussian(&grid_stack(15, 15, 3, 3), sigma).unwrap();
        let p = project_per_pixel(&weights, &stack).unwrap();
        let lo = weights.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(p.uncovered_pixels, 0);
        prop_assert!(p.map.data.iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
    }

    #[test]
    fn full_factorial_pda_and_rise_rank_alike(n in 2usize..9, seed in any::<u64>()) {
        let game = random_game(n, seed);
        let samples = full_factorial(n);
        let y = play(&game, &samples);
        let pda = attribute_pda(&samples, &y, game[(1 << n) - 1]).unwrap();
        let rise = attribute_rise(&samples, &y).unwrap();
        prop_assert_eq!(order(&pda), order(&rise));
    }

    #[test]
    fn exhaustive_kernel_shap_is_shapley(n in 2usize..8, seed in any::<u64>()) {
        let game = random_game(n, seed);
        let samples = full_factorial(n);
        let y = play(&game, &samples);
        let fit = fit_kernel_shap(&samples, &y, game[(1 << n) - 1], game[0]).unwrap();
        for (w, phi) in fit.weights.iter().zip(brute_force_shapley(n, &game)) {
            prop_assert!((w - phi).abs() <= 1e-9, "{} vs {}", w, phi);
        }
    }

    #[test]
    fn rankings_survive_affine_output_maps(n in 2usize..7, seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let game = random_game(n, seed);
        let samples = full_factorial(n);
        let y = play(&game, &samples);
        let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let refs = References { unperturbed: game[(1 << n) - 1], fully_perturbed: game[0] };
        let refs_a = References { unperturbed: a * refs.unperturbed + b, fully_perturbed: a * refs.fully_perturbed + b };
        for method in [Method::Pda, Method::Rise, Method::Lime, Method::Shap] {
            let w = attribute(method, &samples, &y, refs).unwrap().segment_weights;
            let wa = attribute(method, &samples, &ya, refs_a).unwrap().segment_weights;
            prop_assert_eq!(order(&w), order(&wa), "{:?}", method);
        }
    }

    #[test]
    fn lime_recovers_linear_games(coef in proptest::collection::vec(-3.0f64..3.0, 2..7), bias in -1.0f64..1.0) {
        let n = coef.len();
        let samples = full_factorial(n);
        let y: Vec<f64> = samples.rows().map(|r| bias + r.iter().zip(&coef).filter(|(&p, _)| !p).map(|(_, c)| c).sum::<f64>()).collect();
        let fit = fit_lime(&samples, &y).unwrap();
        assert_abs_diff_eq!(fit.bias, bias, epsilon = 1e-9);
        for (w, c) in fit.weights.iter().zip(&coef) {
            assert_abs_diff_eq!(*w, *c, epsilon = 1e-9);
        }
    }

    #[test]
    fn samplers_are_deterministic(n in 1usize..12, k in 2usize..40, seed in any::<u64>()) {
        prop_assert_eq!(sample_random(n, k, seed).unwrap(), sample_random(n, k, seed).unwrap());
        prop_assert_eq!(sample_entropic(n, k).unwrap(), sample_entropic(n, k).unwrap());
        let one = sample_only_one(n).unwrap();
        let all = sample_all_but_one(n).unwrap();
        prop_assert_eq!(one.n_samples, n + 1);
        for (a, b) in one.rows().skip(1).zip(all.rows().skip(1)) {
            prop_assert!(a.iter().zip(b).all(|(x, y)| x != y));
        }
    }

    #[test]
    fn sample_sets_round_trip_through_json(n in 1usize..20, k in 1usize..30, seed in any::<u64>()) {
        let s = sample_random(n, k, seed).unwrap();
        let back: SampleSet = from_json(&to_json(&s).unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn maps_round_trip_through_json(h in 2usize..10, w in 2usize..10, seed in any::<u64>()) {
        let img = random_image(h, w, seed);
        prop_assert_eq!(from_json::<perturb_xai::types::Image>(&to_json(&img).unwrap()).unwrap(), img);
        let seg = grid_segment(h, w, h.min(2), w.min(3)).unwrap();
        prop_assert_eq!(from_json::<SegmentMap>(&to_json(&seg).unwrap()).unwrap(), seg.clone());
        let stack = indicator_masks(&seg);
        prop_assert_eq!(from_json::<SegmentMaskStack>(&to_json(&stack).unwrap()).unwrap(), stack.clone());
        let smooth = smooth_gaussian(&stack, 1.3).unwrap();
        prop_assert_eq!(from_json::<SegmentMaskStack>(&to_json(&smooth).unwrap()).unwrap(), smooth);
        let map = AdditiveModel::random_coefficients(h, w, seed);
        prop_assert_eq!(from_json::<PixelMap>(&to_json(&map).unwrap()).unwrap(), map);
    }

    #[test]
    fn protocol_parser_never_panics(line in ".{0,200}") {
        let _ = Message::parse(&line);
    }

    #[test]
    fn srg_is_antisymmetric_and_rank_only(seed in any::<u64>(), steps in 2usize..12) {
        let img = random_image(6, 6, seed);
        let model = make_additive_model(AdditiveModel::random_coefficients(6, 6, seed ^ 1), 3, 0, 1).unwrap();
        let map = AdditiveModel::random_coefficients(6, 6, seed ^ 2);
        let color = [0.5, 0.5, 0.5];
        let s = srg(&model, &img, &map, 0, steps, &color).unwrap();
        let neg = PixelMap::new(6, 6, map.data.iter().map(|v| -v).collect()).unwrap();
        let sn = srg(&model, &img, &neg, 0, steps, &color).unwrap();
        prop_assert_eq!(sn.srg, -s.srg);
        prop_assert_eq!((sn.lif, sn.mif), (s.mif, s.lif));
        let warped = PixelMap::new(6, 6, map.data.iter().map(|v| (3.0 * v).exp() - 7.0).collect()).unwrap();
        prop_assert_eq!(srg(&model, &img, &warped, 0, steps, &color).unwrap().srg, s.srg);
    }

    #[test]
    fn pixel_ranking_is_a_permutation(data in proptest::collection::vec(-1.0f64..1.0, 1..64)) {
        let map = PixelMap::new(1, data.len(), data).unwrap();
        let mut r = rank_pixels(&map, Direction::Ascending).unwrap();
        prop_assert!(r.windows(2).all(|w| map.data[w[0]] <= map.data[w[1]]));
        r.sort_unstable();
        prop_assert_eq!(r, (0..map.data.len()).collect::<Vec<_>>());
    }
}

#[test]
fn brute_force_oracle_matches_a_known_game() {
    // v(S) = |S|^2 over three players: symmetric, so each player gets 9/3.
    let game: Vec<f64> = (0..8usize)
        .map(|s| (s.count_ones() as f64).powi(2))
        .collect();
    for phi in brute_force_shapley(3, &game) {
        assert_abs_diff_eq!(phi, 3.0, epsilon = 1e-12);
    }
    // Glove game: player 0 holds a left glove, 1 and 2 right gloves.
    let glove: Vec<f64> = (0..8usize)
        .map(|s| f64::from(s & 1 == 1 && s & 6 != 0))
        .collect();
    let phi = brute_force_shapley(3, &glove);
    assert_abs_diff_eq!(phi[0], 2.0 / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(phi[1], 1.0 / 6.0, epsilon = 1e-12);
    assert_eq!(ranking(&phi), vec![0, 1, 2]);
}
