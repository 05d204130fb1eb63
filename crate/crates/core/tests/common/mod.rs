//! Oracles shared by the integration tests. Nothing here calls into the
//! code under test beyond plain data types.

#![allow(dead_code)]

use perturb_xai::types::{ColorSpace, Image, SampleOrigin, SampleSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Every subset of `n` segments, row `r` perturbing segment `s` iff bit `s` of `r` is set.
pub fn full_factorial(n: usize) -> SampleSet {
    let indicators: Vec<Vec<bool>> = (0..1usize << n)
        .map(|r| (0..n).map(|s| r >> s & 1 == 1).collect())
        .collect();
    SampleSet {
        n_samples: indicators.len(),
        n_segments: n,
        indicators,
        origin: SampleOrigin::Random,
        seed: None,
        truncated: false,
    }
}

/// Bitmask of kept segments for a row.
pub fn kept_bits(row: &[bool]) -> usize {
    row.iter()
        .enumerate()
        .filter(|(_, &p)| !p)
        .fold(0, |acc, (s, _)| acc | 1 << s)
}

/// A random set function `v(kept)` over `n` players.
pub fn random_game(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..1usize << n)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect()
}

/// Outputs of `game` for each row of `samples`.
pub fn play(game: &[f64], samples: &SampleSet) -> Vec<f64> {
    samples.rows().map(|r| game[kept_bits(r)]).collect()
}

/// Shapley values by direct enumeration of coalitions.
pub fn brute_force_shapley(n: usize, game: &[f64]) -> Vec<f64> {
    let fact: Vec<f64> = (0..=n)
        .scan(1.0, |f, k| {
            let out = *f;
            *f *= (k + 1) as f64;
            Some(out)
        })
        .collect();
    (0..n)
        .map(|i| {
            let mut phi = 0.0;
            for s in 0..1usize << n {
                if s >> i & 1 == 1 {
                    continue;
                }
                let size = s.count_ones() as usize;
                let w = fact[size] * fact[n - size - 1] / fact[n];
                phi += w * (game[s | 1 << i] - game[s]);
            }
            phi
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Bilinear upsampling of a `rows × cols` cell grid to `h × w`, sampling
/// at pixel centers and clamping at the border.
pub fn upsample_bilinear(cells: &[f64], rows: usize, cols: usize, h: usize, w: usize) -> Vec<f64> {
    let coord = |p: usize, n_out: usize, n_cells: usize| {
        let u = ((p as f64 + 0.5) * n_cells as f64 / n_out as f64 - 0.5)
            .clamp(0.0, (n_cells - 1) as f64);
        let i0 = (u.floor() as usize).min(n_cells - 1);
        let i1 = (i0 + 1).min(n_cells - 1);
        (i0, i1, u - i0 as f64)
    };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let (r0, r1, fy) = coord(r, h, rows);
        for c in 0..w {
            let (c0, c1, fx) = coord(c, w, cols);
            let at = |i: usize, j: usize| cells[i * cols + j];
            let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
            let bottom = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Uniform random RGB image whose values are exact in f32.
pub fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..h * w * 3)
        .map(|_| rng.random_range(0..=255u8) as f32 / 256.0)
        .collect();
    Image::new(h, w, 3, data, ColorSpace::Unit0To1).unwrap()
}

/// Segment indices from most to least important; ties keep index order.
pub fn order(weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].partial_cmp(&weights[a]).unwrap());
    idx
}
