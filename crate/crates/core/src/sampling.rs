//! Sample generators deciding which segments each perturbed input perturbs.
//!
//! Random sampling uses ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64(seed)` on stream `stream` (the pipeline passes the image
//! index). Each row consumes `ceil(n_segments / 64)` calls to `next_u64`;
//! segment `s` is perturbed iff bit `s % 64` (LSB first) of word `s / 64` is
//! set.

use std::collections::HashSet;

use itertools::Itertools;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{invalid, Result};
use crate::types::{SampleOrigin, SampleSet};

pub const PRNG_NAME: &str = "chacha20(seed_from_u64(seed), stream=image index)";

fn set(
    n_segments: usize,
    indicators: Vec<Vec<bool>>,
    origin: SampleOrigin,
    seed: Option<u64>,
) -> SampleSet {
    SampleSet {
        n_samples: indicators.len(),
        n_segments,
        indicators,
        origin,
        seed,
        truncated: false,
    }
}

/// The unperturbed row followed by one row per segment perturbing only it.
pub fn sample_only_one(n_segments: usize) -> Result<SampleSet> {
    if n_segments == 0 {
        return Err(invalid("need at least one segment"));
    }
    let mut rows = vec![vec![false; n_segments]];
    rows.extend((0..n_segments).map(|s| (0..n_segments).map(|t| t == s).collect()));
    Ok(set(n_segments, rows, SampleOrigin::OnlyOne, None))
}

/// The unperturbed row followed by one row per segment perturbing all others.
pub fn sample_all_but_one(n_segments: usize) -> Result<SampleSet> {
    if n_segments == 0 {
        return Err(invalid("need at least one segment"));
    }
    let mut rows = vec![vec![false; n_segments]];
    rows.extend((0..n_segments).map(|s| (0..n_segments).map(|t| t != s).collect()));
    Ok(set(n_segments, rows, SampleOrigin::AllButOne, None))
}

pub fn sample_random(n_segments: usize, n_samples: usize, seed: u64) -> Result<SampleSet> {
    sample_random_stream(n_segments, n_samples, seed, 0)
}

/// I.i.d. Bernoulli(0.5) rows. No row is rejected or deduplicated.
pub fn sample_random_stream(
    n_segments: usize,
    n_samples: usize,
    seed: u64,
    stream: u64,
) -> Result<SampleSet> {
    if n_samples == 0 {
        return Err(invalid("random sampling needs at least one sample"));
    }
    if n_segments == 0 {
        return Err(invalid("need at least one segment"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let words = n_segments.div_ceil(64);
    let rows = (0..n_samples)
        .map(|_| {
            let bits: Vec<u64> = (0..words).map(|_| rng.next_u64()).collect();
            (0..n_segments)
                .map(|s| bits[s / 64] >> (s % 64) & 1 == 1)
                .collect()
        })
        .collect();
    Ok(set(n_segments, rows, SampleOrigin::Random, Some(seed)))
}

/// Rows in increasing order of entropy: nothing perturbed, everything
/// perturbed, then for c = 1, 2, ... every row with exactly c perturbed
/// segments followed by every row with exactly c unperturbed segments.
/// Within a level, rows follow lexicographic order of the chosen segment
/// indices. Duplicate rows are skipped.
///
/// Requests beyond the 2^n distinct rows are truncated and flagged.
pub fn sample_entropic(n_segments: usize, n_samples: usize) -> Result<SampleSet> {
    if n_samples < 2 {
        return Err(invalid("entropic sampling needs at least two samples"));
    }
    if n_segments == 0 {
        return Err(invalid("need at least one segment"));
    }
    let total = u32::try_from(n_segments)
        .ok()
        .and_then(|n| 2usize.checked_pow(n))
        .unwrap_or(usize::MAX);
    let target = n_samples.min(total);

    let mut rows: Vec<Vec<bool>> = Vec::with_capacity(target);
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    let mut push = |row: Vec<bool>, rows: &mut Vec<Vec<bool>>| {
        if rows.len() < target && seen.insert(row.clone()) {
            rows.push(row);
        }
    };

    push(vec![false; n_segments], &mut rows);
    push(vec![true; n_segments], &mut rows);
    let mut c = 1;
    while rows.len() < target && c <= n_segments {
        for chosen in (0..n_segments).combinations(c) {
            if rows.len() >= target {
                break;
            }
            let mut row = vec![false; n_segments];
            for s in chosen {
                row[s] = true;
            }
            push(row, &mut rows);
        }
        for chosen in (0..n_segments).combinations(c) {
            if rows.len() >= target {
                break;
            }
            let mut row = vec![true; n_segments];
            for s in chosen {
                row[s] = false;
            }
            push(row, &mut rows);
        }
        c += 1;
    }

    let mut out = set(n_segments, rows, SampleOrigin::Entropic, None);
    out.truncated = n_samples > total;
    Ok(out)
}
