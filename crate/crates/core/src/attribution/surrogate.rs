//! Linear surrogates `y = b + Σ_s w_s·x_s` over kept-segment features
//! (`x_s = 1` when segment `s` is not perturbed).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::averages::check_outputs;
use super::lstsq::solve_min_norm;
use crate::error::{invalid, Result};
use crate::types::SampleSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFit {
    pub bias: f64,
    pub weights: Vec<f64>,
    pub residual_norm: f64,
    pub rank_deficient: bool,
}

/// Ordinary least squares over all rows; minimum-norm when the design is
/// rank deficient.
pub fn fit_lime(samples: &SampleSet, outputs: &[f64]) -> Result<SurrogateFit> {
    check_outputs(samples, outputs)?;
    if samples.n_samples < 2 {
        return Err(invalid("a surrogate fit needs at least two samples"));
    }
    let n = samples.n_segments;
    let m = samples.n_samples;
    let design = DMatrix::from_fn(m, n + 1, |i, j| {
        if j == 0 {
            1.0
        } else if samples.row(i)[j - 1] {
            0.0
        } else {
            1.0
        }
    });
    let y = DVector::from_column_slice(outputs);
    let ls = solve_min_norm(&design, &y);
    let residual = (&design * &ls.solution - &y).norm();
    Ok(SurrogateFit {
        bias: ls.solution[0],
        weights: ls.solution.iter().skip(1).copied().collect(),
        residual_norm: residual,
        rank_deficient: ls.rank < n + 1,
    })
}

/// Shapley kernel weight for a coalition of `kept` segments out of `n`.
/// Undefined (infinite) at `kept ∈ {0, n}`.
pub fn shapley_kernel(n: usize, kept: usize) -> f64 {
    if kept == 0 || kept >= n {
        return f64::INFINITY;
    }
    (n - 1) as f64 / (binomial(n, kept) * kept as f64 * (n - kept) as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Kernel SHAP: least squares weighted by [`shapley_kernel`] over rows with
/// `0 < |kept| < n`, subject to the hard constraints
/// `b = v(nothing kept)` and `b + Σ w = v(everything kept)`.
///
/// Anchor values come from matching rows when present (averaged over
/// duplicates); otherwise `unperturbed` and `fully_perturbed` stand in.
pub fn fit_kernel_shap(
    samples: &SampleSet,
    outputs: &[f64],
    unperturbed: f64,
    fully_perturbed: f64,
) -> Result<SurrogateFit> {
    check_outputs(samples, outputs)?;
    if samples.n_samples < 2 {
        return Err(invalid("a surrogate fit needs at least two samples"));
    }
    let n = samples.n_segments;

    let mut empty = (0.0, 0usize);
    let mut full = (0.0, 0usize);
    let mut interior: Vec<(usize, f64)> = Vec::new();
    for (i, (row, &y)) in samples.rows().zip(outputs).enumerate() {
        let kept = row.iter().filter(|&&p| !p).count();
        if kept == 0 {
            empty = (empty.0 + y, empty.1 + 1);
        } else if kept == n {
            full = (full.0 + y, full.1 + 1);
        } else {
            interior.push((i, shapley_kernel(n, kept)));
        }
    }
    let bias = if empty.1 > 0 {
        empty.0 / empty.1 as f64
    } else {
        fully_perturbed
    };
    let top = if full.1 > 0 {
        full.0 / full.1 as f64
    } else {
        unperturbed
    };
    let total = top - bias;

    if n == 1 {
        return Ok(SurrogateFit {
            bias,
            weights: vec![total],
            residual_norm: 0.0,
            rank_deficient: false,
        });
    }

    // w = (total/n)·1 + Q·u with Q an orthonormal basis of 1⊥, so the sum
    // constraint holds for every u and the minimum-norm u gives the
    // minimum-norm correction, symmetric in the segments.
    let basis = helmert_basis(n);
    let m = interior.len();
    let mut design = DMatrix::zeros(m, n - 1);
    let mut target = DVector::zeros(m);
    for (r, &(i, pi)) in interior.iter().enumerate() {
        let sw = pi.sqrt();
        let kept: Vec<f64> = samples.kept(i).collect();
        let kept_count: f64 = kept.iter().sum();
        target[r] = sw * (outputs[i] - bias - kept_count * total / n as f64);
        for k in 0..n - 1 {
            let z: f64 = kept
                .iter()
                .zip(basis.column(k).iter())
                .map(|(x, q)| x * q)
                .sum();
            design[(r, k)] = sw * z;
        }
    }
    let ls = solve_min_norm(&design, &target);
    let correction = &basis * &ls.solution;
    let weights: Vec<f64> = correction.iter().map(|c| total / n as f64 + c).collect();
    let residual = (&design * &ls.solution - &target).norm();
    Ok(SurrogateFit {
        bias,
        weights,
        residual_norm: residual,
        rank_deficient: ls.rank < n - 1,
    })
}

/// n×(n−1) orthonormal basis of the complement of the all-ones vector.
fn helmert_basis(n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n - 1);
    for k in 1..n {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            q[(i, k - 1)] = 1.0 / norm;
        }
        q[(k, k - 1)] = -(k as f64) / norm;
    }
    q
}
