//! Attribution from output averages and extrema: PDA, RISE and CIU.

use crate::error::{invalid, Error, Result};
use crate::types::{SampleOrigin, SampleSet};

pub(crate) fn check_outputs(samples: &SampleSet, outputs: &[f64]) -> Result<()> {
    if outputs.len() != samples.n_samples {
        return Err(invalid(format!(
            "{} outputs for {} samples",
            outputs.len(),
            samples.n_samples
        )));
    }
    if let Some(i) = outputs.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("output {i} is not finite")));
    }
    Ok(())
}

/// Outputs of the rows where segment `s` is (or is not) perturbed.
fn outputs_where<'a>(
    samples: &'a SampleSet,
    outputs: &'a [f64],
    s: usize,
    perturbed: bool,
) -> impl Iterator<Item = f64> + 'a {
    samples
        .rows()
        .zip(outputs)
        .filter(move |(row, _)| row[s] == perturbed)
        .map(|(_, &y)| y)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// `w_s = Y − mean{y_i : s perturbed in row i}`.
pub fn attribute_pda(samples: &SampleSet, outputs: &[f64], reference: f64) -> Result<Vec<f64>> {
    check_outputs(samples, outputs)?;
    (0..samples.n_segments)
        .map(|s| {
            mean(outputs_where(samples, outputs, s, true))
                .map(|m| reference - m)
                .ok_or(Error::NeverPerturbed { segment: s })
        })
        .collect()
}

/// `w_s = mean{y_i : s not perturbed in row i}`.
pub fn attribute_rise(samples: &SampleSet, outputs: &[f64]) -> Result<Vec<f64>> {
    check_outputs(samples, outputs)?;
    (0..samples.n_segments)
        .map(|s| {
            mean(outputs_where(samples, outputs, s, false))
                .ok_or(Error::AlwaysPerturbed { segment: s })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiuMode {
    OnlyOne,
    AllButOne,
}

impl CiuMode {
    pub fn for_origin(origin: SampleOrigin) -> Result<Self> {
        match origin {
            SampleOrigin::OnlyOne => Ok(CiuMode::OnlyOne),
            SampleOrigin::AllButOne => Ok(CiuMode::AllButOne),
            other => Err(invalid(format!(
                "CIU is only defined for only_one and all_but_one sampling, not {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiuWeights {
    pub weights: Vec<f64>,
    /// All outputs were equal, so every weight was set to zero.
    pub degenerate: bool,
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    hi - lo
}

/// Contextual influence `CI·(CU − 0.5)`.
///
/// The normalizing range spans every output plus `reference`. In
/// `AllButOne` mode the importance uses `1 − y` over the rows keeping the
/// segment, which presumes probability-scale outputs.
pub fn attribute_ciu(
    samples: &SampleSet,
    outputs: &[f64],
    reference: f64,
    mode: CiuMode,
) -> Result<CiuWeights> {
    check_outputs(samples, outputs)?;
    if CiuMode::for_origin(samples.origin)? != mode {
        return Err(invalid(format!(
            "CIU mode {mode:?} does not match {:?} samples",
            samples.origin
        )));
    }
    let range = spread(outputs.iter().copied().chain([reference]));
    if range == 0.0 {
        return Ok(CiuWeights {
            weights: vec![0.0; samples.n_segments],
            degenerate: true,
        });
    }

    let mut weights = Vec::with_capacity(samples.n_segments);
    for s in 0..samples.n_segments {
        let perturbed: Vec<f64> = outputs_where(samples, outputs, s, true).collect();
        let min_perturbed = perturbed
            .iter()
            .copied()
            .reduce(f64::min)
            .ok_or(Error::NeverPerturbed { segment: s })?;
        let importance = match mode {
            CiuMode::OnlyOne => spread(perturbed.iter().copied().chain([reference])),
            CiuMode::AllButOne => {
                let kept: Vec<f64> = outputs_where(samples, outputs, s, false)
                    .map(|y| 1.0 - y)
                    .collect();
                if kept.is_empty() {
                    return Err(Error::AlwaysPerturbed { segment: s });
                }
                spread(kept.into_iter().chain([reference]))
            }
        } / range;
        let utility = (reference - min_perturbed) / range;
        weights.push(importance * (utility - 0.5));
    }
    Ok(CiuWeights {
        weights,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample_all_but_one, sample_only_one, sample_random};

    /// Rows 00, 10, 01, 11 (perturbation indicators).
    fn factorial2() -> (SampleSet, Vec<f64>) {
        let s = SampleSet {
            n_samples: 4,
            n_segments: 2,
            indicators: vec![
                vec![false, false],
                vec![true, false],
                vec![false, true],
                vec![true, true],
            ],
            origin: SampleOrigin::Random,
            seed: None,
            truncated: false,
        };
        (s, vec![1.0, 0.4, 0.7, 0.1])
    }

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn pda_examples() {
        let (s, y) = factorial2();
        close(&attribute_pda(&s, &y, 1.0).unwrap(), &[0.75, 0.6]);

        let s = sample_only_one(3).unwrap();
        close(
            &attribute_pda(&s, &[1.0, 0.4, 0.7, 0.9], 1.0).unwrap(),
            &[0.6, 0.3, 0.1],
        );
        close(&attribute_pda(&s, &[0.3; 4], 0.3).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn pda_names_unperturbed_segment() {
        let mut s = sample_only_one(3).unwrap();
        s.indicators[3][2] = false;
        match attribute_pda(&s, &[1.0; 4], 1.0) {
            Err(Error::NeverPerturbed { segment: 2 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rise_examples() {
        let (s, y) = factorial2();
        close(&attribute_rise(&s, &y).unwrap(), &[0.85, 0.7]);

        let s = sample_all_but_one(3).unwrap();
        close(
            &attribute_rise(&s, &[1.0, 0.4, 0.7, 0.9]).unwrap(),
            &[0.7, 0.85, 0.95],
        );
        close(&attribute_rise(&s, &[0.3; 4]).unwrap(), &[0.3; 3]);

        let mut all = s.clone();
        for r in &mut all.indicators {
            r[1] = true;
        }
        assert!(matches!(
            attribute_rise(&all, &[0.0; 4]),
            Err(Error::AlwaysPerturbed { segment: 1 })
        ));
    }

    #[test]
    fn ciu_only_one_example() {
        let s = sample_only_one(2).unwrap();
        let out = attribute_ciu(&s, &[1.0, 0.4, 0.7], 1.0, CiuMode::OnlyOne).unwrap();
        assert!(!out.degenerate);
        close(&out.weights, &[0.5, 0.0]);
    }

    #[test]
    fn ciu_constant_outputs_are_degenerate() {
        let s = sample_only_one(3).unwrap();
        let out = attribute_ciu(&s, &[0.2; 4], 0.2, CiuMode::OnlyOne).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.weights, vec![0.0; 3]);
    }

    #[test]
    fn ciu_utility_floor() {
        // Perturbing everything but segment 0 leaves Y unchanged, so
        // min(Y\s) = Y for segment 0: CU = 0 and w = -CI/2.
        let s = sample_all_but_one(2).unwrap();
        let y = [0.5, 0.1, 0.5];
        let out = attribute_ciu(&s, &y, 0.5, CiuMode::AllButOne).unwrap();
        // CI over {Y, 1 - 0.5, 1 - 0.1} / range 0.4 = 1.
        assert!((out.weights[0] + 0.5).abs() < 1e-12, "{:?}", out.weights);
    }

    #[test]
    fn ciu_utility_is_not_clamped() {
        // An output above Y gives CU < 0; the formula is applied as is.
        let s = sample_only_one(2).unwrap();
        let out = attribute_ciu(&s, &[0.5, 0.9, 0.1], 0.5, CiuMode::OnlyOne).unwrap();
        let ci = 0.4 / 0.8;
        let cu = (0.5 - 0.9) / 0.8;
        assert!((out.weights[0] - ci * (cu - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn ciu_all_but_one_literal() {
        // Outputs: reference 0.9, rows keeping only segment s: 0.2, 0.5.
        let s = sample_all_but_one(2).unwrap();
        let y = [0.9, 0.2, 0.5];
        let out = attribute_ciu(&s, &y, 0.9, CiuMode::AllButOne).unwrap();
        let range = 0.9 - 0.2;
        // Segment 0 is kept in rows 0 and 1: {1-0.9, 1-0.2} plus Y.
        let ci0 = (0.9f64.max(0.8) - 0.1f64.min(0.9)) / range;
        // Segment 0 perturbed only in row 2 (0.5).
        let cu0 = (0.9 - 0.5) / range;
        let ci1 = (0.9f64.max(0.5) - 0.1f64) / range;
        let cu1 = (0.9 - 0.2) / range;
        close(&out.weights, &[ci0 * (cu0 - 0.5), ci1 * (cu1 - 0.5)]);
    }

    #[test]
    fn ciu_mode_checks() {
        let s = sample_only_one(3).unwrap();
        assert!(attribute_ciu(&s, &[0.0; 4], 0.0, CiuMode::AllButOne).is_err());
        let r = sample_random(3, 8, 1).unwrap();
        assert!(attribute_ciu(&r, &[0.0; 8], 0.0, CiuMode::OnlyOne).is_err());
    }

    #[test]
    fn output_count_checked() {
        let s = sample_only_one(3).unwrap();
        assert!(attribute_pda(&s, &[1.0; 3], 1.0).is_err());
        assert!(attribute_rise(&s, &[f64::NAN; 4]).is_err());
    }
}
