//! Occlusion-based faithfulness: LIF, MIF and their difference, SRG.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::Predictor;
use crate::types::{Image, PixelMap};

pub const DEFAULT_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessScore {
    pub lif: f64,
    pub mif: f64,
    pub srg: f64,
    pub steps: usize,
    pub occlusion_color: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionCurve {
    pub scores: Vec<f64>,
    pub mean: f64,
}

/// Pixel indices ordered by attribution. Ties keep row-major order in both
/// directions.
pub fn rank_pixels(map: &PixelMap, direction: Direction) -> Result<Vec<usize>> {
    if let Some(index) = map.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut idx: Vec<usize> = (0..map.data.len()).collect();
    match direction {
        Direction::Ascending => idx.sort_by(|&a, &b| map.data[a].total_cmp(&map.data[b])),
        Direction::Descending => idx.sort_by(|&a, &b| map.data[b].total_cmp(&map.data[a])),
    }
    Ok(idx)
}

/// Pixels occluded at step `k` (1-based): `(k−1)/(steps−1)·n`, rounded half up.
pub fn occluded_count(k: usize, steps: usize, n_pixels: usize) -> usize {
    let d = steps - 1;
    ((k - 1) * n_pixels * 2 + d) / (2 * d)
}

fn check_permutation(ranking: &[usize], n: usize) -> Result<()> {
    if ranking.len() != n {
        return Err(invalid(format!(
            "ranking has {} entries for {n} pixels",
            ranking.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in ranking {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(invalid("ranking is not a permutation of the pixels"));
        }
    }
    Ok(())
}

fn occlusion_images(
    image: &Image,
    ranking: &[usize],
    steps: usize,
    color: &[f64],
) -> Result<Vec<Image>> {
    if steps < 2 {
        return Err(invalid("an occlusion curve needs at least two steps"));
    }
    if color.len() != image.channels {
        return Err(invalid(format!(
            "occlusion color has {} channels, image has {}",
            color.len(),
            image.channels
        )));
    }
    let n = image.n_pixels();
    check_permutation(ranking, n)?;
    let fill: Vec<f32> = color.iter().map(|&c| c as f32).collect();
    let c = image.channels;
    let mut current = image.clone();
    let mut done = 0;
    let mut out = Vec::with_capacity(steps);
    for k in 1..=steps {
        let target = occluded_count(k, steps, n);
        for &p in &ranking[done..target] {
            current.data[p * c..(p + 1) * c].copy_from_slice(&fill);
        }
        done = target;
        out.push(current.clone());
    }
    Ok(out)
}

fn target_scores(scores: Vec<Vec<f64>>, target_class: usize) -> Result<Vec<f64>> {
    scores
        .into_iter()
        .map(|s| {
            s.get(target_class)
                .copied()
                .ok_or_else(|| invalid(format!("target class {target_class} out of range")))
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Target-class score while occluding pixels in `ranking` order over `steps`
/// equal steps, from nothing to everything.
pub fn occlusion_curve<P: Predictor + ?Sized>(
    predictor: &P,
    image: &Image,
    ranking: &[usize],
    target_class: usize,
    steps: usize,
    color: &[f64],
) -> Result<OcclusionCurve> {
    let images = occlusion_images(image, ranking, steps, color)?;
    let scores = target_scores(predictor.predict_batch(&images)?, target_class)?;
    Ok(OcclusionCurve {
        mean: mean(&scores),
        scores,
    })
}

/// LIF, MIF and SRG for `map`; both curves go to the model as one batch.
pub fn srg<P: Predictor + ?Sized>(
    predictor: &P,
    image: &Image,
    map: &PixelMap,
    target_class: usize,
    steps: usize,
    color: &[f64],
) -> Result<FaithfulnessScore> {
    if map.height != image.height || map.width != image.width {
        return Err(invalid(format!(
            "attribution map is {}x{}, image is {}x{}",
            map.height, map.width, image.height, image.width
        )));
    }
    let mut batch = occlusion_images(
        image,
        &rank_pixels(map, Direction::Ascending)?,
        steps,
        color,
    )?;
    batch.extend(occlusion_images(
        image,
        &rank_pixels(map, Direction::Descending)?,
        steps,
        color,
    )?);
    let scores = target_scores(predictor.predict_batch(&batch)?, target_class)?;
    let lif = mean(&scores[..steps]);
    let mif = mean(&scores[steps..]);
    Ok(FaithfulnessScore {
        lif,
        mif,
        srg: lif - mif,
        steps,
        occlusion_color: color.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_additive_model, AdditiveModel};
    use crate::types::ColorSpace;

    #[test]
    fn ranking_examples() {
        let m = PixelMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            rank_pixels(&m, Direction::Ascending).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert_eq!(
            rank_pixels(&m, Direction::Descending).unwrap(),
            vec![3, 2, 1, 0]
        );
        let flat = PixelMap::filled(2, 2, 0.3);
        assert_eq!(
            rank_pixels(&flat, Direction::Descending).unwrap(),
            vec![0, 1, 2, 3]
        );
        let nan = PixelMap {
            height: 1,
            width: 2,
            data: vec![0.0, f64::NAN],
        };
        assert!(matches!(
            rank_pixels(&nan, Direction::Ascending),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn step_counts_round_half_up() {
        let counts: Vec<usize> = (1..=10).map(|k| occluded_count(k, 10, 4)).collect();
        // k/9·4: 0, .44, .89, 1.33, 1.78, 2.22, 2.67, 3.11, 3.56, 4
        assert_eq!(counts, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
        // 9 pixels: exactly k−1 per step, no rounding.
        assert_eq!(occluded_count(5, 10, 9), 4);
        // (k−1)/2·3 with steps = 3: 0, 1.5 → 2, 3
        assert_eq!(occluded_count(2, 3, 3), 2);
    }

    fn uniform_model(h: usize, w: usize) -> AdditiveModel {
        make_additive_model(PixelMap::filled(h, w, 1.0), 3, 0, 1).unwrap()
    }

    #[test]
    fn curve_endpoints_and_linearity() {
        let model = uniform_model(3, 3);
        let img = Image::filled(3, 3, 3, 1.0, ColorSpace::Unit0To1);
        let ranking: Vec<usize> = (0..9).collect();
        let curve = occlusion_curve(&model, &img, &ranking, 0, 10, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(curve.scores[0], 9.0);
        assert_eq!(curve.scores[9], 0.0);
        for (k, s) in curve.scores.iter().enumerate() {
            assert!((s - (9 - k) as f64).abs() < 1e-12);
        }
        assert!((curve.mean - 4.5).abs() < 1e-12);
    }

    #[test]
    fn curve_input_checks() {
        let model = uniform_model(2, 2);
        let img = Image::filled(2, 2, 3, 0.5, ColorSpace::Unit0To1);
        assert!(occlusion_curve(&model, &img, &[0, 1, 2], 0, 10, &[0.0; 3]).is_err());
        assert!(occlusion_curve(&model, &img, &[0, 1, 1, 3], 0, 10, &[0.0; 3]).is_err());
        assert!(occlusion_curve(&model, &img, &[0, 1, 2, 3], 0, 10, &[0.0; 1]).is_err());
        assert!(occlusion_curve(&model, &img, &[0, 1, 2, 3], 0, 1, &[0.0; 3]).is_err());
        assert!(occlusion_curve(&model, &img, &[0, 1, 2, 3], 5, 10, &[0.0; 3]).is_err());
    }

    #[test]
    fn srg_is_lif_minus_mif() {
        let model =
            make_additive_model(AdditiveModel::random_coefficients(4, 4, 9), 3, 0, 1).unwrap();
        let img = Image::filled(4, 4, 3, 0.8, ColorSpace::Unit0To1);
        let truth = model.contribution_map(&img, &[0.0; 3]);
        let s = srg(&model, &img, &truth, 0, 10, &[0.0; 3]).unwrap();
        assert_eq!(s.srg, s.lif - s.mif);
        assert!(s.srg > 0.0);
        let bad = PixelMap::zeros(3, 4);
        assert!(srg(&model, &img, &bad, 0, 10, &[0.0; 3]).is_err());
    }
}
