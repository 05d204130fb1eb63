//! SLIC superpixels: k-means in (L, a, b, y, x) space with a windowed search,
//! followed by a connectivity pass.

use serde::{Deserialize, Serialize};

use super::lab::srgb_to_lab;
use super::{grid_segment, relabel_dense};
use crate::error::{invalid, Result};
use crate::types::{ColorSpace, Image, SegmentMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    pub n_segments: usize,
    #[serde(default = "default_compactness")]
    pub compactness: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_compactness() -> f64 {
    10.0
}

fn default_max_iter() -> usize {
    10
}

impl SlicParams {
    pub fn new(n_segments: usize) -> Self {
        Self {
            n_segments,
            compactness: default_compactness(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicOutcome {
    pub segments: SegmentMap,
    /// The image had a single color (or clustering collapsed to one
    /// segment) and a ceil(sqrt(n))² grid was returned instead.
    pub degenerate_fallback: bool,
    /// Seed grid actually used (rows, cols).
    pub seed_grid: (usize, usize),
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    y: f64,
    x: f64,
}

pub fn slic_segment(image: &Image, params: SlicParams) -> Result<SlicOutcome> {
    if image.space != ColorSpace::Unit0To1 {
        return Err(invalid("SLIC expects a unit_0_1 image"));
    }
    if params.n_segments < 2 {
        return Err(invalid("SLIC needs n_segments >= 2"));
    }
    if params.compactness.is_nan() || params.compactness <= 0.0 {
        return Err(invalid("SLIC compactness must be positive"));
    }
    let (h, w) = (image.height, image.width);
    if h * w < 2 {
        return Err(invalid("image too small to segment"));
    }

    let lab = to_lab(image);
    if is_single_color(&lab) {
        return fallback(h, w, params.n_segments, (0, 0), 0);
    }

    let step = ((h * w) as f64 / params.n_segments as f64).sqrt();
    let (ny, nx) = seed_grid(h, w, step);
    let mut centers = initial_centers(&lab, h, w, ny, nx);

    let spatial_scale = params.compactness / step;
    let window = step.ceil() as isize;
    let mut labels = vec![u32::MAX; h * w];
    let mut dist = vec![f64::INFINITY; h * w];
    let mut iterations = 0;

    for _ in 0..params.max_iter {
        iterations += 1;
        dist.fill(f64::INFINITY);
        let mut next = vec![u32::MAX; h * w];

        for (k, c) in centers.iter().enumerate() {
            let (cy, cx) = (c.y.round() as isize, c.x.round() as isize);
            let r0 = (cy - window).max(0) as usize;
            let r1 = ((cy + window) as usize).min(h - 1);
            let c0 = (cx - window).max(0) as usize;
            let c1 = ((cx + window) as usize).min(w - 1);
            for r in r0..=r1 {
                for col in c0..=c1 {
                    let p = r * w + col;
                    let d = distance(c, &lab[p], r, col, spatial_scale);
                    if d < dist[p] {
                        dist[p] = d;
                        next[p] = k as u32;
                    }
                }
            }
        }

        // Pixels outside every window (only possible with very uneven seeds).
        for p in 0..h * w {
            if next[p] == u32::MAX {
                let (r, col) = (p / w, p % w);
                next[p] = centers
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (k, distance(c, &lab[p], r, col, spatial_scale)))
                    .fold(
                        (0, f64::INFINITY),
                        |best, cur| if cur.1 < best.1 { cur } else { best },
                    )
                    .0 as u32;
            }
        }

        let converged = next == labels;
        labels = next;
        centers = update_centers(&centers, &labels, &lab, w);
        if converged {
            break;
        }
    }

    let min_size = (h * w) as f64 / params.n_segments as f64 / 4.0;
    let merged = enforce_connectivity(&labels, h, w, min_size);
    let (dense, n) = relabel_dense(&merged);
    if n < 2 {
        return fallback(h, w, params.n_segments, (ny, nx), iterations);
    }
    Ok(SlicOutcome {
        segments: SegmentMap::new(h, w, dense, n)?,
        degenerate_fallback: false,
        seed_grid: (ny, nx),
        iterations,
    })
}

fn fallback(
    h: usize,
    w: usize,
    n_segments: usize,
    seed_grid: (usize, usize),
    iterations: usize,
) -> Result<SlicOutcome> {
    let side = (n_segments as f64).sqrt().ceil() as usize;
    let (mut rows, mut cols) = (side.min(h), side.min(w));
    if rows * cols < 2 {
        if h >= 2 {
            rows = 2;
        } else {
            cols = 2;
        }
    }
    Ok(SlicOutcome {
        segments: grid_segment(h, w, rows, cols)?,
        degenerate_fallback: true,
        seed_grid,
        iterations,
    })
}

fn to_lab(image: &Image) -> Vec<[f64; 3]> {
    image
        .data
        .chunks_exact(image.channels)
        .map(|px| {
            let rgb = if image.channels == 3 {
                [f64::from(px[0]), f64::from(px[1]), f64::from(px[2])]
            } else {
                let v = f64::from(px[0]);
                [v, v, v]
            };
            srgb_to_lab(rgb)
        })
        .collect()
}

fn is_single_color(lab: &[[f64; 3]]) -> bool {
    let first = lab[0];
    lab.iter()
        .all(|c| c.iter().zip(&first).all(|(a, b)| (a - b).abs() < 1e-9))
}

fn seed_grid(h: usize, w: usize, step: f64) -> (usize, usize) {
    let mut ny = ((h as f64 / step).round() as usize).clamp(1, h);
    let mut nx = ((w as f64 / step).round() as usize).clamp(1, w);
    if ny * nx < 2 {
        if h >= w {
            ny = 2.min(h);
        } else {
            nx = 2.min(w);
        }
    }
    (ny, nx)
}

fn gradient(lab: &[[f64; 3]], h: usize, w: usize, r: usize, c: usize) -> f64 {
    let at = |r: usize, c: usize| &lab[r * w + c];
    let (up, down) = (at(r.saturating_sub(1), c), at((r + 1).min(h - 1), c));
    let (left, right) = (at(r, c.saturating_sub(1)), at(r, (c + 1).min(w - 1)));
    let sq =
        |a: &[f64; 3], b: &[f64; 3]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    sq(up, down) + sq(left, right)
}

/// Regular-grid seeds, each moved to the lowest-gradient pixel of its 3×3
/// neighborhood.
fn initial_centers(lab: &[[f64; 3]], h: usize, w: usize, ny: usize, nx: usize) -> Vec<Center> {
    let mut centers = Vec::with_capacity(ny * nx);
    for i in 0..ny {
        for j in 0..nx {
            let r = (((i as f64 + 0.5) * h as f64 / ny as f64) as usize).min(h - 1);
            let c = (((j as f64 + 0.5) * w as f64 / nx as f64) as usize).min(w - 1);
            let mut best = (r, c, gradient(lab, h, w, r, c));
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let g = gradient(lab, h, w, rr, cc);
                    if g < best.2 {
                        best = (rr, cc, g);
                    }
                }
            }
            let (r, c, _) = best;
            centers.push(Center {
                lab: lab[r * w + c],
                y: r as f64,
                x: c as f64,
            });
        }
    }
    centers
}

#[inline]
fn distance(c: &Center, lab: &[f64; 3], r: usize, col: usize, spatial_scale: f64) -> f64 {
    let dc =
        (c.lab[0] - lab[0]).powi(2) + (c.lab[1] - lab[1]).powi(2) + (c.lab[2] - lab[2]).powi(2);
    let dxy = (c.y - r as f64).powi(2) + (c.x - col as f64).powi(2);
    // Squared form of sqrt(dc² + (dxy·m/S)²); monotone, so argmin is unchanged.
    dc + dxy * spatial_scale * spatial_scale
}

fn update_centers(old: &[Center], labels: &[u32], lab: &[[f64; 3]], w: usize) -> Vec<Center> {
    let mut sums = vec![[0.0f64; 6]; old.len()];
    for (p, &l) in labels.iter().enumerate() {
        let s = &mut sums[l as usize];
        s[0] += lab[p][0];
        s[1] += lab[p][1];
        s[2] += lab[p][2];
        s[3] += (p / w) as f64;
        s[4] += (p % w) as f64;
        s[5] += 1.0;
    }
    old.iter()
        .zip(&sums)
        .map(|(c, s)| {
            if s[5] == 0.0 {
                *c
            } else {
                Center {
                    lab: [s[0] / s[5], s[1] / s[5], s[2] / s[5]],
                    y: s[3] / s[5],
                    x: s[4] / s[5],
                }
            }
        })
        .collect()
}

/// Split labels into 4-connected components, then merge every component
/// smaller than `min_size` pixels into its largest adjacent component.
/// Returns one id per pixel (component representative, not yet dense).
pub(crate) fn enforce_connectivity(labels: &[u32], h: usize, w: usize, min_size: f64) -> Vec<u32> {
    let (comp, sizes) = connected_components(labels, h, w);
    let n = sizes.len();

    let mut adjacency = vec![std::collections::BTreeSet::new(); n];
    for r in 0..h {
        for c in 0..w {
            let a = comp[r * w + c];
            if c + 1 < w {
                let b = comp[r * w + c + 1];
                if a != b {
                    adjacency[a].insert(b);
                    adjacency[b].insert(a);
                }
            }
            if r + 1 < h {
                let b = comp[(r + 1) * w + c];
                if a != b {
                    adjacency[a].insert(b);
                    adjacency[b].insert(a);
                }
            }
        }
    }

    let mut parent: Vec<usize> = (0..n).collect();
    let mut size = sizes;
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    loop {
        let mut merged_any = false;
        for c in 0..n {
            let root = find(&mut parent, c);
            if root != c || (size[root] as f64) >= min_size {
                continue;
            }
            let neighbors: Vec<usize> = adjacency[root].iter().copied().collect();
            let mut best: Option<usize> = None;
            for nb in neighbors {
                let nr = find(&mut parent, nb);
                if nr == root {
                    continue;
                }
                best = match best {
                    Some(b) if size[b] > size[nr] || (size[b] == size[nr] && b < nr) => Some(b),
                    _ => Some(nr),
                };
            }
            if let Some(target) = best {
                parent[root] = target;
                size[target] += size[root];
                let moved = std::mem::take(&mut adjacency[root]);
                adjacency[target].extend(moved);
                merged_any = true;
            }
        }
        if !merged_any {
            break;
        }
    }

    comp.iter().map(|&c| find(&mut parent, c) as u32).collect()
}

/// 4-connected components of equal labels, numbered in scan order.
pub(crate) fn connected_components(labels: &[u32], h: usize, w: usize) -> (Vec<usize>, Vec<usize>) {
    let mut comp = vec![usize::MAX; h * w];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let label = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut count = 0;
        while let Some(p) = stack.pop() {
            count += 1;
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if comp[q] == usize::MAX && labels[q] == label {
                    comp[q] = id;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        sizes.push(count);
    }
    (comp, sizes)
}
