//! Superpixel segmentation: a simplified SLIC and a deterministic grid.
//!
//! SLIC here seeds cluster centres on a regular grid, nudges each seed to the
//! lowest-gradient pixel of its 3×3 neighbourhood, then runs k-means style
//! iterations over `(r, g, b, row, col)` with the distance
//! `D² = d_color² + (d_space / S)² m²`, each centre only searching a
//! `2S × 2S` window. Afterwards every label keeps its largest 4-connected
//! piece; the other pieces are handed to the nearest adjacent superpixel.

use std::collections::VecDeque;

use super::{GraphError, Result, SegmentConfig, SegmentMode, Segmentation};
use crate::image::{LabelMap, Raster, RgbImage};

const UNSET: usize = usize::MAX;

/// Grid dimensions `(rows, cols)` whose product approximates `target`.
fn grid_shape(height: usize, width: usize, target: usize) -> (usize, usize) {
    let aspect = height as f64 / width as f64;
    let ny = ((target as f64 * aspect).sqrt().round() as usize).clamp(1, height);
    let nx = ((target as f64 / ny as f64).round() as usize).clamp(1, width);
    (ny, nx)
}

pub fn segment(image: &RgbImage, config: &SegmentConfig) -> Result<Segmentation> {
    let pixels = image.len();
    if pixels == 0 {
        return Err(GraphError::EmptyImage);
    }
    config.validate()?;
    if config.target_n > pixels {
        return Err(GraphError::TooManySuperpixels {
            target: config.target_n,
            pixels,
        });
    }
    let labels = match config.mode {
        SegmentMode::Grid => grid_labels(image.height(), image.width(), config.target_n),
        SegmentMode::Slic => slic_labels(image, config),
    };
    Ok(Segmentation::from_labels(labels))
}

fn grid_labels(height: usize, width: usize, target: usize) -> LabelMap {
    let (ny, nx) = grid_shape(height, width, target);
    Raster::from_fn(height, width, |r, c| {
        (r * ny / height) * nx + c * nx / width
    })
}

#[derive(Clone, Copy)]
struct Center {
    color: [f64; 3],
    row: f64,
    col: f64,
}

fn color_dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn slic_labels(image: &RgbImage, config: &SegmentConfig) -> LabelMap {
    let (h, w) = (image.height(), image.width());
    let (ny, nx) = grid_shape(h, w, config.target_n);
    let step = ((h * w) as f64 / (ny * nx) as f64).sqrt();
    let spatial = (config.compactness / step).powi(2);

    let gradient = |r: usize, c: usize| -> f64 {
        let (r, c) = (r as isize, c as isize);
        color_dist2(image.get_clamped(r, c + 1), image.get_clamped(r, c - 1))
            + color_dist2(image.get_clamped(r + 1, c), image.get_clamped(r - 1, c))
    };

    let mut centers: Vec<Center> = Vec::with_capacity(ny * nx);
    for i in 0..ny {
        for j in 0..nx {
            let r0 = ((i as f64 + 0.5) * h as f64 / ny as f64) as usize;
            let c0 = ((j as f64 + 0.5) * w as f64 / nx as f64) as usize;
            let (mut br, mut bc, mut bg) = (r0, c0, f64::INFINITY);
            for r in r0.saturating_sub(1)..=(r0 + 1).min(h - 1) {
                for c in c0.saturating_sub(1)..=(c0 + 1).min(w - 1) {
                    let g = gradient(r, c);
                    if g < bg {
                        (br, bc, bg) = (r, c, g);
                    }
                }
            }
            centers.push(Center {
                color: *image.get(br, bc),
                row: br as f64,
                col: bc as f64,
            });
        }
    }

    let mut labels = Raster::filled(h, w, UNSET);
    let mut dist = Raster::filled(h, w, f64::INFINITY);
    let reach = step.ceil() as isize;
    for _ in 0..config.iterations.max(1) {
        dist.as_mut_slice().fill(f64::INFINITY);
        labels.as_mut_slice().fill(UNSET);
        for (k, ctr) in centers.iter().enumerate() {
            let (cr, cc) = (ctr.row.round() as isize, ctr.col.round() as isize);
            let r_lo = (cr - reach).max(0) as usize;
            let r_hi = ((cr + reach) as usize).min(h - 1);
            let c_lo = (cc - reach).max(0) as usize;
            let c_hi = ((cc + reach) as usize).min(w - 1);
            for r in r_lo..=r_hi {
                for c in c_lo..=c_hi {
                    let ds2 = (r as f64 - ctr.row).powi(2) + (c as f64 - ctr.col).powi(2);
                    let d = color_dist2(image.get(r, c), &ctr.color) + ds2 * spatial;
                    if d < *dist.get(r, c) {
                        *dist.get_mut(r, c) = d;
                        *labels.get_mut(r, c) = k;
                    }
                }
            }
        }
        let mut acc = vec![([0.0; 3], 0.0, 0.0, 0usize); centers.len()];
        for r in 0..h {
            for c in 0..w {
                let k = *labels.get(r, c);
                if k == UNSET {
                    continue;
                }
                let a = &mut acc[k];
                let p = image.get(r, c);
                for i in 0..3 {
                    a.0[i] += p[i];
                }
                a.1 += r as f64;
                a.2 += c as f64;
                a.3 += 1;
            }
        }
        for (ctr, a) in centers.iter_mut().zip(&acc) {
            if a.3 > 0 {
                let n = a.3 as f64;
                ctr.color = [a.0[0] / n, a.0[1] / n, a.0[2] / n];
                ctr.row = a.1 / n;
                ctr.col = a.2 / n;
            }
        }
    }
    enforce_connectivity(image, labels, &centers, spatial)
}

/// 4-connected components of equal labels; returns component ids and, per
/// component, its label and pixel list.
fn components(labels: &LabelMap) -> (Raster<usize>, Vec<(usize, Vec<usize>)>) {
    let (h, w) = (labels.height(), labels.width());
    let mut comp = Raster::filled(h, w, UNSET);
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if comp.as_slice()[start] != UNSET {
            continue;
        }
        let id = out.len();
        let label = labels.as_slice()[start];
        let mut members = Vec::new();
        comp.as_mut_slice()[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if comp.as_slice()[j] == UNSET && labels.as_slice()[j] == label {
                    comp.as_mut_slice()[j] = id;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        out.push((label, members));
    }
    (comp, out)
}

fn enforce_connectivity(
    image: &RgbImage,
    labels: LabelMap,
    centers: &[Center],
    spatial: f64,
) -> LabelMap {
    let (h, w) = (labels.height(), labels.width());
    let (comp, comps) = components(&labels);

    // The largest piece of each label survives.
    let mut keeper = vec![UNSET; centers.len()];
    for (id, (label, members)) in comps.iter().enumerate() {
        if *label == UNSET {
            continue;
        }
        if keeper[*label] == UNSET || comps[keeper[*label]].1.len() < members.len() {
            keeper[*label] = id;
        }
    }
    let mut out = Raster::filled(h, w, UNSET);
    let mut orphans = Vec::new();
    for (id, (label, members)) in comps.iter().enumerate() {
        if *label != UNSET && keeper[*label] == id {
            for &i in members {
                out.as_mut_slice()[i] = *label;
            }
        } else {
            orphans.push(id);
        }
    }

    // Orphans join the adjacent surviving superpixel whose centre is closest
    // to the orphan's mean colour and position. Orphans only touching other
    // orphans wait for a later pass.
    while !orphans.is_empty() {
        let mut pending = Vec::new();
        for &id in &orphans {
            let members = &comps[id].1;
            let mut mean = ([0.0; 3], 0.0, 0.0);
            let mut candidates = Vec::new();
            for &i in members {
                let (r, c) = (i / w, i % w);
                let p = image.get(r, c);
                for k in 0..3 {
                    mean.0[k] += p[k];
                }
                mean.1 += r as f64;
                mean.2 += c as f64;
                let mut look = |j: usize| {
                    let l = out.as_slice()[j];
                    if l != UNSET && comp.as_slice()[j] != id && !candidates.contains(&l) {
                        candidates.push(l);
                    }
                };
                if r > 0 {
                    look(i - w);
                }
                if r + 1 < h {
                    look(i + w);
                }
                if c > 0 {
                    look(i - 1);
                }
                if c + 1 < w {
                    look(i + 1);
                }
            }
            if candidates.is_empty() {
                pending.push(id);
                continue;
            }
            let n = members.len() as f64;
            let color = [mean.0[0] / n, mean.0[1] / n, mean.0[2] / n];
            let (row, col) = (mean.1 / n, mean.2 / n);
            let best = candidates
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let d = |l: usize| {
                        let ctr = &centers[l];
                        color_dist2(&color, &ctr.color)
                            + ((row - ctr.row).powi(2) + (col - ctr.col).powi(2)) * spatial
                    };
                    d(a).total_cmp(&d(b)).then(a.cmp(&b))
                })
                .unwrap();
            for &i in members {
                out.as_mut_slice()[i] = best;
            }
        }
        if pending.len() == orphans.len() {
            // Only possible when no label survived at all; keep the pieces.
            for (fresh, &id) in pending.iter().enumerate() {
                for &i in &comps[id].1 {
                    out.as_mut_slice()[i] = centers.len() + fresh;
                }
            }
            break;
        }
        orphans = pending;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape_matches_targets() {
        assert_eq!(grid_shape(10, 10, 4), (2, 2));
        assert_eq!(grid_shape(128, 128, 150), (12, 13));
        assert_eq!(grid_shape(10, 20, 8), (2, 4));
        assert_eq!(grid_shape(3, 3, 9), (3, 3));
    }
}
