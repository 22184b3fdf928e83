use serde::{Deserialize, Serialize};

use super::{GraphError, Result, SceneSample};
use crate::image::{luminance, Raster, RgbImage};

pub const LBP_BINS: usize = 256;
/// Number of appearance descriptors compared by the pairwise term: mean
/// colour, colour histogram and LBP histogram, in that order.
pub const DESCRIPTORS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthSample {
    /// Log of the mean depth over the superpixel.
    Mean,
    /// Log of the depth at the pixel nearest the centroid.
    Centroid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub box_size: usize,
    pub patch_dim: usize,
    pub hist_bins: usize,
    pub depth_sample: DepthSample,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            box_size: 40,
            patch_dim: 6,
            hist_bins: 10,
            depth_sample: DepthSample::Mean,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.box_size == 0 || self.patch_dim == 0 || self.hist_bins == 0 {
            return Err(GraphError::InvalidConfig(
                "box size, patch size and histogram bins must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        self.patch_dim * self.patch_dim * 3
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelFeatures {
    pub mean_color: [f64; 3],
    /// Per-channel histograms concatenated, normalized to sum to one overall.
    pub color_hist: Vec<f64>,
    pub lbp_hist: Vec<f64>,
    /// `d × d × 3`, row-major with channels innermost.
    pub patch: Vec<f64>,
    pub gt_logdepth: Option<f64>,
}

impl SuperpixelFeatures {
    pub fn descriptor(&self, k: usize) -> &[f64] {
        match k {
            0 => &self.mean_color,
            1 => &self.color_hist,
            2 => &self.lbp_hist,
            _ => panic!("descriptor index {k} out of range"),
        }
    }
}

/// 8-neighbour, radius-1 LBP on luminance with edge replication. Bit `i` is
/// set when neighbour `i` is strictly brighter than the centre; neighbours
/// run clockwise from the top-left.
pub fn lbp_codes(image: &RgbImage) -> Raster<u8> {
    const OFFSETS: [(isize, isize); 8] = [
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
        (1, 0),
        (1, -1),
        (0, -1),
    ];
    let lum = luminance(image);
    Raster::from_fn(image.height(), image.width(), |r, c| {
        let center = *lum.get(r, c);
        let (r, c) = (r as isize, c as isize);
        OFFSETS
            .iter()
            .enumerate()
            .fold(0u8, |code, (bit, &(dr, dc))| {
                if *lum.get_clamped(r + dr, c + dc) > center {
                    code | (1 << bit)
                } else {
                    code
                }
            })
    })
}

#[inline]
fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

/// Colour histogram over the given pixels (row-major indices).
pub fn color_histogram(image: &RgbImage, pixels: &[usize], bins: usize) -> Vec<f64> {
    let mut hist = vec![0.0; 3 * bins];
    let data = image.as_slice();
    for &i in pixels {
        for ch in 0..3 {
            hist[ch * bins + bin_of(data[i][ch], bins)] += 1.0;
        }
    }
    let total = 3.0 * pixels.len() as f64;
    if total > 0.0 {
        hist.iter_mut().for_each(|h| *h /= total);
    }
    hist
}

/// Overlap weights of output cell `i` of `d` over `len` input samples.
fn area_weights(len: usize, d: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = len as f64 / d as f64;
    (0..d)
        .map(|i| {
            let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
            let mut w = Vec::new();
            let mut j = lo.floor() as usize;
            while (j as f64) < hi && j < len {
                let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((j, overlap / scale));
                }
                j += 1;
            }
            w
        })
        .collect()
}

/// `box_size × box_size` crop whose centre is the pixel nearest `center`,
/// clamped by edge replication and area-averaged to `d × d`.
fn patch(image: &RgbImage, center: (f64, f64), box_size: usize, d: usize) -> Vec<f64> {
    let r0 = (center.0 + 0.5).floor() as isize - (box_size / 2) as isize;
    let c0 = (center.1 + 0.5).floor() as isize - (box_size / 2) as isize;
    let weights = area_weights(box_size, d);
    let mut out = Vec::with_capacity(d * d * 3);
    for wr in &weights {
        for wc in &weights {
            let mut acc = [0.0; 3];
            for &(i, a) in wr {
                for &(j, b) in wc {
                    let p = image.get_clamped(r0 + i as isize, c0 + j as isize);
                    for ch in 0..3 {
                        acc[ch] += a * b * p[ch];
                    }
                }
            }
            out.extend(acc.iter().map(|v| v.clamp(0.0, 1.0)));
        }
    }
    out
}

pub fn extract_features(
    sample: &SceneSample,
    config: &FeatureConfig,
) -> Result<Vec<SuperpixelFeatures>> {
    config.validate()?;
    let image = sample.image();
    let codes = lbp_codes(image);
    let members = sample.segmentation().members();
    let data = image.as_slice();
    let features = members
        .iter()
        .zip(sample.centroids())
        .map(|(pixels, &centroid)| {
            let n = pixels.len() as f64;
            let mut mean_color = [0.0; 3];
            for &i in pixels {
                for ch in 0..3 {
                    mean_color[ch] += data[i][ch];
                }
            }
            mean_color.iter_mut().for_each(|m| *m /= n);

            let mut lbp_hist = vec![0.0; LBP_BINS];
            for &i in pixels {
                lbp_hist[codes.as_slice()[i] as usize] += 1.0;
            }
            lbp_hist.iter_mut().for_each(|h| *h /= n);

            let gt_logdepth = sample.depth().map(|depth| match config.depth_sample {
                DepthSample::Mean => {
                    (pixels.iter().map(|&i| depth.as_slice()[i]).sum::<f64>() / n).ln()
                }
                DepthSample::Centroid => depth
                    .get_clamped(
                        (centroid.0 + 0.5).floor() as isize,
                        (centroid.1 + 0.5).floor() as isize,
                    )
                    .ln(),
            });

            SuperpixelFeatures {
                mean_color,
                color_hist: color_histogram(image, pixels, config.hist_bins),
                lbp_hist,
                patch: patch(image, centroid, config.box_size, config.patch_dim),
                gt_logdepth,
            }
        })
        .collect();
    Ok(features)
}

/// Edge-major similarity values `exp(−γ_k ‖s_p^k − s_q^k‖₂)` for each edge
/// and each of the three descriptors.
pub fn similarities(
    features: &[SuperpixelFeatures],
    edges: &[(usize, usize)],
    gammas: [f64; DESCRIPTORS],
) -> Result<Vec<f64>> {
    if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(GraphError::InvalidConfig(format!(
            "similarity scales must be positive, found {g}"
        )));
    }
    let mut out = Vec::with_capacity(edges.len() * DESCRIPTORS);
    for &(p, q) in edges {
        for (k, gamma) in gammas.iter().enumerate() {
            let (a, b) = (features[p].descriptor(k), features[q].descriptor(k));
            let dist = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            out.push((-gamma * dist).exp());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{SegmentConfig, SegmentMode, Segmentation};

    fn grid_sample(image: RgbImage, depth: Option<Raster<f64>>, n: usize) -> SceneSample {
        let cfg = SegmentConfig {
            target_n: n,
            mode: SegmentMode::Grid,
            ..Default::default()
        };
        SceneSample::segmented(image, depth, &cfg).unwrap()
    }

    #[test]
    fn area_weights_partition_unity() {
        for (len, d) in [(24, 6), (10, 3), (5, 7), (1, 1)] {
            for w in area_weights(len, d) {
                let s: f64 = w.iter().map(|x| x.1).sum();
                assert!((s - 1.0).abs() < 1e-12, "{len} {d} {s}");
            }
        }
    }

    #[test]
    fn uniform_gray_image() {
        let img = Raster::filled(12, 12, [0.4, 0.4, 0.4]);
        let depth = Raster::filled(12, 12, 2.0);
        let s = grid_sample(img, Some(depth), 9);
        let f = extract_features(&s, &FeatureConfig::default()).unwrap();
        assert_eq!(f.len(), 9);
        for sp in &f {
            assert_eq!(sp.mean_color, f[0].mean_color);
            assert_eq!(sp.lbp_hist[0], 1.0);
            assert_eq!(sp.lbp_hist.iter().sum::<f64>(), 1.0);
            assert!((sp.gt_logdepth.unwrap() - 2f64.ln()).abs() < 1e-15);
            assert!(sp.patch.iter().all(|&v| (v - 0.4).abs() < 1e-12));
        }
    }

    #[test]
    fn lbp_bits_follow_neighbour_order() {
        // Bright pixel to the right of the centre sets bit 3 only.
        let mut img = Raster::filled(3, 3, [0.0; 3]);
        *img.get_mut(1, 2) = [1.0; 3];
        assert_eq!(*lbp_codes(&img).get(1, 1), 1 << 3);
        let mut img = Raster::filled(3, 3, [0.0; 3]);
        *img.get_mut(0, 0) = [1.0; 3];
        assert_eq!(*lbp_codes(&img).get(1, 1), 1);
        // Replicated border: the corner's out-of-range neighbours copy it.
        assert_eq!(*lbp_codes(&img).get(0, 0), 0);
    }

    #[test]
    fn hand_counted_histograms() {
        // Left 6×3 half is superpixel 0, right half superpixel 1. Column
        // colours: red channel 0.05, 0.15, 0.95 on the left, all 0.55 on the
        // right; green and blue fixed.
        let img = Raster::from_fn(6, 6, |_, c| {
            let red = [0.05, 0.15, 0.95, 0.55, 0.55, 0.55][c];
            [red, 0.0, 1.0]
        });
        let labels = Raster::from_fn(6, 6, |_, c| usize::from(c >= 3));
        let s = SceneSample::new(img, None, Segmentation::new(labels).unwrap()).unwrap();
        let f = extract_features(&s, &FeatureConfig::default()).unwrap();
        let third = 1.0 / 3.0;
        let mut left = vec![0.0; 30];
        left[0] = third / 3.0;
        left[1] = third / 3.0;
        left[9] = third / 3.0;
        left[10] = third;
        left[29] = third;
        let mut right = vec![0.0; 30];
        right[5] = third;
        right[10] = third;
        right[29] = third;
        for (a, b) in f[0].color_hist.iter().zip(&left) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in f[1].color_hist.iter().zip(&right) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(f[0].gt_logdepth.is_none());

        // Luminance rises left to right inside the left half, so interior
        // left pixels see brighter neighbours on the right column only.
        let codes = lbp_codes(s.image());
        let mut lbp = vec![0.0; 256];
        lbp[0b0001_1100] = 12.0 / 18.0;
        lbp[0] = 6.0 / 18.0;
        for (a, b) in f[0].lbp_hist.iter().zip(&lbp) {
            assert!((a - b).abs() < 1e-12);
        }
        // Columns 0 and 1 have brighter right neighbours: bits 2, 3, 4.
        assert_eq!(*codes.get(2, 0), 0b0001_1100);
        assert_eq!(*codes.get(2, 1), 0b0001_1100);
        // Column 2 is the brightest, column 3 darker: nothing set.
        assert_eq!(*codes.get(2, 2), 0);
    }

    #[test]
    fn centroid_depth_option() {
        let img = Raster::filled(4, 4, [0.5; 3]);
        let depth = Raster::from_fn(4, 4, |r, c| 1.0 + (r * 4 + c) as f64);
        let s = grid_sample(img, Some(depth), 1);
        let cfg = FeatureConfig {
            depth_sample: DepthSample::Centroid,
            ..Default::default()
        };
        // Centroid (1.5, 1.5) rounds to pixel (2, 2).
        let f = extract_features(&s, &cfg).unwrap();
        assert!((f[0].gt_logdepth.unwrap() - 11f64.ln()).abs() < 1e-15);
        let f = extract_features(&s, &FeatureConfig::default()).unwrap();
        assert!((f[0].gt_logdepth.unwrap() - 8.5f64.ln()).abs() < 1e-15);
    }

    fn feat(color: [f64; 3]) -> SuperpixelFeatures {
        SuperpixelFeatures {
            mean_color: color,
            color_hist: vec![0.0; 30],
            lbp_hist: vec![0.0; 256],
            patch: vec![],
            gt_logdepth: None,
        }
    }

    #[test]
    fn kernel_values() {
        let f = vec![feat([0.0; 3]), feat([1.0; 3]), feat([0.0; 3])];
        let s = similarities(&f, &[(0, 1), (0, 2)], [1.0, 1.0, 1.0]).unwrap();
        assert!((s[0] - (-3f64.sqrt()).exp()).abs() < 1e-15);
        assert!((s[0] - 0.1769).abs() < 1e-4);
        assert_eq!(&s[1..3], &[1.0, 1.0]);
        assert_eq!(&s[3..6], &[1.0, 1.0, 1.0]);
        let mut last = 1.0;
        for g in [0.5, 1.0, 2.0, 8.0, 32.0] {
            let v = similarities(&f, &[(0, 1)], [g, 1.0, 1.0]).unwrap()[0];
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-20);
        assert!(similarities(&f, &[(0, 1)], [0.0, 1.0, 1.0]).is_err());
    }
}
