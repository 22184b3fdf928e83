//! Synthetic piecewise-planar scenes with ground-truth depth.
//!
//! The raster is cut into convex regions by repeated random half-plane splits.
//! Each region gets a planar depth field and a colour keyed to its depth, so
//! that neighbours that look alike tend to lie at similar depths.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{DepthMap, LabelMap, Raster, RgbImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Flat,
    /// Colour follows the per-pixel depth within each region.
    Gradient,
    /// Region-keyed stripes.
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_planes: usize,
    pub depth_range: (f64, f64),
    pub texture: Texture,
    pub seed: u64,
    /// Standard deviation of additive pixel noise, in [0, 1] colour units.
    pub noise_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            num_planes: 8,
            depth_range: (1.0, 10.0),
            texture: Texture::Noise,
            seed: 0,
            noise_sigma: 0.02,
        }
    }
}

pub const MIN_SIDE: usize = 16;

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return bad(format!(
                "scenes must be at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
                self.height, self.width
            ));
        }
        if self.num_planes == 0 {
            return bad("num_planes must be at least 1".into());
        }
        // Every region must keep a few pixels.
        if self.num_planes * 8 > self.height * self.width {
            return bad(format!("{} planes do not fit the raster", self.num_planes));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && lo.is_finite() && hi.is_finite() && hi >= lo) {
            return bad(format!(
                "depth range ({lo}, {hi}) must satisfy 0 < min <= max"
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be nonnegative".into());
        }
        Ok(())
    }

    /// Largest per-pixel depth change inside one region.
    pub fn slope_bound(&self) -> f64 {
        let (lo, hi) = self.depth_range;
        0.2 * (hi - lo) / (self.height + self.width) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// 8-bit quantized, so it survives a PPM round trip unchanged.
    pub image: RgbImage,
    pub depth: DepthMap,
    /// Generating region of each pixel.
    pub regions: LabelMap,
}

struct Plane {
    base: f64,
    grad_r: f64,
    grad_c: f64,
    center: (f64, f64),
    tint: [f64; 3],
    stripe_angle: f64,
    stripe_freq: f64,
    stripe_amp: f64,
}

fn split_regions(rng: &mut impl Rng, h: usize, w: usize, count: usize) -> LabelMap {
    let mut labels = Raster::filled(h, w, 0usize);
    let mut sizes = vec![h * w];
    let min_side = ((h * w) / (count * 4)).max(2);
    while sizes.len() < count {
        // Split a region chosen with probability proportional to its area.
        let mut pick = rng.random_range(0..h * w);
        let target = sizes
            .iter()
            .position(|&s| {
                if pick < s {
                    true
                } else {
                    pick -= s;
                    false
                }
            })
            .unwrap();
        let members: Vec<usize> = (0..h * w)
            .filter(|&i| labels.as_slice()[i] == target)
            .collect();
        let mut done = false;
        for _ in 0..64 {
            let anchor = members[rng.random_range(0..members.len())];
            let (ar, ac) = ((anchor / w) as f64, (anchor % w) as f64);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let (nr, nc) = (angle.sin(), angle.cos());
            let side: Vec<bool> = members
                .iter()
                .map(|&i| ((i / w) as f64 - ar) * nr + ((i % w) as f64 - ac) * nc > 0.0)
                .collect();
            let moved = side.iter().filter(|&&s| s).count();
            if moved < min_side || members.len() - moved < min_side {
                continue;
            }
            let fresh = sizes.len();
            for (&i, &s) in members.iter().zip(&side) {
                if s {
                    labels.as_mut_slice()[i] = fresh;
                }
            }
            sizes[target] -= moved;
            sizes.push(moved);
            done = true;
            break;
        }
        if !done {
            // Accept any nonempty split of the largest region.
            let largest = (0..sizes.len()).max_by_key(|&k| sizes[k]).unwrap();
            let members: Vec<usize> = (0..h * w)
                .filter(|&i| labels.as_slice()[i] == largest)
                .collect();
            let half = members.len() / 2;
            let fresh = sizes.len();
            for &i in &members[half..] {
                labels.as_mut_slice()[i] = fresh;
            }
            sizes[largest] = half;
            sizes.push(members.len() - half);
        }
    }
    labels
}

pub fn generate(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let regions = split_regions(&mut rng, h, w, spec.num_planes);

    let (lo, hi) = spec.depth_range;
    let margin = 0.2 * (hi - lo);
    let slope = spec.slope_bound();
    let mut centers = vec![(0.0, 0.0, 0usize); spec.num_planes];
    for (i, &l) in regions.as_slice().iter().enumerate() {
        centers[l].0 += (i / w) as f64;
        centers[l].1 += (i % w) as f64;
        centers[l].2 += 1;
    }
    let planes: Vec<Plane> = centers
        .iter()
        .map(|&(sr, sc, n)| Plane {
            base: if margin > 0.0 {
                rng.random_range(lo + margin..=hi - margin)
            } else {
                lo
            },
            grad_r: slope * rng.random_range(-1.0..=1.0),
            grad_c: slope * rng.random_range(-1.0..=1.0),
            center: (sr / n as f64, sc / n as f64),
            tint: [
                rng.random_range(-0.08..0.08),
                rng.random_range(-0.08..0.08),
                rng.random_range(-0.08..0.08),
            ],
            stripe_angle: rng.random_range(0.0..std::f64::consts::PI),
            stripe_freq: rng.random_range(0.3..1.2),
            stripe_amp: rng.random_range(0.03..0.1),
        })
        .collect();

    let depth = Raster::from_fn(h, w, |r, c| {
        let p = &planes[*regions.get(r, c)];
        let d = p.base + p.grad_r * (r as f64 - p.center.0) + p.grad_c * (c as f64 - p.center.1);
        d.clamp(lo, hi)
    });

    let log_span = (hi / lo).ln();
    let depth_unit = |d: f64| {
        if log_span > 0.0 {
            (d / lo).ln() / log_span
        } else {
            0.5
        }
    };
    let image = Raster::from_fn(h, w, |r, c| {
        let p = &planes[*regions.get(r, c)];
        let t = match spec.texture {
            Texture::Gradient => depth_unit(*depth.get(r, c)),
            Texture::Flat | Texture::Noise => depth_unit(p.base),
        };
        let mut rgb = ramp(t);
        for ch in 0..3 {
            rgb[ch] += p.tint[ch];
        }
        if spec.texture == Texture::Noise {
            let phase =
                (r as f64 * p.stripe_angle.sin() + c as f64 * p.stripe_angle.cos()) * p.stripe_freq;
            let s = p.stripe_amp * phase.sin();
            rgb.iter_mut().for_each(|v| *v += s);
        }
        if spec.noise_sigma > 0.0 {
            for v in rgb.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += spec.noise_sigma * e;
            }
        }
        rgb.map(quantize)
    });

    Ok(Scene {
        image,
        depth,
        regions,
    })
}

/// Colour ramp from near (warm, bright) to far (cool, dark).
fn ramp(t: f64) -> [f64; 3] {
    [
        0.85 - 0.6 * t,
        0.35 + 0.35 * (std::f64::consts::PI * t).sin(),
        0.2 + 0.6 * t,
    ]
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Seed of sample `index` in a dataset drawn with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// `count` scenes sharing the template's shape and style, with per-sample
/// seeds derived from `(seed, index)`. Returns the scenes with their seeds.
pub fn generate_dataset(
    template: &SceneSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<(u64, Scene)>, SynthError> {
    if count == 0 {
        return Err(SynthError::InvalidSpec(
            "dataset count must be at least 1".into(),
        ));
    }
    template.validate()?;
    (0..count as u64)
        .map(|i| {
            let s = derive_seed(seed, i);
            let spec = SceneSpec {
                seed: s,
                ..template.clone()
            };
            generate(&spec).map(|scene| (s, scene))
        })
        .collect()
}
