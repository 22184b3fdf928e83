//! From raster to graph: superpixels, adjacency, appearance features and the
//! pairwise similarity kernels.

mod features;
mod slic;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{DepthMap, LabelMap, RgbImage};

pub use features::{
    color_histogram, extract_features, lbp_codes, similarities, DepthSample, FeatureConfig,
    SuperpixelFeatures, DESCRIPTORS, LBP_BINS,
};
pub use slic::segment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("image is empty")]
    EmptyImage,
    #[error("requested {target} superpixels but the image only has {pixels} pixels")]
    TooManySuperpixels { target: usize, pixels: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("raster shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("depth must be finite and positive, found {value} at ({row}, {col})")]
    InvalidDepth { row: usize, col: usize, value: f64 },
    #[error("invalid labeling: {0}")]
    InvalidLabels(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMode {
    Slic,
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub target_n: usize,
    /// Weight of spatial distance against colour distance (colours in [0, 1]).
    pub compactness: f64,
    pub mode: SegmentMode,
    pub iterations: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            target_n: 150,
            compactness: 0.2,
            mode: SegmentMode::Slic,
            iterations: 10,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_n == 0 {
            return Err(GraphError::InvalidConfig(
                "target superpixel count must be positive".into(),
            ));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(GraphError::InvalidConfig(
                "compactness must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A partition of the raster into `count` superpixels, ids `0..count`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    labels: LabelMap,
    count: usize,
    centroids: Vec<(f64, f64)>,
    sizes: Vec<usize>,
}

impl Segmentation {
    /// Compacts arbitrary label values to `0..count` in row-major order of
    /// first appearance.
    pub fn from_labels(labels: LabelMap) -> Self {
        let mut remap = std::collections::HashMap::new();
        let compact = labels.map(|&l| {
            let next = remap.len();
            *remap.entry(l).or_insert(next)
        });
        Self::new(compact).expect("compacted labels are valid")
    }

    /// Validates that ids are exactly `0..n` with every id present.
    pub fn new(labels: LabelMap) -> Result<Self> {
        if labels.is_empty() {
            return Err(GraphError::EmptyImage);
        }
        let count = labels.as_slice().iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; count];
        let mut sums = vec![(0.0, 0.0); count];
        for r in 0..labels.height() {
            for c in 0..labels.width() {
                let l = *labels.get(r, c);
                sizes[l] += 1;
                sums[l].0 += r as f64;
                sums[l].1 += c as f64;
            }
        }
        if let Some(missing) = sizes.iter().position(|&s| s == 0) {
            return Err(GraphError::InvalidLabels(format!(
                "superpixel {missing} of {count} has no pixels"
            )));
        }
        let centroids = sums
            .iter()
            .zip(&sizes)
            .map(|(&(r, c), &s)| (r / s as f64, c / s as f64))
            .collect();
        Ok(Self {
            labels,
            count,
            centroids,
            sizes,
        })
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean `(row, col)` pixel coordinate of each superpixel.
    pub fn centroids(&self) -> &[(f64, f64)] {
        &self.centroids
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Pixel indices (row-major) of every superpixel.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &l) in self.labels.as_slice().iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Pairs `(p, q)`, `p < q`, with some pixel of `p` 4-adjacent to some pixel
/// of `q`. Sorted.
pub fn adjacency(labels: &LabelMap) -> Vec<(usize, usize)> {
    let mut set = BTreeSet::new();
    let (h, w) = (labels.height(), labels.width());
    for r in 0..h {
        for c in 0..w {
            let a = *labels.get(r, c);
            if c + 1 < w {
                let b = *labels.get(r, c + 1);
                if a != b {
                    set.insert((a.min(b), a.max(b)));
                }
            }
            if r + 1 < h {
                let b = *labels.get(r + 1, c);
                if a != b {
                    set.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    set.into_iter().collect()
}

/// An image with its superpixel partition and, for training and evaluation,
/// the ground-truth depth.
#[derive(Clone, Debug)]
pub struct SceneSample {
    image: RgbImage,
    depth: Option<DepthMap>,
    segmentation: Segmentation,
}

impl SceneSample {
    pub fn new(
        image: RgbImage,
        depth: Option<DepthMap>,
        segmentation: Segmentation,
    ) -> Result<Self> {
        if image.is_empty() {
            return Err(GraphError::EmptyImage);
        }
        if !image.same_shape(segmentation.labels()) {
            return Err(GraphError::ShapeMismatch(format!(
                "image is {}x{}, labels are {}x{}",
                image.height(),
                image.width(),
                segmentation.labels().height(),
                segmentation.labels().width()
            )));
        }
        if let Some(d) = &depth {
            if !image.same_shape(d) {
                return Err(GraphError::ShapeMismatch(format!(
                    "image is {}x{}, depth is {}x{}",
                    image.height(),
                    image.width(),
                    d.height(),
                    d.width()
                )));
            }
            for r in 0..d.height() {
                for c in 0..d.width() {
                    let v = *d.get(r, c);
                    if !(v.is_finite() && v > 0.0) {
                        return Err(GraphError::InvalidDepth {
                            row: r,
                            col: c,
                            value: v,
                        });
                    }
                }
            }
        }
        Ok(Self {
            image,
            depth,
            segmentation,
        })
    }

    /// Segments `image` and bundles the result.
    pub fn segmented(
        image: RgbImage,
        depth: Option<DepthMap>,
        config: &SegmentConfig,
    ) -> Result<Self> {
        let seg = segment(&image, config)?;
        Self::new(image, depth, seg)
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn depth(&self) -> Option<&DepthMap> {
        self.depth.as_ref()
    }

    pub fn segmentation(&self) -> &Segmentation {
        &self.segmentation
    }

    pub fn labels(&self) -> &LabelMap {
        self.segmentation.labels()
    }

    pub fn count(&self) -> usize {
        self.segmentation.count()
    }

    pub fn centroids(&self) -> &[(f64, f64)] {
        self.segmentation.centroids()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        adjacency(self.labels())
    }
}
