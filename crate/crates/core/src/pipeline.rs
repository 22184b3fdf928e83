//! Image to CRF instance: segmentation, features, input standardization and
//! rendering of superpixel depths back onto the raster.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crf::{map_infer, CrfError, CrfInstance, PairwiseWeights};
use crate::graph::{
    extract_features, similarities, FeatureConfig, GraphError, SceneSample, SegmentConfig,
    DESCRIPTORS,
};
use crate::image::{DepthMap, Raster, RgbImage};
use crate::unary::{UnaryError, UnaryModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Unary(#[from] UnaryError),
    #[error("standardizer expects {expected} inputs, found {found}")]
    Width { expected: usize, found: usize },
    #[error("cannot fit a standardizer on no data")]
    NoData,
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub segment: SegmentConfig,
    pub features: FeatureConfig,
    pub gammas: [f64; DESCRIPTORS],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segment: SegmentConfig::default(),
            features: FeatureConfig::default(),
            gammas: [2.0; DESCRIPTORS],
        }
    }
}

/// Everything the trainer and predictor need from one image.
#[derive(Clone, Debug)]
pub struct PreparedImage {
    pub sample: SceneSample,
    /// Raw unary inputs, one row per superpixel.
    pub inputs: Vec<Vec<f64>>,
    pub edges: Vec<(usize, usize)>,
    /// Edge-major, `DESCRIPTORS` values per edge.
    pub similarity: Vec<f64>,
    /// Ground-truth log-depths when depth was supplied.
    pub y: Option<Vec<f64>>,
}

impl PreparedImage {
    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn instance(&self, z: Vec<f64>) -> Result<CrfInstance<f64>> {
        Ok(CrfInstance::new(
            self.n(),
            DESCRIPTORS,
            self.edges.clone(),
            self.similarity.clone(),
            z,
            self.y.clone(),
        )?)
    }
}

pub fn prepare(
    image: RgbImage,
    depth: Option<DepthMap>,
    config: &PipelineConfig,
) -> Result<PreparedImage> {
    let sample = SceneSample::segmented(image, depth, &config.segment)?;
    let features = extract_features(&sample, &config.features)?;
    let edges = sample.edges();
    let similarity = similarities(&features, &edges, config.gammas)?;
    let y = sample
        .depth()
        .map(|_| features.iter().map(|f| f.gt_logdepth.unwrap()).collect());
    let inputs = features.into_iter().map(|f| f.patch).collect();
    Ok(PreparedImage {
        sample,
        inputs,
        edges,
        similarity,
        y,
    })
}

/// Per-dimension affine map to zero mean and unit variance, fitted on
/// training inputs. Constant dimensions are only centred.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        for row in rows {
            if count == 0 {
                sum = vec![0.0; row.len()];
                sq = vec![0.0; row.len()];
            } else if row.len() != sum.len() {
                return Err(PipelineError::Width {
                    expected: sum.len(),
                    found: row.len(),
                });
            }
            for (i, &v) in row.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(PipelineError::NoData);
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n - m * m).max(0.0).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(PipelineError::Width {
                expected: self.width(),
                found: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

/// Unary outputs `z` for every superpixel of `image`.
pub fn unary_outputs(
    image: &PreparedImage,
    model: &UnaryModel<f64>,
    standardizer: &Standardizer,
) -> Result<Vec<f64>> {
    image
        .inputs
        .iter()
        .map(|row| Ok(model.predict(&standardizer.apply(row)?)?))
        .collect()
}

/// MAP log-depth per superpixel.
pub fn infer_logdepth(
    image: &PreparedImage,
    model: &UnaryModel<f64>,
    standardizer: &Standardizer,
    beta: &PairwiseWeights<f64>,
) -> Result<Vec<f64>> {
    let z = unary_outputs(image, model, standardizer)?;
    let inst = image.instance(z)?.with_y(None)?;
    Ok(map_infer(&inst, beta)?)
}

/// Paints superpixel `p` with `exp(logdepth[p])`.
pub fn render_depth(sample: &SceneSample, logdepth: &[f64]) -> DepthMap {
    let depth: Vec<f64> = logdepth.iter().map(|v| v.exp()).collect();
    let labels = sample.labels();
    Raster::from_fn(labels.height(), labels.width(), |r, c| {
        depth[*labels.get(r, c)]
    })
}
