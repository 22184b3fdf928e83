//! Pixel-level depth metrics with pooled pixel counts, Make3D-style masks and
//! full-image prediction.

use thiserror::Error;

use crate::crf::PairwiseWeights;
use crate::image::{DepthMap, Raster, RgbImage};
use crate::pipeline::{infer_logdepth, prepare, PipelineConfig, PipelineError, Standardizer};
use crate::unary::UnaryModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no pixels selected by the evaluation mask")]
    EmptyMask,
    #[error("prediction is {0}x{1} but ground truth is {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("depth at ({row}, {col}) must be finite and positive, found {value}")]
    InvalidDepth { row: usize, col: usize, value: f64 },
    #[error("C1 cap must be positive, found {0}")]
    InvalidCap(f64),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

pub type Mask = Raster<bool>;

#[derive(Clone, Debug)]
pub struct DepthPair {
    pub predicted: DepthMap,
    pub ground_truth: DepthMap,
    pub mask: Mask,
}

impl DepthPair {
    pub fn new(predicted: DepthMap, ground_truth: DepthMap, mask: Mask) -> Result<Self> {
        if !predicted.same_shape(&ground_truth) || !predicted.same_shape(&mask) {
            return Err(EvalError::ShapeMismatch(
                predicted.height(),
                predicted.width(),
                ground_truth.height(),
                ground_truth.width(),
            ));
        }
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                if !*mask.get(r, c) {
                    continue;
                }
                for v in [*predicted.get(r, c), *ground_truth.get(r, c)] {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(EvalError::InvalidDepth {
                            row: r,
                            col: c,
                            value: v,
                        });
                    }
                }
            }
        }
        Ok(Self {
            predicted,
            ground_truth,
            mask,
        })
    }

    /// Every pixel counts.
    pub fn unmasked(predicted: DepthMap, ground_truth: DepthMap) -> Result<Self> {
        let mask = Raster::filled(ground_truth.height(), ground_truth.width(), true);
        Self::new(predicted, ground_truth, mask)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rel: f64,
    pub rms: f64,
    pub log10: f64,
    /// Percentages.
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub pixel_count: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "rel,rms,log10,delta1,delta2,delta3,pixels";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.rel, self.rms, self.log10, self.delta1, self.delta2, self.delta3, self.pixel_count
        )
    }

    pub fn table(&self) -> String {
        format!(
            "  rel     {:.4}\n  rms     {:.4}\n  log10   {:.4}\n  δ<1.25   {:.2}%\n  δ<1.25²  {:.2}%\n  δ<1.25³  {:.2}%\n  pixels  {}\n",
            self.rel, self.rms, self.log10, self.delta1, self.delta2, self.delta3, self.pixel_count
        )
    }
}

/// Metrics pooled over every masked-in pixel of every pair: `T` is the total
/// pixel count, not a per-image average.
pub fn metrics(pairs: &[DepthPair]) -> Result<MetricsReport> {
    let thresholds = [1.25f64, 1.25f64.powi(2), 1.25f64.powi(3)];
    let (mut rel, mut sq, mut log10) = (0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    let mut count = 0usize;
    for pair in pairs {
        let it = pair
            .predicted
            .as_slice()
            .iter()
            .zip(pair.ground_truth.as_slice())
            .zip(pair.mask.as_slice());
        for ((&d, &g), &keep) in it {
            if !keep {
                continue;
            }
            count += 1;
            rel += (g - d).abs() / g;
            sq += (g - d) * (g - d);
            log10 += (g.log10() - d.log10()).abs();
            let ratio = (g / d).max(d / g);
            for (h, t) in hits.iter_mut().zip(thresholds) {
                if ratio < t {
                    *h += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(EvalError::EmptyMask);
    }
    let t = count as f64;
    let pct = |h: usize| 100.0 * h as f64 / t;
    Ok(MetricsReport {
        rel: rel / t,
        rms: (sq / t).sqrt(),
        log10: log10 / t,
        delta1: pct(hits[0]),
        delta2: pct(hits[1]),
        delta3: pct(hits[2]),
        pixel_count: count,
    })
}

/// `(C1, C2)`: C1 keeps pixels with ground truth below `cap_c1`, C2 keeps all.
pub fn make3d_masks(ground_truth: &DepthMap, cap_c1: f64) -> Result<(Mask, Mask)> {
    if !(cap_c1 > 0.0) {
        return Err(EvalError::InvalidCap(cap_c1));
    }
    Ok((
        ground_truth.map(|&d| d < cap_c1),
        ground_truth.map(|_| true),
    ))
}

/// Segment, extract features, regress, run MAP inference and paint each
/// superpixel with its depth.
pub fn predict_image(
    image: RgbImage,
    model: &UnaryModel<f64>,
    standardizer: &Standardizer,
    beta: &PairwiseWeights<f64>,
    config: &PipelineConfig,
) -> Result<DepthMap> {
    let prepared = prepare(image, None, config)?;
    let logdepth = infer_logdepth(&prepared, model, standardizer, beta)?;
    Ok(crate::pipeline::render_depth(&prepared.sample, &logdepth))
}
