//! Monocular depth from superpixels with a continuous CRF whose likelihood,
//! gradients and MAP estimate are all computed exactly.

pub mod checkpoint;
pub mod config;
pub mod crf;
pub mod eval;
pub mod experiment;
pub mod formats;
pub mod graph;
pub mod image;
pub mod linalg;
pub mod oracle;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod trainer;
pub mod unary;

pub type Instance = crf::CrfInstance<f64>;
pub type Weights = crf::PairwiseWeights<f64>;
pub type Unary = unary::UnaryModel<f64>;
pub type Instance32 = crf::CrfInstance<f32>;
pub type Weights32 = crf::PairwiseWeights<f32>;
pub type Unary32 = unary::UnaryModel<f32>;
