//! Dataset-level helpers shared by the command line and the acceptance runs:
//! prepare images, fit the input standardizer, train, evaluate, sweep.

use std::time::Instant;

use thiserror::Error;

use crate::config::RunConfig;
use crate::crf::PairwiseWeights;
use crate::eval::{metrics, DepthPair, EvalError, MetricsReport};
use crate::image::{DepthMap, RgbImage};
use crate::pipeline::{
    infer_logdepth, prepare, render_depth, PipelineConfig, PipelineError, PreparedImage,
    Standardizer,
};
use crate::synth::{generate_dataset, SynthError};
use crate::trainer::{self, TrainError, TrainExample, TrainState};
use crate::unary::UnaryModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("superpixel count {0} appears more than once")]
    DuplicateCount(usize),
    #[error("sweep needs at least one superpixel count")]
    NoCounts,
}

pub type Labeled = (RgbImage, DepthMap);

/// Train and test scenes for a run configuration.
pub fn synth_split(config: &RunConfig) -> Result<(Vec<Labeled>, Vec<Labeled>), ExperimentError> {
    let spec = config.scene_spec(0);
    let strip = |v: Vec<(u64, crate::synth::Scene)>| -> Vec<Labeled> {
        v.into_iter().map(|(_, s)| (s.image, s.depth)).collect()
    };
    let train = strip(generate_dataset(
        &spec,
        config.train_count,
        config.data_seed,
    )?);
    let test = if config.test_count == 0 {
        Vec::new()
    } else {
        strip(generate_dataset(
            &spec,
            config.test_count,
            config.test_seed(),
        )?)
    };
    Ok((train, test))
}

/// Prepared training images with the standardizer fitted on them.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub images: Vec<PreparedImage>,
    pub standardizer: Standardizer,
    pub examples: Vec<TrainExample>,
}

impl TrainingSet {
    pub fn new(items: Vec<Labeled>, config: &PipelineConfig) -> Result<Self, ExperimentError> {
        let images = prepare_all(items, config)?;
        let standardizer = fit_standardizer(&images)?;
        let examples = training_examples(&images, &standardizer)?;
        Ok(Self {
            images,
            standardizer,
            examples,
        })
    }

    pub fn input_width(&self) -> usize {
        self.standardizer.width()
    }
}

/// Trains from scratch with the configuration's widths and schedule.
pub fn fit(
    set: &TrainingSet,
    config: &RunConfig,
    unary_only: bool,
) -> Result<TrainState, ExperimentError> {
    let widths = config.widths(set.input_width());
    let tc = config.train_config();
    Ok(if unary_only {
        trainer::train_unary_only(&set.examples, &widths, &tc)?
    } else {
        trainer::train(&set.examples, &widths, &tc)?
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub count: usize,
    pub rms: f64,
    pub train_seconds: f64,
}

pub const SWEEP_CSV_HEADER: &str = "count,rms,train_seconds";

impl SweepRow {
    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.count, self.rms, self.train_seconds)
    }
}

pub fn check_counts(counts: &[usize]) -> Result<(), ExperimentError> {
    if counts.is_empty() {
        return Err(ExperimentError::NoCounts);
    }
    for (i, c) in counts.iter().enumerate() {
        if counts[..i].contains(c) {
            return Err(ExperimentError::DuplicateCount(*c));
        }
    }
    Ok(())
}

/// For each superpixel count: re-segment, train the full model and report
/// pooled test rms with the wall-clock time of the training call alone.
pub fn sweep(
    train: &[Labeled],
    test: &[Labeled],
    config: &RunConfig,
    counts: &[usize],
    mut progress: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>, ExperimentError> {
    check_counts(counts)?;
    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        let mut cfg = config.clone();
        cfg.target_n = count;
        let pipe = cfg.pipeline();
        let set = TrainingSet::new(train.to_vec(), &pipe)?;
        let held_out = prepare_all(test.to_vec(), &pipe)?;
        let start = Instant::now();
        let state = fit(&set, &cfg, false)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let report = evaluate(
            &held_out,
            &state.model,
            &set.standardizer,
            &state.beta,
            None,
        )?;
        let row = SweepRow {
            count,
            rms: report.rms,
            train_seconds,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn prepare_all(
    items: impl IntoIterator<Item = (RgbImage, DepthMap)>,
    config: &PipelineConfig,
) -> Result<Vec<PreparedImage>, PipelineError> {
    items
        .into_iter()
        .map(|(image, depth)| prepare(image, Some(depth), config))
        .collect()
}

pub fn fit_standardizer(images: &[PreparedImage]) -> Result<Standardizer, PipelineError> {
    Standardizer::fit(
        images
            .iter()
            .flat_map(|im| im.inputs.iter().map(Vec::as_slice)),
    )
}

pub fn training_examples(
    images: &[PreparedImage],
    standardizer: &Standardizer,
) -> Result<Vec<TrainExample>, trainer::TrainError> {
    images
        .iter()
        .map(|im| TrainExample::from_prepared(im, standardizer))
        .collect()
}

/// Predicted depth raster for a prepared image.
pub fn predict_prepared(
    image: &PreparedImage,
    model: &UnaryModel<f64>,
    standardizer: &Standardizer,
    beta: &PairwiseWeights<f64>,
) -> Result<DepthMap, PipelineError> {
    let logdepth = infer_logdepth(image, model, standardizer, beta)?;
    Ok(render_depth(&image.sample, &logdepth))
}

/// Pooled metrics over prepared images carrying ground truth, with pixels
/// at or beyond `cap` excluded when given.
pub fn evaluate(
    images: &[PreparedImage],
    model: &UnaryModel<f64>,
    standardizer: &Standardizer,
    beta: &PairwiseWeights<f64>,
    cap: Option<f64>,
) -> Result<MetricsReport, EvalError> {
    let pairs = images
        .iter()
        .map(|im| {
            let gt = im
                .sample
                .depth()
                .expect("evaluation images carry ground truth")
                .clone();
            let pred = predict_prepared(im, model, standardizer, beta)?;
            let mask = match cap {
                Some(c) => crate::eval::make3d_masks(&gt, c)?.0,
                None => gt.map(|_| true),
            };
            DepthPair::new(pred, gt, mask)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    metrics(&pairs)
}
