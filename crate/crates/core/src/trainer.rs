//! Joint training of the unary network and the pairwise weights by SGD with
//! momentum on the regularized negative log-likelihood
//!
//! ```text
//! Σ_images NLL(θ, β) + λ₁/2 ‖θ‖² + λ₂/2 ‖β‖²,    β ≥ 0.
//! ```
//!
//! One image is one step. Each epoch visits the images in an order drawn from
//! an RNG keyed by `(seed, epoch)`, which also supplies the dropout masks, so
//! a run resumed from a checkpoint continues exactly as if uninterrupted.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crf::{nll_and_gradients, CrfError, CrfInstance, PairwiseWeights};
use crate::graph::DESCRIPTORS;
use crate::pipeline::{PipelineError, PreparedImage, Standardizer};
use crate::unary::{ForwardMode, ForwardTape, UnaryError, UnaryModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training image {0} has no ground-truth depth")]
    MissingGroundTruth(usize),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Unary(#[from] UnaryError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub momentum: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr0: f64,
    /// Learning-rate factor applied every `lr_step` epochs.
    pub lr_decay: f64,
    pub lr_step: usize,
    pub epochs: usize,
    pub dropout_keep: f64,
    pub seed: u64,
    pub beta_init: Vec<f64>,
    /// Leading epochs during which the first unary layer is frozen.
    pub pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            lambda1: 0.0005,
            lambda2: 0.0005,
            lr0: 1e-4,
            lr_decay: 0.6,
            lr_step: 20,
            epochs: 60,
            dropout_keep: 0.5,
            seed: 0,
            beta_init: vec![0.5; DESCRIPTORS],
            pretrain_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 {} must be positive", self.lr0));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("weight decay must be nonnegative".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} outside (0, 1]", self.lr_decay));
        }
        if self.lr_step == 0 {
            return bad("lr_step must be positive".into());
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad(format!("dropout_keep {} outside (0, 1]", self.dropout_keep));
        }
        if let Some(b) = self
            .beta_init
            .iter()
            .find(|b| !(**b >= 0.0 && b.is_finite()))
        {
            return bad(format!("beta_init entries must be nonnegative, found {b}"));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((epoch / self.lr_step) as i32)
    }
}

/// A training image reduced to what the loss needs: standardized unary
/// inputs and the CRF graph with ground truth.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub inputs: Vec<Vec<f64>>,
    pub instance: CrfInstance<f64>,
}

impl TrainExample {
    pub fn from_prepared(image: &PreparedImage, standardizer: &Standardizer) -> Result<Self> {
        let inputs = image
            .inputs
            .iter()
            .map(|r| standardizer.apply(r))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            inputs,
            instance: image.instance(vec![0.0; image.n()])?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_nll: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: UnaryModel<f64>,
    pub beta: PairwiseWeights<f64>,
    pub velocity_theta: Vec<f64>,
    pub velocity_beta: Vec<f64>,
    /// Completed epochs.
    pub epoch: usize,
    pub steps: u64,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(model: UnaryModel<f64>, beta: PairwiseWeights<f64>) -> Self {
        Self {
            velocity_theta: vec![0.0; model.param_count()],
            velocity_beta: vec![0.0; beta.len()],
            model,
            beta,
            epoch: 0,
            steps: 0,
            history: Vec::new(),
        }
    }
}

/// What a step may change.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Freeze {
    pub beta: bool,
    /// Number of leading unary layers held fixed.
    pub layers: usize,
}

/// Result of one step, evaluated before the update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Σ NLL over the batch.
    pub nll: f64,
    /// `nll + λ₁/2 ‖θ‖² + λ₂/2 ‖β‖²`.
    pub objective: f64,
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Gradient of the batch objective with respect to the flat unary parameters
/// and `β`, plus the pre-update report.
pub fn batch_gradient(
    state: &TrainState,
    batch: &[&TrainExample],
    config: &TrainConfig,
    freeze: Freeze,
    mode: &mut ForwardMode<'_>,
) -> Result<(StepReport, Vec<f64>, Vec<f64>)> {
    let theta = state.model.params();
    let mut g_theta = vec![0.0; theta.len()];
    let mut g_beta = vec![0.0; state.beta.len()];
    let mut nll = 0.0;
    for ex in batch {
        let mut z = Vec::with_capacity(ex.inputs.len());
        let mut tapes: Vec<ForwardTape<f64>> = Vec::with_capacity(ex.inputs.len());
        for x in &ex.inputs {
            let (out, tape) = state.model.forward(x, mode)?;
            z.push(out);
            tapes.push(tape);
        }
        let inst = ex.instance.clone().with_z(z)?;
        let g = nll_and_gradients(&inst, &state.beta)?;
        nll += g.nll;
        for (tape, &r) in tapes.iter().zip(&g.grad_z) {
            state.model.backward_into(tape, r, &mut g_theta)?;
        }
        for (a, b) in g_beta.iter_mut().zip(&g.grad_beta) {
            *a += b;
        }
    }
    for (g, t) in g_theta.iter_mut().zip(&theta) {
        *g += config.lambda1 * t;
    }
    for (g, b) in g_beta.iter_mut().zip(state.beta.as_slice()) {
        *g += config.lambda2 * b;
    }
    if freeze.beta {
        g_beta.iter_mut().for_each(|g| *g = 0.0);
    }
    for l in 0..freeze.layers.min(state.model.layers().len()) {
        g_theta[state.model.layer_param_range(l)]
            .iter_mut()
            .for_each(|g| *g = 0.0);
    }
    let objective = nll
        + 0.5 * config.lambda1 * sq_norm(&theta)
        + 0.5 * config.lambda2 * sq_norm(state.beta.as_slice());
    Ok((StepReport { nll, objective }, g_theta, g_beta))
}

/// One momentum update `v ← μv − lr·g`, `p ← p + v`, followed by projection
/// of `β` onto `β ≥ 0`. Frozen parameters keep their value and velocity.
pub fn step(
    state: &mut TrainState,
    batch: &[&TrainExample],
    config: &TrainConfig,
    lr: f64,
    freeze: Freeze,
    mode: &mut ForwardMode<'_>,
) -> Result<StepReport> {
    let (report, g_theta, g_beta) = batch_gradient(state, batch, config, freeze, mode)?;
    let mu = config.momentum;
    let frozen: Vec<std::ops::Range<usize>> = (0..freeze.layers.min(state.model.layers().len()))
        .map(|l| state.model.layer_param_range(l))
        .collect();
    for (i, (v, g)) in state.velocity_theta.iter_mut().zip(&g_theta).enumerate() {
        if frozen.iter().any(|r| r.contains(&i)) {
            continue;
        }
        *v = mu * *v - lr * g;
    }
    let mut theta = state.model.params();
    for (i, (p, v)) in theta.iter_mut().zip(&state.velocity_theta).enumerate() {
        if frozen.iter().any(|r| r.contains(&i)) {
            continue;
        }
        *p += v;
    }
    state.model.set_params(&theta)?;
    if !freeze.beta {
        for (v, g) in state.velocity_beta.iter_mut().zip(&g_beta) {
            *v = mu * *v - lr * g;
        }
        let moved: Vec<f64> = state
            .beta
            .as_slice()
            .iter()
            .zip(&state.velocity_beta)
            .map(|(b, v)| b + v)
            .collect();
        state.beta = PairwiseWeights::projected(&moved);
    }
    state.steps += 1;
    Ok(report)
}

/// RNG for epoch `epoch` of a run seeded with `seed`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Runs epoch `state.epoch` and appends its record to the history.
pub fn run_epoch(
    state: &mut TrainState,
    data: &[TrainExample],
    config: &TrainConfig,
    freeze_beta: bool,
) -> Result<EpochRecord> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let epoch = state.epoch;
    let lr = config.learning_rate(epoch);
    let freeze = Freeze {
        beta: freeze_beta,
        layers: usize::from(epoch < config.pretrain_epochs),
    };
    let mut rng = epoch_rng(config.seed, epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut total = 0.0;
    for &i in &order {
        let mut mode = if state.model.dropout_keep() < 1.0 {
            ForwardMode::Train(&mut rng)
        } else {
            ForwardMode::Eval
        };
        total += step(state, &[&data[i]], config, lr, freeze, &mut mode)?.nll;
    }
    let record = EpochRecord {
        epoch,
        lr,
        mean_nll: total / data.len() as f64,
    };
    state.epoch += 1;
    state.history.push(record.clone());
    Ok(record)
}

fn check_data(data: &[TrainExample]) -> Result<()> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(i) = data.iter().position(|d| d.instance.y().is_none()) {
        return Err(TrainError::MissingGroundTruth(i));
    }
    Ok(())
}

/// Fresh state: network initialized from `widths` and the config seed,
/// `β = beta_init` (or zero when `unary_only`).
pub fn init_state(widths: &[usize], config: &TrainConfig, unary_only: bool) -> Result<TrainState> {
    config.validate()?;
    let mut model = UnaryModel::init(widths, config.seed)?;
    model.set_dropout_keep(config.dropout_keep)?;
    let beta = if unary_only {
        PairwiseWeights::zeros(config.beta_init.len())
    } else {
        PairwiseWeights::new(config.beta_init.clone())?
    };
    Ok(TrainState::new(model, beta))
}

/// Continues `state` until `config.epochs` epochs are complete.
pub fn resume(
    mut state: TrainState,
    data: &[TrainExample],
    config: &TrainConfig,
    unary_only: bool,
) -> Result<TrainState> {
    config.validate()?;
    check_data(data)?;
    while state.epoch < config.epochs {
        run_epoch(&mut state, data, config, unary_only)?;
    }
    Ok(state)
}

pub fn train(data: &[TrainExample], widths: &[usize], config: &TrainConfig) -> Result<TrainState> {
    check_data(data)?;
    resume(init_state(widths, config, false)?, data, config, false)
}

/// The same loop with `β` held at zero: least-squares regression on `z`.
pub fn train_unary_only(
    data: &[TrainExample],
    widths: &[usize],
    config: &TrainConfig,
) -> Result<TrainState> {
    check_data(data)?;
    resume(init_state(widths, config, true)?, data, config, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_decays_every_twenty_epochs() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate(0), 1e-4);
        assert_eq!(c.learning_rate(19), 1e-4);
        assert!((c.learning_rate(20) - 0.6e-4).abs() < 1e-18);
        assert!((c.learning_rate(45) - 0.36e-4).abs() < 1e-18);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                momentum: 1.0,
                ..Default::default()
            },
            TrainConfig {
                lr0: 0.0,
                ..Default::default()
            },
            TrainConfig {
                lambda1: -1.0,
                ..Default::default()
            },
            TrainConfig {
                dropout_keep: 0.0,
                ..Default::default()
            },
            TrainConfig {
                beta_init: vec![0.1, -0.1, 0.0],
                ..Default::default()
            },
            TrainConfig {
                lr_step: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
