mod common;

use ccrf_depth::checkpoint::Checkpoint;
use ccrf_depth::config::RunConfig;
use ccrf_depth::crf::{self, CrfInstance, PairwiseWeights};
use ccrf_depth::experiment::TrainingSet;
use ccrf_depth::oracle::{self, FD_STEP};
use ccrf_depth::pipeline::{PipelineConfig, Standardizer};
use ccrf_depth::synth::{generate_dataset, SceneSpec};
use ccrf_depth::trainer::{
    init_state, resume, run_epoch, step, train, train_unary_only, Freeze, TrainConfig, TrainError,
    TrainExample, TrainState,
};
use ccrf_depth::unary::ForwardMode;
use common::{close_rel, random_instance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WIDTHS: [usize; 4] = [4, 6, 5, 1];

fn examples(seed: u64, count: usize) -> Vec<TrainExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(3..12);
            let instance = random_instance(&mut rng, n, 3, 0.4, true);
            let inputs = (0..n)
                .map(|_| {
                    (0..WIDTHS[0])
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect()
                })
                .collect();
            TrainExample { inputs, instance }
        })
        .collect()
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        lr0: 1e-2,
        epochs: 6,
        lr_step: 2,
        ..Default::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let data = examples(1, 1);
    let cfg = quick_config();
    let mut state = init_state(&WIDTHS, &cfg, false).unwrap();
    let before = state.clone();
    let report = step(
        &mut state,
        &[&data[0]],
        &cfg,
        0.0,
        Freeze::default(),
        &mut ForwardMode::Eval,
    )
    .unwrap();
    assert_eq!(state.model.params(), before.model.params());
    assert_eq!(state.beta, before.beta);
    assert!(state.velocity_theta.iter().all(|&v| v == 0.0));
    let z = data[0]
        .inputs
        .iter()
        .map(|x| before.model.predict(x).unwrap())
        .collect();
    let expected = crf::nll(&data[0].instance.clone().with_z(z).unwrap(), &before.beta).unwrap();
    assert_eq!(report.nll, expected);
}

#[test]
fn plain_step_follows_finite_difference_slope() {
    // A single pairwise weight and a linear one-input network; μ = λ = 0.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let instance = random_instance(&mut rng, 5, 1, 0.7, true);
    let inputs: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
    let ex = TrainExample { inputs, instance };
    let cfg = TrainConfig {
        momentum: 0.0,
        lambda1: 0.0,
        lambda2: 0.0,
        beta_init: vec![0.7],
        dropout_keep: 1.0,
        ..Default::default()
    };
    let lr = 1e-3;
    let mut state = init_state(&[1, 1], &cfg, false).unwrap();
    let theta0 = state.model.params();
    let beta0 = state.beta.as_slice()[0];
    step(
        &mut state,
        &[&ex],
        &cfg,
        lr,
        Freeze::default(),
        &mut ForwardMode::Eval,
    )
    .unwrap();

    let model = state.model.clone();
    let objective = |theta: &[f64], beta: f64| {
        let mut m = model.clone();
        m.set_params(theta).unwrap();
        let z = ex.inputs.iter().map(|x| m.predict(x).unwrap()).collect();
        crf::nll(
            &ex.instance.clone().with_z(z).unwrap(),
            &PairwiseWeights::new(vec![beta]).unwrap(),
        )
        .unwrap()
    };
    let slope_beta = oracle::fd_gradient(|b| objective(&theta0, b[0]), &[beta0], FD_STEP)[0];
    let moved = state.beta.as_slice()[0] - beta0;
    assert!(
        close_rel(moved, -lr * slope_beta, 1e-4, 0.0),
        "{moved} vs {}",
        -lr * slope_beta
    );
    let slope_theta = oracle::fd_gradient(|t| objective(t, beta0), &theta0, FD_STEP);
    for ((after, before), s) in state.model.params().iter().zip(&theta0).zip(&slope_theta) {
        assert!(close_rel(after - before, -lr * s, 1e-4, 0.0));
    }
}

#[test]
fn projection_clamps_beta_to_exact_zero() {
    // Strongly disagreeing neighbours push the likelihood toward β < 0.
    let edges = vec![(0, 1), (1, 2)];
    let instance = CrfInstance::new(
        3,
        3,
        edges,
        vec![1.0; 6],
        vec![0.0; 3],
        Some(vec![3.0, -3.0, 3.0]),
    )
    .unwrap();
    let ex = TrainExample {
        inputs: vec![vec![0.1; 4]; 3],
        instance,
    };
    let cfg = TrainConfig {
        beta_init: vec![0.05; 3],
        ..quick_config()
    };
    let mut state = init_state(&WIDTHS, &cfg, false).unwrap();
    step(
        &mut state,
        &[&ex],
        &cfg,
        10.0,
        Freeze::default(),
        &mut ForwardMode::Eval,
    )
    .unwrap();
    assert!(
        state.beta.as_slice().iter().all(|&b| b == 0.0),
        "{:?}",
        state.beta
    );
}

#[test]
fn zero_epochs_return_the_initial_state() {
    let data = examples(3, 4);
    let cfg = TrainConfig {
        epochs: 0,
        ..quick_config()
    };
    let state = train(&data, &WIDTHS, &cfg).unwrap();
    assert_eq!(state, init_state(&WIDTHS, &cfg, false).unwrap());
    assert!(state.history.is_empty());
}

#[test]
fn empty_dataset_is_rejected() {
    assert_eq!(
        train(&[], &WIDTHS, &quick_config()),
        Err(TrainError::EmptyDataset)
    );
}

#[test]
fn training_is_deterministic() {
    let data = examples(4, 5);
    let cfg = quick_config();
    let a = train(&data, &WIDTHS, &cfg).unwrap();
    let b = train(&data, &WIDTHS, &cfg).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.beta, b.beta);
    assert_eq!(a.history, b.history);
    let c = train(&data, &WIDTHS, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.model.params(), c.model.params());
}

#[test]
fn reported_objective_matches_its_parts() {
    let data = examples(5, 3);
    let cfg = TrainConfig {
        dropout_keep: 1.0,
        lambda1: 0.01,
        lambda2: 0.02,
        ..quick_config()
    };
    let mut state = init_state(&WIDTHS, &cfg, false).unwrap();
    let snapshot = state.clone();
    let batch: Vec<&TrainExample> = data.iter().collect();
    let report = step(
        &mut state,
        &batch,
        &cfg,
        1e-3,
        Freeze::default(),
        &mut ForwardMode::Eval,
    )
    .unwrap();
    let nll: f64 = data
        .iter()
        .map(|ex| {
            let z = ex
                .inputs
                .iter()
                .map(|x| snapshot.model.predict(x).unwrap())
                .collect();
            crf::nll(&ex.instance.clone().with_z(z).unwrap(), &snapshot.beta).unwrap()
        })
        .sum();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let expected = nll
        + 0.5 * cfg.lambda1 * sq(&snapshot.model.params())
        + 0.5 * cfg.lambda2 * sq(snapshot.beta.as_slice());
    assert!((report.nll - nll).abs() < 1e-9);
    assert!((report.objective - expected).abs() < 1e-9);
}

#[test]
fn zero_gradient_is_a_fixed_point() {
    // Zero weights with bias b predict z = b = y on a graph without edges, so
    // the unregularized gradient vanishes.
    let b = 0.3;
    let instance = CrfInstance::new(4, 3, vec![], vec![], vec![0.0; 4], Some(vec![b; 4])).unwrap();
    let ex = TrainExample {
        inputs: (0..4).map(|i| vec![i as f64; 2]).collect(),
        instance,
    };
    let cfg = TrainConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        dropout_keep: 1.0,
        ..quick_config()
    };
    let mut state = init_state(&[2, 1], &cfg, false).unwrap();
    state.model.set_params(&[0.0, 0.0, b]).unwrap();
    let before = state.clone();
    step(
        &mut state,
        &[&ex],
        &cfg,
        0.5,
        Freeze::default(),
        &mut ForwardMode::Eval,
    )
    .unwrap();
    assert_eq!(state.model.params(), before.model.params());
    assert_eq!(state.beta, before.beta);
    assert_eq!(state.velocity_theta, before.velocity_theta);
    assert_eq!(state.velocity_beta, before.velocity_beta);
}

#[test]
fn unary_only_keeps_beta_at_zero() {
    let data = examples(6, 4);
    let cfg = quick_config();
    let mut state = init_state(&WIDTHS, &cfg, true).unwrap();
    for _ in 0..cfg.epochs {
        run_epoch(&mut state, &data, &cfg, true).unwrap();
        assert!(state.beta.as_slice().iter().all(|&b| b == 0.0));
        assert!(state.velocity_beta.iter().all(|&v| v == 0.0));
    }
    let direct = train_unary_only(&data, &WIDTHS, &cfg).unwrap();
    assert_eq!(direct.model.params(), state.model.params());
    assert_eq!(direct.history, state.history);
    for ex in &data {
        let z: Vec<f64> = ex
            .inputs
            .iter()
            .map(|x| state.model.predict(x).unwrap())
            .collect();
        let y = ex.instance.y().unwrap();
        let n = z.len() as f64;
        let expected: f64 = y.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            + 0.5 * n * std::f64::consts::PI.ln();
        let inst = ex.instance.clone().with_z(z).unwrap();
        assert!((crf::nll(&inst, &state.beta).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn pretraining_freezes_the_first_layer() {
    let data = examples(7, 3);
    let cfg = TrainConfig {
        pretrain_epochs: 2,
        ..quick_config()
    };
    let mut state = init_state(&WIDTHS, &cfg, false).unwrap();
    let first = state.model.layer_param_range(0);
    let frozen = state.model.params()[first.clone()].to_vec();
    run_epoch(&mut state, &data, &cfg, false).unwrap();
    run_epoch(&mut state, &data, &cfg, false).unwrap();
    assert_eq!(state.model.params()[first.clone()], frozen[..]);
    run_epoch(&mut state, &data, &cfg, false).unwrap();
    assert_ne!(state.model.params()[first], frozen[..]);
}

fn checkpoint(state: TrainState) -> Checkpoint {
    Checkpoint {
        config: RunConfig::default(),
        unary_only: false,
        state,
        standardizer: Standardizer {
            mean: vec![0.25, -1.0, 0.0, 3.5],
            scale: vec![1.0, 0.1, 2.0, 1e-3],
        },
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let data = examples(8, 3);
    let state = train(&data, &WIDTHS, &quick_config()).unwrap();
    let ck = checkpoint(state);
    let text = ck.encode();
    assert!(text.starts_with("NFCKPT v1\n"));
    let back = Checkpoint::decode(&text).unwrap();
    assert_eq!(back.encode(), text);
    assert_eq!(back.state.model.params(), ck.state.model.params());
    assert_eq!(back.state.history, ck.state.history);
    assert_eq!(back.standardizer, ck.standardizer);
    assert_eq!(back.config, ck.config);

    assert!(Checkpoint::decode("NFCKPT v2\n").is_err());
    assert!(Checkpoint::decode(&text.replace("TENSOR beta 3", "TENSOR beta 4")).is_err());
    assert!(Checkpoint::decode(&text.replace("CONFIG seed", "CONFIG sed")).is_err());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = examples(9, 4);
    let cfg = quick_config();
    let straight = train(&data, &WIDTHS, &cfg).unwrap();
    let half = train(
        &data,
        &WIDTHS,
        &TrainConfig {
            epochs: 3,
            ..cfg.clone()
        },
    )
    .unwrap();
    let restored = Checkpoint::decode(&checkpoint(half).encode())
        .unwrap()
        .state;
    let resumed = resume(restored, &data, &cfg, false).unwrap();
    assert_eq!(resumed.model.params(), straight.model.params());
    assert_eq!(resumed.beta, straight.beta);
    assert_eq!(resumed.velocity_theta, straight.velocity_theta);
    assert_eq!(resumed.velocity_beta, straight.velocity_beta);
    assert_eq!(resumed.history, straight.history);
    assert_eq!(resumed.steps, straight.steps);
}

#[test]
fn sixty_epochs_on_synthetic_scenes_lower_the_nll() {
    let spec = SceneSpec {
        height: 48,
        width: 48,
        num_planes: 4,
        ..Default::default()
    };
    let items = generate_dataset(&spec, 20, 77)
        .unwrap()
        .into_iter()
        .map(|(_, s)| (s.image, s.depth))
        .collect();
    let mut pipe = PipelineConfig::default();
    pipe.segment.target_n = 30;
    pipe.features.box_size = 16;
    pipe.features.patch_dim = 4;
    let set = TrainingSet::new(items, &pipe).unwrap();
    let widths = [set.input_width(), 16, 8, 1];
    let state = train(&set.examples, &widths, &TrainConfig::default()).unwrap();
    assert_eq!(state.history.len(), 60);
    let (first, last) = (state.history[0].mean_nll, state.history[59].mean_nll);
    assert!(last < first, "{first} -> {last}");
}
