use super::*;
use crate::nn::FeatureMap;
use crate::ode::uniform_grid;
use crate::Activation;
use nalgebra::DMatrix;

fn small_arch(order: Order, activation: Activation) -> Architecture {
    Architecture {
        dim: 2,
        order,
        hidden: vec![6, 6],
        activation,
        features: FeatureMap::Identity,
        velocity_hidden: vec![4, 4],
    }
}

fn damped_rotation() -> Trajectory {
    let a = DMatrix::from_row_slice(2, 2, &[-0.1, 1.0, -1.0, -0.1]);
    simulate_linear(&a, &[1.0, 0.0], &uniform_grid(0.0, 3.0, 31))
}

fn simulate_linear(a: &DMatrix<f64>, x0: &[f64], times: &[f64]) -> Trajectory {
    let field = crate::LinearField::first_order(a.clone()).unwrap();
    solve_ivp(&field, x0, times, &SolverConfig::generation()).unwrap()
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, ..TrainConfig::default() }
}

#[test]
fn realizable_data_is_a_fixed_point() {
    let arch = small_arch(Order::First, Activation::Elu);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let field = NeuralField::new(&arch, &mut rng).unwrap();
    let times = uniform_grid(0.0, 1.0, 11);
    let cfg = TrainConfig { lambda: 0.0, normalize: false, h_train: Some(0.025), epochs: 1, ..TrainConfig::default() };
    let data = rollout(&field, &[0.3, -0.2], &times, 0.025).unwrap().trajectory().unwrap();

    let mut trainer = Trainer::with_field(&data, field.clone(), &arch, &cfg).unwrap();
    let (loss, _) = trainer.epoch().unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(trainer.field(), &field, "zero gradient leaves parameters untouched");
}

#[test]
fn rollout_richardson_ratio_is_sixteen() {
    let arch = small_arch(Order::First, Activation::Tanh);
    let field = NeuralField::new(&arch, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let times = [0.0, 2.0];
    let at = |h: f64| rollout(&field, &[0.5, -0.4], &times, h).unwrap().outputs()[2..].to_vec();
    let (a, b, c) = (at(0.2), at(0.1), at(0.05));
    let diff = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let ratio = diff(&a, &b) / diff(&b, &c);
    assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
}

#[test]
fn training_is_deterministic() {
    let data = damped_rotation();
    let arch = small_arch(Order::First, Activation::Elu);
    let a = train(&data, &arch, &quick_cfg(30)).unwrap();
    let b = train(&data, &arch, &quick_cfg(30)).unwrap();
    assert_eq!(a.report.data_loss, b.report.data_loss);
    assert_eq!(a.report.penalty, b.report.penalty);
    assert_eq!(a.field, b.field);
}

#[test]
fn normalized_loss_is_scale_invariant() {
    let data = damped_rotation();
    let scaled = data.map_states(|_, v| 4.0 * v);
    let arch = small_arch(Order::First, Activation::Elu);
    let a = train(&data, &arch, &quick_cfg(25)).unwrap();
    let b = train(&scaled, &arch, &quick_cfg(25)).unwrap();
    assert_eq!(a.report.data_loss, b.report.data_loss);
}

#[test]
fn larger_lambda_never_grows_the_penalty() {
    let data = damped_rotation();
    let arch = small_arch(Order::First, Activation::Linear);
    let penalties: Vec<f64> = [0.0, 0.01, 0.1, 1.0]
        .iter()
        .map(|&lambda| train(&data, &arch, &TrainConfig { lambda, ..quick_cfg(300) }).unwrap().report.final_penalty)
        .collect();
    // Once the penalty is driven to zero, Adam keeps it at the lr-sized jitter floor.
    for w in penalties.windows(2) {
        assert!(w[1] <= w[0].max(0.01), "{penalties:?}");
    }
}

#[test]
fn zero_velocity_net_gives_zero_initial_velocity() {
    let vnet = Mlp::zeros(&[2, 4, 2], Activation::Tanh, FeatureMap::Identity).unwrap();
    let data = damped_rotation();
    assert_eq!(estimate_initial_velocity(&data, &vnet).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn velocity_net_is_trained_jointly() {
    let data = damped_rotation();
    let arch = small_arch(Order::Second, Activation::Elu);
    let mut trainer = Trainer::new(&data, &arch, &quick_cfg(5)).unwrap();
    let before = trainer.field().velocity_net().unwrap().clone();
    trainer.epoch().unwrap();
    assert_ne!(trainer.field().velocity_net().unwrap(), &before);
}

#[test]
fn prediction_reproduces_training_loss() {
    let data = damped_rotation();
    let arch = small_arch(Order::First, Activation::Elu);
    let model = train(&data, &arch, &quick_cfg(60)).unwrap();
    let pred = model.predict(data.row(0), data.times(), None).unwrap();
    let norm = &model.normalization;
    let (p, o) = (norm.normalize(&pred), norm.normalize(&data));
    let mse = p.flat_states().iter().zip(o.flat_states()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        / p.flat_states().len() as f64;
    let rel = (mse - model.report.final_data_loss).abs() / model.report.final_data_loss;
    assert!(rel < 1e-6, "relative mismatch {rel}");
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let data = damped_rotation();
    let arch = small_arch(Order::Second, Activation::Elu);
    let model = train(&data, &arch, &quick_cfg(10)).unwrap();
    let json = serde_json::to_string(&model.checkpoint()).unwrap();
    let back: Checkpoint = serde_json::from_str(&json).unwrap();
    let back = back.into_model().unwrap();
    let times = uniform_grid(0.0, 4.0, 9);
    assert_eq!(model.predict(data.row(0), &times, None).unwrap(), back.predict(data.row(0), &times, None).unwrap());
}

#[test]
fn invalid_inputs_are_rejected() {
    let data = damped_rotation();
    let arch = small_arch(Order::First, Activation::Elu);
    assert!(train(&data, &arch, &TrainConfig { lambda: -1.0, ..quick_cfg(1) }).is_err());
    assert!(train(&data, &arch, &TrainConfig { learning_rate: 0.0, ..quick_cfg(1) }).is_err());
    assert!(train(&data, &arch, &quick_cfg(0)).is_err());
    let wide = Architecture { dim: 3, ..arch };
    assert!(train(&data, &wide, &quick_cfg(1)).is_err());
}

#[test]
fn divergent_training_reports_the_epoch() {
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
    let data = simulate_linear(&a, &[1.0, 1.0], &uniform_grid(0.0, 2.0, 11));
    let arch = small_arch(Order::First, Activation::Linear);
    let cfg = TrainConfig { learning_rate: 1e6, ..quick_cfg(50) };
    match train(&data, &arch, &cfg) {
        Err(Error::TrainingDiverged { epoch, .. }) => assert!(epoch > 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}
