use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn toy_config(input_dim: usize) -> NetConfig {
    NetConfig { input_dim, ..NetConfig::default() }
}

fn random_batch(b: usize, t: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![b, t, d], (0..b * t * d).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn shape_chain_matches_config() {
    let c = NetConfig::default();
    assert_eq!(c.cnn_dim(), (14 + 10 + 2) * 64);
    assert_eq!(c.fusion_dim(), 1664 + 32);
    let with_emb = NetConfig { embedding_dim: Some(16), ..c };
    assert_eq!(with_emb.fusion_dim(), 1664 + 32 + 16);
    assert_eq!(with_emb.sequence_dim(), 40);
}

#[test]
fn zero_window_gives_finite_output() {
    let net = HybridNet::new(NetConfig::default(), &[], 1).unwrap();
    let y = net.predict(&Tensor::zeros(&[1, 16, 24]), None).unwrap();
    assert_eq!(y.len(), 1);
    assert!(y[0].is_finite());
}

#[test]
fn inference_is_deterministic() {
    let net = HybridNet::new(NetConfig::default(), &[], 2).unwrap();
    let x = random_batch(3, 16, 24, 0);
    assert_eq!(net.predict(&x, None).unwrap(), net.predict(&x, None).unwrap());
}

#[test]
fn same_seed_builds_identical_networks() {
    let a = HybridNet::new(NetConfig::default(), &[], 5).unwrap();
    let b = HybridNet::new(NetConfig::default(), &[], 5).unwrap();
    assert_eq!(a.params().hash(None), b.params().hash(None));
}

#[test]
fn wrong_window_shape_is_rejected() {
    let net = HybridNet::new(NetConfig::default(), &[], 1).unwrap();
    assert!(net.predict(&Tensor::zeros(&[1, 15, 24]), None).is_err());
    assert!(net.predict(&Tensor::zeros(&[1, 16, 23]), None).is_err());
}

#[test]
fn dropout_changes_stochastic_passes_only() {
    let net = HybridNet::new(NetConfig::default(), &[], 3).unwrap();
    let x = random_batch(1, 16, 24, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = net.predict_stochastic(&x, None, &mut rng).unwrap();
    let b = net.predict_stochastic(&x, None, &mut rng).unwrap();
    assert_ne!(a, b);
    let off = HybridNet::new(NetConfig { dropout_dense: 0.0, dropout_lstm: 0.0, ..NetConfig::default() }, &[], 3).unwrap();
    let p = off.predict(&x, None).unwrap();
    assert_eq!(off.predict_stochastic(&x, None, &mut rng).unwrap(), p);
}

#[test]
fn embedding_network_requires_known_states() {
    let states = vec!["A".to_string(), "B".to_string()];
    let net = HybridNet::new(NetConfig { embedding_dim: Some(16), ..NetConfig::default() }, &states, 4).unwrap();
    let x = random_batch(2, 16, 24, 2);
    assert!(net.predict(&x, None).is_err());
    assert!(net.predict(&x, Some(&[0, 2])).is_err());
    assert!(matches!(net.state_index("C"), Err(Error::UnknownState(_))));
    let y = net.predict(&x, Some(&[0, 1])).unwrap();
    assert_eq!(y.len(), 2);
}

#[test]
fn new_state_row_is_the_mean_of_existing_rows() {
    let states = vec!["A".to_string(), "B".to_string(), "C".to_string()];
    let mut net = HybridNet::new(NetConfig { embedding_dim: Some(16), ..NetConfig::default() }, &states, 4).unwrap();
    let before = net.embedding().unwrap().clone();
    let i = net.add_state("D").unwrap();
    assert_eq!(i, 3);
    let e = net.embedding().unwrap();
    assert_eq!(e.shape(), &[4, 16]);
    for j in 0..16 {
        let mean = (0..3).map(|r| before.data()[r * 16 + j]).sum::<f64>() / 3.0;
        assert_eq!(e.data()[3 * 16 + j], mean);
    }
    assert_eq!(net.add_state("B").unwrap(), 1);
}

#[test]
fn default_freeze_plan_keeps_embedding_trainable() {
    let states = vec!["A".to_string()];
    let net = HybridNet::new(NetConfig { embedding_dim: Some(16), ..NetConfig::default() }, &states, 4).unwrap();
    let plan = FreezePlan { frozen: vec![ParamGroup::Conv, ParamGroup::Bilstm, ParamGroup::Embedding], learning_rate: 1e-4 };
    let mask = net.trainable_mask(&plan).unwrap();
    for id in net.group_params(ParamGroup::Embedding) {
        assert!(mask[id.index()]);
    }
    for id in net.group_params(ParamGroup::Conv) {
        assert!(!mask[id.index()]);
    }
    let every = FreezePlan {
        frozen: vec![ParamGroup::Conv, ParamGroup::Bilstm, ParamGroup::Attention, ParamGroup::HeadLstm, ParamGroup::Fusion],
        learning_rate: 1e-4,
    };
    let single = HybridNet::new(NetConfig::default(), &[], 0).unwrap();
    assert!(single.trainable_mask(&every).is_err());
}

#[test]
fn groups_partition_all_parameters() {
    let states = vec!["A".to_string()];
    let net = HybridNet::new(NetConfig { embedding_dim: Some(16), ..NetConfig::default() }, &states, 4).unwrap();
    let total: usize = net.group_sizes().values().sum();
    assert_eq!(total, net.params().scalar_count());
}

#[test]
fn full_network_gradient_matches_finite_differences() {
    let mut net = HybridNet::new(
        NetConfig { embedding_dim: Some(4), ..toy_config(6) },
        &["A".to_string(), "B".to_string()],
        7,
    )
    .unwrap();
    let x = random_batch(2, 16, 6, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let report = net.gradient_check(&x, &[0.3, 0.7], Some(&[0, 1]), Some(99), 3, &mut rng).unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn fitting_reduces_loss_on_a_learnable_target() {
    let mut net = HybridNet::new(toy_config(4), &[], 8).unwrap();
    let mut set = WindowSet::new(16, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..48 {
        let vals: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let target = vals[60..64].iter().sum::<f64>() / 4.0;
        let w = crate::features::FeatureWindow { values: vals, rows: 16, dim: 4, end_index: i, state_id: "S".into() };
        set.push(&w, target, None).unwrap();
    }
    let before = set.mse(&net).unwrap();
    let cfg = TrainConfig { max_epochs: 15, seed: 1, ..TrainConfig::default() };
    let report = fit(&mut net, &set, None, &cfg, None).unwrap();
    assert_eq!(report.train_mse.len(), 15);
    assert!(*report.train_mse.last().unwrap() < 0.5 * before, "{before} -> {:?}", report.train_mse);
}

#[test]
fn frozen_groups_are_bit_identical_after_fitting() {
    let states = vec!["A".to_string()];
    let mut net = HybridNet::new(NetConfig { input_dim: 4, embedding_dim: Some(16), ..NetConfig::default() }, &states, 9).unwrap();
    let mut set = WindowSet::new(16, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..20 {
        let vals: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let w = crate::features::FeatureWindow { values: vals, rows: 16, dim: 4, end_index: i, state_id: "A".into() };
        set.push(&w, rng.gen_range(0.0..1.0), Some(0)).unwrap();
    }
    let plan = FreezePlan::default();
    let mask = net.trainable_mask(&plan).unwrap();
    let frozen: Vec<ParamId> = net.params().ids().filter(|id| !mask[id.index()]).collect();
    let free: Vec<ParamId> = net.params().ids().filter(|id| mask[id.index()]).collect();
    let (h_frozen, h_free) = (net.params().hash(Some(&frozen)), net.params().hash(Some(&free)));
    let cfg = TrainConfig { max_epochs: 5, learning_rate: plan.learning_rate, seed: 2, ..TrainConfig::default() };
    fit(&mut net, &set, None, &cfg, Some(&mask)).unwrap();
    assert_eq!(net.params().hash(Some(&frozen)), h_frozen);
    assert_ne!(net.params().hash(Some(&free)), h_free);
}
