mod common;

use common::*;
use hebb_cbir::data::RegimeSpec;
use hebb_cbir::data::{Dataset, SampleSource, SplitTag, Splits, Subset};
use hebb_cbir::hebbian::HpcaConfig;
use hebb_cbir::network::{Network, NetworkConfig};
use hebb_cbir::retrieval::{build_store, evaluate_map, evaluate_stores, layer_sweep, Database, FeatureStore};
use hebb_cbir::trainer::{
    classify_accuracy, finetune, labeled_subset, run_protocol, PretrainMode, ProtocolConfig, SgdConfig,
};
use hebb_cbir::{Rng, Tensor};

const SHAPE: [usize; 3] = [3, 8, 8];
const LAYERS: &str = "conv(6,3,1,1) relu maxpool(2,2) | conv(8,3,1,1) relu maxpool(2,2) | flatten dense(4)";

fn toy_net(seed: u64) -> Network<f32> {
    let cfg = NetworkConfig::parse(LAYERS, SHAPE).unwrap();
    Network::build(cfg, &mut Rng::new(seed)).unwrap()
}

fn toy_splits(per_class: usize, seed: u64) -> Splits {
    let train = toy_images(4, per_class, SHAPE, seed);
    let test = toy_images(4, per_class.div_ceil(4), SHAPE, seed + 1000);
    Splits::prepare(&train, test, 0).unwrap()
}

fn toy_sgd(epochs: usize) -> SgdConfig {
    SgdConfig {
        lr0: 0.05,
        epochs,
        batch_size: 16,
        eval_batch_size: 32,
        weight_decay: 1e-4,
        ..SgdConfig::cifar10()
    }
}

fn toy_protocol(epochs: usize) -> ProtocolConfig {
    ProtocolConfig {
        network: NetworkConfig::parse(LAYERS, SHAPE).unwrap(),
        hpca: HpcaConfig {
            epochs: 1,
            batch_size: 16,
            ..Default::default()
        },
        sgd: toy_sgd(epochs),
        pretrain_limit: None,
    }
}

fn mean_loss(net: &Network<f32>, src: &dyn SampleSource) -> f64 {
    let idx: Vec<usize> = (0..src.len()).collect();
    let x: Tensor<f64> = hebb_cbir::data::gather_images(src, &idx).unwrap();
    let y = hebb_cbir::data::gather_labels(src, &idx);
    loss_of(&net.cast::<f64>(), &x, &y)
}

#[test]
fn toy_training_reduces_loss() {
    let splits = toy_splits(16, 3);
    let train = Subset::prefix(&splits.train, 50);
    let net = toy_net(1);
    let before = mean_loss(&net, &train);
    let (best, report) = finetune(net, &train, &splits.validation, &toy_sgd(20), Rng::new(2)).unwrap();
    assert_eq!(report.epochs.len(), 20);
    let last = report.epochs.last().unwrap().train_loss;
    assert!(last < before, "final epoch loss {last} vs initial {before}");
    assert!(mean_loss(&best, &train) < before);
}

#[test]
fn zero_epochs_returns_initial_network() {
    let splits = toy_splits(8, 4);
    let net = toy_net(5);
    let (out, report) = finetune(net.clone(), &splits.train, &splits.validation, &toy_sgd(0), Rng::new(0)).unwrap();
    assert!(report.epochs.is_empty());
    assert_eq!(report.best_epoch, 0);
    assert_eq!(report.best_checkpoint_id, "initial");
    assert_eq!(out.params(), net.params());
}

#[test]
fn same_seed_same_report() {
    let splits = toy_splits(8, 6);
    let run = || finetune(toy_net(7), &splits.train, &splits.validation, &toy_sgd(3), Rng::new(8)).unwrap();
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra, rb);
    assert_eq!(a.params(), b.params());
}

#[test]
fn finetune_reads_only_labeled_and_validation() {
    let splits = toy_splits(20, 9);
    let labeled = labeled_subset(&splits.train, RegimeSpec::new(10, 0).unwrap()).unwrap();
    let wanted: std::collections::BTreeSet<usize> = labeled.indices().iter().copied().collect();
    let train_counter = CountingSource::new(&splits.train);
    let labeled_view = Subset::new(&train_counter, labeled.indices().to_vec()).unwrap();
    let val_counter = CountingSource::new(&splits.validation);
    let test_counter = CountingSource::new(&splits.test);
    finetune(toy_net(1), &labeled_view, &val_counter, &toy_sgd(2), Rng::new(1)).unwrap();
    assert_eq!(*train_counter.seen.borrow(), wanted);
    assert_eq!(val_counter.seen.borrow().len(), splits.validation.len());
    assert!(test_counter.seen.borrow().is_empty());
}

#[test]
fn best_network_reproduces_recorded_accuracy() {
    let splits = toy_splits(12, 10);
    let (best, report) = finetune(toy_net(2), &splits.train, &splits.validation, &toy_sgd(5), Rng::new(3)).unwrap();
    let acc = classify_accuracy(&best, &splits.validation, 7).unwrap();
    assert_eq!(Some(acc), report.best_accuracy());
    let recorded = &report.epochs[report.best_epoch - 1];
    assert_eq!(report.best_checkpoint_id, format!("epoch-{}", recorded.epoch));
}

#[test]
fn untrained_network_scores_chance() {
    let cfg = NetworkConfig::parse("conv(6,3,1,1) relu maxpool(2,2) | flatten dense(10)", SHAPE).unwrap();
    let net: Network<f32> = Network::build(cfg, &mut Rng::new(11)).unwrap();
    let data = toy_images(10, 100, SHAPE, 12);
    let acc = classify_accuracy(&net, &data, 100).unwrap();
    assert!((acc - 0.1).abs() <= 0.03, "accuracy {acc}");
}

#[test]
fn constant_logits_give_class_zero_frequency() {
    let mut net = toy_net(0);
    for layer in net.layers_mut() {
        if let Some(p) = layer.params_mut() {
            p.weights.data_mut().fill(0.0);
            p.bias.data_mut().fill(0.0);
        }
    }
    let data = Dataset::new(SHAPE, vec![0; 8 * 192], vec![0, 1, 0, 2, 3, 0, 1, 1], 4, SplitTag::Train).unwrap();
    assert_eq!(classify_accuracy(&net, &data, 3).unwrap(), 3.0 / 8.0);
}

#[test]
fn batched_and_single_extraction_agree() {
    let splits = toy_splits(6, 13);
    let net = toy_net(3);
    for k in 1..=2 {
        let a = build_store(&net, &splits.train, k, 64, "a").unwrap();
        let b = build_store(&net, &splits.train, k, 1, "b").unwrap();
        assert_eq!(a.labels(), b.labels());
        for (x, y) in a.features().data().iter().zip(b.features().data()) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }
}

fn store_rows(store: &FeatureStore) -> Vec<Vec<f64>> {
    (0..store.len())
        .map(|i| store.row(i).iter().map(|&v| v as f64).collect())
        .collect()
}

#[test]
fn map_matches_enumeration_oracle() {
    let splits = toy_splits(8, 14);
    let net = toy_net(4);
    let report = evaluate_map(&net, &splits.train, &splits.test, 2, 16).unwrap();
    let db = build_store(&net, &splits.train, 2, 16, "db").unwrap();
    let q = build_store(&net, &splits.test, 2, 16, "q").unwrap();
    let want = enumeration_map(&store_rows(&db), db.labels(), &store_rows(&q), q.labels());
    assert!((report.map - want).abs() < 1e-9, "{} vs {want}", report.map);
    assert_eq!(report.depth, splits.train.len());
}

#[test]
fn map_is_invariant_to_database_order() {
    let splits = toy_splits(8, 15);
    let net = toy_net(5);
    let base = evaluate_map(&net, &splits.train, &splits.test, 1, 32).unwrap();
    let perm = Rng::new(99).permutation(splits.train.len());
    let shuffled = Subset::new(&splits.train, perm).unwrap();
    let other = evaluate_map(&net, &shuffled, &splits.test, 1, 32).unwrap();
    assert!((base.map - other.map).abs() < 1e-9);
}

#[test]
fn store_with_unmatched_query_label_skips_it() {
    let db = FeatureStore::new(Tensor::new(vec![3, 1], vec![0.0, 1.0, 2.0]).unwrap(), vec![0, 1, 0], 1, "db").unwrap();
    let q = FeatureStore::new(Tensor::new(vec![2, 1], vec![0.1, 5.0]).unwrap(), vec![0, 2], 1, "q").unwrap();
    let r = evaluate_stores(&db, &q).unwrap();
    assert_eq!(r.skipped, 1);
    assert_eq!(r.per_query_aps.len(), 1);
    assert!((r.map - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn protocol_runs_and_full_regime_uses_every_image() {
    let splits = toy_splits(10, 16);
    let cfg = toy_protocol(2);
    let full = labeled_subset(&splits.train, RegimeSpec::new(100, 0).unwrap()).unwrap();
    assert_eq!(full.len(), splits.train.len());
    let (net, report) = run_protocol::<f32>(
        &splits.train,
        &splits.validation,
        RegimeSpec::new(25, 1).unwrap(),
        PretrainMode::Hpca,
        1,
        &cfg,
        1,
    )
    .unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert_eq!(net.config().num_blocks(), 1);
}

#[test]
fn single_block_sweep_picks_layer_one() {
    let splits = toy_splits(8, 17);
    let mut cfg = toy_protocol(1);
    cfg.network = NetworkConfig::parse("conv(4,3,1,1) relu maxpool(2,2) | flatten dense(4)", SHAPE).unwrap();
    let out = layer_sweep::<f32>(
        &splits.train,
        &splits.validation,
        &splits.test,
        RegimeSpec::new(25, 2).unwrap(),
        PretrainMode::None,
        &cfg,
        Database::TrainOnly,
        2,
    )
    .unwrap();
    assert_eq!(out.best_layer_k, 1);
    assert_eq!(out.layers.len(), 1);
    assert_eq!(out.test.depth, splits.train.len());
}
