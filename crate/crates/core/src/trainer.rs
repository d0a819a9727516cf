//! Supervised fine-tuning (SGD with Nesterov momentum, L2 decay, dropout,
//! early stopping) and the two-phase semi-supervised protocol.

use crate::data::{gather_images, gather_labels, make_regime, RegimeSpec, SampleSource, Subset};
use crate::error::{Error, Result};
use crate::hebbian::{pretrain, HpcaConfig, HpcaLayerStats};
use crate::network::{Network, NetworkConfig, ParamSet};
use crate::rng::Rng;
use crate::tensor::{softmax_cross_entropy, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Batch size for validation passes (does not affect results).
    pub eval_batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self::cifar10()
    }
}

impl SgdConfig {
    pub fn cifar10() -> Self {
        Self {
            lr0: 1e-3,
            momentum: 0.9,
            nesterov: true,
            dropout_rate: 0.5,
            weight_decay: 5e-2,
            epochs: 20,
            batch_size: 64,
            eval_batch_size: 256,
        }
    }

    pub fn cifar100() -> Self {
        Self {
            weight_decay: 1e-2,
            ..Self::cifar10()
        }
    }

    /// Learning rate for 1-based `epoch`: `lr0` through epoch 10, then
    /// `lr0 · 2^(−⌊(epoch − 10) / 2⌋)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(self.lr0, epoch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr0.is_nan() || self.lr0 <= 0.0 || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "sgd: lr0 {} momentum {} weight_decay {}",
                self.lr0, self.momentum, self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn lr_schedule(lr0: f64, epoch: usize) -> f64 {
    if epoch <= 10 {
        lr0
    } else {
        lr0 * 0.5f64.powi(((epoch - 10) / 2) as i32)
    }
}

/// One SGD step on every parameterized layer.
///
/// `g = grad + decay·w` (weights only), `v ← μv − lr·g`, then
/// `w ← w + μv − lr·g` with Nesterov or `w ← w + v` without.
pub fn sgd_step<T: Real>(
    network: &mut Network<T>,
    grads: &ParamSet<T>,
    velocity: &mut ParamSet<T>,
    lr: f64,
    cfg: &SgdConfig,
) -> Result<()> {
    let layers = network.layers_mut();
    if grads.0.len() != layers.len() || velocity.0.len() != layers.len() {
        return Err(Error::Network("gradient / velocity layout does not match network".into()));
    }
    for ((layer, g), v) in layers.iter_mut().zip(&grads.0).zip(velocity.0.iter_mut()) {
        match (layer.params_mut(), g, v) {
            (Some(p), Some(g), Some(v)) => {
                step_tensor(&mut p.weights, &g.weights, &mut v.weights, lr, cfg.weight_decay, cfg)?;
                step_tensor(&mut p.bias, &g.bias, &mut v.bias, lr, 0.0, cfg)?;
            }
            (None, _, _) => {}
            _ => return Err(Error::Network("missing gradient for a parameterized layer".into())),
        }
    }
    Ok(())
}

fn step_tensor<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    vel: &mut Tensor<T>,
    lr: f64,
    decay: f64,
    cfg: &SgdConfig,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != vel.shape() {
        return Err(Error::shape(
            "sgd_step",
            format!("param {:?} grad {:?} velocity {:?}", param.shape(), grad.shape(), vel.shape()),
        ));
    }
    let mu = cfg.momentum;
    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(vel.data_mut().iter_mut()) {
        let pf = p.f64();
        let gf = g.f64() + decay * pf;
        let vf = mu * v.f64() - lr * gf;
        *v = T::of(vf);
        let next = if cfg.nesterov { pf + mu * vf - lr * gf } else { pf + vf };
        if !next.is_finite() {
            return Err(Error::NonFinite { op: "sgd_step" });
        }
        *p = T::of(next);
    }
    Ok(())
}

/// Fraction of samples whose argmax logit (first on ties) equals the label.
pub fn classify_accuracy<T: Real>(network: &Network<T>, split: &dyn SampleSource, batch_size: usize) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::EmptyDataset("accuracy evaluation"));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..split.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let x: Tensor<T> = gather_images(split, chunk)?;
        let logits = network.infer(&x)?;
        for (row, &i) in logits.rows().zip(chunk) {
            if argmax(row) == split.label(i) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / split.len() as f64)
}

pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the highest validation accuracy (first on ties); 0 when no
    /// epoch ran and the initial network is returned.
    pub best_epoch: usize,
    pub best_checkpoint_id: String,
}

impl TrainReport {
    pub fn best_accuracy(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).map(|e| e.val_accuracy)
    }
}

/// Resumable fine-tuning state machine: one call to [`Finetuner::run_epoch`]
/// per epoch, with the full state exposed for checkpointing.
#[derive(Clone, Debug)]
pub struct Finetuner<T: Real> {
    pub network: Network<T>,
    pub velocity: ParamSet<T>,
    pub best: Network<T>,
    pub report: TrainReport,
    pub rng: Rng,
    pub cfg: SgdConfig,
}

impl<T: Real> Finetuner<T> {
    pub fn new(mut network: Network<T>, cfg: SgdConfig, rng: Rng) -> Result<Self> {
        cfg.validate()?;
        network.set_dropout_rate(cfg.dropout_rate)?;
        Ok(Self {
            velocity: ParamSet::zeros_like(&network),
            best: network.clone(),
            network,
            report: TrainReport {
                best_checkpoint_id: "initial".into(),
                ..Default::default()
            },
            rng,
            cfg,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.report.epochs.len()
    }

    pub fn is_done(&self) -> bool {
        self.epochs_done() >= self.cfg.epochs
    }

    pub fn run_epoch(&mut self, labeled: &dyn SampleSource, validation: &dyn SampleSource) -> Result<&EpochRecord> {
        if labeled.is_empty() {
            return Err(Error::EmptyDataset("labeled split"));
        }
        let epoch = self.epochs_done() + 1;
        let lr = self.cfg.lr_at(epoch);
        let order = self.rng.permutation(labeled.len());
        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let x: Tensor<T> = gather_images(labeled, chunk)?;
            let y = gather_labels(labeled, chunk);
            let (logits, trace) = self.network.forward(&x, true, &mut self.rng)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
            let grads = self.network.backward(&trace, &grad)?;
            sgd_step(&mut self.network, &grads, &mut self.velocity, lr, &self.cfg)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let val_accuracy = classify_accuracy(&self.network, validation, self.cfg.eval_batch_size)?;
        let improved = self
            .report
            .best_accuracy()
            .is_none_or(|best| val_accuracy > best);
        if improved {
            self.best = self.network.clone();
            self.report.best_epoch = epoch;
            self.report.best_checkpoint_id = format!("epoch-{epoch}");
        }
        self.report.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / labeled.len() as f64,
            val_accuracy,
            lr,
        });
        log::info!(
            "epoch {epoch}: loss {:.4} val acc {:.4} lr {lr:e}",
            loss_sum / labeled.len() as f64,
            val_accuracy
        );
        Ok(self.report.epochs.last().unwrap())
    }

    /// Best-epoch network and the report.
    pub fn finish(self) -> (Network<T>, TrainReport) {
        (self.best, self.report)
    }
}

/// End-to-end supervised training with early stopping on validation accuracy.
pub fn finetune<T: Real>(
    network: Network<T>,
    labeled: &dyn SampleSource,
    validation: &dyn SampleSource,
    cfg: &SgdConfig,
    rng: Rng,
) -> Result<(Network<T>, TrainReport)> {
    if labeled.is_empty() {
        return Err(Error::EmptyDataset("labeled split"));
    }
    let mut ft = Finetuner::new(network, cfg.clone(), rng)?;
    while !ft.is_done() {
        ft.run_epoch(labeled, validation)?;
    }
    Ok(ft.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PretrainMode {
    None,
    Hpca,
}

impl PretrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PretrainMode::None),
            "hpca" => Ok(PretrainMode::Hpca),
            _ => Err(Error::Config(format!("unknown pre-training mode {s:?} (none|hpca)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PretrainMode::None => "none",
            PretrainMode::Hpca => "hpca",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PretrainMode::None => "None",
            PretrainMode::Hpca => "HPCA",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub network: NetworkConfig,
    pub hpca: HpcaConfig,
    pub sgd: SgdConfig,
    /// Pre-train on only the first `n` training images.
    pub pretrain_limit: Option<usize>,
}

/// Deterministic child seed for one phase of a run.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_INIT: u64 = 1;
const TAG_PRETRAIN: u64 = 2;
const TAG_CUT: u64 = 100;
const TAG_FINETUNE: u64 = 200;

/// Phase 1: Xavier-initialized network, optionally HPCA pre-trained on every
/// training image (labels unused).
pub fn prepare_base<T: Real>(
    train: &dyn SampleSource,
    mode: PretrainMode,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<(Network<T>, Vec<HpcaLayerStats>)> {
    let mut net = Network::build(cfg.network.clone(), &mut Rng::new(derive_seed(seed, TAG_INIT)))?;
    let stats = match mode {
        PretrainMode::None => Vec::new(),
        PretrainMode::Hpca => {
            let pool = Subset::prefix(train, cfg.pretrain_limit.unwrap_or(train.len()));
            pretrain(&mut net, &pool, &cfg.hpca, &mut Rng::new(derive_seed(seed, TAG_PRETRAIN)))?
        }
    };
    Ok((net, stats))
}

/// Cuts `base` after block `k` (fresh head) and wraps it in a fine-tuner
/// seeded for this run and cut.
pub fn start_finetune<T: Real>(base: &Network<T>, k: usize, cfg: &ProtocolConfig, seed: u64) -> Result<Finetuner<T>> {
    let cut = base.cut_at(
        k,
        base.num_classes(),
        cfg.sgd.dropout_rate,
        &mut Rng::new(derive_seed(seed, TAG_CUT + k as u64)),
    )?;
    Finetuner::new(cut, cfg.sgd.clone(), Rng::new(derive_seed(seed, TAG_FINETUNE + k as u64)))
}

/// The regime's labeled subset of `train`.
pub fn labeled_subset(train: &dyn SampleSource, regime: RegimeSpec) -> Result<Subset<'_>> {
    let split = make_regime(train, regime)?;
    Subset::new(train, split.labeled)
}

/// Phase 2 for one cut: attach a fresh head after block `k` and fine-tune on
/// the regime's labeled subset.
pub fn finetune_cut<T: Real>(
    base: &Network<T>,
    train: &dyn SampleSource,
    validation: &dyn SampleSource,
    regime: RegimeSpec,
    k: usize,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<(Network<T>, TrainReport)> {
    let labeled = labeled_subset(train, regime)?;
    let mut ft = start_finetune(base, k, cfg, seed)?;
    while !ft.is_done() {
        ft.run_epoch(&labeled, validation)?;
    }
    Ok(ft.finish())
}

/// Pre-train (optional), cut at `k`, fine-tune on the labeled subset.
pub fn run_protocol<T: Real>(
    train: &dyn SampleSource,
    validation: &dyn SampleSource,
    regime: RegimeSpec,
    mode: PretrainMode,
    k: usize,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<(Network<T>, TrainReport)> {
    let (base, _) = prepare_base(train, mode, cfg, seed)?;
    finetune_cut(&base, train, validation, regime, k, cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;

    #[test]
    fn schedule_closed_form() {
        let expect = [
            1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, // 1-10
            1.0, 0.5, 0.5, 0.25, 0.25, 0.125, 0.125, 0.0625, 0.0625, 0.03125,
        ];
        for (e, want) in expect.iter().enumerate() {
            assert_eq!(lr_schedule(1.0, e + 1), *want, "epoch {}", e + 1);
        }
    }

    fn scalar_net(w: f32) -> Network<f32> {
        let cfg = NetworkConfig::parse("flatten | dense(1)", [1, 1, 1]).unwrap();
        let mut net = Network::build(cfg, &mut Rng::new(0)).unwrap();
        if let Layer::Dense { params } = &mut net.layers_mut()[1] {
            params.weights.data_mut()[0] = w;
        }
        net
    }

    fn weight(net: &Network<f32>) -> f32 {
        net.layers()[1].params().unwrap().weights.data()[0]
    }

    fn grads_with(net: &Network<f32>, g: f32) -> ParamSet<f32> {
        let mut grads = ParamSet::zeros_like(net);
        grads.0[1].as_mut().unwrap().weights.data_mut()[0] = g;
        grads
    }

    #[test]
    fn zero_everything_is_noop_and_plain_sgd() {
        let cfg = SgdConfig {
            weight_decay: 0.0,
            ..SgdConfig::cifar10()
        };
        let mut net = scalar_net(0.7);
        let mut v = ParamSet::zeros_like(&net);
        let zero = ParamSet::zeros_like(&net);
        sgd_step(&mut net, &zero, &mut v, 0.1, &cfg).unwrap();
        assert_eq!(weight(&net), 0.7);

        let plain = SgdConfig {
            momentum: 0.0,
            ..cfg
        };
        let g = grads_with(&net, 2.0);
        sgd_step(&mut net, &g, &mut v, 0.1, &plain).unwrap();
        assert!((weight(&net) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn nesterov_matches_scalar_recurrence() {
        // loss = ½ a w², grad = a w
        let (a, lr, mu, wd) = (3.0f64, 0.05, 0.9, 0.1);
        let cfg = SgdConfig {
            momentum: mu,
            weight_decay: wd,
            ..SgdConfig::cifar10()
        };
        let mut net = scalar_net(1.0);
        let mut vel = ParamSet::zeros_like(&net);
        let (mut w, mut v) = (1.0f64, 0.0f64);
        for _ in 0..2 {
            let g = grads_with(&net, (a * weight(&net) as f64) as f32);
            sgd_step(&mut net, &g, &mut vel, lr, &cfg).unwrap();
            let geff = a * w + wd * w;
            v = mu * v - lr * geff;
            w = w + mu * v - lr * geff;
        }
        assert!((weight(&net) as f64 - w).abs() < 1e-6, "{} vs {w}", weight(&net));
    }

    #[test]
    fn decay_shrinks_weights_not_bias() {
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.5,
            ..SgdConfig::cifar10()
        };
        let mut net = scalar_net(2.0);
        if let Layer::Dense { params } = &mut net.layers_mut()[1] {
            params.bias.data_mut()[0] = 1.0;
        }
        let mut v = ParamSet::zeros_like(&net);
        let zero = ParamSet::zeros_like(&net);
        sgd_step(&mut net, &zero, &mut v, 0.1, &cfg).unwrap();
        // w ← w − lr·decay·w = 2 · (1 − 0.05)
        assert!((weight(&net) - 1.9).abs() < 1e-6);
        assert_eq!(net.layers()[1].params().unwrap().bias.data()[0], 1.0);
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0f32; 4]), 0);
    }

    #[test]
    fn derive_seed_spreads() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }

    #[test]
    fn empty_labeled_split_rejected() {
        let ds = crate::data::Dataset::new([1, 1, 1], vec![], vec![], 1, crate::data::SplitTag::Train).unwrap();
        let r = finetune(scalar_net(1.0), &ds, &ds, &SgdConfig::cifar10(), Rng::new(0));
        assert!(matches!(r, Err(Error::EmptyDataset(_))));
    }
}
