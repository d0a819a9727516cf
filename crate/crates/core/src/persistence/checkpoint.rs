use std::path::Path;

use super::{check_payload, format_dims, parse_dims, push_f32s, read_container, read_f32s, write_container, Header};
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::network::{LayerParams, Network, NetworkConfig, ParamSet};
use crate::rng::{Rng, RngState};
use crate::tensor::Tensor;
use crate::trainer::{EpochRecord, Finetuner, SgdConfig, TrainReport};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HEBBCKPT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Initial,
    Pretrained,
    Finetuned,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Initial => "initial",
            Phase::Pretrained => "pretrained",
            Phase::Finetuned => "finetuned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(Phase::Initial),
            "pretrained" => Ok(Phase::Pretrained),
            "finetuned" => Ok(Phase::Finetuned),
            _ => Err(Error::Integrity(format!("unknown phase {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub phase: Phase,
    pub dataset: String,
    pub regime: Option<u32>,
    pub layer_k: Option<usize>,
    pub epoch: usize,
    pub seed: u64,
}

/// Everything a fine-tuning run needs to continue mid-schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ResumeState {
    pub best: Network<f32>,
    pub report: TrainReport,
    pub sgd: SgdConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub provenance: Provenance,
    /// Input normalization the network was trained with.
    pub norm: Option<Normalization>,
    pub rng: Option<RngState>,
    pub velocity: Option<ParamSet<f32>>,
    pub resume: Option<ResumeState>,
}

impl Checkpoint {
    pub fn new(network: Network<f32>, provenance: Provenance) -> Self {
        Self {
            network,
            provenance,
            norm: None,
            rng: None,
            velocity: None,
            resume: None,
        }
    }

    /// Snapshot of an in-progress fine-tuning run.
    pub fn from_finetuner(ft: &Finetuner<f32>, provenance: Provenance) -> Self {
        Self {
            network: ft.network.clone(),
            provenance,
            norm: None,
            rng: Some(ft.rng.state()),
            velocity: Some(ft.velocity.clone()),
            resume: Some(ResumeState {
                best: ft.best.clone(),
                report: ft.report.clone(),
                sgd: ft.cfg.clone(),
            }),
        }
    }

    /// Rebuilds the fine-tuning state saved by [`Checkpoint::from_finetuner`].
    pub fn into_finetuner(self) -> Result<Finetuner<f32>> {
        let (Some(rng), Some(velocity), Some(resume)) = (self.rng, self.velocity, self.resume) else {
            return Err(Error::Integrity("checkpoint carries no resumable training state".into()));
        };
        Ok(Finetuner {
            network: self.network,
            velocity,
            best: resume.best,
            report: resume.report,
            rng: Rng::from_state(rng),
            cfg: resume.sgd,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut h = Header::default();
    let cfg = ckpt.network.config();
    h.push("kind", "checkpoint");
    h.push("network.input", format_dims(&cfg.input_shape));
    h.push("network.layers", cfg);
    let p = &ckpt.provenance;
    h.push("phase", p.phase.as_str());
    h.push("dataset", &p.dataset);
    if let Some(r) = p.regime {
        h.push("regime", r);
    }
    if let Some(k) = p.layer_k {
        h.push("layer", k);
    }
    h.push("epoch", p.epoch);
    h.push("seed", p.seed);
    if let Some(n) = &ckpt.norm {
        h.push("norm.mean", join_f64(&n.mean));
        h.push("norm.std", join_f64(&n.std));
    }
    if let Some(r) = &ckpt.rng {
        h.push("rng", r.encode());
    }
    if let Some(r) = &ckpt.resume {
        let s = &r.sgd;
        h.push("sgd.lr0", s.lr0);
        h.push("sgd.momentum", s.momentum);
        h.push("sgd.nesterov", s.nesterov);
        h.push("sgd.dropout", s.dropout_rate);
        h.push("sgd.weight_decay", s.weight_decay);
        h.push("sgd.epochs", s.epochs);
        h.push("sgd.batch", s.batch_size);
        h.push("sgd.eval_batch", s.eval_batch_size);
        h.push("report.best_epoch", r.report.best_epoch);
        h.push("report.best_id", &r.report.best_checkpoint_id);
        for e in &r.report.epochs {
            h.push(
                format!("report.epoch.{}", e.epoch),
                format!("{},{},{}", e.train_loss, e.val_accuracy, e.lr),
            );
        }
    }

    let params = ckpt.network.params();
    let mut tensors: Vec<(String, &Tensor<f32>)> = Vec::new();
    add_params(&mut tensors, "param", &params);
    if let Some(v) = &ckpt.velocity {
        add_params(&mut tensors, "velocity", v);
    }
    let best_params = ckpt.resume.as_ref().map(|r| r.best.params());
    if let Some(b) = &best_params {
        add_params(&mut tensors, "best", b);
    }
    let mut payload = Vec::new();
    for (j, (name, t)) in tensors.iter().enumerate() {
        h.push(format!("tensor.{j}"), format!("{name}:{}", format_dims(t.shape())));
        push_f32s(&mut payload, t.data());
    }
    h.push("tensors", tensors.len());
    write_container(path, CHECKPOINT_MAGIC, &h, &payload)
}

fn add_params<'a>(out: &mut Vec<(String, &'a Tensor<f32>)>, prefix: &str, params: &'a ParamSet<f32>) {
    for (i, p) in params.0.iter().enumerate() {
        if let Some(p) = p {
            out.push((format!("{prefix}.{i}.w"), &p.weights));
            out.push((format!("{prefix}.{i}.b"), &p.bias));
        }
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (h, payload) = read_container(path, CHECKPOINT_MAGIC)?;
    decode(&h, &payload)
}

fn decode(h: &Header, payload: &[u8]) -> Result<Checkpoint> {
    if h.get("kind") != Some("checkpoint") {
        return Err(Error::Integrity("not a checkpoint header".into()));
    }
    let input = parse_dims(h.require("network.input")?)?;
    let input: [usize; 3] = input
        .try_into()
        .map_err(|_| Error::Integrity("network.input must have 3 dimensions".into()))?;
    let config = NetworkConfig::parse(h.require("network.layers")?, input)
        .map_err(|e| Error::Integrity(format!("network config: {e}")))?;

    // tensor directory, then payload slicing
    let count: usize = h.parse("tensors")?;
    let mut dir = Vec::with_capacity(count);
    let mut total = 0usize;
    for j in 0..count {
        let entry = h.require(&format!("tensor.{j}"))?;
        let (name, dims) = entry
            .split_once(':')
            .ok_or_else(|| Error::Integrity(format!("bad tensor entry {entry:?}")))?;
        let dims = parse_dims(dims)?;
        total += dims.iter().product::<usize>() * 4;
        dir.push((name.to_string(), dims));
    }
    check_payload(payload, total)?;
    let mut offset = 0;
    let mut named = std::collections::HashMap::new();
    for (name, dims) in dir {
        let n: usize = dims.iter().product();
        let t = Tensor::new(dims, read_f32s(&payload[offset..offset + 4 * n]))
            .map_err(|e| Error::Integrity(format!("tensor {name}: {e}")))?;
        offset += 4 * n;
        named.insert(name, t);
    }

    let n_layers = config.layers.len();
    let take = |prefix: &str, named: &mut std::collections::HashMap<String, Tensor<f32>>| -> Result<Option<ParamSet<f32>>> {
        if !named.keys().any(|k| k.starts_with(&format!("{prefix}."))) {
            return Ok(None);
        }
        let mut out = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let w = named.remove(&format!("{prefix}.{i}.w"));
            let b = named.remove(&format!("{prefix}.{i}.b"));
            out.push(match (w, b) {
                (Some(weights), Some(bias)) => Some(LayerParams { weights, bias }),
                (None, None) => None,
                _ => return Err(Error::Integrity(format!("{prefix}.{i}: weights without bias"))),
            });
        }
        Ok(Some(ParamSet(out)))
    };
    let params = take("param", &mut named)?.ok_or_else(|| Error::Integrity("no network parameters".into()))?;
    let velocity = take("velocity", &mut named)?;
    let best = take("best", &mut named)?;
    if let Some(extra) = named.keys().next() {
        return Err(Error::Integrity(format!("unexpected tensor {extra:?}")));
    }
    let assemble = |p: ParamSet<f32>| {
        Network::from_parts(config.clone(), p.0).map_err(|e| Error::Integrity(e.to_string()))
    };
    let network = assemble(params)?;
    if let Some(v) = &velocity {
        assemble(v.clone())?;
    }

    let provenance = Provenance {
        phase: Phase::parse(h.require("phase")?)?,
        dataset: h.require("dataset")?.to_string(),
        regime: h.parse_opt("regime")?,
        layer_k: h.parse_opt("layer")?,
        epoch: h.parse("epoch")?,
        seed: h.parse("seed")?,
    };
    let norm = match (h.get("norm.mean"), h.get("norm.std")) {
        (Some(m), Some(s)) => Some(Normalization {
            mean: split_f64(m)?,
            std: split_f64(s)?,
        }),
        _ => None,
    };
    let rng = h
        .get("rng")
        .map(|s| RngState::decode(s).map_err(|e| Error::Integrity(e.to_string())))
        .transpose()?;
    let resume = match best {
        None => None,
        Some(b) => Some(ResumeState {
            best: assemble(b)?,
            report: decode_report(h)?,
            sgd: SgdConfig {
                lr0: h.parse("sgd.lr0")?,
                momentum: h.parse("sgd.momentum")?,
                nesterov: h.parse("sgd.nesterov")?,
                dropout_rate: h.parse("sgd.dropout")?,
                weight_decay: h.parse("sgd.weight_decay")?,
                epochs: h.parse("sgd.epochs")?,
                batch_size: h.parse("sgd.batch")?,
                eval_batch_size: h.parse("sgd.eval_batch")?,
            },
        }),
    };
    Ok(Checkpoint {
        network,
        provenance,
        norm,
        rng,
        velocity,
        resume,
    })
}

fn decode_report(h: &Header) -> Result<TrainReport> {
    let mut epochs = Vec::new();
    let mut e = 1;
    while let Some(v) = h.get(&format!("report.epoch.{e}")) {
        let f = split_f64(v)?;
        if f.len() != 3 {
            return Err(Error::Integrity(format!("report.epoch.{e} needs 3 values")));
        }
        epochs.push(EpochRecord {
            epoch: e,
            train_loss: f[0],
            val_accuracy: f[1],
            lr: f[2],
        });
        e += 1;
    }
    Ok(TrainReport {
        epochs,
        best_epoch: h.parse("report.best_epoch")?,
        best_checkpoint_id: h.require("report.best_id")?.to_string(),
    })
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn split_f64(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.parse().map_err(|_| Error::Integrity(format!("bad number list {s:?}"))))
        .collect()
}
