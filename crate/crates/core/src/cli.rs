//! Command-line front end. Every flag maps 1:1 to a key of the `.run` file
//! written next to each command's output, and `--config x.run` replays it.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::data::cifar::parse_single_image;
use crate::data::synthetic::{generate, SyntheticSpec};
use crate::data::{CifarKind, Concat, Dataset, RegimeSpec, SampleSource, SplitTag, Splits, REGIMES};
use crate::error::Error;
use crate::hebbian::{Activation, HpcaConfig};
use crate::network::{Network, NetworkConfig};
use crate::persistence::{
    load_checkpoint, load_features, save_checkpoint, save_features, Checkpoint, MetricRow, MetricsLog, Phase,
    Provenance, RunConfig,
};
use crate::retrieval::{
    build_store, evaluate_map, evaluate_stores, format_table, rank_with_distances, sweep_from_base, Database,
    SummaryRow, SweepOutcome,
};
use crate::stats::mean_interval;
use crate::tensor::Tensor;
use crate::trainer::{labeled_subset, prepare_base, start_finetune, PretrainMode, ProtocolConfig, SgdConfig};

#[derive(Parser, Debug)]
#[command(name = "hebb-cbir", version, about = "Hebbian-PCA pre-training and CNN features for image retrieval")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Unsupervised HPCA pre-training of every internal layer.
    Pretrain(PretrainArgs),
    /// Cut at a layer, attach a fresh classifier and fine-tune on a regime.
    Finetune(FinetuneArgs),
    /// Layerwise sweep with validation-mAP model selection over seeds.
    Sweep(SweepArgs),
    /// Write a feature store for one split.
    Extract(ExtractArgs),
    /// Mean average precision of test queries against a database.
    EvalMap(EvalMapArgs),
    /// Nearest database items for one image.
    Query(QueryArgs),
    /// Regime × pre-training grid for a results table.
    Reproduce(ReproduceArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetId {
    Cifar10,
    Cifar100,
    Synthetic,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Directory with the CIFAR binary files.
    #[arg(long, env = "HEBB_CBIR_DATA")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DatasetId::Cifar10)]
    pub dataset: DatasetId,
    /// Seed of the train/validation split (independent of the run seed).
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Use only the first n images of the original training set.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first n test images.
    #[arg(long)]
    pub test_limit: Option<usize>,
    /// Images per class for `--dataset synthetic` (training set).
    #[arg(long, default_value_t = 50)]
    pub synthetic_per_class: usize,
}

#[derive(Args, Debug, Clone)]
pub struct NetArgs {
    /// `default`, `small`, or an explicit layer list such as
    /// "conv(8,3,1,1) relu maxpool(2,2) | flatten dense(10)".
    #[arg(long, default_value = "default")]
    pub layers: String,
}

#[derive(Args, Debug, Clone)]
pub struct HpcaArgs {
    #[arg(long, default_value_t = 20)]
    pub hpca_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub hpca_eta: f64,
    #[arg(long, default_value_t = 64)]
    pub hpca_batch: usize,
    #[arg(long, default_value = "relu")]
    pub hpca_activation: String,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub hpca_train_biases: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub hpca_include_dense: bool,
    /// Pre-train on only the first n training images.
    #[arg(long)]
    pub pretrain_limit: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SgdArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lr0: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub nesterov: bool,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Defaults to 5e-2 for CIFAR-10 and synthetic data, 1e-2 for CIFAR-100.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 256)]
    pub eval_batch: usize,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "run")]
    pub run_id: String,
    /// Append metric rows to this `.metrics.csv` file.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Replay a `.run` file; explicit flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub hpca: HpcaArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub hpca: HpcaArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// `none`, `hpca` (pre-train in process) or a checkpoint path.
    #[arg(long, default_value = "none")]
    pub from: String,
    #[arg(long)]
    pub regime: u32,
    #[arg(long)]
    pub layer: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Stop after this many epochs and save a resumable checkpoint.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Continue from a checkpoint written with `--stop-after`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub hpca: HpcaArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "none")]
    pub from: String,
    #[arg(long)]
    pub regime: u32,
    /// Number of repetitions, with seeds `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// `train+validation` or `train`.
    #[arg(long, default_value = "train+validation")]
    pub database: String,
    /// Summary table output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Defaults to the checkpoint's layer.
    #[arg(long)]
    pub layer: Option<usize>,
    /// `train`, `validation`, `test` or `train+validation`.
    #[arg(long, default_value = "train+validation")]
    pub split: String,
    #[arg(long, default_value_t = 256)]
    pub eval_batch: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalMapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, conflicts_with = "feat")]
    pub ckpt: Option<PathBuf>,
    /// Database feature store (with `--queries`).
    #[arg(long, requires = "queries")]
    pub feat: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, default_value = "train+validation")]
    pub database: String,
    #[arg(long, default_value_t = 256)]
    pub eval_batch: usize,
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    #[arg(long)]
    pub feat: PathBuf,
    /// Raw CIFAR-style image (3072 pixel bytes, optionally label-prefixed).
    #[arg(long)]
    pub image: PathBuf,
    /// Network used to featurize the image.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Smoke,
    Full,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    #[arg(long, value_enum)]
    pub table: CifarTable,
    #[arg(long, value_enum, default_value_t = Scale::Smoke)]
    pub scale: Scale,
    #[arg(long, env = "HEBB_CBIR_DATA")]
    pub data_dir: Option<PathBuf>,
    /// Defaults to 1 (smoke) or 5 (full).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Overrides the scale's training-set limit (smoke: 600 images).
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Overrides the scale's test-set limit (smoke: 120 images).
    #[arg(long)]
    pub test_limit: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CifarTable {
    Cifar10,
    Cifar100,
}

/// Failure of one command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or inputs, exit code 2.
    Usage(String),
    /// Failure while running, exit code 1.
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::MissingFile(_) => CliError::Usage(e.to_string()),
            e => CliError::Runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match splice_config(args) {
        Ok(a) => a,
        Err(e) => return report(e),
    };
    let matches = match Cli::command().try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match dispatch(cli, &matches) {
        Ok(()) => 0,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> i32 {
    match e {
        CliError::Usage(m) => {
            eprintln!("error: {m}");
            2
        }
        CliError::Runtime(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Inserts the entries of `--config <file>` right after the subcommand so
/// that later, explicit flags override them.
fn splice_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let pos = args.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config="));
    let Some(pos) = pos else { return Ok(args) };
    let path = match args[pos].to_string_lossy().strip_prefix("--config=") {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(
            args.get(pos + 1)
                .ok_or_else(|| usage("--config needs a file"))?,
        ),
    };
    let cfg = RunConfig::load(&path).map_err(|e| usage(e.to_string()))?;
    let sub = args.get(1).map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if let Some(cmd) = cfg.get("command") {
        if cmd != sub {
            return Err(usage(format!("{} was written by `{cmd}`, not `{sub}`", path.display())));
        }
    }
    let mut out = args[..2.min(args.len())].to_vec();
    for (k, v) in cfg.iter().filter(|(k, _)| *k != "command" && *k != "config") {
        out.push(format!("--{k}").into());
        out.push(v.into());
    }
    out.extend_from_slice(&args[2.min(args.len())..]);
    Ok(out)
}

/// Every argument of the invoked subcommand with its effective value.
fn resolved_config(matches: &ArgMatches) -> RunConfig {
    let mut cfg = RunConfig::new();
    let Some((name, sub)) = matches.subcommand() else { return cfg };
    cfg.set("command", name);
    let cmd = Cli::command();
    let Some(def) = cmd.find_subcommand(name) else { return cfg };
    for arg in def.get_arguments() {
        let (Some(long), id) = (arg.get_long(), arg.get_id().as_str()) else { continue };
        if long == "config" {
            continue;
        }
        if let Ok(Some(mut raw)) = sub.try_get_raw(id) {
            if let Some(v) = raw.next() {
                cfg.set(long, v.to_string_lossy());
            }
        }
    }
    cfg
}

fn dispatch(cli: Cli, matches: &ArgMatches) -> CliResult<()> {
    // the run file is written only once the command has succeeded
    let out = match cli.command {
        Command::Pretrain(a) => {
            let out = a.out.clone();
            pretrain_cmd(a)?;
            Some(out)
        }
        Command::Finetune(a) => {
            let out = a.out.clone();
            finetune_cmd(a)?;
            Some(out)
        }
        Command::Sweep(a) => {
            let out = a.out.clone();
            sweep_cmd(a)?;
            out
        }
        Command::Extract(a) => {
            let out = a.out.clone();
            extract_cmd(a)?;
            Some(out)
        }
        Command::EvalMap(a) => {
            eval_map_cmd(a)?;
            None
        }
        Command::Query(a) => {
            query_cmd(a)?;
            None
        }
        Command::Reproduce(a) => {
            let out = a.out.clone();
            reproduce_cmd(a)?;
            out
        }
    };
    if let Some(out) = out {
        resolved_config(matches).save(&out.with_extension("run"))?;
    }
    Ok(())
}

// ---- shared setup --------------------------------------------------------

fn load_splits(d: &DataArgs) -> CliResult<Splits> {
    let (mut train, mut test) = match d.dataset {
        DatasetId::Synthetic => {
            if d.synthetic_per_class < 5 {
                return Err(usage("--synthetic-per-class must be >= 5"));
            }
            let spec = SyntheticSpec {
                per_class: d.synthetic_per_class,
                seed: d.split_seed,
                ..Default::default()
            };
            let test_spec = SyntheticSpec {
                per_class: d.synthetic_per_class.div_ceil(5),
                seed: d.split_seed ^ 0x7E57,
                ..Default::default()
            };
            (generate(&spec), generate(&test_spec))
        }
        DatasetId::Cifar10 | DatasetId::Cifar100 => {
            let dir = d
                .data_dir
                .as_ref()
                .ok_or_else(|| usage("--data-dir (or HEBB_CBIR_DATA) is required"))?;
            if !dir.is_dir() {
                return Err(usage(format!("data directory {} does not exist", dir.display())));
            }
            let kind = if d.dataset == DatasetId::Cifar10 {
                CifarKind::Cifar10
            } else {
                CifarKind::Cifar100
            };
            kind.load(dir)?
        }
    };
    if let Some(n) = d.train_limit {
        train = prefix(&train, n, SplitTag::Train)?;
    }
    if let Some(n) = d.test_limit {
        test = prefix(&test, n, SplitTag::Test)?;
    }
    Ok(Splits::prepare(&train, test, d.split_seed)?)
}

fn prefix(ds: &Dataset, n: usize, tag: SplitTag) -> CliResult<Dataset> {
    if n == 0 {
        return Err(usage("limits must be >= 1"));
    }
    let idx: Vec<usize> = (0..n.min(ds.len())).collect();
    Ok(ds.select(&idx, tag)?)
}

fn dataset_name(d: &DataArgs) -> &'static str {
    match d.dataset {
        DatasetId::Cifar10 => "cifar10",
        DatasetId::Cifar100 => "cifar100",
        DatasetId::Synthetic => "synthetic",
    }
}

fn network_config(spec: &str, splits: &Splits) -> CliResult<NetworkConfig> {
    let classes = splits.train.num_classes;
    let shape = splits.train.shape;
    let cfg = match spec {
        "default" => NetworkConfig {
            input_shape: shape,
            ..NetworkConfig::default_cifar(classes)
        },
        "small" => NetworkConfig {
            input_shape: shape,
            ..NetworkConfig::small_cifar(classes)
        },
        custom => NetworkConfig::parse(custom, shape).map_err(|e| usage(e.to_string()))?,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.num_classes != classes {
        return Err(usage(format!(
            "network has {} outputs but the dataset has {classes} classes",
            cfg.num_classes
        )));
    }
    Ok(cfg)
}

fn hpca_config(h: &HpcaArgs) -> CliResult<HpcaConfig> {
    let cfg = HpcaConfig {
        eta: h.hpca_eta,
        activation: Activation::parse(&h.hpca_activation).map_err(|e| usage(e.to_string()))?,
        epochs: h.hpca_epochs,
        batch_size: h.hpca_batch,
        train_biases: h.hpca_train_biases,
        include_dense: h.hpca_include_dense,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn sgd_config(s: &SgdArgs, dataset: DatasetId) -> CliResult<SgdConfig> {
    let base = if dataset == DatasetId::Cifar100 {
        SgdConfig::cifar100()
    } else {
        SgdConfig::cifar10()
    };
    let cfg = SgdConfig {
        lr0: s.lr0,
        momentum: s.momentum,
        nesterov: s.nesterov,
        dropout_rate: s.dropout,
        weight_decay: s.weight_decay.unwrap_or(base.weight_decay),
        epochs: s.epochs,
        batch_size: s.batch,
        eval_batch_size: s.eval_batch,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn metrics_log(r: &RunArgs) -> CliResult<Option<MetricsLog>> {
    Ok(r.metrics.as_deref().map(MetricsLog::open).transpose()?)
}

fn log_rows(log: &Option<MetricsLog>, rows: &[MetricRow]) -> CliResult<()> {
    if let Some(l) = log {
        l.append_all(rows)?;
    }
    Ok(())
}

/// Where the network of a fine-tuning run comes from.
enum Source {
    Mode(PretrainMode),
    Checkpoint(Box<Checkpoint>),
}

fn parse_source(from: &str) -> CliResult<Source> {
    match from {
        "none" => Ok(Source::Mode(PretrainMode::None)),
        "hpca" => Ok(Source::Mode(PretrainMode::Hpca)),
        path => {
            let ckpt = load_checkpoint(Path::new(path)).map_err(|e| match e {
                Error::MissingFile(_) => usage(format!("--from: no such checkpoint {path}")),
                e => CliError::Runtime(e),
            })?;
            Ok(Source::Checkpoint(Box::new(ckpt)))
        }
    }
}

impl Source {
    fn mode(&self) -> PretrainMode {
        match self {
            Source::Mode(m) => *m,
            Source::Checkpoint(c) if c.provenance.phase == Phase::Pretrained => PretrainMode::Hpca,
            Source::Checkpoint(_) => PretrainMode::None,
        }
    }

    fn base(&self, splits: &Splits, cfg: &ProtocolConfig, seed: u64) -> CliResult<Network<f32>> {
        match self {
            Source::Mode(m) => Ok(prepare_base(&splits.train, *m, cfg, seed)?.0),
            Source::Checkpoint(c) => {
                if c.network.config().input_shape != splits.train.shape
                    || c.network.num_classes() != splits.train.num_classes
                {
                    return Err(usage("checkpoint does not match the dataset's image shape or classes"));
                }
                Ok(c.network.clone())
            }
        }
    }
}

fn check_layer(k: usize, blocks: usize) -> CliResult<()> {
    if k == 0 || k > blocks {
        return Err(usage(format!("--layer {k} outside 1..={blocks}")));
    }
    Ok(())
}

fn regime(s: u32, seed: u64) -> CliResult<RegimeSpec> {
    RegimeSpec::new(s, seed).map_err(|e| usage(e.to_string()))
}

// ---- commands --------------------------------------------------------------

fn pretrain_cmd(a: PretrainArgs) -> CliResult<()> {
    let hpca = hpca_config(&a.hpca)?;
    let log = metrics_log(&a.run)?;
    let splits = load_splits(&a.data)?;
    let cfg = ProtocolConfig {
        network: network_config(&a.net.layers, &splits)?,
        hpca: hpca.clone(),
        sgd: SgdConfig::default(),
        pretrain_limit: a.hpca.pretrain_limit,
    };
    let (net, stats) = prepare_base::<f32>(&splits.train, PretrainMode::Hpca, &cfg, a.run.seed)?;
    let mut rows = Vec::new();
    for epoch in 0..hpca.epochs {
        for s in &stats {
            let err = s.representation_error[epoch];
            rows.push(MetricRow::new(&a.run.run_id, "pretrain", epoch + 1, &format!("repr_error.layer{}", s.layer), err));
            println!("epoch {} layer {}: representation error {err:.6}", epoch + 1, s.layer);
        }
    }
    log_rows(&log, &rows)?;
    let mut ckpt = Checkpoint::new(
        net,
        Provenance {
            phase: Phase::Pretrained,
            dataset: dataset_name(&a.data).into(),
            regime: None,
            layer_k: None,
            epoch: hpca.epochs,
            seed: a.run.seed,
        },
    );
    ckpt.norm = Some(splits.train.norm.clone());
    save_checkpoint(&a.out, &ckpt)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn epoch_rows(run_id: &str, phase: &str, e: &crate::trainer::EpochRecord) -> Vec<MetricRow> {
    vec![
        MetricRow::new(run_id, phase, e.epoch, "train_loss", e.train_loss),
        MetricRow::new(run_id, phase, e.epoch, "val_accuracy", e.val_accuracy),
        MetricRow::new(run_id, phase, e.epoch, "lr", e.lr),
    ]
}

fn finetune_cmd(a: FinetuneArgs) -> CliResult<()> {
    let sgd = sgd_config(&a.sgd, a.data.dataset)?;
    let hpca = hpca_config(&a.hpca)?;
    let spec = regime(a.regime, a.run.seed)?;
    let log = metrics_log(&a.run)?;
    if a.resume.is_some() && a.from != "none" {
        return Err(usage("--resume continues a saved run; drop --from"));
    }
    let source = match &a.resume {
        Some(_) => Source::Mode(PretrainMode::None),
        None => parse_source(&a.from)?,
    };
    let splits = load_splits(&a.data)?;
    let cfg = ProtocolConfig {
        network: network_config(&a.net.layers, &splits)?,
        hpca,
        sgd,
        pretrain_limit: a.hpca.pretrain_limit,
    };
    let mut ft = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            let mut ft = ckpt.into_finetuner()?;
            ft.cfg.epochs = cfg.sgd.epochs;
            ft
        }
        None => {
            let base = source.base(&splits, &cfg, a.run.seed)?;
            check_layer(a.layer, base.config().num_blocks())?;
            start_finetune(&base, a.layer, &cfg, a.run.seed)?
        }
    };
    let labeled = labeled_subset(&splits.train, spec)?;
    let provenance = |epoch| Provenance {
        phase: Phase::Finetuned,
        dataset: dataset_name(&a.data).into(),
        regime: Some(a.regime),
        layer_k: Some(a.layer),
        epoch,
        seed: a.run.seed,
    };
    while !ft.is_done() {
        let e = ft.run_epoch(&labeled, &splits.validation)?.clone();
        println!(
            "epoch {}: train loss {:.5} val accuracy {:.4} lr {}",
            e.epoch, e.train_loss, e.val_accuracy, e.lr
        );
        log_rows(&log, &epoch_rows(&a.run.run_id, "finetune", &e))?;
        if a.stop_after == Some(e.epoch) && !ft.is_done() {
            let mut ckpt = Checkpoint::from_finetuner(&ft, provenance(e.epoch));
            ckpt.norm = Some(splits.train.norm.clone());
            save_checkpoint(&a.out, &ckpt)?;
            println!("stopped after epoch {}; resumable state in {}", e.epoch, a.out.display());
            return Ok(());
        }
    }
    let (best, report) = ft.finish();
    log_rows(
        &log,
        &[MetricRow::new(&a.run.run_id, "finetune", report.best_epoch, "best_epoch", report.best_epoch as f64)],
    )?;
    println!("best epoch {} ({})", report.best_epoch, report.best_checkpoint_id);
    let mut ckpt = Checkpoint::new(best, provenance(report.best_epoch));
    ckpt.norm = Some(splits.train.norm.clone());
    save_checkpoint(&a.out, &ckpt)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn sweep_rows(run_id: &str, o: &SweepOutcome) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for l in &o.layers {
        let phase = format!("finetune.k{}", l.layer_k);
        for e in &l.train.epochs {
            rows.extend(epoch_rows(run_id, &phase, e));
        }
        rows.push(MetricRow::new(run_id, &phase, l.train.best_epoch, "best_epoch", l.train.best_epoch as f64));
        rows.push(MetricRow::new(run_id, "sweep", l.layer_k, "val_map", l.validation_map));
    }
    rows.push(MetricRow::new(run_id, "test", o.best_layer_k, "test_map", o.test.map));
    rows
}

#[allow(clippy::too_many_arguments)]
fn run_sweeps(
    splits: &Splits,
    source: &Source,
    cfg: &ProtocolConfig,
    regimes: &[u32],
    seeds: &[u64],
    database: Database,
    run_id: &str,
    log: &Option<MetricsLog>,
) -> CliResult<Vec<SummaryRow>> {
    let mut maps = vec![Vec::new(); regimes.len()];
    let mut layers = vec![Vec::new(); regimes.len()];
    let test: &dyn SampleSource = &splits.test;
    for &seed in seeds {
        let base = source.base(splits, cfg, seed)?;
        for (r, &s) in regimes.iter().enumerate() {
            let spec = regime(s, seed)?;
            let outcome = sweep_from_base(&base, &splits.train, &splits.validation, test, spec, cfg, database, seed)?;
            let id = format!("{run_id}.{}.s{s}.seed{seed}", source.mode().as_str());
            log_rows(log, &sweep_rows(&id, &outcome))?;
            println!(
                "regime {s}% {} seed {seed}: layer {} test mAP {:.4}",
                source.mode().label(),
                outcome.best_layer_k,
                outcome.test.map
            );
            maps[r].push(outcome.test.map);
            layers[r].push(outcome.best_layer_k);
        }
    }
    Ok(regimes
        .iter()
        .enumerate()
        .map(|(r, &s)| SummaryRow {
            regime: s,
            mode: source.mode(),
            map: mean_interval(&maps[r]).expect("at least one seed"),
            layers: layers[r].clone(),
        })
        .collect())
}

fn summary_rows_metrics(run_id: &str, rows: &[SummaryRow]) -> Vec<MetricRow> {
    let mut out = Vec::new();
    for r in rows {
        let id = format!("{run_id}.{}.s{}", r.mode.as_str(), r.regime);
        out.push(MetricRow::new(&id, "summary", r.map.n, "map_mean", r.map.mean));
        if let Some(h) = r.map.half_width {
            out.push(MetricRow::new(&id, "summary", r.map.n, "map_ci95_half_width", h));
        }
    }
    out
}

fn sweep_cmd(a: SweepArgs) -> CliResult<()> {
    let sgd = sgd_config(&a.sgd, a.data.dataset)?;
    let hpca = hpca_config(&a.hpca)?;
    regime(a.regime, 0)?;
    let database = Database::parse(&a.database).map_err(|e| usage(e.to_string()))?;
    if a.seeds == 0 {
        return Err(usage("--seeds must be >= 1"));
    }
    let log = metrics_log(&a.run)?;
    let source = parse_source(&a.from)?;
    let splits = load_splits(&a.data)?;
    let cfg = ProtocolConfig {
        network: network_config(&a.net.layers, &splits)?,
        hpca,
        sgd,
        pretrain_limit: a.hpca.pretrain_limit,
    };
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|i| a.run.seed + i).collect();
    let rows = run_sweeps(&splits, &source, &cfg, &[a.regime], &seeds, database, &a.run.run_id, &log)?;
    log_rows(&log, &summary_rows_metrics(&a.run.run_id, &rows))?;
    let table = format_table(&rows);
    print!("{table}");
    if let Some(out) = &a.out {
        fs::write(out, &table).map_err(Error::from)?;
    }
    Ok(())
}

fn apply_norm(splits: &mut Splits, ckpt: &Checkpoint) {
    if let Some(n) = &ckpt.norm {
        splits.train.norm = n.clone();
        splits.validation.norm = n.clone();
        splits.test.norm = n.clone();
    }
}

fn ckpt_layer(layer: Option<usize>, ckpt: &Checkpoint) -> CliResult<usize> {
    let k = layer
        .or(ckpt.provenance.layer_k)
        .ok_or_else(|| usage("--layer is required for this checkpoint"))?;
    check_layer(k, ckpt.network.config().num_blocks())?;
    Ok(k)
}

fn extract_cmd(a: ExtractArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let k = ckpt_layer(a.layer, &ckpt)?;
    let mut splits = load_splits(&a.data)?;
    apply_norm(&mut splits, &ckpt);
    let store = match a.split.as_str() {
        "train+validation" => build_store(
            &ckpt.network,
            &Concat::new(&splits.train, &splits.validation)?,
            k,
            a.eval_batch,
            "train+validation",
        )?,
        tag => {
            let tag = SplitTag::parse(tag).map_err(|e| usage(e.to_string()))?;
            build_store(&ckpt.network, splits.get(tag), k, a.eval_batch, tag.as_str())?
        }
    };
    save_features(&a.out, &store)?;
    println!("wrote {} ({} × {}, layer {k})", a.out.display(), store.len(), store.dim());
    Ok(())
}

fn eval_map_cmd(a: EvalMapArgs) -> CliResult<()> {
    let log = metrics_log(&a.run)?;
    let report = match (&a.ckpt, &a.feat, &a.queries) {
        (None, Some(db), Some(q)) => {
            let db = load_features(db)?;
            let q = load_features(q)?;
            if db.dim() != q.dim() {
                return Err(usage(format!("feature dims differ: {} vs {}", db.dim(), q.dim())));
            }
            evaluate_stores(&db, &q)?
        }
        (Some(path), None, _) => {
            let database = Database::parse(&a.database).map_err(|e| usage(e.to_string()))?;
            let ckpt = load_checkpoint(path)?;
            let k = ckpt_layer(a.layer, &ckpt)?;
            let mut splits = load_splits(&a.data)?;
            apply_norm(&mut splits, &ckpt);
            match database {
                Database::TrainValidation => evaluate_map(
                    &ckpt.network,
                    &Concat::new(&splits.train, &splits.validation)?,
                    &splits.test,
                    k,
                    a.eval_batch,
                )?,
                Database::TrainOnly => evaluate_map(&ckpt.network, &splits.train, &splits.test, k, a.eval_batch)?,
            }
        }
        _ => return Err(usage("give either --ckpt or --feat with --queries")),
    };
    println!(
        "mAP {} layer {} queries {} skipped {} depth {}",
        report.map, report.layer_k, report.num_queries, report.skipped, report.depth
    );
    log_rows(
        &log,
        &[MetricRow::new(&a.run.run_id, "eval", report.layer_k, "map", report.map)],
    )?;
    Ok(())
}

fn query_cmd(a: QueryArgs) -> CliResult<()> {
    if a.topk == 0 {
        return Err(usage("--topk must be >= 1"));
    }
    let store = load_features(&a.feat)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    if !a.image.exists() {
        return Err(usage(format!("no such image {}", a.image.display())));
    }
    let mut img = parse_single_image(&fs::read(&a.image).map_err(Error::from)?)?;
    if ckpt.network.config().input_shape != img.shape {
        return Err(usage("image shape does not match the network input"));
    }
    match &ckpt.norm {
        Some(n) => img.norm = n.clone(),
        None => log::warn!("checkpoint has no normalization statistics; using raw [0, 1] pixels"),
    }
    check_layer(store.layer_k, ckpt.network.config().num_blocks())?;
    let x: Tensor<f32> = crate::data::gather_images(&img, &[0])?;
    let feat = ckpt.network.extract_features(&x, store.layer_k)?;
    let ranked = rank_with_distances(&store, feat.data())?;
    let m = if a.topk > store.len() {
        log::warn!("--topk {} exceeds the database size; showing {}", a.topk, store.len());
        eprintln!("warning: --topk {} clamped to {}", a.topk, store.len());
        store.len()
    } else {
        a.topk
    };
    println!("rank\tindex\tlabel\tdistance");
    for (r, (d2, i)) in ranked.iter().take(m).enumerate() {
        println!("{}\t{i}\t{}\t{}", r + 1, store.labels()[*i], d2.sqrt());
    }
    Ok(())
}

fn reproduce_cmd(a: ReproduceArgs) -> CliResult<()> {
    let dataset = match a.table {
        CifarTable::Cifar10 => DatasetId::Cifar10,
        CifarTable::Cifar100 => DatasetId::Cifar100,
    };
    let smoke = a.scale == Scale::Smoke;
    let seeds = a.seeds.unwrap_or(if smoke { 1 } else { 5 });
    if seeds == 0 {
        return Err(usage("--seeds must be >= 1"));
    }
    let data = DataArgs {
        data_dir: a.data_dir.clone(),
        dataset,
        split_seed: 0,
        train_limit: a.train_limit.or(smoke.then_some(600)),
        test_limit: a.test_limit.or(smoke.then_some(120)),
        synthetic_per_class: 0,
    };
    let sgd_args = SgdArgs {
        lr0: 1e-3,
        momentum: 0.9,
        nesterov: true,
        dropout: 0.5,
        weight_decay: None,
        epochs: if smoke { 2 } else { 20 },
        batch: 64,
        eval_batch: 256,
    };
    let hpca = HpcaConfig {
        epochs: if smoke { 1 } else { 20 },
        ..Default::default()
    };
    if !smoke {
        let sessions = REGIMES.len() * 2 * seeds * 5;
        eprintln!(
            "warning: full scale runs {sessions} fine-tuning sessions of 20 epochs on 40000 images plus \
             {} HPCA pre-trainings; expect several days of CPU time",
            seeds
        );
    }
    let log = metrics_log(&a.run)?;
    let sgd = sgd_config(&sgd_args, dataset)?;
    let splits = load_splits(&data)?;
    let cfg = ProtocolConfig {
        network: network_config(if smoke { "small" } else { "default" }, &splits)?,
        hpca,
        sgd,
        pretrain_limit: None,
    };
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| a.run.seed + i).collect();
    let mut rows = Vec::new();
    for mode in [PretrainMode::None, PretrainMode::Hpca] {
        let mut part = run_sweeps(
            &splits,
            &Source::Mode(mode),
            &cfg,
            &REGIMES,
            &seed_list,
            Database::TrainValidation,
            &a.run.run_id,
            &log,
        )?;
        rows.append(&mut part);
    }
    rows.sort_by_key(|r| (r.regime, r.mode == PretrainMode::Hpca));
    log_rows(&log, &summary_rows_metrics(&a.run.run_id, &rows))?;
    let table = format_table(&rows);
    print!("{table}");
    if let Some(out) = &a.out {
        fs::write(out, &table).map_err(Error::from)?;
    }
    Ok(())
}
