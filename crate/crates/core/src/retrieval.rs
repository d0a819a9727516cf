//! Feature stores, exact euclidean ranking, APS / mAP and the layerwise
//! model-selection sweep.

use std::fmt::Write as _;

use crate::data::{gather_images, Concat, RegimeSpec, SampleSource};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::stats::MeanInterval;
use crate::tensor::{Real, Tensor};
use crate::trainer::{finetune_cut, prepare_base, PretrainMode, ProtocolConfig, TrainReport};

/// Features of every image of one split, with labels, in dataset order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    features: Tensor<f32>,
    labels: Vec<usize>,
    pub layer_k: usize,
    /// Free-form tag of the source split (`train`, `train+validation`, ...).
    pub source: String,
}

impl FeatureStore {
    pub fn new(features: Tensor<f32>, labels: Vec<usize>, layer_k: usize, source: impl Into<String>) -> Result<Self> {
        let (n, _) = features.dims2("feature store")?;
        if n != labels.len() {
            return Err(Error::shape(
                "feature store",
                format!("{n} rows but {} labels", labels.len()),
            ));
        }
        if !features.all_finite() {
            return Err(Error::NonFinite { op: "feature store" });
        }
        Ok(Self {
            features,
            labels,
            layer_k,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.features.row(i)
    }
}

/// Runs every image of `split` through `network` up to block `layer_k`.
pub fn build_store<T: Real>(
    network: &Network<T>,
    split: &dyn SampleSource,
    layer_k: usize,
    batch_size: usize,
    source: &str,
) -> Result<FeatureStore> {
    if split.is_empty() {
        return Err(Error::EmptyDataset("feature extraction"));
    }
    let n = split.len();
    let idx: Vec<usize> = (0..n).collect();
    let mut data = Vec::new();
    for chunk in idx.chunks(batch_size.max(1)) {
        let x: Tensor<T> = gather_images(split, chunk)?;
        let f = network.extract_features(&x, layer_k)?;
        data.extend(f.data().iter().map(|v| v.f64() as f32));
    }
    let dim = data.len() / n;
    let labels = (0..n).map(|i| split.label(i)).collect();
    FeatureStore::new(Tensor::new(vec![n, dim], data)?, labels, layer_k, source)
}

pub fn sq_euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Database indices by ascending euclidean distance, ties by index.
pub fn rank(store: &FeatureStore, query: &[f32]) -> Result<Vec<usize>> {
    Ok(rank_with_distances(store, query)?.into_iter().map(|(_, i)| i).collect())
}

/// `(squared distance, index)` pairs in ranking order.
pub fn rank_with_distances(store: &FeatureStore, query: &[f32]) -> Result<Vec<(f64, usize)>> {
    if query.len() != store.dim() {
        return Err(Error::shape(
            "rank",
            format!("query has {} features, store {}", query.len(), store.dim()),
        ));
    }
    let mut scored: Vec<(f64, usize)> = (0..store.len()).map(|i| (sq_euclidean(store.row(i), query), i)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored)
}

/// `Σ P_i (R_i − R_{i−1})` over the ranked relevance list. `None` when
/// `total_relevant` is zero.
pub fn average_precision(relevance: &[bool], total_relevant: usize) -> Option<f64> {
    if total_relevant == 0 {
        return None;
    }
    let total = total_relevant as f64;
    let mut hits = 0usize;
    let mut recall_prev = 0.0;
    let mut aps = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        hits += rel as usize;
        let precision = hits as f64 / (i + 1) as f64;
        let recall = hits as f64 / total;
        aps += precision * (recall - recall_prev);
        recall_prev = recall;
    }
    Some(aps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub per_query_aps: Vec<f64>,
    pub map: f64,
    pub layer_k: usize,
    pub num_queries: usize,
    /// Queries whose label never occurs in the database.
    pub skipped: usize,
    /// Ranking depth (database size).
    pub depth: usize,
}

/// mAP of `queries` against `db` with the full database as ranking depth.
pub fn evaluate_stores(db: &FeatureStore, queries: &FeatureStore) -> Result<RetrievalReport> {
    if db.is_empty() || queries.is_empty() {
        return Err(Error::EmptyDataset("retrieval"));
    }
    let max_label = db.labels.iter().chain(&queries.labels).max().copied().unwrap_or(0);
    let mut per_label = vec![0usize; max_label + 1];
    for &l in &db.labels {
        per_label[l] += 1;
    }
    let mut aps = Vec::with_capacity(queries.len());
    let mut skipped = 0;
    for q in 0..queries.len() {
        let label = queries.labels[q];
        let order = rank(db, queries.row(q))?;
        let relevance: Vec<bool> = order.iter().map(|&i| db.labels[i] == label).collect();
        match average_precision(&relevance, per_label[label]) {
            Some(a) => aps.push(a),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} queries have no relevant database item and were skipped");
    }
    if aps.is_empty() {
        return Err(Error::EmptyDataset("retrieval queries with a relevant item"));
    }
    let map = aps.iter().sum::<f64>() / aps.len() as f64;
    Ok(RetrievalReport {
        num_queries: queries.len(),
        map,
        per_query_aps: aps,
        layer_k: db.layer_k,
        skipped,
        depth: db.len(),
    })
}

pub fn evaluate_map<T: Real>(
    network: &Network<T>,
    db_split: &dyn SampleSource,
    query_split: &dyn SampleSource,
    layer_k: usize,
    batch_size: usize,
) -> Result<RetrievalReport> {
    let db = build_store(network, db_split, layer_k, batch_size, "database")?;
    let queries = build_store(network, query_split, layer_k, batch_size, "queries")?;
    evaluate_stores(&db, &queries)
}

/// Which images form the retrieval database for test queries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Database {
    #[default]
    TrainValidation,
    TrainOnly,
}

impl Database {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train+validation" => Ok(Database::TrainValidation),
            "train" => Ok(Database::TrainOnly),
            _ => Err(Error::Config(format!("unknown database {s:?} (train+validation|train)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Database::TrainValidation => "train+validation",
            Database::TrainOnly => "train",
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerResult {
    pub layer_k: usize,
    pub validation_map: f64,
    pub train: TrainReport,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub best_layer_k: usize,
    pub layers: Vec<LayerResult>,
    pub test: RetrievalReport,
}

/// Runs the protocol for every cut `k`, picks the cut with the best
/// validation mAP (validation queries against the training store, smallest k
/// on ties) and reports test mAP for that cut only.
#[allow(clippy::too_many_arguments)]
pub fn layer_sweep<T: Real>(
    train: &dyn SampleSource,
    validation: &dyn SampleSource,
    test: &dyn SampleSource,
    regime: RegimeSpec,
    mode: PretrainMode,
    cfg: &ProtocolConfig,
    database: Database,
    seed: u64,
) -> Result<SweepOutcome> {
    let (base, _) = prepare_base::<T>(train, mode, cfg, seed)?;
    sweep_from_base(&base, train, validation, test, regime, cfg, database, seed)
}

/// [`layer_sweep`] starting from an already built (and possibly
/// pre-trained) network.
#[allow(clippy::too_many_arguments)]
pub fn sweep_from_base<T: Real>(
    base: &Network<T>,
    train: &dyn SampleSource,
    validation: &dyn SampleSource,
    test: &dyn SampleSource,
    regime: RegimeSpec,
    cfg: &ProtocolConfig,
    database: Database,
    seed: u64,
) -> Result<SweepOutcome> {
    let batch = cfg.sgd.eval_batch_size;
    let mut layers = Vec::new();
    let mut best: Option<(usize, f64, Network<T>)> = None;
    for k in 1..=base.config().num_blocks() {
        let (net, report) = finetune_cut(base, train, validation, regime, k, cfg, seed)?;
        let val = evaluate_map(&net, train, validation, k, batch)?;
        log::info!("layer {k}: validation mAP {:.4}", val.map);
        if best.as_ref().is_none_or(|(_, m, _)| val.map > *m) {
            best = Some((k, val.map, net));
        }
        layers.push(LayerResult {
            layer_k: k,
            validation_map: val.map,
            train: report,
        });
    }
    let (best_k, _, net) = best.ok_or_else(|| Error::Network("network has no blocks".into()))?;
    let test = match database {
        Database::TrainValidation => evaluate_map(&net, &Concat::new(train, validation)?, test, best_k, batch)?,
        Database::TrainOnly => evaluate_map(&net, train, test, best_k, batch)?,
    };
    Ok(SweepOutcome {
        best_layer_k: best_k,
        layers,
        test,
    })
}

/// One line of a results table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub regime: u32,
    pub mode: PretrainMode,
    pub map: MeanInterval,
    /// Selected layer per seed.
    pub layers: Vec<usize>,
}

/// Text table with columns Regime, Pre-train, mAP (%) and Layer.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:<10} {:<18} Layer", "Regime", "Pre-train", "mAP (%)");
    for r in rows {
        let map = match r.map.half_width {
            Some(h) => format!("{:.2} ± {:.2}", 100.0 * r.map.mean, 100.0 * h),
            None => format!("{:.2}", 100.0 * r.map.mean),
        };
        let layer = most_common(&r.layers).map_or_else(|| "-".to_string(), |k| k.to_string());
        let _ = writeln!(out, "{:<8} {:<10} {:<18} {}", format!("{}%", r.regime), r.mode.label(), map, layer);
    }
    out
}

/// Most frequent value, smallest on ties.
fn most_common(values: &[usize]) -> Option<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(usize, usize)> = None;
    for chunk in sorted.chunk_by(|a, b| a == b) {
        if best.is_none_or(|(_, c)| chunk.len() > c) {
            best = Some((chunk[0], chunk.len()));
        }
    }
    best.map(|(v, _)| v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn store(rows: &[&[f32]], labels: &[usize]) -> FeatureStore {
        let dim = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        FeatureStore::new(Tensor::new(vec![rows.len(), dim], data).unwrap(), labels.to_vec(), 1, "t").unwrap()
    }

    #[test]
    fn aps_examples() {
        assert_eq!(average_precision(&[true, true], 2), Some(1.0));
        let a = average_precision(&[true, false, true], 2).unwrap();
        assert!((a - (0.5 + 2.0 / 3.0 * 0.5)).abs() < 1e-15);
        assert_eq!(average_precision(&[false, false], 2), Some(0.0));
        assert_eq!(average_precision(&[false, false], 0), None);
    }

    #[test]
    fn rank_basics() {
        let s = store(&[&[0.0, 0.0], &[3.0, 0.0]], &[0, 1]);
        assert_eq!(rank(&s, &[2.9, 0.0]).unwrap(), vec![1, 0]);
        assert_eq!(rank(&s, &[0.0, 0.0]).unwrap()[0], 0);
        // equidistant: index order
        assert_eq!(rank(&s, &[1.5, 0.0]).unwrap(), vec![0, 1]);
        assert!(rank(&s, &[1.0]).is_err());
    }

    #[test]
    fn separated_classes_give_perfect_map() {
        let db = store(&[&[0.0], &[0.1], &[5.0], &[5.2]], &[0, 0, 1, 1]);
        let q = store(&[&[0.05], &[5.1]], &[0, 1]);
        let r = evaluate_stores(&db, &q).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.depth, 4);
    }

    #[test]
    fn single_match() {
        let db = store(&[&[1.0, 2.0]], &[3]);
        let r = evaluate_stores(&db, &db).unwrap();
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn query_without_relevant_items_is_skipped() {
        let db = store(&[&[0.0], &[1.0]], &[0, 0]);
        let q = store(&[&[0.0], &[1.0]], &[0, 1]);
        let r = evaluate_stores(&db, &q).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.per_query_aps.len(), 1);
        assert_eq!(r.num_queries, 2);
    }

    #[test]
    fn random_features_near_class_prior() {
        let mut rng = Rng::new(11);
        let n = 600;
        let rows: Vec<Vec<f32>> = (0..n).map(|_| (0..8).map(|_| rng.normal() as f32).collect()).collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let db = store(&refs, &labels);
        let r = evaluate_stores(&db, &db).unwrap();
        // the query itself sits at rank 1 and lifts APS a little
        assert!((r.map - 0.5).abs() < 0.05, "mAP {}", r.map);
    }

    #[test]
    fn nan_features_rejected() {
        let t = Tensor::new(vec![1, 1], vec![f32::NAN]).unwrap();
        assert!(FeatureStore::new(t, vec![0], 1, "x").is_err());
    }

    #[test]
    fn table_has_expected_columns() {
        let rows = [SummaryRow {
            regime: 1,
            mode: PretrainMode::Hpca,
            map: MeanInterval {
                mean: 0.1781,
                half_width: Some(0.0012),
                n: 5,
            },
            layers: vec![3, 3, 2, 3, 4],
        }];
        let t = format_table(&rows);
        let mut lines = t.lines();
        let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["Regime", "Pre-train", "mAP", "(%)", "Layer"]);
        let row: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
        assert_eq!(row, ["1%", "HPCA", "17.81", "±", "0.12", "3"]);
    }

    #[test]
    fn most_common_prefers_smallest() {
        assert_eq!(most_common(&[4, 2, 4, 2]), Some(2));
        assert_eq!(most_common(&[]), None);
    }

    proptest! {
        #[test]
        fn rank_is_sorted_permutation(
            pts in proptest::collection::vec(proptest::collection::vec(-10.0f32..10.0, 3), 1..40),
            q in proptest::collection::vec(-10.0f32..10.0, 3),
        ) {
            let refs: Vec<&[f32]> = pts.iter().map(|r| r.as_slice()).collect();
            let s = store(&refs, &vec![0; pts.len()]);
            let order = rank_with_distances(&s, &q).unwrap();
            let mut seen: Vec<usize> = order.iter().map(|p| p.1).collect();
            seen.sort_unstable();
            prop_assert!(seen.iter().enumerate().all(|(i, &v)| i == v));
            prop_assert!(order.windows(2).all(|w| w[0].0 <= w[1].0));
        }

        #[test]
        fn aps_in_unit_interval_and_one_iff_front_loaded(rel in proptest::collection::vec(any::<bool>(), 1..60)) {
            let total = rel.iter().filter(|&&r| r).count();
            if let Some(a) = average_precision(&rel, total) {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
                let front = rel.iter().take(total).all(|&r| r);
                prop_assert_eq!((a - 1.0).abs() < 1e-12, front);
            }
        }
    }
}
