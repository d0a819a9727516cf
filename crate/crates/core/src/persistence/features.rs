use std::path::Path;

use super::{check_payload, push_f32s, read_container, read_f32s, write_container, Header};
use crate::error::{Error, Result};
use crate::retrieval::FeatureStore;
use crate::tensor::Tensor;

pub const FEATURES_MAGIC: &[u8; 8] = b"HEBBFEAT";

/// Header `n`, `f`, `layer`, `source`; payload `n` little-endian `u32`
/// labels followed by the `n × f` feature rows as `f32`.
pub fn save_features(path: &Path, store: &FeatureStore) -> Result<()> {
    if store.is_empty() {
        return Err(Error::EmptyDataset("feature store"));
    }
    let mut h = Header::default();
    h.push("n", store.len());
    h.push("f", store.dim());
    h.push("layer", store.layer_k);
    h.push("source", &store.source);
    let mut payload = Vec::with_capacity(4 * store.len() * (store.dim() + 1));
    for &l in store.labels() {
        payload.extend_from_slice(&(l as u32).to_le_bytes());
    }
    push_f32s(&mut payload, store.features().data());
    write_container(path, FEATURES_MAGIC, &h, &payload)
}

pub fn load_features(path: &Path) -> Result<FeatureStore> {
    let (h, payload) = read_container(path, FEATURES_MAGIC)?;
    let n: usize = h.parse("n")?;
    let f: usize = h.parse("f")?;
    if n == 0 || f == 0 {
        return Err(Error::Integrity(format!("feature store declares {n}×{f}")));
    }
    check_payload(&payload, 4 * n * (f + 1))?;
    let labels = payload[..4 * n]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let features = Tensor::new(vec![n, f], read_f32s(&payload[4 * n..]))?;
    FeatureStore::new(features, labels, h.parse("layer")?, h.require("source")?)
        .map_err(|e| Error::Integrity(e.to_string()))
}
