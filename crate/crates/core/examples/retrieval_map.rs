//! Brute-force retrieval and mAP on random features with label-dependent
//! offsets: more separation gives higher mAP.
//!
//!     cargo run --release --example retrieval_map

use hebb_cbir::retrieval::{average_precision, evaluate_stores, rank_with_distances, FeatureStore};
use hebb_cbir::{Rng, Tensor};

fn store(rng: &mut Rng, n: usize, dim: usize, separation: f64) -> hebb_cbir::Result<FeatureStore> {
    let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let data = labels
        .iter()
        .flat_map(|&l| (0..dim).map(|j| (rng.normal() + if j == l { separation } else { 0.0 }) as f32).collect::<Vec<_>>())
        .collect();
    FeatureStore::new(Tensor::new(vec![n, dim], data)?, labels, 1, "random")
}

fn main() -> hebb_cbir::Result<()> {
    // AP of a single ranked list: relevant at ranks 1, 3 and 6.
    let rel = [true, false, true, false, false, true];
    println!("AP of {rel:?} = {:.4}", average_precision(&rel, 3).unwrap());

    let mut rng = Rng::new(5);
    for sep in [0.0, 1.0, 2.0, 4.0] {
        let db = store(&mut rng, 400, 8, sep)?;
        let q = store(&mut rng, 100, 8, sep)?;
        let r = evaluate_stores(&db, &q)?;
        println!("separation {sep}: mAP {:.4} over {} queries (depth {})", r.map, r.per_query_aps.len(), r.depth);
    }

    let db = store(&mut rng, 400, 8, 3.0)?;
    let top: Vec<_> = rank_with_distances(&db, db.row(0))?.into_iter().take(5).collect();
    println!("nearest to item 0: {top:?}");
    Ok(())
}
