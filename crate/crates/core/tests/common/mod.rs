#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::BTreeSet;

use hebb_cbir::data::synthetic::{generate, SyntheticSpec};
use hebb_cbir::data::{Dataset, SampleSource};
use hebb_cbir::hebbian::{hpca_update_dense, Activation, HpcaConfig};
use hebb_cbir::network::{Layer, LayerParams, Network};
use hebb_cbir::rng::Rng;
use hebb_cbir::tensor::{softmax_cross_entropy, xavier_init};
use hebb_cbir::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};

/// Zero-mean Gaussian samples with covariance `Q diag(eigs) Qᵀ`, `Q` a seeded
/// random rotation. Returns `(samples [n, d], Q)` with eigenvector columns.
pub fn gaussian_with_spectrum(eigs: &[f64], n: usize, seed: u64) -> (Tensor<f64>, DMatrix<f64>) {
    let d = eigs.len();
    let mut rng = Rng::new(seed);
    let g = DMatrix::from_fn(d, d, |_, _| rng.normal());
    let q = g.qr().q();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let z: Vec<f64> = eigs.iter().map(|l| l.sqrt() * rng.normal()).collect();
        for r in 0..d {
            data.push((0..d).map(|c| q[(r, c)] * z[c]).sum());
        }
    }
    (Tensor::new(vec![n, d], data).unwrap(), q)
}

/// Eigenvectors of the sample covariance, columns sorted by decreasing eigenvalue.
pub fn top_eigenvectors(samples: &Tensor<f64>, k: usize) -> DMatrix<f64> {
    let (n, d) = (samples.shape()[0], samples.shape()[1]);
    let x = DMatrix::from_row_slice(n, d, samples.data());
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    DMatrix::from_fn(d, k, |r, c| eig.eigenvectors[(r, order[c])])
}

/// Cosines of the principal angles between the column spans of `a` and `b`.
pub fn principal_angle_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let m = qa.transpose() * qb;
    let mut s: Vec<f64> = m.svd(false, false).singular_values.iter().cloned().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Weight rows as columns of a matrix.
pub fn rows_as_columns(w: &Tensor<f64>) -> DMatrix<f64> {
    let (m, d) = (w.shape()[0], w.shape()[1]);
    DMatrix::from_fn(d, m, |r, c| w.data()[c * d + r])
}

pub fn halving_spectrum(d: usize, top: f64) -> Vec<f64> {
    (0..d).map(|i| top / 2f64.powi(i as i32)).collect()
}

/// Per-sample (batch size 1) linear HPCA from a Xavier start, η = 1e-3.
pub fn online_hpca(samples: &Tensor<f64>, neurons: usize, epochs: usize, seed: u64) -> Tensor<f64> {
    let (n, d) = (samples.shape()[0], samples.shape()[1]);
    let mut rng = Rng::new(seed);
    let mut layer = Layer::Dense {
        params: LayerParams {
            weights: xavier_init(&[neurons, d], &mut rng),
            bias: Tensor::zeros(&[neurons]),
        },
    };
    let cfg = HpcaConfig {
        eta: 1e-3,
        activation: Activation::Linear,
        ..Default::default()
    };
    for _ in 0..epochs {
        for i in rng.permutation(n) {
            let x = samples.slice_rows(i, 1).unwrap();
            hpca_update_dense(&mut layer, &x, &cfg).unwrap();
        }
    }
    layer.params().unwrap().weights.clone()
}

/// Mean cross-entropy of `net` on `(x, y)` in eval mode.
pub fn loss_of(net: &Network<f64>, x: &Tensor<f64>, y: &[usize]) -> f64 {
    softmax_cross_entropy(&net.infer(x).unwrap(), y).unwrap().0
}

/// Largest relative error between back-propagated and central-difference
/// gradients over every parameter, with `|a − n| / max(|a|, |n|, floor)`.
pub fn whole_network_gradient_error(net: &Network<f64>, x: &Tensor<f64>, y: &[usize], eps: f64, floor: f64) -> f64 {
    let (logits, trace) = net.forward(x, false, &mut Rng::new(0)).unwrap();
    let (_, g) = softmax_cross_entropy(&logits, y).unwrap();
    let grads = net.backward(&trace, &g).unwrap();
    let mut worst = 0.0f64;
    for (li, slot) in grads.0.iter().enumerate() {
        let Some(gp) = slot else { continue };
        for which in 0..2 {
            let analytic = if which == 0 { &gp.weights } else { &gp.bias };
            for j in 0..analytic.len() {
                let probe = |delta: f64| {
                    let mut n2 = net.clone();
                    let p = n2.layers_mut()[li].params_mut().unwrap();
                    let t = if which == 0 { &mut p.weights } else { &mut p.bias };
                    t.data_mut()[j] += delta;
                    loss_of(&n2, x, y)
                };
                let numeric = (probe(eps) - probe(-eps)) / (2.0 * eps);
                let a = analytic.data()[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

/// APS recomputed from scratch at every rank: `P_i`, `R_i` and `R_{i−1}` by
/// counting the relevant items of each prefix.
pub fn brute_force_aps(relevance: &[bool], total: usize) -> f64 {
    let count = |i: usize| relevance[..i].iter().filter(|&&r| r).count() as f64;
    let mut sum = 0.0;
    for i in 1..=relevance.len() {
        let p = count(i) / i as f64;
        let r = count(i) / total as f64;
        let r_prev = count(i - 1) / total as f64;
        sum += p * (r - r_prev);
    }
    sum
}

/// mAP by full enumeration: the rank of each database item is one plus the
/// number of items strictly closer (or equally close with a lower index), and
/// APS is the mean over relevant items of (relevant items ranked at or above
/// it) / (its rank).
pub fn enumeration_map(db: &[Vec<f64>], db_labels: &[usize], queries: &[Vec<f64>], q_labels: &[usize]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut total = 0.0;
    let mut counted = 0usize;
    for (q, &ql) in queries.iter().zip(q_labels) {
        let d: Vec<f64> = db.iter().map(|r| dist(r, q)).collect();
        let rank_of = |j: usize| 1 + (0..db.len()).filter(|&i| d[i] < d[j] || (d[i] == d[j] && i < j)).count();
        let relevant: Vec<usize> = (0..db.len()).filter(|&j| db_labels[j] == ql).collect();
        if relevant.is_empty() {
            continue;
        }
        let mut aps = 0.0;
        for &j in &relevant {
            let rj = rank_of(j);
            let above = relevant.iter().filter(|&&i| rank_of(i) <= rj).count();
            aps += above as f64 / rj as f64;
        }
        total += aps / relevant.len() as f64;
        counted += 1;
    }
    total / counted as f64
}

/// Small synthetic image set.
pub fn toy_images(classes: usize, per_class: usize, shape: [usize; 3], seed: u64) -> Dataset {
    generate(&SyntheticSpec {
        classes,
        per_class,
        shape,
        seed,
        ..Default::default()
    })
}

/// Source wrapper that records every index read.
pub struct CountingSource<'a> {
    pub inner: &'a dyn SampleSource,
    pub seen: RefCell<BTreeSet<usize>>,
}

impl<'a> CountingSource<'a> {
    pub fn new(inner: &'a dyn SampleSource) -> Self {
        Self {
            inner,
            seen: RefCell::new(BTreeSet::new()),
        }
    }
}

impl SampleSource for CountingSource<'_> {
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn image_shape(&self) -> [usize; 3] {
        self.inner.image_shape()
    }
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn write_image(&self, i: usize, out: &mut [f32]) {
        self.seen.borrow_mut().insert(i);
        self.inner.write_image(i, out)
    }
    fn label(&self, i: usize) -> usize {
        self.inner.label(i)
    }
}
