//! Nonlinear Hebbian PCA.
//!
//! For a layer with weight rows `w_1..w_M`, input `x` and outputs
//! `y_i = w_iᵀx`, each neuron moves along
//!
//! ```text
//! Δw_i = η · f(y_i) · (x − Σ_{j≤i} f(y_j) · w_j)
//! ```
//!
//! which lowers the representation error `½‖x − Σ_{j≤i} f(y_j) w_j‖²` of the
//! first `i` neurons. With `f` linear and one neuron this is Oja's rule; with
//! several it is Sanger's. Neuron order is the weight-row order.
//!
//! The rule is local: a layer's update depends only on its own input and
//! output, so [`pretrain`] runs a plain eval-mode forward pass per batch and
//! updates every internal layer from its cached input. Labels are never read.

use crate::data::{gather_images, SampleSource};
use crate::error::{Error, Result};
use crate::network::{Layer, LayerParams, Network};
use crate::rng::Rng;
use crate::tensor::{dot, im2col, matmul_nt, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Activation::Relu => y.max(0.0),
            Activation::Linear => y,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            _ => Err(Error::Config(format!("unknown activation {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HpcaConfig {
    pub eta: f64,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    /// Treat the bias as a weight on a constant unit input.
    pub train_biases: bool,
    /// Also pre-train dense internal layers (not only convolutions).
    pub include_dense: bool,
}

impl Default for HpcaConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            activation: Activation::Relu,
            epochs: 20,
            batch_size: 64,
            train_biases: false,
            include_dense: true,
        }
    }
}

impl HpcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("hpca eta must be > 0, got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("hpca batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch monitoring of one pre-trained layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HpcaLayerStats {
    /// Index into the network's layer list.
    pub layer: usize,
    /// Mean representation error over each epoch's samples (before each update).
    pub representation_error: Vec<f64>,
    /// L2 norm of every neuron's weight vector at the end of each epoch.
    pub weight_norms: Vec<Vec<f64>>,
}

fn check_dims<T: Real>(weights: &Tensor<T>, d: usize, op: &'static str) -> Result<(usize, usize)> {
    let (m, wd) = weights.dims2(op)?;
    if wd != d {
        return Err(Error::shape(op, format!("weights have {wd} inputs, sample has {d}")));
    }
    Ok((m, wd))
}

/// Unscaled single-sample update `f(y_i)(x − Σ_{j≤i} f(y_j) w_j)` for every
/// row, using a running reconstruction so the cost is `O(M·D)`.
pub fn hpca_delta<T: Real>(weights: &Tensor<T>, x: &[T], activation: Activation) -> Result<Tensor<T>> {
    let (m, d) = check_dims(weights, x.len(), "hpca_delta")?;
    let mut recon = vec![0.0f64; d];
    let mut out = Vec::with_capacity(m * d);
    for w in weights.rows() {
        let fy = activation.apply(dot(w, x));
        for (r, &wv) in recon.iter_mut().zip(w) {
            *r += fy * wv.f64();
        }
        out.extend(x.iter().zip(&recon).map(|(&xv, &r)| T::of(fy * (xv.f64() - r))));
    }
    Tensor::new(vec![m, d], out)
}

/// Mean of [`hpca_delta`] over the rows of `samples: [P, D]`, all computed
/// from the same weights. Uses the matrix form
/// `(Fᵀ X − tril(Fᵀ F) W) / P` with `F = f(X Wᵀ)`.
pub fn hpca_mean_delta<T: Real>(
    weights: &Tensor<T>,
    samples: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<f64>> {
    let (p, d) = samples.dims2("hpca_mean_delta")?;
    let (m, _) = check_dims(weights, d, "hpca_mean_delta")?;
    let f = outputs(weights, samples, activation)?; // [P, M] f64
    let ft = f.transpose()?; // [M, P]
    let xt = samples.cast::<f64>().transpose()?; // [D, P]
    let hebb = matmul_nt(&ft, &xt)?; // [M, D]
    let gram = matmul_nt(&ft, &ft)?; // [M, M]
    let w = weights.cast::<f64>();
    let mut out = hebb.into_data();
    let g = gram.data();
    let scale = 1.0 / p as f64;
    for i in 0..m {
        let row = &mut out[i * d..(i + 1) * d];
        for j in 0..=i {
            let c = g[i * m + j];
            if c != 0.0 {
                for (o, &wv) in row.iter_mut().zip(w.row(j)) {
                    *o -= c * wv;
                }
            }
        }
        for o in row.iter_mut() {
            *o *= scale;
        }
    }
    Tensor::new(vec![m, d], out)
}

/// `f(samples · weightsᵀ)` in f64.
fn outputs<T: Real>(weights: &Tensor<T>, samples: &Tensor<T>, activation: Activation) -> Result<Tensor<f64>> {
    let y = matmul_nt(&samples.cast::<f64>(), &weights.cast::<f64>())?;
    Ok(Tensor::from_fn(y.shape(), |i| activation.apply(y.data()[i])))
}

/// Batch mean of `½‖x − Σ_{j=1}^{M} f(y_j) w_j‖²`.
pub fn representation_error<T: Real>(
    weights: &Tensor<T>,
    samples: &Tensor<T>,
    activation: Activation,
) -> Result<f64> {
    let (p, d) = samples.dims2("representation_error")?;
    check_dims(weights, d, "representation_error")?;
    let f = outputs(weights, samples, activation)?; // [P, M]
    let recon = matmul_nt(&f, &weights.cast::<f64>().transpose()?)?; // [P, D]
    let total: f64 = samples
        .data()
        .iter()
        .zip(recon.data())
        .map(|(&x, &r)| (x.f64() - r).powi(2))
        .sum();
    Ok(0.5 * total / p as f64)
}

/// Appends a constant 1 column (bias input).
fn with_unit_column<T: Real>(samples: &Tensor<T>) -> Result<Tensor<T>> {
    let (p, d) = samples.dims2("with_unit_column")?;
    let mut out = Vec::with_capacity(p * (d + 1));
    for r in samples.rows() {
        out.extend_from_slice(r);
        out.push(T::one());
    }
    Tensor::new(vec![p, d + 1], out)
}

/// Applies `eta · mean delta` to `params` given flattened input vectors.
/// Returns the representation error measured before the update.
fn update_from_samples<T: Real>(
    params: &mut LayerParams<T>,
    samples: &Tensor<T>,
    cfg: &HpcaConfig,
) -> Result<f64> {
    let m = params.weights.shape()[0];
    let d = params.weights.len() / m;
    let flat = Tensor::new(vec![m, d], params.weights.data().to_vec())?;
    if cfg.train_biases {
        let mut aug = Vec::with_capacity(m * (d + 1));
        for (row, &b) in flat.rows().zip(params.bias.data()) {
            aug.extend_from_slice(row);
            aug.push(b);
        }
        let aug = Tensor::new(vec![m, d + 1], aug)?;
        let xs = with_unit_column(samples)?;
        let err = representation_error(&aug, &xs, cfg.activation)?;
        let delta = hpca_mean_delta(&aug, &xs, cfg.activation)?;
        for i in 0..m {
            let drow = delta.row(i);
            for (wv, dv) in params.weights.data_mut()[i * d..(i + 1) * d].iter_mut().zip(drow) {
                *wv = T::of(wv.f64() + cfg.eta * dv);
            }
            let b = &mut params.bias.data_mut()[i];
            *b = T::of(b.f64() + cfg.eta * drow[d]);
        }
        Ok(err)
    } else {
        let err = representation_error(&flat, samples, cfg.activation)?;
        let delta = hpca_mean_delta(&flat, samples, cfg.activation)?;
        for (wv, dv) in params.weights.data_mut().iter_mut().zip(delta.data()) {
            *wv = T::of(wv.f64() + cfg.eta * dv);
        }
        Ok(err)
    }
}

/// `weights += eta · mean_n hpca_delta(weights, batch[n])` for a dense layer.
/// Biases change only with `train_biases`. Returns the pre-update
/// representation error of the batch.
pub fn hpca_update_dense<T: Real>(layer: &mut Layer<T>, batch: &Tensor<T>, cfg: &HpcaConfig) -> Result<f64> {
    cfg.validate()?;
    match layer {
        Layer::Dense { params } => update_from_samples(params, batch, cfg),
        _ => Err(Error::Network("hpca_update_dense needs a dense layer".into())),
    }
}

/// Patch-wise rule for a convolution: every receptive field of every image is
/// one input vector, the flattened kernels are the neurons.
pub fn hpca_update_conv<T: Real>(layer: &mut Layer<T>, input: &Tensor<T>, cfg: &HpcaConfig) -> Result<f64> {
    cfg.validate()?;
    match layer {
        Layer::Conv {
            params,
            stride,
            padding,
        } => {
            let [_, _, kh, kw] = params.weights.shape()[..] else {
                return Err(Error::shape("hpca_update_conv", "kernel tensor must be 4-D"));
            };
            let patches = im2col(input, kh, kw, *stride, *padding)?;
            update_from_samples(params, &patches, cfg)
        }
        _ => Err(Error::Network("hpca_update_conv needs a convolutional layer".into())),
    }
}

fn neuron_norms<T: Real>(layer: &Layer<T>) -> Vec<f64> {
    layer
        .params()
        .map(|p| {
            p.weights
                .rows()
                .map(|r| r.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt())
                .collect()
        })
        .unwrap_or_default()
}

/// Indices of layers that receive HPCA updates under `cfg`.
pub fn hpca_layers<T: Real>(network: &Network<T>, cfg: &HpcaConfig) -> Vec<usize> {
    network
        .internal_trainable()
        .into_iter()
        .filter(|&i| match network.layers()[i] {
            Layer::Conv { .. } => true,
            Layer::Dense { .. } => cfg.include_dense,
            _ => false,
        })
        .collect()
}

/// Unsupervised pre-training of every internal layer over `source`.
///
/// Each epoch reshuffles the images with `rng`; each mini-batch is propagated
/// once in eval mode and every selected layer is updated from its own cached
/// input, so all layers see the same pre-update upstream weights.
pub fn pretrain<T: Real>(
    network: &mut Network<T>,
    source: &dyn SampleSource,
    cfg: &HpcaConfig,
    rng: &mut Rng,
) -> Result<Vec<HpcaLayerStats>> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyDataset("hpca pre-training"));
    }
    let targets = hpca_layers(network, cfg);
    let mut stats: Vec<HpcaLayerStats> = targets
        .iter()
        .map(|&layer| HpcaLayerStats {
            layer,
            representation_error: Vec::new(),
            weight_norms: Vec::new(),
        })
        .collect();
    for epoch in 0..cfg.epochs {
        let order = rng.permutation(source.len());
        let mut err_sum = vec![0.0f64; targets.len()];
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Tensor<T> = gather_images(source, batch_idx)?;
            let (_, trace) = network.forward(&batch, false, rng)?;
            let mut updated = Vec::with_capacity(targets.len());
            for (t, &li) in targets.iter().enumerate() {
                let mut layer = network.layers()[li].clone();
                let input = trace.input(li);
                let err = match layer {
                    Layer::Conv { .. } => hpca_update_conv(&mut layer, input, cfg)?,
                    _ => hpca_update_dense(&mut layer, input, cfg)?,
                };
                err_sum[t] += err * batch_idx.len() as f64;
                updated.push(layer);
            }
            for (&li, layer) in targets.iter().zip(updated) {
                network.layers_mut()[li] = layer;
            }
        }
        for (t, s) in stats.iter_mut().enumerate() {
            let err = err_sum[t] / source.len() as f64;
            if !err.is_finite() {
                return Err(Error::NonFinite { op: "hpca pretrain" });
            }
            s.representation_error.push(err);
            s.weight_norms.push(neuron_norms(&network.layers()[s.layer]));
        }
        log::debug!("hpca epoch {} errors {:?}", epoch + 1, stats.iter().map(|s| s.representation_error[epoch]).collect::<Vec<_>>());
    }
    for s in &stats {
        if let (Some(first), Some(last)) = (s.representation_error.first(), s.representation_error.last()) {
            if last > first {
                log::warn!(
                    "layer {}: representation error rose from {first:.6} to {last:.6} during pre-training",
                    s.layer
                );
            }
        }
    }
    Ok(stats)
}
