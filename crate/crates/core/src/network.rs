//! Layer-list networks with explicit forward traces and hand-written backward.
//!
//! A [`NetworkConfig`] is an ordered list of [`LayerSpec`]s ending in a dense
//! classifier, plus the indices that close each "deep layer" block. Cutting at
//! block `k` keeps everything up to that index and attaches a fresh classifier.
//!
//! The textual form used in run-config files separates blocks with `|`:
//!
//! ```text
//! conv(96,5,1,2) relu maxpool(2,2) | conv(128,3,1,1) relu maxpool(2,2) | ... | dropout(0.5) dense(10)
//! ```
//!
//! The group after the last `|` is the classifier head.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{
    conv2d_backward, conv2d_forward, conv_output_size, dropout_forward, linear_backward,
    linear_forward, maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward,
    xavier_init, PoolIndex, Real, Tensor,
};

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
    Dropout {
        rate: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// `(channels, height, width)` of one input image.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    /// Index (into `layers`) of the last layer of each deep block.
    pub cut_points: Vec<usize>,
}

impl NetworkConfig {
    /// Five deep layers plus a linear classifier, for 3×32×32 inputs.
    pub fn default_cifar(num_classes: usize) -> Self {
        use LayerSpec::*;
        let conv = |out_channels, kernel, padding| Conv {
            out_channels,
            kernel,
            stride: 1,
            padding,
        };
        let pool = MaxPool { size: 2, stride: 2 };
        let layers = vec![
            conv(96, 5, 2),
            Relu,
            pool.clone(), // 2
            conv(128, 3, 1),
            Relu,
            pool.clone(), // 5
            conv(192, 3, 1),
            Relu, // 7
            conv(256, 3, 1),
            Relu,
            pool, // 10
            Flatten,
            Dropout { rate: 0.5 },
            Dense { units: 300 },
            Relu, // 14
            Dropout { rate: 0.5 },
            Dense { units: num_classes },
        ];
        Self {
            input_shape: [3, 32, 32],
            num_classes,
            layers,
            cut_points: vec![2, 5, 7, 10, 14],
        }
    }

    /// Same topology as [`default_cifar`](Self::default_cifar) with narrow
    /// layers, for smoke runs.
    pub fn small_cifar(num_classes: usize) -> Self {
        let mut cfg = Self::default_cifar(num_classes);
        let widths = [12, 16, 24, 32];
        let mut w = widths.iter();
        for layer in &mut cfg.layers {
            match layer {
                LayerSpec::Conv { out_channels, .. } => *out_channels = *w.next().unwrap(),
                LayerSpec::Dense { units } if *units == 300 => *units = 64,
                _ => {}
            }
        }
        cfg
    }

    pub fn num_blocks(&self) -> usize {
        self.cut_points.len()
    }

    /// Per-layer output shapes (without the batch dimension).
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let err = |msg: String| Error::Network(format!("layer {i} ({spec}): {msg}"));
            shape = match (spec, shape.as_slice()) {
                (
                    LayerSpec::Conv {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    &[_, h, w],
                ) => {
                    if *out_channels == 0 {
                        return Err(err("zero output channels".into()));
                    }
                    let oh = conv_output_size(h, *kernel, *stride, *padding).map_err(|e| err(e.to_string()))?;
                    let ow = conv_output_size(w, *kernel, *stride, *padding).map_err(|e| err(e.to_string()))?;
                    vec![*out_channels, oh, ow]
                }
                (LayerSpec::MaxPool { size, stride }, &[c, h, w]) => {
                    if *size == 0 || *size > h || *size > w {
                        return Err(err(format!("pool window {size} larger than {h}x{w}")));
                    }
                    let oh = conv_output_size(h, *size, *stride, 0).map_err(|e| err(e.to_string()))?;
                    let ow = conv_output_size(w, *size, *stride, 0).map_err(|e| err(e.to_string()))?;
                    vec![c, oh, ow]
                }
                (LayerSpec::Flatten, s) => vec![s.iter().product()],
                (LayerSpec::Dense { units }, &[_]) => {
                    if *units == 0 {
                        return Err(err("zero units".into()));
                    }
                    vec![*units]
                }
                (LayerSpec::Relu, s) => s.to_vec(),
                (LayerSpec::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(err(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    s.to_vec()
                }
                (_, s) => return Err(err(format!("incompatible input shape {s:?}"))),
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.contains(&0) {
            return Err(Error::Network("zero-sized input".into()));
        }
        let shapes = self.shapes()?;
        let last = self.layers.len().checked_sub(1).ok_or_else(|| Error::Network("no layers".into()))?;
        match self.layers[last] {
            LayerSpec::Dense { units } if units == self.num_classes => {}
            _ => {
                return Err(Error::Network(format!(
                    "final layer must be dense({}) classifier",
                    self.num_classes
                )))
            }
        }
        if self.cut_points.is_empty() {
            return Err(Error::Network("at least one cut point required".into()));
        }
        if self.cut_points.windows(2).any(|w| w[0] >= w[1]) || self.cut_points[self.cut_points.len() - 1] >= last {
            return Err(Error::Network(format!(
                "cut points {:?} must increase and precede the classifier",
                self.cut_points
            )));
        }
        Ok(shapes)
    }

    /// Flattened feature size at the end of block `k` (1-based).
    pub fn feature_dim(&self, k: usize) -> Result<usize> {
        let idx = self.cut_index(k)?;
        Ok(self.shapes()?[idx].iter().product())
    }

    fn cut_index(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.cut_points.len() {
            return Err(Error::Network(format!(
                "layer {k} outside 1..={}",
                self.cut_points.len()
            )));
        }
        Ok(self.cut_points[k - 1])
    }

    /// Config of the network cut after block `k` with a new classifier.
    pub fn cut(&self, k: usize, num_classes: usize, dropout: f64) -> Result<NetworkConfig> {
        let idx = self.cut_index(k)?;
        let shapes = self.shapes()?;
        let mut layers = self.layers[..=idx].to_vec();
        if shapes[idx].len() != 1 {
            layers.push(LayerSpec::Flatten);
        }
        layers.push(LayerSpec::Dropout { rate: dropout });
        layers.push(LayerSpec::Dense { units: num_classes });
        let cfg = NetworkConfig {
            input_shape: self.input_shape,
            num_classes,
            layers,
            cut_points: self.cut_points[..k].to_vec(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => write!(f, "conv({out_channels},{kernel},{stride},{padding})"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::MaxPool { size, stride } => write!(f, "maxpool({size},{stride})"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::Dense { units } => write!(f, "dense({units})"),
            LayerSpec::Dropout { rate } => write!(f, "dropout({rate})"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], &s[open + 1..s.len() - 1]),
            Some(_) => return Err(Error::Parse(format!("unbalanced layer spec {s:?}"))),
            None => (s, ""),
        };
        let nums: Vec<&str> = if args.is_empty() {
            vec![]
        } else {
            args.split(',').map(str::trim).collect()
        };
        let int = |i: usize| -> Result<usize> {
            nums.get(i)
                .ok_or_else(|| Error::Parse(format!("{s:?}: missing argument {i}")))?
                .parse()
                .map_err(|_| Error::Parse(format!("{s:?}: bad integer argument")))
        };
        let arity = |n: usize| -> Result<()> {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!("{s:?}: expected {n} arguments")))
            }
        };
        match name {
            "conv" => {
                arity(4)?;
                Ok(LayerSpec::Conv {
                    out_channels: int(0)?,
                    kernel: int(1)?,
                    stride: int(2)?,
                    padding: int(3)?,
                })
            }
            "relu" => arity(0).map(|_| LayerSpec::Relu),
            "flatten" => arity(0).map(|_| LayerSpec::Flatten),
            "maxpool" => {
                arity(2)?;
                Ok(LayerSpec::MaxPool {
                    size: int(0)?,
                    stride: int(1)?,
                })
            }
            "dense" => {
                arity(1)?;
                Ok(LayerSpec::Dense { units: int(0)? })
            }
            "dropout" => {
                arity(1)?;
                let rate = nums[0]
                    .parse()
                    .map_err(|_| Error::Parse(format!("{s:?}: bad rate")))?;
                Ok(LayerSpec::Dropout { rate })
            }
            _ => Err(Error::Parse(format!("unknown layer kind {name:?}"))),
        }
    }
}

impl fmt::Display for NetworkConfig {
    /// Layer list with `|` after each cut point. Input shape and class count
    /// are stored separately.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{layer}")?;
            if self.cut_points.contains(&i) {
                f.write_str(" |")?;
            }
        }
        Ok(())
    }
}

impl NetworkConfig {
    /// Parses the `|`-separated layer list; `num_classes` is taken from the
    /// final dense layer.
    pub fn parse(layers: &str, input_shape: [usize; 3]) -> Result<Self> {
        let mut specs = Vec::new();
        let mut cut_points = Vec::new();
        for block in layers.split('|') {
            let mut any = false;
            for token in split_tokens(block) {
                specs.push(token.parse::<LayerSpec>()?);
                any = true;
            }
            if !any {
                return Err(Error::Parse(format!("empty block in {layers:?}")));
            }
            cut_points.push(specs.len() - 1);
        }
        cut_points.pop();
        let num_classes = match specs.last() {
            Some(LayerSpec::Dense { units }) => *units,
            _ => return Err(Error::Network("final layer must be dense".into())),
        };
        let cfg = NetworkConfig {
            input_shape,
            num_classes,
            layers: specs,
            cut_points,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Whitespace-separated tokens, keeping parenthesized argument lists intact.
fn split_tokens(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0usize;
    for ch in s.chars() {
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch)
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(ch)
            }
            c if c.is_whitespace() && depth == 0 => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c if c.is_whitespace() => {}
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv {
        params: LayerParams<T>,
        stride: usize,
        padding: usize,
    },
    Dense {
        params: LayerParams<T>,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Dropout {
        rate: f64,
    },
}

impl<T: Real> Layer<T> {
    pub fn params(&self) -> Option<&LayerParams<T>> {
        match self {
            Layer::Conv { params, .. } | Layer::Dense { params } => Some(params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut LayerParams<T>> {
        match self {
            Layer::Conv { params, .. } | Layer::Dense { params } => Some(params),
            _ => None,
        }
    }
}

/// Per-layer parameter-shaped tensors (gradients, velocities), aligned with
/// the network's layer list; `None` for parameter-free layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T>(pub Vec<Option<LayerParams<T>>>);

impl<T: Real> ParamSet<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        ParamSet(
            net.layers
                .iter()
                .map(|l| {
                    l.params().map(|p| LayerParams {
                        weights: Tensor::zeros(p.weights.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect(),
        )
    }

    pub fn sq_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|p| p.weights.sq_norm() + p.bias.sq_norm())
            .sum()
    }
}

#[derive(Clone, Debug)]
enum Cache<T> {
    None,
    Pool(PoolIndex),
    Mask(Tensor<T>),
}

/// Everything backward needs: the input to every layer plus pool winners and
/// dropout masks.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    inputs: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Input tensor seen by layer `i`.
    pub fn input(&self, i: usize) -> &Tensor<T> {
        &self.inputs[i]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    config: NetworkConfig,
    layers: Vec<Layer<T>>,
}

impl<T: Real> Network<T> {
    /// Xavier-initialized weights, zero biases.
    pub fn build(config: NetworkConfig, rng: &mut Rng) -> Result<Self> {
        let shapes = config.validate()?;
        let mut layers = Vec::with_capacity(config.layers.len());
        for (i, spec) in config.layers.iter().enumerate() {
            let in_shape: &[usize] = if i == 0 { &config.input_shape } else { &shapes[i - 1] };
            layers.push(match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => Layer::Conv {
                    params: LayerParams {
                        weights: xavier_init(&[out_channels, in_shape[0], kernel, kernel], rng),
                        bias: Tensor::zeros(&[out_channels]),
                    },
                    stride,
                    padding,
                },
                LayerSpec::Dense { units } => Layer::Dense {
                    params: LayerParams {
                        weights: xavier_init(&[units, in_shape[0]], rng),
                        bias: Tensor::zeros(&[units]),
                    },
                },
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { size, stride } => Layer::MaxPool { size, stride },
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dropout { rate } => Layer::Dropout { rate },
            });
        }
        Ok(Self { config, layers })
    }

    /// Assembles a network from explicit parameters (checkpoint loading).
    pub fn from_parts(config: NetworkConfig, params: Vec<Option<LayerParams<T>>>) -> Result<Self> {
        let mut net = Self::build(config, &mut Rng::new(0))?;
        if params.len() != net.layers.len() {
            return Err(Error::Network(format!(
                "{} parameter slots for {} layers",
                params.len(),
                net.layers.len()
            )));
        }
        for (i, (layer, p)) in net.layers.iter_mut().zip(params).enumerate() {
            match (layer.params_mut(), p) {
                (Some(slot), Some(p)) => {
                    if slot.weights.shape() != p.weights.shape() || slot.bias.shape() != p.bias.shape() {
                        return Err(Error::Network(format!(
                            "layer {i}: parameter shapes {:?}/{:?} do not match config {:?}/{:?}",
                            p.weights.shape(),
                            p.bias.shape(),
                            slot.weights.shape(),
                            slot.bias.shape()
                        )));
                    }
                    *slot = p;
                }
                (None, None) => {}
                _ => return Err(Error::Network(format!("layer {i}: parameter presence mismatch"))),
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Index of the final classifier layer.
    pub fn classifier_index(&self) -> usize {
        self.layers.len() - 1
    }

    /// Conv and dense layers other than the classifier.
    pub fn internal_trainable(&self) -> Vec<usize> {
        (0..self.classifier_index())
            .filter(|&i| self.layers[i].params().is_some())
            .collect()
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        for (layer, spec) in self.layers.iter_mut().zip(self.config.layers.iter_mut()) {
            if let (Layer::Dropout { rate: r }, LayerSpec::Dropout { rate: s }) = (layer, spec) {
                *r = rate;
                *s = rate;
            }
        }
        Ok(())
    }

    pub fn params(&self) -> ParamSet<T> {
        ParamSet(self.layers.iter().map(|l| l.params().cloned()).collect())
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<usize> {
        let (n, c, h, w) = batch.dims4("network forward")?;
        if [c, h, w] != self.config.input_shape {
            return Err(Error::shape(
                "network forward",
                format!("input {:?}, expected [N, {:?}]", batch.shape(), self.config.input_shape),
            ));
        }
        Ok(n)
    }

    fn apply(
        &self,
        i: usize,
        x: &Tensor<T>,
        train: bool,
        rng: Option<&mut Rng>,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        Ok(match &self.layers[i] {
            Layer::Conv {
                params,
                stride,
                padding,
            } => (
                conv2d_forward(x, &params.weights, &params.bias, *stride, *padding)?,
                Cache::None,
            ),
            Layer::Dense { params } => (linear_forward(x, &params.weights, &params.bias)?, Cache::None),
            Layer::Relu => (relu_forward(x), Cache::None),
            Layer::MaxPool { size, stride } => {
                let (y, idx) = maxpool2d_forward(x, *size, *stride)?;
                (y, Cache::Pool(idx))
            }
            Layer::Flatten => {
                let n = x.shape()[0];
                (x.clone().reshape(&[n, x.len() / n])?, Cache::None)
            }
            Layer::Dropout { rate } => match rng {
                Some(rng) if train => {
                    let (y, mask) = dropout_forward(x, *rate, rng, true)?;
                    (y, Cache::Mask(mask))
                }
                _ => (x.clone(), Cache::None),
            },
        })
    }

    /// Full forward pass. Dropout is active only when `train` is set.
    pub fn forward(&self, batch: &Tensor<T>, train: bool, rng: &mut Rng) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for i in 0..self.layers.len() {
            let (y, cache) = self.apply(i, &x, train, Some(&mut *rng))?;
            inputs.push(x);
            caches.push(cache);
            x = y;
        }
        Ok((x, ForwardTrace { inputs, caches }))
    }

    /// Eval-mode forward pass returning logits only.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.run_until(batch, self.layers.len() - 1)
    }

    fn run_until(&self, batch: &Tensor<T>, last: usize) -> Result<Tensor<T>> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for i in 0..=last {
            x = self.apply(i, &x, false, None)?.0;
        }
        Ok(x)
    }

    /// Flattened eval-mode activations at the end of block `k` (1-based).
    pub fn extract_features(&self, batch: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
        let idx = self.config.cut_index(k)?;
        let x = self.run_until(batch, idx)?;
        let n = x.shape()[0];
        let f = x.len() / n;
        x.reshape(&[n, f])
    }

    pub fn backward(&self, trace: &ForwardTrace<T>, grad_logits: &Tensor<T>) -> Result<ParamSet<T>> {
        if trace.len() != self.layers.len() {
            return Err(Error::Network(format!(
                "trace has {} layers, network {}",
                trace.len(),
                self.layers.len()
            )));
        }
        let mut grads: Vec<Option<LayerParams<T>>> = vec![None; self.layers.len()];
        let mut g = grad_logits.clone();
        for i in (0..self.layers.len()).rev() {
            let input = &trace.inputs[i];
            g = match (&self.layers[i], &trace.caches[i]) {
                (
                    Layer::Conv {
                        params,
                        stride,
                        padding,
                    },
                    _,
                ) => {
                    let cg = conv2d_backward(&g, input, &params.weights, *stride, *padding)?;
                    grads[i] = Some(LayerParams {
                        weights: cg.weights,
                        bias: cg.bias,
                    });
                    cg.input
                }
                (Layer::Dense { params }, _) => {
                    let lg = linear_backward(&g, input, &params.weights)?;
                    grads[i] = Some(LayerParams {
                        weights: lg.weights,
                        bias: lg.bias,
                    });
                    lg.input
                }
                (Layer::Relu, _) => relu_backward(&g, input)?,
                (Layer::MaxPool { .. }, Cache::Pool(idx)) => maxpool2d_backward(&g, idx)?,
                (Layer::Flatten, _) => g.reshape(input.shape())?,
                (Layer::Dropout { .. }, Cache::Mask(mask)) => {
                    Tensor::from_fn(g.shape(), |j| g.data()[j] * mask.data()[j])
                }
                (Layer::Dropout { .. }, _) => g,
                (Layer::MaxPool { .. }, _) => {
                    return Err(Error::Network(format!("layer {i}: missing pool cache")))
                }
            };
        }
        Ok(ParamSet(grads))
    }

    /// Blocks `1..=k` (parameters copied) plus a fresh Xavier classifier.
    /// The source network is left untouched.
    pub fn cut_at(&self, k: usize, num_classes: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        let config = self.config.cut(k, num_classes, dropout)?;
        let fresh: Network<T> = Network::build(config.clone(), rng)?;
        let keep = self.config.cut_index(k)? + 1;
        let mut layers = self.layers[..keep].to_vec();
        layers.extend_from_slice(&fresh.layers[keep..]);
        Ok(Self { config, layers })
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv {
                        params,
                        stride,
                        padding,
                    } => Layer::Conv {
                        params: LayerParams {
                            weights: params.weights.cast(),
                            bias: params.bias.cast(),
                        },
                        stride: *stride,
                        padding: *padding,
                    },
                    Layer::Dense { params } => Layer::Dense {
                        params: LayerParams {
                            weights: params.weights.cast(),
                            bias: params.bias.cast(),
                        },
                    },
                    Layer::Relu => Layer::Relu,
                    Layer::MaxPool { size, stride } => Layer::MaxPool {
                        size: *size,
                        stride: *stride,
                    },
                    Layer::Flatten => Layer::Flatten,
                    Layer::Dropout { rate } => Layer::Dropout { rate: *rate },
                })
                .collect(),
        }
    }
}
