//! Image datasets, train/validation splitting and label-scarcity regimes.
//!
//! Images are kept as raw bytes and standardized on the fly with per-channel
//! statistics, so a 60k-image CIFAR archive costs ~180 MB instead of ~740 MB.

pub mod cifar;
mod regime;
pub mod synthetic;

pub use cifar::{load_cifar10, load_cifar100, write_cifar10, write_cifar100, CifarKind};
pub use regime::{make_regime, RegimeSpec, SplitIndex, REGIMES};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Read access to labeled images. Training and evaluation code only ever
/// touches data through this trait.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn image_shape(&self) -> [usize; 3];
    fn num_classes(&self) -> usize;
    /// Writes the normalized image `i` (CHW order) into `out`.
    fn write_image(&self, i: usize, out: &mut [f32]);
    fn label(&self, i: usize) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stacks images `indices` into an `[N, C, H, W]` tensor.
pub fn gather_images<T: Real>(src: &dyn SampleSource, indices: &[usize]) -> Result<Tensor<T>> {
    let [c, h, w] = src.image_shape();
    let per = c * h * w;
    let mut buf = vec![0f32; per];
    let mut data = Vec::with_capacity(indices.len() * per);
    for &i in indices {
        if i >= src.len() {
            return Err(Error::IndexOutOfBounds {
                op: "gather_images",
                index: i,
                len: src.len(),
            });
        }
        src.write_image(i, &mut buf);
        data.extend(buf.iter().map(|&v| T::of(v as f64)));
    }
    Tensor::new(vec![indices.len(), c, h, w], data)
}

pub fn gather_labels(src: &dyn SampleSource, indices: &[usize]) -> Vec<usize> {
    indices.iter().map(|&i| src.label(i)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "validation" | "val" => Ok(SplitTag::Validation),
            "test" => Ok(SplitTag::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

/// Per-channel standardization applied to `pixel / 255`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Statistics of `pixel / 255` over every image in `ds`.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset("normalization statistics"));
        }
        let [c, h, w] = ds.shape;
        let plane = h * w;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for img in ds.pixels.chunks_exact(c * plane) {
            for ch in 0..c {
                for &p in &img[ch * plane..(ch + 1) * plane] {
                    let v = p as f64 / 255.0;
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let count = (ds.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / count - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        Ok(Self { mean, std })
    }
}

/// Raw 8-bit images with labels and a normalization to apply on read.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub shape: [usize; 3],
    pub pixels: Vec<u8>,
    pub labels: Vec<usize>,
    /// CIFAR-100 coarse labels, kept only so files re-serialize exactly.
    pub coarse_labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub split: SplitTag,
    pub norm: Normalization,
}

impl Dataset {
    pub fn new(
        shape: [usize; 3],
        pixels: Vec<u8>,
        labels: Vec<usize>,
        num_classes: usize,
        split: SplitTag,
    ) -> Result<Self> {
        let per: usize = shape.iter().product();
        if per == 0 || pixels.len() != labels.len() * per {
            return Err(Error::shape(
                "dataset",
                format!("{} pixel bytes for {} images of {shape:?}", pixels.len(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(Self {
            shape,
            pixels,
            labels,
            coarse_labels: None,
            num_classes,
            split,
            norm: Normalization::identity(shape[0]),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        let per: usize = self.shape.iter().product();
        &self.pixels[i * per..(i + 1) * per]
    }

    /// New dataset holding `indices` in order.
    pub fn select(&self, indices: &[usize], split: SplitTag) -> Result<Self> {
        let per: usize = self.shape.iter().product();
        let mut pixels = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        let mut coarse = self.coarse_labels.as_ref().map(|_| Vec::with_capacity(indices.len()));
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfBounds {
                    op: "select",
                    index: i,
                    len: self.len(),
                });
            }
            pixels.extend_from_slice(self.image_bytes(i));
            labels.push(self.labels[i]);
            if let (Some(c), Some(src)) = (coarse.as_mut(), self.coarse_labels.as_ref()) {
                c.push(src[i]);
            }
        }
        Ok(Self {
            shape: self.shape,
            pixels,
            labels,
            coarse_labels: coarse,
            num_classes: self.num_classes,
            split,
            norm: self.norm.clone(),
        })
    }

    /// Class histogram.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

impl SampleSource for Dataset {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn image_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn write_image(&self, i: usize, out: &mut [f32]) {
        let plane = self.shape[1] * self.shape[2];
        for (j, (&p, o)) in self.image_bytes(i).iter().zip(out.iter_mut()).enumerate() {
            let ch = j / plane;
            *o = ((p as f64 / 255.0 - self.norm.mean[ch]) / self.norm.std[ch]) as f32;
        }
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

/// Index view into another source.
pub struct Subset<'a> {
    inner: &'a dyn SampleSource,
    indices: Vec<usize>,
}

impl<'a> Subset<'a> {
    pub fn new(inner: &'a dyn SampleSource, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= inner.len()) {
            return Err(Error::IndexOutOfBounds {
                op: "subset",
                index: bad,
                len: inner.len(),
            });
        }
        Ok(Self { inner, indices })
    }

    /// The first `n` items (or all, if fewer).
    pub fn prefix(inner: &'a dyn SampleSource, n: usize) -> Self {
        Self {
            inner,
            indices: (0..n.min(inner.len())).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

impl SampleSource for Subset<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }
    fn image_shape(&self) -> [usize; 3] {
        self.inner.image_shape()
    }
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn write_image(&self, i: usize, out: &mut [f32]) {
        self.inner.write_image(self.indices[i], out)
    }
    fn label(&self, i: usize) -> usize {
        self.inner.label(self.indices[i])
    }
}

/// Two sources back to back.
pub struct Concat<'a> {
    first: &'a dyn SampleSource,
    second: &'a dyn SampleSource,
}

impl<'a> Concat<'a> {
    pub fn new(first: &'a dyn SampleSource, second: &'a dyn SampleSource) -> Result<Self> {
        if first.image_shape() != second.image_shape() || first.num_classes() != second.num_classes() {
            return Err(Error::Config("concatenated sources disagree on shape or classes".into()));
        }
        Ok(Self { first, second })
    }
}

impl SampleSource for Concat<'_> {
    fn len(&self) -> usize {
        self.first.len() + self.second.len()
    }
    fn image_shape(&self) -> [usize; 3] {
        self.first.image_shape()
    }
    fn num_classes(&self) -> usize {
        self.first.num_classes()
    }
    fn write_image(&self, i: usize, out: &mut [f32]) {
        match i.checked_sub(self.first.len()) {
            None => self.first.write_image(i, out),
            Some(j) => self.second.write_image(j, out),
        }
    }
    fn label(&self, i: usize) -> usize {
        match i.checked_sub(self.first.len()) {
            None => self.first.label(i),
            Some(j) => self.second.label(j),
        }
    }
}

/// Fraction of the original training images held out for validation
/// (10,000 of 50,000 for CIFAR).
pub const VALIDATION_FRACTION: (usize, usize) = (1, 5);

/// Seeded random split into `(train, validation)`; for 50,000 images this is
/// exactly 40,000 / 10,000.
pub fn split_train_validation(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("train/validation split"));
    }
    let perm = Rng::new(seed).permutation(ds.len());
    let n_val = ds.len() * VALIDATION_FRACTION.0 / VALIDATION_FRACTION.1;
    let (val, train) = perm.split_at(n_val);
    let mut train = train.to_vec();
    let mut val = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((
        ds.select(&train, SplitTag::Train)?,
        ds.select(&val, SplitTag::Validation)?,
    ))
}

/// The three splits of one experiment, normalized with train statistics.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// Splits `full_train`, fits the normalization on the train part only and
    /// applies it to all three splits.
    pub fn prepare(full_train: &Dataset, test: Dataset, seed: u64) -> Result<Self> {
        let (mut train, mut validation) = split_train_validation(full_train, seed)?;
        let norm = Normalization::fit(&train)?;
        let mut test = test;
        test.split = SplitTag::Test;
        train.norm = norm.clone();
        validation.norm = norm.clone();
        test.norm = norm;
        Ok(Self {
            train,
            validation,
            test,
        })
    }

    pub fn get(&self, tag: SplitTag) -> &Dataset {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Validation => &self.validation,
            SplitTag::Test => &self.test,
        }
    }
}
