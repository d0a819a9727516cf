use super::{dot, matmul_nt, Real, Tensor};
use crate::error::{Error, Result};

/// Output side length of a convolution or pooling window sweep.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("conv", "stride must be >= 1"));
    }
    if kernel == 0 || kernel > input + 2 * padding {
        return Err(Error::shape(
            "conv",
            format!("kernel {kernel} does not fit input {input} with padding {padding}"),
        ));
    }
    Ok((input + 2 * padding - kernel) / stride + 1)
}

/// Unfolds receptive fields: row `n·H'·W' + i·W' + j` holds the patch at
/// output position `(i, j)` of image `n`, flattened as `(c, a, b)`.
pub fn im2col<T: Real>(
    input: &Tensor<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("im2col")?;
    let oh = conv_output_size(h, kh, stride, padding)?;
    let ow = conv_output_size(w, kw, stride, padding)?;
    let cols = c * kh * kw;
    let x = input.data();
    let mut out = vec![T::zero(); n * oh * ow * cols];
    let mut row = 0;
    for img in 0..n {
        let base = img * c * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let dst = &mut out[row * cols..(row + 1) * cols];
                let mut d = 0;
                for ch in 0..c {
                    let plane = base + ch * h * w;
                    for a in 0..kh {
                        let y = (i * stride + a) as isize - padding as isize;
                        for b in 0..kw {
                            let xx = (j * stride + b) as isize - padding as isize;
                            if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                dst[d] = x[plane + y as usize * w + xx as usize];
                            }
                            d += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Tensor::new(vec![n * oh * ow, cols], out)
}

/// Adjoint of [`im2col`]: scatters patch rows back, summing overlaps.
pub fn col2im<T: Real>(
    cols: &Tensor<T>,
    input_shape: &[usize],
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape[..] else {
        return Err(Error::shape("col2im", format!("input shape {input_shape:?}")));
    };
    let oh = conv_output_size(h, kh, stride, padding)?;
    let ow = conv_output_size(w, kw, stride, padding)?;
    let (rows, width) = cols.dims2("col2im")?;
    if rows != n * oh * ow || width != c * kh * kw {
        return Err(Error::shape(
            "col2im",
            format!("columns {:?} do not match input {input_shape:?}", cols.shape()),
        ));
    }
    let mut acc = vec![0.0f64; n * c * h * w];
    for (row, patch) in cols.rows().enumerate() {
        let img = row / (oh * ow);
        let i = (row / ow) % oh;
        let j = row % ow;
        let mut d = 0;
        for ch in 0..c {
            let plane = (img * c + ch) * h * w;
            for a in 0..kh {
                let y = (i * stride + a) as isize - padding as isize;
                for b in 0..kw {
                    let xx = (j * stride + b) as isize - padding as isize;
                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                        acc[plane + y as usize * w + xx as usize] += patch[d].f64();
                    }
                    d += 1;
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), acc.into_iter().map(T::of).collect())
}

fn check_conv_shapes<T: Real>(
    op: &'static str,
    input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let (_, c, _, _) = input.dims4(op)?;
    let (k, wc, kh, kw) = weights.dims4(op)?;
    if wc != c {
        return Err(Error::shape(
            op,
            format!("input has {c} channels but kernels expect {wc}"),
        ));
    }
    Ok((k, c, kh, kw))
}

/// Rows `[P, K]` (position-major) to `[N, K, H', W']`.
fn rows_to_nchw<T: Real>(rows: &Tensor<T>, n: usize, k: usize, oh: usize, ow: usize) -> Vec<T> {
    let src = rows.data();
    let mut out = vec![T::zero(); n * k * oh * ow];
    let hw = oh * ow;
    for img in 0..n {
        for p in 0..hw {
            let r = (img * hw + p) * k;
            for kk in 0..k {
                out[(img * k + kk) * hw + p] = src[r + kk];
            }
        }
    }
    out
}

fn nchw_to_rows<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k, oh, ow) = t.dims4("nchw_to_rows")?;
    let hw = oh * ow;
    let src = t.data();
    let mut out = vec![T::zero(); n * k * hw];
    for img in 0..n {
        for kk in 0..k {
            for p in 0..hw {
                out[(img * hw + p) * k + kk] = src[(img * k + kk) * hw + p];
            }
        }
    }
    Tensor::new(vec![n * hw, k], out)
}

/// Zero-padded 2-D convolution (cross-correlation), computed as
/// `im2col(input) · flatten(weights)ᵀ + bias`.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (k, c, kh, kw) = check_conv_shapes("conv2d_forward", input, weights)?;
    if bias.shape() != [k] {
        return Err(Error::shape(
            "conv2d_forward",
            format!("bias shape {:?}, expected [{k}]", bias.shape()),
        ));
    }
    let (n, _, h, w) = input.dims4("conv2d_forward")?;
    let oh = conv_output_size(h, kh, stride, padding)?;
    let ow = conv_output_size(w, kw, stride, padding)?;
    let cols = im2col(input, kh, kw, stride, padding)?;
    let flat = Tensor::new(vec![k, c * kh * kw], weights.data().to_vec())?;
    let mut rows = matmul_nt(&cols, &flat)?;
    let b = bias.data();
    for r in rows.data_mut().chunks_exact_mut(k) {
        for (v, &bb) in r.iter_mut().zip(b) {
            *v += bb;
        }
    }
    Tensor::new(vec![n, k, oh, ow], rows_to_nchw(&rows, n, k, oh, ow))?.check_finite("conv2d_forward")
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let (k, c, kh, kw) = check_conv_shapes("conv2d_backward", cached_input, weights)?;
    let (n, _, h, w) = cached_input.dims4("conv2d_backward")?;
    let oh = conv_output_size(h, kh, stride, padding)?;
    let ow = conv_output_size(w, kw, stride, padding)?;
    if grad_out.shape() != [n, k, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_out {:?}, expected {:?}", grad_out.shape(), [n, k, oh, ow]),
        ));
    }
    let d = c * kh * kw;
    let cols = im2col(cached_input, kh, kw, stride, padding)?;
    let g = nchw_to_rows(grad_out)?; // [P, K]
    let gt = g.transpose()?; // [K, P]
    let colst = cols.transpose()?; // [D, P]

    let grad_w = matmul_nt(&gt, &colst)?.reshape(&[k, c, kh, kw])?;
    let grad_b: Vec<T> = gt.rows().map(|r| T::of(r.iter().map(|v| v.f64()).sum())).collect();

    let wt = Tensor::new(vec![k, d], weights.data().to_vec())?.transpose()?; // [D, K]
    let mut grad_cols = vec![T::zero(); g.shape()[0] * d];
    for (grow, out) in g.rows().zip(grad_cols.chunks_exact_mut(d)) {
        for (o, wrow) in out.iter_mut().zip(wt.rows()) {
            *o = T::of(dot(grow, wrow));
        }
    }
    let grad_cols = Tensor::new(vec![g.shape()[0], d], grad_cols)?;
    let grad_in = col2im(&grad_cols, cached_input.shape(), kh, kw, stride, padding)?;

    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: Tensor::new(vec![k], grad_b)?,
    })
}
