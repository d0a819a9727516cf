//! im2col convolution against a direct nested-loop convolution.
//!
//!     cargo run --release --example conv_im2col

use hebb_cbir::tensor::{conv2d_forward, im2col};
use hebb_cbir::{Rng, Tensor};

fn main() -> hebb_cbir::Result<()> {
    let mut rng = Rng::new(3);
    let (n, c, h, w, k, ks, pad) = (2, 3, 6, 6, 4, 3, 1);
    let x = Tensor::from_fn(&[n, c, h, w], |_| rng.normal());
    let wt = Tensor::from_fn(&[k, c, ks, ks], |_| rng.normal());
    let b = Tensor::from_fn(&[k], |_| rng.normal());

    let cols = im2col(&x, ks, ks, 1, pad)?;
    println!("im2col: {:?} -> {:?}", x.shape(), cols.shape());
    let y = conv2d_forward(&x, &wt, &b, 1, pad)?;
    println!("conv output {:?}", y.shape());

    let at = |t: &Tensor<f64>, i: [usize; 4]| {
        let s = t.shape();
        t.data()[((i[0] * s[1] + i[1]) * s[2] + i[2]) * s[3] + i[3]]
    };
    let mut worst = 0.0f64;
    for img in 0..n {
        for o in 0..k {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = b.data()[o];
                    for ch in 0..c {
                        for a in 0..ks {
                            for bb in 0..ks {
                                let (yi, xj) = ((i + a) as isize - pad as isize, (j + bb) as isize - pad as isize);
                                if yi >= 0 && xj >= 0 && (yi as usize) < h && (xj as usize) < w {
                                    acc += at(&wt, [o, ch, a, bb]) * at(&x, [img, ch, yi as usize, xj as usize]);
                                }
                            }
                        }
                    }
                    worst = worst.max((acc - at(&y, [img, o, i, j])).abs());
                }
            }
        }
    }
    println!("max |im2col − direct| = {worst:.2e}");
    Ok(())
}
