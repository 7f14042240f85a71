use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{BackwardFn, Scalar, Tensor};

/// Valid (unpadded, stride 1) 2-D convolution parameters.
#[derive(Debug, Clone)]
pub struct ConvLayer<T: Scalar> {
    /// `[out_ch × in_ch × kh × kw]`
    pub kernel: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(input, &self.kernel, &self.bias)
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    fn image_len(&self) -> usize {
        self.in_ch * self.h * self.w
    }

    fn im2col<T: Scalar>(&self, image: &[T], col: &mut [T]) {
        let (oh, ow) = (self.oh, self.ow);
        for c in 0..self.in_ch {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * oh * ow;
                    for y in 0..oh {
                        let src = (c * self.h + y + i) * self.w + j;
                        col[row + y * ow..row + (y + 1) * ow].copy_from_slice(&image[src..src + ow]);
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], image: &mut [T]) {
        let (oh, ow) = (self.oh, self.ow);
        for c in 0..self.in_ch {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * oh * ow;
                    for y in 0..oh {
                        let dst = (c * self.h + y + i) * self.w + j;
                        for (d, &s) in image[dst..dst + ow]
                            .iter_mut()
                            .zip(&col[row + y * ow..row + (y + 1) * ow])
                        {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
}

/// Valid cross-correlation of `[B×C×H×W]` input with `[O×C×kh×kw]` kernel,
/// plus per-channel bias.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let &[batch, in_ch, h, w] = input.shape() else {
        return Err(Error::shape(format!("conv2d input must be rank 4, got {:?}", input.shape())));
    };
    let &[out_ch, k_in, kh, kw] = kernel.shape() else {
        return Err(Error::shape(format!("conv2d kernel must be rank 4, got {:?}", kernel.shape())));
    };
    if k_in != in_ch {
        return Err(Error::shape(format!(
            "conv2d channel mismatch: input has {in_ch}, kernel expects {k_in}"
        )));
    }
    if bias.numel() != out_ch {
        return Err(Error::shape(format!("conv2d bias has {} entries for {out_ch} channels", bias.numel())));
    }
    if h < kh || w < kw {
        return Err(Error::shape(format!("conv2d input {h}×{w} smaller than kernel {kh}×{kw}")));
    }
    let g = Geometry {
        batch,
        in_ch,
        h,
        w,
        out_ch,
        kh,
        kw,
        oh: h - kh + 1,
        ow: w - kw + 1,
    };

    let (plen, olen) = (g.patch_len(), g.out_len());
    let mut out = vec![T::zero(); batch * out_ch * olen];
    out.par_chunks_mut(out_ch * olen)
        .zip(input.data().par_chunks(g.image_len()))
        .for_each(|(dst, image)| {
            let mut col = vec![T::zero(); plen * olen];
            g.im2col(image, &mut col);
            for (o, row) in dst.chunks_mut(olen).enumerate() {
                row.fill(bias.data()[o]);
            }
            T::gemm(out_ch, plen, olen, kernel.data(), false, &col, false, dst, true);
        });

    let (x, k) = (input.clone(), kernel.clone());
    let needs_bias = bias.requires_grad();
    let backward: BackwardFn<T> = Box::new(move |grad, _| {
        let want_x = x.requires_grad();
        let want_k = k.requires_grad();
        // per-image kernel gradients, summed in batch order for determinism
        let parts: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = grad
            .par_chunks(g.out_ch * olen)
            .zip(x.data().par_chunks(g.image_len()))
            .map(|(gb, image)| {
                let mut col = vec![T::zero(); plen * olen];
                let dk = want_k.then(|| {
                    g.im2col(image, &mut col);
                    let mut dk = vec![T::zero(); g.out_ch * plen];
                    T::gemm(g.out_ch, olen, plen, gb, false, &col, true, &mut dk, false);
                    dk
                });
                let dx = want_x.then(|| {
                    T::gemm(plen, g.out_ch, olen, k.data(), true, gb, false, &mut col, false);
                    let mut dx = vec![T::zero(); g.image_len()];
                    g.col2im(&col, &mut dx);
                    dx
                });
                (dk, dx)
            })
            .collect();

        let mut dk_total = want_k.then(|| vec![T::zero(); g.out_ch * plen]);
        let mut dx_total = want_x.then(|| Vec::with_capacity(g.batch * g.image_len()));
        for (dk, dx) in parts {
            if let (Some(acc), Some(dk)) = (dk_total.as_mut(), dk) {
                acc.iter_mut().zip(&dk).for_each(|(a, &b)| *a = *a + b);
            }
            if let (Some(acc), Some(dx)) = (dx_total.as_mut(), dx) {
                acc.extend_from_slice(&dx);
            }
        }
        let db = needs_bias.then(|| {
            let mut db = vec![T::zero(); g.out_ch];
            for gb in grad.chunks(g.out_ch * olen) {
                for (o, row) in gb.chunks(olen).enumerate() {
                    db[o] = db[o] + row.iter().copied().sum();
                }
            }
            db
        });
        vec![dx_total, dk_total, db]
    });
    Tensor::from_op(
        "conv2d",
        out,
        &[batch, out_ch, g.oh, g.ow],
        vec![input.clone(), kernel.clone(), bias.clone()],
        backward,
    )
}
