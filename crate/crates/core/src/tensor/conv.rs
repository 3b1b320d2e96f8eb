use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn im2col<T: Scalar>(
    x: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    let p = out_h * out_w;
    let mut col = vec![T::ZERO; c_in * k * k * p];
    for ci in 0..c_in {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = ((ci * k + kh) * k + kw) * p;
                for oy in 0..out_h {
                    let iy = (oy * stride + kh) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = iy as usize * w;
                    let dst_row = row + oy * out_w;
                    for ox in 0..out_w {
                        let ix = (ox * stride + kw) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            col[dst_row + ox] = plane[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im_accum<T: Scalar>(
    dcol: &[T],
    dx: &mut [T],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
) {
    let p = out_h * out_w;
    for ci in 0..c_in {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = ((ci * k + kh) * k + kw) * p;
                for oy in 0..out_h {
                    let iy = (oy * stride + kh) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = iy as usize * w;
                    let src_row = row + oy * out_w;
                    for ox in 0..out_w {
                        let ix = (ox * stride + kw) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[dst_row + ix as usize] += dcol[src_row + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// 2-D cross-correlation of x [C_in,H,W] with w [C_out,C_in,k,k].
    /// Zero padding `pad` on every side; square odd kernel.
    pub fn conv2d(&self, weight: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        if self.shape().len() != 3 || weight.shape().len() != 4 {
            return Err(Error::dim("conv2d", self.shape(), weight.shape()));
        }
        let (c_in, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (c_out, wc_in, k, k2) = (
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
        );
        if wc_in != c_in || k != k2 {
            return Err(Error::dim("conv2d", self.shape(), weight.shape()));
        }
        if k % 2 == 0 {
            return Err(Error::shape("conv2d", weight.shape(), "kernel must be odd"));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", self.shape(), "stride must be >= 1"));
        }
        let span_h = h + 2 * pad;
        let span_w = w + 2 * pad;
        if span_h < k || span_w < k || (span_h - k) % stride != 0 || (span_w - k) % stride != 0 {
            return Err(Error::shape(
                "conv2d",
                self.shape(),
                format!("non-integral output extent for k={k} stride={stride} pad={pad}"),
            ));
        }
        let out_h = (span_h - k) / stride + 1;
        let out_w = (span_w - k) / stride + 1;
        let p = out_h * out_w;
        let kk = c_in * k * k;

        let col = Rc::new(im2col(
            &self.data(),
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            out_h,
            out_w,
        ));
        let mut y = vec![T::ZERO; c_out * p];
        T::gemm(c_out, kk, p, T::ONE, &weight.data(), &col, T::ZERO, &mut y);

        Ok(Tensor::from_op(
            vec![c_out, out_h, out_w],
            y,
            vec![self.clone(), weight.clone()],
            Box::new(move |g, ps| {
                if ps[1].requires_grad() {
                    // dW += g . col^T
                    ps[1].accum_grad_with(|dw| {
                        T::gemm_strided(
                            c_out, p, kk, T::ONE, g, p as isize, 1, &col, 1, p as isize, T::ONE,
                            dw, kk as isize, 1,
                        );
                    });
                }
                if ps[0].requires_grad() {
                    // dcol = W^T . g, scattered back through the patch map.
                    let wdat = ps[1].data();
                    let mut dcol = vec![T::ZERO; kk * p];
                    T::gemm_strided(
                        kk, c_out, p, T::ONE, &wdat, 1, kk as isize, g, p as isize, 1, T::ZERO,
                        &mut dcol, p as isize, 1,
                    );
                    ps[0].accum_grad_with(|dx| {
                        col2im_accum(&dcol, dx, c_in, h, w, k, stride, pad, out_h, out_w);
                    });
                }
            }),
        ))
    }
}
