use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    fn normalize_lanes(&self, lanes: usize, lane_len: usize, eps: f64) -> Tensor<T> {
        let x = self.data();
        let mut y = vec![T::ZERO; x.len()];
        let mut inv_std = vec![T::ZERO; lanes];
        let inv_n = 1.0 / lane_len as f64;
        for l in 0..lanes {
            let xs = &x[l * lane_len..(l + 1) * lane_len];
            let mut mean = 0.0f64;
            for &v in xs {
                mean += v.to_f64();
            }
            mean *= inv_n;
            let mut var = 0.0f64;
            for &v in xs {
                let d = v.to_f64() - mean;
                var += d * d;
            }
            var *= inv_n;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[l] = T::from_f64(s);
            for (o, &v) in y[l * lane_len..(l + 1) * lane_len].iter_mut().zip(xs) {
                *o = T::from_f64((v.to_f64() - mean) * s);
            }
        }
        drop(x);
        let saved_y = y.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                // dx = s * (g - mean(g) - y * mean(g .* y)) per lane
                ps[0].accum_grad_with(|dst| {
                    let inv_n_t = T::from_f64(inv_n);
                    for l in 0..lanes {
                        let base = l * lane_len;
                        let mut gsum = T::ZERO;
                        let mut gysum = T::ZERO;
                        for i in 0..lane_len {
                            gsum += g[base + i];
                            gysum += g[base + i] * saved_y[base + i];
                        }
                        let gmean = gsum * inv_n_t;
                        let gymean = gysum * inv_n_t;
                        for i in 0..lane_len {
                            dst[base + i] += inv_std[l]
                                * (g[base + i] - gmean - saved_y[base + i] * gymean);
                        }
                    }
                });
            }),
        )
    }

    /// Zero-mean unit-variance normalization of each row of a [N,D] tensor.
    pub fn norm_rows(&self, eps: f64) -> Result<Tensor<T>> {
        if self.shape().len() != 2 {
            return Err(Error::shape("norm_rows", self.shape(), "expected rank 2"));
        }
        Ok(self.normalize_lanes(self.shape()[0], self.shape()[1], eps))
    }

    /// Per-channel spatial normalization of a [C,H,W] tensor (instance norm,
    /// no learned affine).
    pub fn norm_chans(&self, eps: f64) -> Result<Tensor<T>> {
        if self.shape().len() != 3 {
            return Err(Error::shape("norm_chans", self.shape(), "expected rank 3"));
        }
        Ok(self.normalize_lanes(self.shape()[0], self.shape()[1] * self.shape()[2], eps))
    }

    /// Scalar standard deviation (population) of all elements, differentiable.
    pub fn std_all(&self, eps: f64) -> Tensor<T> {
        let mu = self.mean_all();
        let centered = self.sub_scalar_t(&mu).expect("scalar mean");
        let var = centered.mul(&centered).expect("same shape").mean_all();
        var.add_const(eps).sqrt()
    }
}
