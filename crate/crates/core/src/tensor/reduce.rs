use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    pub fn sum_all(&self) -> Tensor<T> {
        let mut s = T::ZERO;
        for &v in self.data().iter() {
            s += v;
        }
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(|g, ps| {
                let go = g[0];
                ps[0].accum_grad_with(|dst| {
                    for d in dst.iter_mut() {
                        *d += go;
                    }
                });
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Numerically stable softmax along `axis` of a rank-2 tensor.
    /// The running maximum is subtracted before exponentiation.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if self.shape().len() != 2 || axis > 1 {
            return Err(Error::shape(
                "softmax",
                self.shape(),
                format!("expected rank 2 with axis 0 or 1, got axis {axis}"),
            ));
        }
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        // Iterate lanes along the reduced axis.
        let (lanes, lane_len, stride, base) = if axis == 1 {
            (rows, cols, 1usize, cols)
        } else {
            (cols, rows, cols, 1usize)
        };
        let x = self.data();
        let mut y = vec![T::ZERO; x.len()];
        for l in 0..lanes {
            let start = l * base;
            let mut mx = x[start];
            for i in 1..lane_len {
                let v = x[start + i * stride];
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = T::ZERO;
            for i in 0..lane_len {
                let e = (x[start + i * stride] - mx).exp();
                y[start + i * stride] = e;
                denom += e;
            }
            for i in 0..lane_len {
                y[start + i * stride] = y[start + i * stride] / denom;
            }
        }
        drop(x);
        let saved = y.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                // dx = y * (g - sum(g * y)) per lane.
                ps[0].accum_grad_with(|dst| {
                    for l in 0..lanes {
                        let start = l * base;
                        let mut dot = T::ZERO;
                        for i in 0..lane_len {
                            let idx = start + i * stride;
                            dot += g[idx] * saved[idx];
                        }
                        for i in 0..lane_len {
                            let idx = start + i * stride;
                            dst[idx] += saved[idx] * (g[idx] - dot);
                        }
                    }
                });
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        let y = x.softmax(1).unwrap().to_vec();
        assert_eq!(y, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_analytic_ln2() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![2.0f64.ln(), 0.0]).unwrap();
        let y = x.softmax(1).unwrap().to_vec();
        assert!((y[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((y[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_extreme_logits_stay_finite() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![1000.0, 0.0]).unwrap();
        let y = x.softmax(1).unwrap().to_vec();
        assert!(y.iter().all(|v| v.is_finite()));
        assert_eq!(y[0], 1.0);
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn softmax_axis0_sums_to_one() {
        let x = Tensor::<f64>::from_vec(&[3, 2], vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.0]).unwrap();
        let y = x.softmax(0).unwrap();
        let v = y.to_vec();
        for c in 0..2 {
            let s: f64 = (0..3).map(|r| v[r * 2 + c]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_all_value() {
        let x = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(x.mean_all().item(), 3.0);
    }
}
