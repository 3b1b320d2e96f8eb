use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    /// Same buffer, new shape (row-major layouts make this a relabel).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape(
                "reshape",
                shape,
                format!("cannot hold {} elements", self.numel()),
            ));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, ps| ps[0].accum_grad(g)),
        ))
    }

    pub fn transpose2d(&self) -> Result<Tensor<T>> {
        if self.shape().len() != 2 {
            return Err(Error::shape("transpose2d", self.shape(), "expected rank 2"));
        }
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let x = self.data();
        let mut y = vec![T::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                y[j * m + i] = x[i * n + j];
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            vec![n, m],
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|dst| {
                    for i in 0..m {
                        for j in 0..n {
                            dst[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }),
        ))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let rank = parts[0].shape().len();
        if axis >= rank {
            return Err(Error::shape(
                "concat",
                parts[0].shape(),
                format!("axis {axis} out of range"),
            ));
        }
        for p in parts.iter().skip(1) {
            if p.shape().len() != rank {
                return Err(Error::dim("concat", parts[0].shape(), p.shape()));
            }
            for d in 0..rank {
                if d != axis && p.shape()[d] != parts[0].shape()[d] {
                    return Err(Error::dim("concat", parts[0].shape(), p.shape()));
                }
            }
        }
        let mut out_shape = parts[0].shape().to_vec();
        out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();

        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total_axis: usize = sizes.iter().sum();

        let mut y = vec![T::ZERO; outer * total_axis * inner];
        let mut offset = 0;
        for (p, &sz) in parts.iter().zip(sizes.iter()) {
            let x = p.data();
            for o in 0..outer {
                let src = &x[o * sz * inner..(o + 1) * sz * inner];
                let dst = &mut y[(o * total_axis + offset) * inner..];
                dst[..sz * inner].copy_from_slice(src);
            }
            offset += sz;
        }

        Ok(Tensor::from_op(
            out_shape,
            y,
            parts.to_vec(),
            Box::new(move |g, ps| {
                let mut offset = 0;
                for (p, &sz) in ps.iter().zip(sizes.iter()) {
                    p.accum_grad_with(|dst| {
                        for o in 0..outer {
                            let src = &g[(o * total_axis + offset) * inner..][..sz * inner];
                            for (d, &s) in dst[o * sz * inner..(o + 1) * sz * inner]
                                .iter_mut()
                                .zip(src.iter())
                            {
                                *d += s;
                            }
                        }
                    });
                    offset += sz;
                }
            }),
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let rank = self.shape().len();
        if axis >= rank || start + len > self.shape()[axis] {
            return Err(Error::shape(
                "narrow",
                self.shape(),
                format!("axis {axis} range {start}..{}", start + len),
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let full = self.shape()[axis];
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;

        let x = self.data();
        let mut y = vec![T::ZERO; outer * len * inner];
        for o in 0..outer {
            let src = &x[(o * full + start) * inner..][..len * inner];
            y[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        drop(x);

        Ok(Tensor::from_op(
            out_shape,
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|dst| {
                    for o in 0..outer {
                        let d = &mut dst[(o * full + start) * inner..];
                        for (dv, &gv) in d[..len * inner]
                            .iter_mut()
                            .zip(g[o * len * inner..(o + 1) * len * inner].iter())
                        {
                            *dv += gv;
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
    fn concat_axis0_and_backward_split() {
        let a = Tensor::<f64>::param(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::param(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = Tensor::concat(&[a.clone(), b.clone()], 0).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn concat_axis1() {
        let a = Tensor::<f64>::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = Tensor::concat(&[a, b], 1).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.to_vec(), vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn narrow_extracts_and_scatters_back() {
        let a = Tensor::<f64>::param(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = a.narrow(1, 1, 2).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.to_vec(), vec![2.0, 3.0, 5.0, 6.0]);
        y.sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn transpose_roundtrip() {
        let a = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = a.transpose2d().unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let rt = t.transpose2d().unwrap();
        assert_eq!(rt.to_vec(), a.to_vec());
    }
}
