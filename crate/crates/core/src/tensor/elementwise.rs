use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, rhs)?;
        let y: Vec<T> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, ps| {
                ps[0].accum_grad(g);
                ps[1].accum_grad(g);
            }),
        ))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, rhs)?;
        let y: Vec<T> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, ps| {
                ps[0].accum_grad(g);
                ps[1].accum_grad_with(|dst| {
                    for (d, &gi) in dst.iter_mut().zip(g.iter()) {
                        *d += -gi;
                    }
                });
            }),
        ))
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, rhs)?;
        let y: Vec<T> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, ps| {
                {
                    let b = ps[1].data();
                    ps[0].accum_grad_with(|dst| {
                        for i in 0..g.len() {
                            dst[i] += g[i] * b[i];
                        }
                    });
                }
                let a = ps[0].data();
                ps[1].accum_grad_with(|dst| {
                    for i in 0..g.len() {
                        dst[i] += g[i] * a[i];
                    }
                });
            }),
        ))
    }

    pub fn neg(&self) -> Tensor<T> {
        let y: Vec<T> = self.data().iter().map(|&a| -a).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(|g, ps| {
                ps[0].accum_grad_with(|dst| {
                    for i in 0..g.len() {
                        dst[i] += -g[i];
                    }
                });
            }),
        )
    }

    pub fn abs(&self) -> Tensor<T> {
        let y: Vec<T> = self.data().iter().map(|&a| a.abs()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(|g, ps| {
                let x = ps[0].data();
                ps[0].accum_grad_with(|dst| {
                    for i in 0..g.len() {
                        let s = if x[i] > T::ZERO {
                            T::ONE
                        } else if x[i] < T::ZERO {
                            -T::ONE
                        } else {
                            T::ZERO
                        };
                        dst[i] += g[i] * s;
                    }
                });
            }),
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        let y: Vec<T> = self.data().iter().map(|&a| a.exp()).collect();
        let saved = y.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|dst| {
                    for i in 0..g.len() {
                        dst[i] += g[i] * saved[i];
                    }
                });
            }),
        )
    }

    /// ln(max(x, floor)); gradient is 1/x inside, 0 where the clamp engaged.
    pub fn ln_clamped(&self, floor: f64) -> Tensor<T> {
        let c = T::from_f64(floor);
        let y: Vec<T> = self.data().iter().map(|&a| a.maxs(c).ln()).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                let x = ps[0].data();
                ps[0].accum_grad_with(|dst| {
                    for i in 0..g.len() {
                        if x[i] > c {
                            dst[i] += g[i] / x[i];
                        }
                    }
                });
            }),
        )
    }

    pub fn sqrt(&self) -> Tensor<T> {
        let y: Vec<T> = self.data().iter().map(|&a| a.sqrt()).collect();
        let saved = y.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|dst| {
                    let half = T::from_f64(0.5);
                    for i in 0..g.len() {
                        if saved[i] > T::ZERO {
                            dst[i] += g[i] * half / saved[i];
                        }
                    }
                });
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let y: Vec<T> = self
            .data()
            .iter()
            .map(|&a| {
                // Branch on sign for numerical stability.
                if a >= T::ZERO {
                    T::ONE / (T::ONE + (-a).exp())
                } else {
                    let e = a.exp();
                    e / (T::ONE + e)
                }
            })
            .collect();
        let saved = y.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|dst| {
                    for i in 0..g.len() {
                        dst[i] += g[i] * saved[i] * (T::ONE - saved[i]);
                    }
                });
            }),
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s = T::from_f64(slope);
        let y: Vec<T> = self
            .data()
            .iter()
            .map(|&a| if a > T::ZERO { a } else { a * s })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                let x = ps[0].data();
                ps[0].accum_grad_with(|dst| {
                    for i in 0..g.len() {
                        dst[i] += if x[i] > T::ZERO { g[i] } else { g[i] * s };
                    }
                });
            }),
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        self.leaky_relu(0.0)
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64(c);
        let y: Vec<T> = self.data().iter().map(|&a| a * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|dst| {
                    for i in 0..g.len() {
                        dst[i] += g[i] * c;
                    }
                });
            }),
        )
    }

    pub fn add_const(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64(c);
        let y: Vec<T> = self.data().iter().map(|&a| a + c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(|g, ps| ps[0].accum_grad(g)),
        )
    }

    /// max(x, floor); gradient passes only where x > floor.
    pub fn clamp_min(&self, floor: f64) -> Tensor<T> {
        let c = T::from_f64(floor);
        let y: Vec<T> = self.data().iter().map(|&a| a.maxs(c)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                let x = ps[0].data();
                ps[0].accum_grad_with(|dst| {
                    for i in 0..g.len() {
                        if x[i] > c {
                            dst[i] += g[i];
                        }
                    }
                });
            }),
        )
    }

    /// x[c,h,w] + bias[c] for 3-D tensors.
    pub fn add_chan_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape().len() != 3 || bias.shape() != [self.shape()[0]] {
            return Err(Error::dim("add_chan_bias", self.shape(), bias.shape()));
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let hw = h * w;
        let mut y = self.to_vec();
        {
            let b = bias.data();
            for ci in 0..c {
                for v in &mut y[ci * hw..(ci + 1) * hw] {
                    *v += b[ci];
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad(g);
                ps[1].accum_grad_with(|dst| {
                    for ci in 0..c {
                        let mut s = T::ZERO;
                        for &gi in &g[ci * hw..(ci + 1) * hw] {
                            s += gi;
                        }
                        dst[ci] += s;
                    }
                });
            }),
        ))
    }

    /// x[n,d] + bias[d] for 2-D tensors.
    pub fn add_row_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape().len() != 2 || bias.shape() != [self.shape()[1]] {
            return Err(Error::dim("add_row_bias", self.shape(), bias.shape()));
        }
        let (n, d) = (self.shape()[0], self.shape()[1]);
        let mut y = self.to_vec();
        {
            let b = bias.data();
            for row in y.chunks_mut(d) {
                for (v, &bv) in row.iter_mut().zip(b.iter()) {
                    *v += bv;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad(g);
                ps[1].accum_grad_with(|dst| {
                    for r in 0..n {
                        for c in 0..d {
                            dst[c] += g[r * d + c];
                        }
                    }
                });
            }),
        ))
    }

    /// x * s where s is a single-element tensor.
    pub fn mul_scalar_t(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        if s.numel() != 1 {
            return Err(Error::dim("mul_scalar_t", self.shape(), s.shape()));
        }
        let sv = s.item();
        let y: Vec<T> = self.data().iter().map(|&a| a * sv).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone(), s.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|dst| {
                    for i in 0..g.len() {
                        dst[i] += g[i] * sv;
                    }
                });
                let x = ps[0].data();
                let mut acc = T::ZERO;
                for i in 0..g.len() {
                    acc += g[i] * x[i];
                }
                ps[1].accum_grad(&[acc]);
            }),
        ))
    }

    /// x / s where s is a single-element tensor.
    pub fn div_scalar_t(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        if s.numel() != 1 {
            return Err(Error::dim("div_scalar_t", self.shape(), s.shape()));
        }
        let sv = s.item();
        let y: Vec<T> = self.data().iter().map(|&a| a / sv).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone(), s.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|dst| {
                    for i in 0..g.len() {
                        dst[i] += g[i] / sv;
                    }
                });
                let x = ps[0].data();
                let mut acc = T::ZERO;
                for i in 0..g.len() {
                    acc += g[i] * x[i];
                }
                ps[1].accum_grad(&[-acc / (sv * sv)]);
            }),
        ))
    }

    /// x - s broadcast, where s is a single-element tensor.
    pub fn sub_scalar_t(&self, s: &Tensor<T>) -> Result<Tensor<T>> {
        if s.numel() != 1 {
            return Err(Error::dim("sub_scalar_t", self.shape(), s.shape()));
        }
        let sv = s.item();
        let y: Vec<T> = self.data().iter().map(|&a| a - sv).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            y,
            vec![self.clone(), s.clone()],
            Box::new(|g, ps| {
                ps[0].accum_grad(g);
                let mut acc = T::ZERO;
                for &gi in g {
                    acc += gi;
                }
                ps[1].accum_grad(&[-acc]);
            }),
        ))
    }
}
