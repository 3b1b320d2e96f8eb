use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    /// Matrix product of rank-2 tensors: [m,k] x [k,n] -> [m,n].
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape().len() != 2 || rhs.shape().len() != 2 || self.shape()[1] != rhs.shape()[0] {
            return Err(Error::dim("matmul", self.shape(), rhs.shape()));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = rhs.shape()[1];
        let mut y = vec![T::ZERO; m * n];
        T::gemm(m, k, n, T::ONE, &self.data(), &rhs.data(), T::ZERO, &mut y);
        Ok(Tensor::from_op(
            vec![m, n],
            y,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, ps| {
                // dA += g . B^T ; dB += A^T . g  (transposes via strides)
                {
                    let b = ps[1].data();
                    ps[0].accum_grad_with(|da| {
                        T::gemm_strided(
                            m, n, k, T::ONE, g, n as isize, 1, &b, 1, n as isize, T::ONE, da,
                            k as isize, 1,
                        );
                    });
                }
                let a = ps[0].data();
                ps[1].accum_grad_with(|db| {
                    T::gemm_strided(
                        k, m, n, T::ONE, &a, 1, k as isize, g, n as isize, 1, T::ONE, db,
                        n as isize, 1,
                    );
                });
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Independent oracle: naive triple loop.
    fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for t in 0..k {
                    s += a[i * k + t] * b[t * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn identity_case() {
        let eye = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = eye.matmul(&a).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn hand_arithmetic() {
        let a = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        let y = a.matmul(&b).unwrap();
        assert_eq!(y.to_vec(), vec![11.0]);
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let mut rng = crate::rng::stream(42, 0);
        let (m, k, n) = (5, 4, 3);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let want = matmul_oracle(&a, &b, m, k, n);
        let got = Tensor::<f64>::from_vec(&[m, k], a)
            .unwrap()
            .matmul(&Tensor::from_vec(&[k, n], b).unwrap())
            .unwrap();
        for (x, y) in got.to_vec().iter().zip(want.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_error() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn backward_matches_formula() {
        // y = sum(A.B); dA = ones . B^T, dB = A^T . ones
        let a = Tensor::<f64>::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::param(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        a.matmul(&b).unwrap().sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0, 6.0, 6.0]);
    }
}
