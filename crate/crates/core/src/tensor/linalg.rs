use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn inv3_raw(m: &[f64; 9]) -> Option<[f64; 9]> {
    let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6]);
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    let inv_det = 1.0 / det;
    Some([
        (m[4] * m[8] - m[5] * m[7]) * inv_det,
        (m[2] * m[7] - m[1] * m[8]) * inv_det,
        (m[1] * m[5] - m[2] * m[4]) * inv_det,
        (m[5] * m[6] - m[3] * m[8]) * inv_det,
        (m[0] * m[8] - m[2] * m[6]) * inv_det,
        (m[2] * m[3] - m[0] * m[5]) * inv_det,
        (m[3] * m[7] - m[4] * m[6]) * inv_det,
        (m[1] * m[6] - m[0] * m[7]) * inv_det,
        (m[0] * m[4] - m[1] * m[3]) * inv_det,
    ])
}

impl<T: Scalar> Tensor<T> {
    /// Inverse of a 3x3 matrix via the adjugate; differentiable
    /// (dM = -Y^T dY Y^T with Y = M^-1).
    pub fn inv3(&self) -> Result<Tensor<T>> {
        if self.shape() != [3, 3] {
            return Err(Error::shape("inv3", self.shape(), "expected [3,3]"));
        }
        let mut m = [0.0f64; 9];
        for (i, v) in self.data().iter().enumerate() {
            m[i] = v.to_f64();
        }
        let y = inv3_raw(&m)
            .ok_or_else(|| Error::Degenerate("inv3: matrix is numerically singular".into()))?;
        let y_t: Vec<T> = y.iter().map(|&v| T::from_f64(v)).collect();
        let saved = y;
        Ok(Tensor::from_op(
            vec![3, 3],
            y_t,
            vec![self.clone()],
            Box::new(move |g, ps| {
                // dM[a,b] = -sum_{i,j} Y[i,a] g[i,j] Y[b,j]
                ps[0].accum_grad_with(|dm| {
                    for a in 0..3 {
                        for b in 0..3 {
                            let mut s = 0.0f64;
                            for i in 0..3 {
                                for j in 0..3 {
                                    s += saved[i * 3 + a] * g[i * 3 + j].to_f64() * saved[b * 3 + j];
                                }
                            }
                            dm[a * 3 + b] += T::from_f64(-s);
                        }
                    }
                });
            }),
        ))
    }
}

/// Eigenvalues of a symmetric 3x3 matrix (row-major, 9 values), descending.
/// Closed-form trigonometric solution; used for conditioning checks.
pub fn sym3_eigenvalues(m: &[f64]) -> [f64; 3] {
    assert_eq!(m.len(), 9);
    let p1 = m[1] * m[1] + m[2] * m[2] + m[5] * m[5];
    if p1 == 0.0 {
        let mut e = [m[0], m[4], m[8]];
        e.sort_by(|a, b| b.partial_cmp(a).unwrap());
        return e;
    }
    let q = (m[0] + m[4] + m[8]) / 3.0;
    let p2 = (m[0] - q).powi(2) + (m[4] - q).powi(2) + (m[8] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let inv_p = 1.0 / p;
    let b = [
        (m[0] - q) * inv_p,
        m[1] * inv_p,
        m[2] * inv_p,
        m[3] * inv_p,
        (m[4] - q) * inv_p,
        m[5] * inv_p,
        m[6] * inv_p,
        m[7] * inv_p,
        (m[8] - q) * inv_p,
    ];
    let det_b = b[0] * (b[4] * b[8] - b[5] * b[7]) - b[1] * (b[3] * b[8] - b[5] * b[6])
        + b[2] * (b[3] * b[7] - b[4] * b[6]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut e = [e1, e2, e3];
    e.sort_by(|a, b| b.partial_cmp(a).unwrap());
    e
}
