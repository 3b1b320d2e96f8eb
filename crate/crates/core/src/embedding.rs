//! Keypoint spatial embedding: renders each keypoint as a peak-normalized
//! Gaussian heatmap channel, then mixes channels with a learned 1x1
//! convolution. Both the generator and the discriminator own a separate
//! instance of the mixing weights.

use crate::detector::KeypointSet;
use crate::error::{Error, Result};
use crate::params::{zeros_param, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Dense multi-channel structural tensor derived from a keypoint set.
pub struct StructuralEmbedding<T: Scalar = f32> {
    pub h: Tensor<T>,
    pub sigma: f64,
}

/// Raw heatmaps h_i(x,y) = exp(-(d_px^2) / (2 sigma^2)) on an s x s grid,
/// one channel per keypoint; sigma in pixels at that grid resolution.
/// Differentiable in the keypoint coordinates.
pub fn embed_keypoints<T: Scalar>(
    kps: &KeypointSet<T>,
    grid_size: usize,
    sigma: f64,
) -> Result<Tensor<T>> {
    if sigma <= 0.0 {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    if grid_size == 0 {
        return Err(Error::Config("embedding grid must be non-empty".into()));
    }
    let n = kps.count();
    let s = grid_size;
    let half = (s as f64 - 1.0) / 2.0;
    let inv_two_sig2 = 1.0 / (2.0 * sigma * sigma);

    // Separable factorization: h = col(x) * row(y) per keypoint.
    let coords = kps.coords().data().clone();
    let mut rows = vec![0.0f64; n * s];
    let mut cols = vec![0.0f64; n * s];
    let mut centers_px = vec![(0.0f64, 0.0f64); n];
    for i in 0..n {
        let cx = (coords[i * 2].to_f64() + 1.0) * half;
        let cy = (coords[i * 2 + 1].to_f64() + 1.0) * half;
        centers_px[i] = (cx, cy);
        for j in 0..s {
            let dx = j as f64 - cx;
            let dy = j as f64 - cy;
            cols[i * s + j] = (-dx * dx * inv_two_sig2).exp();
            rows[i * s + j] = (-dy * dy * inv_two_sig2).exp();
        }
    }
    let mut out = vec![T::ZERO; n * s * s];
    for i in 0..n {
        for y in 0..s {
            let ry = rows[i * s + y];
            let base = (i * s + y) * s;
            for x in 0..s {
                out[base + x] = T::from_f64(ry * cols[i * s + x]);
            }
        }
    }

    let inv_sig2 = 1.0 / (sigma * sigma);
    Ok(Tensor::from_op(
        vec![n, s, s],
        out,
        vec![kps.coords().clone()],
        Box::new(move |g, ps| {
            // dh/dcx = h * (x - cx) / sigma^2, then chain through the
            // normalized->pixel map (factor (s-1)/2).
            ps[0].accum_grad_with(|dc| {
                for i in 0..n {
                    let (cx, cy) = centers_px[i];
                    let mut dcx = 0.0f64;
                    let mut dcy = 0.0f64;
                    for y in 0..s {
                        let ry = rows[i * s + y];
                        let base = (i * s + y) * s;
                        let mut row_g = 0.0f64;
                        for x in 0..s {
                            let hv = ry * cols[i * s + x];
                            let gv = g[base + x].to_f64();
                            dcx += gv * hv * (x as f64 - cx);
                            row_g += gv * cols[i * s + x];
                        }
                        dcy += row_g * ry * (y as f64 - cy);
                    }
                    dc[i * 2] += T::from_f64(dcx * inv_sig2 * half);
                    dc[i * 2 + 1] += T::from_f64(dcy * inv_sig2 * half);
                }
            });
        }),
    ))
}

/// Learned 1x1 channel mixing applied to the raw heatmaps.
pub struct EmbeddingHead<T: Scalar = f32> {
    pub channels: usize,
    mix_w: Tensor<T>,
    mix_b: Tensor<T>,
}

impl<T: Scalar> EmbeddingHead<T> {
    /// Identity-initialized mixing: the structural tensor starts as the raw
    /// Gaussians and the head learns departures from that.
    pub fn new(channels: usize) -> Self {
        let n = channels;
        let mut w = vec![T::ZERO; n * n];
        for i in 0..n {
            w[i * n + i] = T::ONE;
        }
        EmbeddingHead {
            channels,
            mix_w: Tensor::param(&[n, n, 1, 1], w).expect("mix init"),
            mix_b: zeros_param(&[n]),
        }
    }

    pub fn params(&self, prefix: &str) -> Vec<Param<T>> {
        vec![
            Param::new(format!("{prefix}.mix.w"), self.mix_w.clone()),
            Param::new(format!("{prefix}.mix.b"), self.mix_b.clone()),
        ]
    }

    /// Zero the mixing weights and bias (keypoint-conditioning ablation).
    pub fn disable(&mut self) {
        let n = self.channels;
        self.mix_w = Tensor::param(&[n, n, 1, 1], vec![T::ZERO; n * n]).expect("mix zero");
        self.mix_b = zeros_param(&[n]);
    }

    /// Pointwise mixing of heatmap channels (1x1 convolution).
    pub fn project(&self, heatmaps: &Tensor<T>) -> Result<Tensor<T>> {
        if heatmaps.shape().len() != 3 || heatmaps.shape()[0] != self.channels {
            return Err(Error::dim("project", heatmaps.shape(), self.mix_w.shape()));
        }
        heatmaps
            .conv2d(&self.mix_w, 1, 0)?
            .add_chan_bias(&self.mix_b)
    }

    /// embed + project, packaged with its sigma.
    pub fn structural(
        &self,
        kps: &KeypointSet<T>,
        grid_size: usize,
        sigma: f64,
    ) -> Result<StructuralEmbedding<T>> {
        let raw = embed_keypoints(kps, grid_size, sigma)?;
        Ok(StructuralEmbedding {
            h: self.project(&raw)?,
            sigma,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::Rng;

    fn one_kp(x: f64, y: f64) -> KeypointSet<f64> {
        KeypointSet::from_points(&[(x, y)]).unwrap()
    }

    #[test]
    fn peak_value_is_one_on_lattice() {
        // Keypoint exactly on cell (2,3) of an 8x8 grid.
        let s = 8;
        let x = -1.0 + 2.0 * 3.0 / 7.0;
        let y = -1.0 + 2.0 * 2.0 / 7.0;
        let h = embed_keypoints(&one_kp(x, y), s, 1.0).unwrap();
        let v = h.to_vec();
        assert!((v[2 * s + 3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn value_at_distance_sigma() {
        // sigma = 1 px; a cell exactly 1 px from the center reads exp(-1/2).
        let s = 9;
        let x = -1.0 + 2.0 * 4.0 / 8.0; // center cell (4,4)
        let h = embed_keypoints(&one_kp(x, x), s, 1.0).unwrap();
        let v = h.to_vec();
        let want = (-0.5f64).exp();
        assert!((v[4 * s + 5] - want).abs() < 1e-12);
        assert!((v[5 * s + 4] - want).abs() < 1e-12);
    }

    #[test]
    fn rotation_symmetric_about_keypoint() {
        let s = 9;
        let c = -1.0 + 2.0 * 4.0 / 8.0;
        let h = embed_keypoints(&one_kp(c, c), s, 1.7).unwrap();
        let v = h.to_vec();
        // Equidistant probes agree to 1e-12.
        let probes = [
            (4usize, 6usize),
            (4, 2),
            (6, 4),
            (2, 4), // distance 2 on axes
        ];
        let base = v[probes[0].0 * s + probes[0].1];
        for &(r, cc) in &probes[1..] {
            assert!((v[r * s + cc] - base).abs() < 1e-12);
        }
    }

    #[test]
    fn strictly_decreasing_with_distance() {
        let s = 11;
        let c = 0.0;
        let h = embed_keypoints(&one_kp(c, c), s, 2.0).unwrap();
        let v = h.to_vec();
        let center = 5;
        let mut prev = f64::INFINITY;
        for d in 0..=5 {
            let val = v[center * s + center + d];
            assert!(val < prev || d == 0);
            prev = val;
        }
    }

    #[test]
    fn keypoint_gradient_matches_finite_differences() {
        let coords = Tensor::param(&[2, 2], vec![0.13, -0.27, -0.52, 0.61]).unwrap();
        let probe = {
            let mut rng = crate::rng::stream(31, 0);
            let d: Vec<f64> = (0..2 * 8 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::from_vec(&[2, 8, 8], d).unwrap()
        };
        let err = grad_check(
            || {
                let kps = KeypointSet::new(coords.clone())?;
                Ok(embed_keypoints(&kps, 8, 1.3)?.mul(&probe)?.sum_all())
            },
            &[coords.clone()],
        )
        .unwrap();
        assert!(err < 1e-6, "embedding coord gradient error {err}");
    }

    #[test]
    fn project_identity_weights_is_identity() {
        let head = EmbeddingHead::<f64>::new(3);
        let mut rng = crate::rng::stream(32, 0);
        let h = Tensor::from_vec(
            &[3, 4, 4],
            (0..48).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let out = head.project(&h).unwrap();
        assert_eq!(out.to_vec(), h.to_vec());
    }

    #[test]
    fn project_zero_weights_zero_bias_is_zero() {
        let mut head = EmbeddingHead::<f64>::new(3);
        head.disable();
        let h = Tensor::ones(&[3, 4, 4]);
        assert!(head.project(&h).unwrap().to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn project_matches_per_pixel_matmul_oracle() {
        let n = 4;
        let s = 3;
        let mut rng = crate::rng::stream(33, 0);
        let w: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let h: Vec<f64> = (0..n * s * s).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut head = EmbeddingHead::<f64>::new(n);
        head.mix_w = Tensor::param(&[n, n, 1, 1], w.clone()).unwrap();
        head.mix_b = Tensor::param(&[n], b.clone()).unwrap();
        let got = head
            .project(&Tensor::from_vec(&[n, s, s], h.clone()).unwrap())
            .unwrap()
            .to_vec();

        // Oracle: independent per-pixel channel matmul.
        for y in 0..s {
            for x in 0..s {
                for co in 0..n {
                    let mut want = b[co];
                    for ci in 0..n {
                        want += w[co * n + ci] * h[(ci * s + y) * s + x];
                    }
                    let v = got[(co * s + y) * s + x];
                    assert!((v - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn channel_max_at_most_one_before_projection() {
        let kps = KeypointSet::<f64>::from_points(&[(0.3, 0.3), (-0.9, 0.9), (2.0, 2.0)]).unwrap();
        let h = embed_keypoints(&kps, 16, 0.7).unwrap();
        assert!(h.to_vec().iter().all(|&v| v <= 1.0 + 1e-12 && v >= 0.0));
    }
}
