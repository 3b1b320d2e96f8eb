//! Keypoint-guided discriminator: a three-stage conv backbone whose stages
//! consume the image features concatenated with the structural embedding at
//! matching resolutions, reduced to one score in (0,1).

use rand_chacha::ChaCha8Rng;

use crate::detector::KeypointSet;
use crate::embedding::EmbeddingHead;
use crate::error::{Error, Result};
use crate::params::{conv_init, zeros_param, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct DiscriminatorConfig {
    pub image_size: usize,
    pub keypoints: usize,
    /// Gaussian width in pixels at the S/4 grid; rescaled per stage so the
    /// physical footprint matches across resolutions.
    pub sigma: f64,
    /// When off, the structural tensor is zeroed: same backbone, no
    /// keypoint conditioning.
    pub use_keypoints: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            image_size: 64,
            keypoints: 128,
            sigma: 1.0,
            use_keypoints: true,
        }
    }
}

pub struct Discriminator<T: Scalar = f32> {
    pub cfg: DiscriminatorConfig,
    conv1_w: Tensor<T>,
    conv1_b: Tensor<T>,
    conv2_w: Tensor<T>,
    conv2_b: Tensor<T>,
    conv3_w: Tensor<T>,
    conv3_b: Tensor<T>,
    head_w: Tensor<T>,
    head_b: Tensor<T>,
    pub kse: EmbeddingHead<T>,
}

const LEAKY_SLOPE: f64 = 0.2;

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: DiscriminatorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.image_size % 8 != 0 {
            return Err(Error::Config(format!(
                "discriminator image size {} must be divisible by 8",
                cfg.image_size
            )));
        }
        let n = cfg.keypoints;
        Ok(Discriminator {
            conv1_w: conv_init(rng, 32, 3, 3, 1.41),
            conv1_b: zeros_param(&[32]),
            conv2_w: conv_init(rng, 64, 32 + n, 3, 1.41),
            conv2_b: zeros_param(&[64]),
            conv3_w: conv_init(rng, 128, 64 + n, 3, 1.41),
            conv3_b: zeros_param(&[128]),
            head_w: conv_init(rng, 1, 128 + n, 1, 1.0),
            head_b: zeros_param(&[1]),
            kse: EmbeddingHead::new(n),
            cfg,
        })
    }

    pub fn params(&self, prefix: &str) -> Vec<Param<T>> {
        let p = |name: String, t: &Tensor<T>| Param::new(name, t.clone());
        let mut out = vec![
            p(format!("{prefix}.conv1.w"), &self.conv1_w),
            p(format!("{prefix}.conv1.b"), &self.conv1_b),
            p(format!("{prefix}.conv2.w"), &self.conv2_w),
            p(format!("{prefix}.conv2.b"), &self.conv2_b),
            p(format!("{prefix}.conv3.w"), &self.conv3_w),
            p(format!("{prefix}.conv3.b"), &self.conv3_b),
            p(format!("{prefix}.head.w"), &self.head_w),
            p(format!("{prefix}.head.b"), &self.head_b),
        ];
        out.extend(self.kse.params(&format!("{prefix}.kse")));
        out
    }

    /// Structural tensor at the finest fused resolution (S/2); coarser
    /// stages average-pool it down.
    fn structural_base(&self, kps: &KeypointSet<T>) -> Result<Tensor<T>> {
        let s2 = self.cfg.image_size / 2;
        if self.cfg.use_keypoints {
            // sigma is defined in pixels at the S/4 grid; the S/2 grid has
            // twice the pixel density, so the same physical spread is 2x.
            Ok(self.kse.structural(kps, s2, self.cfg.sigma * 2.0)?.h)
        } else {
            Ok(Tensor::zeros(&[self.cfg.keypoints, s2, s2]))
        }
    }

    /// Score an (image, keypoints) pair; strictly inside (0,1).
    pub fn discriminate(&self, img: &Tensor<T>, kps: &KeypointSet<T>) -> Result<Tensor<T>> {
        let s = self.cfg.image_size;
        if img.shape() != [3, s, s] {
            return Err(Error::shape(
                "discriminate",
                img.shape(),
                format!("expected [3,{s},{s}]"),
            ));
        }
        if kps.count() != self.cfg.keypoints {
            return Err(Error::shape(
                "discriminate",
                kps.coords().shape(),
                format!("expected {} keypoints", self.cfg.keypoints),
            ));
        }
        let h2 = self.structural_base(kps)?; // [N, S/2, S/2]
        let h4 = h2.resize_down(2)?;
        let h8 = h4.resize_down(2)?;

        let f1 = img
            .conv2d(&self.conv1_w, 1, 1)?
            .add_chan_bias(&self.conv1_b)?
            .leaky_relu(LEAKY_SLOPE)
            .resize_down(2)?;
        let f2 = Tensor::concat(&[f1, h2], 0)?
            .conv2d(&self.conv2_w, 1, 1)?
            .add_chan_bias(&self.conv2_b)?
            .leaky_relu(LEAKY_SLOPE)
            .resize_down(2)?;
        let f3 = Tensor::concat(&[f2, h4], 0)?
            .conv2d(&self.conv3_w, 1, 1)?
            .add_chan_bias(&self.conv3_b)?
            .leaky_relu(LEAKY_SLOPE)
            .resize_down(2)?;
        let logits = Tensor::concat(&[f3, h8], 0)?
            .conv2d(&self.head_w, 1, 0)?
            .add_chan_bias(&self.head_b)?;
        Ok(logits.mean_all().sigmoid())
    }
}
