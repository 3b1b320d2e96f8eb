//! Keypoint-conditioned generator: a stride-4 down path, residual blocks
//! over the image features concatenated with the structural embedding, and
//! a mirrored resize-then-conv up path squashed to [0,1].

use rand_chacha::ChaCha8Rng;

use crate::detector::KeypointSet;
use crate::embedding::EmbeddingHead;
use crate::error::{Error, Result};
use crate::params::{conv_init, zeros_param, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub keypoints: usize,
    pub res_blocks: usize,
    /// Bottleneck width inside each residual block.
    pub res_width: usize,
    /// Gaussian width (pixels at the S/4 embedding grid).
    pub sigma: f64,
    /// When off, the structural embedding is replaced by zeros: the
    /// architecture (and capacity) stay fixed, the conditioning is removed.
    pub use_keypoints: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            image_size: 64,
            keypoints: 128,
            res_blocks: 6,
            res_width: 32,
            sigma: 1.0,
            use_keypoints: true,
        }
    }
}

impl GeneratorConfig {
    pub fn grid_size(&self) -> usize {
        self.image_size / 4
    }

    fn fused_channels(&self) -> usize {
        64 + self.keypoints
    }
}

struct ResBlock<T: Scalar> {
    conv1_w: Tensor<T>,
    conv1_b: Tensor<T>,
    conv2_w: Tensor<T>,
    conv2_b: Tensor<T>,
}

impl<T: Scalar> ResBlock<T> {
    fn new(channels: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            conv1_w: conv_init(rng, width, channels, 3, 1.41),
            conv1_b: zeros_param(&[width]),
            // Small second conv keeps each block near the identity at init.
            conv2_w: conv_init(rng, channels, width, 3, 0.1),
            conv2_b: zeros_param(&[channels]),
        }
    }

    /// x + conv(relu(norm(conv(x)))), identity when both kernels are zero.
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let inner = x
            .conv2d(&self.conv1_w, 1, 1)?
            .add_chan_bias(&self.conv1_b)?
            .norm_chans(1e-5)?
            .relu()
            .conv2d(&self.conv2_w, 1, 1)?
            .add_chan_bias(&self.conv2_b)?;
        x.add(&inner)
    }
}

pub struct Generator<T: Scalar = f32> {
    pub cfg: GeneratorConfig,
    down1_w: Tensor<T>,
    down1_b: Tensor<T>,
    down2_w: Tensor<T>,
    down2_b: Tensor<T>,
    pub kse: EmbeddingHead<T>,
    blocks: Vec<ResBlock<T>>,
    up1_w: Tensor<T>,
    up1_b: Tensor<T>,
    up2_w: Tensor<T>,
    up2_b: Tensor<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(cfg: GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "generator image size {} must be divisible by 4",
                cfg.image_size
            )));
        }
        if cfg.res_blocks == 0 {
            return Err(Error::Config("at least one residual block required".into()));
        }
        let fused = cfg.fused_channels();
        let blocks = (0..cfg.res_blocks)
            .map(|_| ResBlock::new(fused, cfg.res_width, rng))
            .collect();
        Ok(Generator {
            down1_w: conv_init(rng, 32, 3, 3, 1.41),
            down1_b: zeros_param(&[32]),
            down2_w: conv_init(rng, 64, 32, 3, 1.41),
            down2_b: zeros_param(&[64]),
            kse: EmbeddingHead::new(cfg.keypoints),
            blocks,
            up1_w: conv_init(rng, 32, fused, 3, 1.41),
            up1_b: zeros_param(&[32]),
            up2_w: conv_init(rng, 3, 32, 3, 1.0),
            up2_b: zeros_param(&[3]),
            cfg,
        })
    }

    pub fn params(&self, prefix: &str) -> Vec<Param<T>> {
        let p = |name: String, t: &Tensor<T>| Param::new(name, t.clone());
        let mut out = vec![
            p(format!("{prefix}.down1.w"), &self.down1_w),
            p(format!("{prefix}.down1.b"), &self.down1_b),
            p(format!("{prefix}.down2.w"), &self.down2_w),
            p(format!("{prefix}.down2.b"), &self.down2_b),
        ];
        out.extend(self.kse.params(&format!("{prefix}.kse")));
        for (i, b) in self.blocks.iter().enumerate() {
            out.push(p(format!("{prefix}.res{i}.c1.w"), &b.conv1_w));
            out.push(p(format!("{prefix}.res{i}.c1.b"), &b.conv1_b));
            out.push(p(format!("{prefix}.res{i}.c2.w"), &b.conv2_w));
            out.push(p(format!("{prefix}.res{i}.c2.b"), &b.conv2_b));
        }
        out.push(p(format!("{prefix}.up1.w"), &self.up1_w));
        out.push(p(format!("{prefix}.up1.b"), &self.up1_b));
        out.push(p(format!("{prefix}.up2.w"), &self.up2_w));
        out.push(p(format!("{prefix}.up2.b"), &self.up2_b));
        out
    }

    /// Structural embedding consumed by the residual pathway; zeros when
    /// keypoint conditioning is off.
    fn structural(&self, kps: &KeypointSet<T>) -> Result<Tensor<T>> {
        let s = self.cfg.grid_size();
        if self.cfg.use_keypoints {
            Ok(self.kse.structural(kps, s, self.cfg.sigma)?.h)
        } else {
            Ok(Tensor::zeros(&[self.cfg.keypoints, s, s]))
        }
    }

    /// Synthesize the target-stain image for `img` with its keypoints.
    pub fn generate(&self, img: &Tensor<T>, kps: &KeypointSet<T>) -> Result<Tensor<T>> {
        let s = self.cfg.image_size;
        if img.shape() != [3, s, s] {
            return Err(Error::shape(
                "generate",
                img.shape(),
                format!("expected [3,{s},{s}]"),
            ));
        }
        if kps.count() != self.cfg.keypoints {
            return Err(Error::shape(
                "generate",
                kps.coords().shape(),
                format!("expected {} keypoints", self.cfg.keypoints),
            ));
        }
        let f1 = img
            .conv2d(&self.down1_w, 1, 1)?
            .add_chan_bias(&self.down1_b)?
            .relu()
            .resize_down(2)?;
        let f_down = f1
            .conv2d(&self.down2_w, 1, 1)?
            .add_chan_bias(&self.down2_b)?
            .relu()
            .resize_down(2)?;
        let h = self.structural(kps)?;
        let mut f = Tensor::concat(&[f_down, h], 0)?;
        for b in &self.blocks {
            f = b.forward(&f)?;
        }
        let u1 = f
            .resize_up(2)?
            .conv2d(&self.up1_w, 1, 1)?
            .add_chan_bias(&self.up1_b)?
            .relu();
        let out = u1
            .resize_up(2)?
            .conv2d(&self.up2_w, 1, 1)?
            .add_chan_bias(&self.up2_b)?;
        Ok(out.sigmoid())
    }
}
