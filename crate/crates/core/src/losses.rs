//! Training objectives: reconstruction on the warped source, perceptual
//! distance through a fixed random feature extractor, the non-saturating
//! adversarial pair, and their weighted combination.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::conv_init;
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Trade-off weights of the combined objective.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub lambda_perc: f64,
    pub lambda_kp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_perc: 1.0,
            lambda_kp: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_perc", self.lambda_perc), ("lambda_kp", self.lambda_kp)] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Clamp floor inside the adversarial logs.
pub const LOG_CLAMP: f64 = 1e-7;

/// Mean absolute difference (the reconstruction loss on warped inputs).
pub fn loss_kp<T: Scalar>(generated: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if generated.shape() != target.shape() {
        return Err(Error::dim("loss_kp", generated.shape(), target.shape()));
    }
    Ok(generated.sub(target)?.abs().mean_all())
}

/// Fixed, never-trained conv feature pyramid with per-stage channel
/// normalization; a deterministic stand-in for a pretrained perceptual
/// network. Weights are frozen at construction (seeded) and excluded from
/// every optimizer.
pub struct FeatureExtractor<T: Scalar = f32> {
    weights: Vec<Tensor<T>>, // 3 stages: 3->16, 16->32, 32->64
}

pub const FEATURE_EXTRACTOR_SEED: u64 = 0xFEA7;

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng: ChaCha8Rng = stream(seed, 0);
        let dims = [(16usize, 3usize), (32, 16), (64, 32)];
        let weights = dims
            .iter()
            .map(|&(c_out, c_in)| conv_init::<T>(&mut rng, c_out, c_in, 3, 1.41).detach())
            .collect();
        FeatureExtractor { weights }
    }

    /// Per-stage normalized features at strides 2, 4, 8.
    pub fn features(&self, img: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut stages = Vec::with_capacity(self.weights.len());
        let mut x = img.clone();
        for w in &self.weights {
            x = x
                .conv2d(w, 1, 1)?
                .leaky_relu(0.2)
                .resize_down(2)?
                .norm_chans(1e-5)?;
            stages.push(x.clone());
        }
        Ok(stages)
    }
}

impl<T: Scalar> Default for FeatureExtractor<T> {
    fn default() -> Self {
        Self::new(FEATURE_EXTRACTOR_SEED)
    }
}

/// Sum over stages of the mean squared feature difference.
pub fn loss_perc<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    fe: &FeatureExtractor<T>,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dim("loss_perc", a.shape(), b.shape()));
    }
    let fa = fe.features(a)?;
    let fb = fe.features(b)?;
    let mut total = Tensor::scalar(T::ZERO);
    for (xa, xb) in fa.iter().zip(fb.iter()) {
        let d = xa.sub(xb)?;
        total = total.add(&d.mul(&d)?.mean_all())?;
    }
    Ok(total)
}

/// Discriminator objective: -log D(real) - log(1 - D(fake)).
pub fn loss_adv_d<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<Tensor<T>> {
    check_score("loss_adv_d", d_real)?;
    check_score("loss_adv_d", d_fake)?;
    let real_term = d_real.ln_clamped(LOG_CLAMP).neg();
    let fake_term = d_fake.neg().add_const(1.0).ln_clamped(LOG_CLAMP).neg();
    real_term.add(&fake_term)
}

/// Non-saturating generator objective: -log D(fake).
pub fn loss_adv_g<T: Scalar>(d_fake: &Tensor<T>) -> Result<Tensor<T>> {
    check_score("loss_adv_g", d_fake)?;
    Ok(d_fake.ln_clamped(LOG_CLAMP).neg())
}

fn check_score<T: Scalar>(op: &'static str, s: &Tensor<T>) -> Result<()> {
    if s.numel() != 1 {
        return Err(Error::shape(op, s.shape(), "expected a scalar score"));
    }
    let v = s.item().to_f64();
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Contract(format!("{op}: score {v} outside (0,1)")));
    }
    Ok(())
}

/// adv + lambda_perc * perc + lambda_kp * kp.
pub fn total_loss<T: Scalar>(
    adv: &Tensor<T>,
    perc: &Tensor<T>,
    kp: &Tensor<T>,
    w: &LossWeights,
) -> Result<Tensor<T>> {
    adv.add(&perc.scale(w.lambda_perc))?
        .add(&kp.scale(w.lambda_kp))
}
