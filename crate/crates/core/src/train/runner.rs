//! Training loop: batch assembly, the two-phase adversarial step, periodic
//! held-out evaluation, and checkpoint/history emission.

use rand::Rng;

use crate::detector::{fit_affine, warp, DetectorConfig, KeypointDetector, KeypointSet};
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::losses::{
    loss_adv_d, loss_adv_g, loss_kp, loss_perc, FeatureExtractor, FEATURE_EXTRACTOR_SEED,
};
use crate::metrics::{feat_dist, psnr, ssim};
use crate::params::{Param, ParamSet};
use crate::rng::stream;
use crate::synth::{make_pair, split, ImagePair};
use crate::tensor::Tensor;
use crate::train::adam::Adam;
use crate::train::checkpoint::Checkpoint;
use crate::train::config::TrainConfig;

/// Distinct RNG stream tags under the run seed.
const PARAM_STREAM: u64 = 0x70;
const BATCH_STREAM: u64 = 0xB0;

pub struct Models {
    pub detector: KeypointDetector<f32>,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub feat: FeatureExtractor<f32>,
    pub feat_eval: FeatureExtractor<f64>,
    pub ridge: f64,
}

impl Models {
    pub fn new(cfg: &TrainConfig) -> Result<Models> {
        cfg.validate()?;
        let mut rng = stream(cfg.seed, PARAM_STREAM);
        let det_cfg = DetectorConfig {
            image_size: cfg.image_size,
            keypoints: cfg.keypoints,
            embed_dim: cfg.embed_dim,
            heads: cfg.heads,
            ..DetectorConfig::default()
        };
        let gen_cfg = GeneratorConfig {
            image_size: cfg.image_size,
            keypoints: cfg.keypoints,
            res_blocks: cfg.res_blocks,
            res_width: cfg.res_width,
            sigma: cfg.sigma,
            use_keypoints: cfg.gen_use_keypoints,
        };
        let disc_cfg = DiscriminatorConfig {
            image_size: cfg.image_size,
            keypoints: cfg.keypoints,
            sigma: cfg.sigma,
            use_keypoints: cfg.disc_use_keypoints,
        };
        let ridge = det_cfg.ridge;
        Ok(Models {
            detector: KeypointDetector::new(det_cfg, &mut rng)?,
            generator: Generator::new(gen_cfg, &mut rng)?,
            discriminator: Discriminator::new(disc_cfg, &mut rng)?,
            feat: FeatureExtractor::new(FEATURE_EXTRACTOR_SEED),
            feat_eval: FeatureExtractor::new(FEATURE_EXTRACTOR_SEED),
            ridge,
        })
    }

    /// Every checkpointable parameter, uniquely named.
    pub fn param_set(&self) -> Result<ParamSet<f32>> {
        let mut all: Vec<Param<f32>> = Vec::new();
        all.extend(self.detector.params("det"));
        all.extend(self.generator.params("gen"));
        all.extend(self.discriminator.params("disc"));
        ParamSet::new(all)
    }

    /// Parameters updated by the generator-side optimizer (generator and
    /// detector train jointly; the discriminator trains alone).
    pub fn gen_side(&self) -> Vec<Tensor<f32>> {
        self.detector
            .params("det")
            .into_iter()
            .chain(self.generator.params("gen"))
            .map(|p| p.tensor)
            .collect()
    }

    pub fn disc_side(&self) -> Vec<Tensor<f32>> {
        self.discriminator
            .params("disc")
            .into_iter()
            .map(|p| p.tensor)
            .collect()
    }

    /// Inference path: detect on the raw source, then generate.
    pub fn infer(&self, source: &Tensor<f32>) -> Result<Tensor<f32>> {
        let kps = self.detector.detect(source)?;
        self.generator.generate(source, &kps)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_perc: f64,
    pub g_kp: f64,
    pub g_total: f64,
}

impl StepLosses {
    fn all_finite(&self) -> bool {
        [self.d_loss, self.g_adv, self.g_perc, self.g_kp, self.g_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn mean_of(terms: Vec<Tensor<f32>>) -> Result<Tensor<f32>> {
    let n = terms.len();
    let mut acc = terms[0].clone();
    for t in &terms[1..] {
        acc = acc.add(t)?;
    }
    Ok(acc.scale(1.0 / n as f64))
}

/// One optimization step over a batch:
/// discriminator update from real/fake pairs (generated image and detector
/// gradients blocked), then a joint generator+detector update through the
/// refreshed discriminator, the perceptual distance, and the warped
/// reconstruction.
pub fn train_step(
    models: &Models,
    batch: &[&ImagePair],
    opt_d: &mut Adam<f32>,
    opt_g: &mut Adam<f32>,
    cfg: &TrainConfig,
    step_index: usize,
) -> Result<StepLosses> {
    assert!(!batch.is_empty(), "empty batch");
    let weights = cfg.loss_weights();

    struct Sample<'a> {
        pair: &'a ImagePair,
        kp_src: KeypointSet<f32>,
        kp_dst: KeypointSet<f32>,
        fake: Tensor<f32>,
    }

    // Phase A: score real/fake pairs and update the discriminator. The
    // generated image and both keypoint sets enter detached, so gradients
    // stay inside the discriminator.
    let mut samples = Vec::with_capacity(batch.len());
    let mut d_terms = Vec::with_capacity(batch.len());
    for pair in batch {
        let kp_src = models.detector.detect(&pair.source)?;
        let kp_dst = models.detector.detect(&pair.target)?;
        let fake = models.generator.generate(&pair.source, &kp_src)?;
        let d_real = models
            .discriminator
            .discriminate(&pair.target, &kp_dst.detach())?;
        let d_fake = models
            .discriminator
            .discriminate(&fake.detach(), &kp_dst.detach())?;
        d_terms.push(loss_adv_d(&d_real, &d_fake)?);
        samples.push(Sample {
            pair,
            kp_src,
            kp_dst,
            fake,
        });
    }
    let l_d = mean_of(d_terms)?;
    let d_loss = l_d.item() as f64;
    l_d.backward()?;
    opt_d.step();
    opt_d.zero_grads();
    opt_g.zero_grads();

    // Phase B: generator-side objective through the updated discriminator.
    let mut adv_terms = Vec::with_capacity(batch.len());
    let mut perc_terms = Vec::with_capacity(batch.len());
    let mut kp_terms = Vec::with_capacity(batch.len());
    for s in &samples {
        let d_fake = models
            .discriminator
            .discriminate(&s.fake, &s.kp_dst.detach())?;
        adv_terms.push(loss_adv_g(&d_fake)?);
        perc_terms.push(loss_perc(&s.fake, &s.pair.target, &models.feat)?);

        // Reconstruction on the warped source. The warped image's keypoints
        // are the detected source keypoints mapped through the fitted
        // transform (exact under the warp, and differentiable).
        let (warped, kp_warped) = if cfg.use_warp {
            let affine = fit_affine(&s.kp_src, &s.kp_dst, models.ridge)?;
            (
                warp(&s.pair.source, &affine)?,
                affine.apply_kps(&s.kp_src)?,
            )
        } else {
            (s.pair.source.clone(), s.kp_src.clone())
        };
        let gen_warped = models.generator.generate(&warped, &kp_warped)?;
        kp_terms.push(loss_kp(&gen_warped, &s.pair.target)?);
    }
    let l_adv = mean_of(adv_terms)?;
    let l_perc = mean_of(perc_terms)?;
    let l_kp = mean_of(kp_terms)?;
    let total = crate::losses::total_loss(&l_adv, &l_perc, &l_kp, &weights)?;

    let losses = StepLosses {
        d_loss,
        g_adv: l_adv.item() as f64,
        g_perc: l_perc.item() as f64,
        g_kp: l_kp.item() as f64,
        g_total: total.item() as f64,
    };
    if !losses.all_finite() {
        return Err(Error::NonFinite {
            step: step_index,
            detail: format!(
                "losses {losses:?}, parameter norm {:.6e}",
                models.param_set()?.value_norm()
            ),
        });
    }

    total.backward()?;
    opt_g.step();
    opt_g.zero_grads();
    opt_d.zero_grads();

    Ok(losses)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
    pub feat_dist: f64,
}

/// Mean metrics of the inference path over held-out pairs.
pub fn evaluate(models: &Models, test_pairs: &[ImagePair]) -> Result<EvalMetrics> {
    assert!(!test_pairs.is_empty(), "empty evaluation set");
    let mut acc = EvalMetrics::default();
    for pair in test_pairs {
        let xhat = models.infer(&pair.source)?;
        acc.psnr_db += psnr(&xhat, &pair.target, 1.0)?;
        acc.ssim += ssim(&xhat, &pair.target)?;
        acc.feat_dist += feat_dist(&xhat, &pair.target, &models.feat_eval)?;
    }
    let n = test_pairs.len() as f64;
    Ok(EvalMetrics {
        psnr_db: acc.psnr_db / n,
        ssim: acc.ssim / n,
        feat_dist: acc.feat_dist / n,
    })
}

pub struct TrainOutcome {
    pub models: Models,
    pub final_eval: EvalMetrics,
    pub last_losses: StepLosses,
    pub history_csv: String,
    pub checkpoint: Checkpoint,
}

pub const HISTORY_HEADER: &str =
    "step,d_loss,g_adv,g_perc,g_kp,g_total,eval_psnr,eval_ssim,eval_feat";

/// Materialize the train/test pair lists for a config.
pub fn build_dataset(cfg: &TrainConfig) -> Result<(Vec<ImagePair>, Vec<ImagePair>)> {
    let spec = cfg.dataset_spec();
    let (train_range, test_range) = split(&spec, cfg.train_fraction);
    let train = train_range
        .map(|i| make_pair(&spec, i))
        .collect::<Result<Vec<_>>>()?;
    let test = test_range
        .map(|i| make_pair(&spec, i))
        .collect::<Result<Vec<_>>>()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(
            "train/test split leaves an empty side".into(),
        ));
    }
    Ok((train, test))
}

/// Deterministic full training run; emits the metric history as CSV text
/// and a final checkpoint.
pub fn train(
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, &StepLosses, Option<&EvalMetrics>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_pairs, test_pairs) = build_dataset(cfg)?;
    let models = Models::new(cfg)?;
    let mut opt_d = Adam::new(&models.disc_side(), cfg.lr, cfg.beta1, cfg.beta2);
    let mut opt_g = Adam::new(&models.gen_side(), cfg.lr, cfg.beta1, cfg.beta2);
    let mut batch_rng = stream(cfg.seed, BATCH_STREAM);

    let mut history = String::from(HISTORY_HEADER);
    history.push('\n');
    let mut last = StepLosses::default();
    let mut final_eval = EvalMetrics::default();

    for step in 1..=cfg.steps {
        let batch: Vec<&ImagePair> = (0..cfg.batch_size)
            .map(|_| &train_pairs[batch_rng.gen_range(0..train_pairs.len())])
            .collect();
        last = train_step(&models, &batch, &mut opt_d, &mut opt_g, cfg, step)?;

        let eval = if step % cfg.eval_interval == 0 || step == cfg.steps {
            let e = evaluate(&models, &test_pairs)?;
            final_eval = e;
            Some(e)
        } else {
            None
        };
        history.push_str(&format!(
            "{},{},{},{},{},{}",
            step, last.d_loss, last.g_adv, last.g_perc, last.g_kp, last.g_total
        ));
        match &eval {
            Some(e) => {
                history.push_str(&format!(",{},{},{}\n", e.psnr_db, e.ssim, e.feat_dist))
            }
            None => history.push_str(",,,\n"),
        }
        progress(step, &last, eval.as_ref());
    }

    let params = models.param_set()?;
    let checkpoint = Checkpoint::from_params(
        cfg.digest(),
        cfg.steps as u64,
        &params,
        vec![
            (
                "disc".into(),
                opt_d.steps_taken(),
                opt_d.state(),
            ),
            ("gen".into(), opt_g.steps_taken(), opt_g.state()),
        ],
    );

    Ok(TrainOutcome {
        models,
        final_eval,
        last_losses: last,
        history_csv: history,
        checkpoint,
    })
}

/// Rebuild models from a config and load checkpoint weights into them.
pub fn restore_models(cfg: &TrainConfig, checkpoint: &Checkpoint) -> Result<Models> {
    let models = Models::new(cfg)?;
    checkpoint.apply_params(&models.param_set()?)?;
    Ok(models)
}
