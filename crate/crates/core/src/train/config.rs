use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::rng::fnv1a;
use crate::synth::DatasetSpec;

/// Full training configuration; maps 1:1 onto the flat `key = value`
/// config-file format. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    // dataset
    pub pairs: usize,
    pub train_fraction: f64,
    pub image_size: usize,
    pub planted_keypoints: usize,
    pub max_rotation: f64,
    pub max_translation: f64,
    pub max_scale_dev: f64,
    pub dropout_prob: f64,
    pub noise_amp: f64,
    // model
    pub keypoints: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub sigma: f64,
    pub res_blocks: usize,
    pub res_width: usize,
    // objective
    pub lambda_perc: f64,
    pub lambda_kp: f64,
    // optimization
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_interval: usize,
    pub seed: u64,
    // ablation switches
    pub gen_use_keypoints: bool,
    pub disc_use_keypoints: bool,
    pub use_warp: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pairs: 576,
            train_fraction: 512.0 / 576.0,
            image_size: 64,
            planted_keypoints: 32,
            max_rotation: 0.12,
            max_translation: 0.05,
            max_scale_dev: 0.08,
            dropout_prob: 0.1,
            noise_amp: 0.02,
            keypoints: 128,
            embed_dim: 64,
            heads: 4,
            sigma: 1.0,
            res_blocks: 6,
            res_width: 32,
            lambda_perc: 1.0,
            lambda_kp: 5.0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 4,
            steps: 2000,
            eval_interval: 200,
            seed: 0,
            gen_use_keypoints: true,
            disc_use_keypoints: true,
            use_warp: true,
        }
    }
}

macro_rules! config_keys {
    ($self:ident, $f:ident) => {
        $f!(pairs, usize);
        $f!(train_fraction, f64);
        $f!(image_size, usize);
        $f!(planted_keypoints, usize);
        $f!(max_rotation, f64);
        $f!(max_translation, f64);
        $f!(max_scale_dev, f64);
        $f!(dropout_prob, f64);
        $f!(noise_amp, f64);
        $f!(keypoints, usize);
        $f!(embed_dim, usize);
        $f!(heads, usize);
        $f!(sigma, f64);
        $f!(res_blocks, usize);
        $f!(res_width, usize);
        $f!(lambda_perc, f64);
        $f!(lambda_kp, f64);
        $f!(lr, f64);
        $f!(beta1, f64);
        $f!(beta2, f64);
        $f!(batch_size, usize);
        $f!(steps, usize);
        $f!(eval_interval, usize);
        $f!(seed, u64);
        $f!(gen_use_keypoints, bool);
        $f!(disc_use_keypoints, bool);
        $f!(use_warp, bool);
    };
}

impl TrainConfig {
    /// Parse the flat `key = value` format on top of the defaults.
    /// Lines starting with `#` and blank lines are ignored.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Assign one key from its textual value; unknown keys error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! try_set {
            ($field:ident, $ty:ty) => {
                if key == stringify!($field) {
                    self.$field = parse_value::<$ty>(key, value)?;
                    return Ok(());
                }
            };
        }
        config_keys!(self, try_set);
        Err(Error::Config(format!("unknown key `{key}`")))
    }

    /// Canonical text: every key in fixed order. Also the digest input.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($field:ident, $ty:ty) => {
                out.push_str(&format!("{} = {}\n", stringify!($field), self.$field));
            };
        }
        config_keys!(self, emit);
        out
    }

    /// 64-bit FNV-1a of the canonical config text.
    pub fn digest(&self) -> u64 {
        fnv1a(self.canonical_text().as_bytes())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            count: self.pairs,
            image_size: self.image_size,
            keypoint_count: self.planted_keypoints,
            max_rotation: self.max_rotation,
            max_translation: self.max_translation,
            max_scale_dev: self.max_scale_dev,
            dropout_prob: self.dropout_prob,
            noise_amp: self.noise_amp,
            seed: self.seed,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_perc: self.lambda_perc,
            lambda_kp: self.lambda_kp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_spec().validate()?;
        self.loss_weights().validate()?;
        if !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} outside (0,1)",
                self.train_fraction
            )));
        }
        if self.image_size % 8 != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be divisible by 8",
                self.image_size
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        for (name, v) in [
            ("keypoints", self.keypoints),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("res_blocks", self.res_blocks),
            ("res_width", self.res_width),
            ("batch_size", self.batch_size),
            ("steps", self.steps),
            ("eval_interval", self.eval_interval),
            ("pairs", self.pairs),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.keypoints < 3 {
            return Err(Error::Config("keypoints must be at least 3".into()));
        }
        for (name, v) in [("lr", self.lr), ("sigma", self.sigma)] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0,1)")));
            }
        }
        Ok(())
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_roundtrip_via_canonical_text() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let parsed = TrainConfig::parse(&cfg.canonical_text()).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.digest(), cfg.digest());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = TrainConfig::parse("learning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = TrainConfig::parse("# a comment\n\nsteps = 7\nsigma = 0.5\n").unwrap();
        assert_eq!(cfg.steps, 7);
        assert_eq!(cfg.sigma, 0.5);
    }

    #[test]
    fn digests_differ_when_any_key_differs() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn bad_values_error() {
        assert!(TrainConfig::parse("steps = banana\n").is_err());
        assert!(TrainConfig::parse("steps\n").is_err());
        assert!(TrainConfig::parse("train_fraction = 1.5\n").is_err());
    }
}
