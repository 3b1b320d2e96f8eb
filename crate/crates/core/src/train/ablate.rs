//! Ablation runner: sweeps one axis at a time from a base configuration,
//! optionally over several seeds, and reports one metric row per cell.

use crate::error::{Error, Result};
use crate::metrics::{fps_bench, MetricReport};
use crate::synth::make_pair;
use crate::train::config::TrainConfig;
use crate::train::runner::train;

/// Named module-switch combinations (the module ablation table rows).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationMode {
    /// Plain residual GAN: no keypoint conditioning anywhere, no warp.
    Basic,
    /// Keypoint-conditioned generator only.
    M1,
    /// Keypoint-conditioned discriminator only.
    M2,
    /// Both conditioned, but the reconstruction loss is unwarped.
    NoWarp,
    /// The full model.
    Full,
}

impl AblationMode {
    pub fn parse(s: &str) -> Result<AblationMode> {
        Ok(match s {
            "basic" => AblationMode::Basic,
            "m1" => AblationMode::M1,
            "m2" => AblationMode::M2,
            "no_hskd" | "no_warp" => AblationMode::NoWarp,
            "full" | "ours" => AblationMode::Full,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation mode `{other}` (expected basic|m1|m2|no_hskd|full)"
                )))
            }
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            AblationMode::Basic => "basic",
            AblationMode::M1 => "m1",
            AblationMode::M2 => "m2",
            AblationMode::NoWarp => "no_hskd",
            AblationMode::Full => "full",
        }
    }

    pub fn apply(&self, cfg: &mut TrainConfig) {
        let (gen, disc, warp) = match self {
            AblationMode::Basic => (false, false, false),
            AblationMode::M1 => (true, false, true),
            AblationMode::M2 => (false, true, true),
            AblationMode::NoWarp => (true, true, false),
            AblationMode::Full => (true, true, true),
        };
        cfg.gen_use_keypoints = gen;
        cfg.disc_use_keypoints = disc;
        cfg.use_warp = warp;
    }
}

/// One swept cell: which axis, the textual value, and the seed.
#[derive(Clone, Debug)]
pub struct AblateCell {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub config: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct AblateRow {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub report: MetricReport,
}

pub const ABLATE_CSV_HEADER: &str = "axis,value,seed,config_digest,psnr_db,ssim,feat_dist,fps";

/// Parse a grid file: one axis per line (`key = v1, v2, ...`), each swept
/// independently from the base config. `seeds = ...` multiplies every cell;
/// `ablation = ...` names switch combinations; `lambda = p:k, ...` sweeps
/// the loss-weight pair.
pub fn parse_grid(base: &TrainConfig, text: &str) -> Result<Vec<AblateCell>> {
    let mut seeds: Vec<u64> = vec![base.seed];
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, values) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("grid line {}: expected `key = v1, v2, ...`", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Error::Config(format!("grid line {}: no values", lineno + 1)));
        }
        if key == "seeds" {
            seeds = values
                .iter()
                .map(|v| {
                    v.parse::<u64>()
                        .map_err(|_| Error::Config(format!("bad seed `{v}`")))
                })
                .collect::<Result<Vec<_>>>()?;
        } else {
            axes.push((key, values));
        }
    }
    if axes.is_empty() {
        return Err(Error::Config("grid defines no axes".into()));
    }

    let mut cells = Vec::new();
    for (axis, values) in &axes {
        for value in values {
            for &seed in &seeds {
                let mut cfg = base.clone();
                cfg.seed = seed;
                match axis.as_str() {
                    "ablation" => AblationMode::parse(value)?.apply(&mut cfg),
                    "lambda" => {
                        let (p, k) = value.split_once(':').ok_or_else(|| {
                            Error::Config(format!("lambda value `{value}` must be `perc:kp`"))
                        })?;
                        cfg.set("lambda_perc", p.trim())?;
                        cfg.set("lambda_kp", k.trim())?;
                    }
                    other => cfg.set(other, value)?,
                }
                cfg.validate()?;
                cells.push(AblateCell {
                    axis: axis.clone(),
                    value: value.clone(),
                    seed,
                    config: cfg,
                });
            }
        }
    }
    Ok(cells)
}

/// Train and evaluate one cell.
pub fn run_cell(cell: &AblateCell, mut progress: impl FnMut(usize)) -> Result<AblateRow> {
    let out = train(&cell.config, |step, _, _| progress(step))?;
    let spec = cell.config.dataset_spec();
    let bench_pair = make_pair(&spec, 0)?;
    let fps = fps_bench(
        &out.models.detector,
        &out.models.generator,
        &bench_pair.source,
        &bench_pair.target,
        3,
        10,
    )?;
    Ok(AblateRow {
        axis: cell.axis.clone(),
        value: cell.value.clone(),
        seed: cell.seed,
        report: MetricReport {
            psnr_db: out.final_eval.psnr_db,
            ssim: out.final_eval.ssim,
            feat_dist: out.final_eval.feat_dist,
            fps: fps.fps,
            pair_count: cell.config.pairs
                - (cell.config.pairs as f64 * cell.config.train_fraction).round() as usize,
            config_digest: cell.config.digest(),
        },
    })
}

pub fn rows_to_csv(rows: &[AblateRow]) -> String {
    let mut out = String::from(ABLATE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.axis,
            r.value,
            r.seed,
            r.report.csv_row()
        ));
    }
    out
}
