//! Procedural generator of misaligned stain-like image pairs with planted
//! ground truth. A pair shares one scene of elliptical "nuclei" over a
//! smooth textured background; the target view recolors the scene, moves it
//! by a random affine, drops structures, and adds bounded noise. Scenes are
//! analytic, so the target is rendered in its own frame with zero
//! resampling error and the planted transform is exact by construction.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::detector::{AffineTransform, KeypointSet};
use crate::error::{Error, Result};
use crate::rng::{mix, stream};
use crate::tensor::Tensor;

/// Bounds and sizing for a generated dataset.
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub count: usize,
    pub image_size: usize,
    pub keypoint_count: usize,
    /// radians
    pub max_rotation: f64,
    /// fraction of the image side
    pub max_translation: f64,
    /// isotropic scale sampled in [1 - dev, 1 + dev]
    pub max_scale_dev: f64,
    /// per-structure disappearance probability in the target view
    pub dropout_prob: f64,
    /// uniform pixel noise amplitude on the target
    pub noise_amp: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            count: 576,
            image_size: 64,
            keypoint_count: 32,
            max_rotation: 0.12,
            max_translation: 0.05,
            max_scale_dev: 0.08,
            dropout_prob: 0.1,
            noise_amp: 0.02,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 {
            return Err(Error::Config(format!(
                "image size {} is below the minimum of 16",
                self.image_size
            )));
        }
        if self.keypoint_count < 3 {
            return Err(Error::Config("at least 3 planted keypoints required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::Config(format!(
                "dropout probability {} outside [0,1)",
                self.dropout_prob
            )));
        }
        for (name, v) in [
            ("max_rotation", self.max_rotation),
            ("max_translation", self.max_translation),
            ("max_scale_dev", self.max_scale_dev),
            ("noise_amp", self.noise_amp),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        // (1 - dev)^2 >= 0.5 keeps the planted affine comfortably invertible.
        if self.max_scale_dev > 0.29 {
            return Err(Error::Config(format!(
                "max_scale_dev {} exceeds the invertibility bound 0.29",
                self.max_scale_dev
            )));
        }
        if self.max_translation > 0.15 {
            return Err(Error::Config(format!(
                "max_translation {} exceeds the documented bound 0.15",
                self.max_translation
            )));
        }
        if self.max_rotation > 0.6 {
            return Err(Error::Config(format!(
                "max_rotation {} exceeds the documented bound 0.6 rad",
                self.max_rotation
            )));
        }
        Ok(())
    }
}

/// One aligned record: the source view, the misaligned recolored target
/// view, and the planted ground truth relating them.
pub struct ImagePair {
    pub source: Tensor<f32>,
    pub target: Tensor<f32>,
    pub planted_affine: AffineTransform<f32>,
    pub planted_keypoints: KeypointSet<f32>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub phi: f64,
    pub class_id: usize,
    pub brightness: f64,
}

/// Smooth low-frequency scalar field in [0,1]: the "tissue" texture.
#[derive(Clone, Debug)]
struct BgField {
    waves: [(f64, f64, f64, f64); 4], // (amp, kx, ky, phase)
}

impl BgField {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut waves = [(0.0, 0.0, 0.0, 0.0); 4];
        for w in &mut waves {
            *w = (
                rng.gen_range(0.08..0.22),
                rng.gen_range(0.6..2.8),
                rng.gen_range(0.6..2.8),
                rng.gen_range(0.0..std::f64::consts::TAU),
            );
        }
        BgField { waves }
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        let mut v = 0.5;
        for &(a, kx, ky, ph) in &self.waves {
            v += a * (kx * x + ky * y + ph).sin();
        }
        v.clamp(0.0, 1.0)
    }
}

const SRC_BG: ([f64; 3], [f64; 3]) = ([0.93, 0.87, 0.93], [0.78, 0.70, 0.86]);
const DST_BG: ([f64; 3], [f64; 3]) = ([0.96, 0.93, 0.87], [0.86, 0.78, 0.64]);
const SRC_CLASS: [[f64; 3]; 3] = [
    [0.36, 0.20, 0.50],
    [0.52, 0.30, 0.60],
    [0.70, 0.42, 0.66],
];
const DST_CLASS: [[f64; 3]; 3] = [
    [0.30, 0.17, 0.09],
    [0.47, 0.29, 0.14],
    [0.65, 0.44, 0.25],
];

/// Soft elliptical coverage in [0,1]; 0.5 exactly on the ellipse boundary.
fn coverage(b: &Blob, x: f64, y: f64) -> f64 {
    let (s, c) = b.phi.sin_cos();
    let dx = x - b.cx;
    let dy = y - b.cy;
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    let q = (u / b.rx) * (u / b.rx) + (v / b.ry) * (v / b.ry);
    // The transition is wide enough to survive bilinear resampling with its
    // 0.5 level set close to the true ellipse boundary.
    1.0 / (1.0 + ((q - 1.0) / 0.12).exp())
}

/// Full analytic description of one pair; pairs are pure functions of
/// (spec.seed, index).
pub struct Scene {
    pub image_size: usize,
    pub keypoint_count: usize,
    /// Sorted by salience (area, descending); the first keypoint_count
    /// blobs are the planted keypoints.
    pub blobs: Vec<Blob>,
    pub affine: AffineTransform<f32>,
    pub dropped: Vec<bool>,
    bg: BgField,
    noise_amp: f64,
    noise_seed: u64,
    pair_seed: u64,
}

impl Scene {
    pub fn generate(spec: &DatasetSpec, index: usize) -> Result<Scene> {
        spec.validate()?;
        let pair_seed = mix(spec.seed, index as u64);
        let mut rng = stream(spec.seed, index as u64);

        // Draw order is part of the format: affine, background, blobs,
        // dropout, noise stream.
        let s_px = spec.image_size as f64;
        let rotation = rng.gen_range(-spec.max_rotation..=spec.max_rotation);
        let scale = rng.gen_range(1.0 - spec.max_scale_dev..=1.0 + spec.max_scale_dev);
        let t_bound = spec.max_translation * s_px;
        let tx_px = rng.gen_range(-t_bound..=t_bound);
        let ty_px = rng.gen_range(-t_bound..=t_bound);
        let to_norm = 2.0 / (s_px - 1.0);
        let affine = AffineTransform::<f32>::from_parts(
            rotation,
            scale,
            tx_px * to_norm,
            ty_px * to_norm,
        )?;

        let bg = BgField::sample(&mut rng);

        let extra = (spec.keypoint_count / 4).max(4);
        let m = spec.keypoint_count + extra;
        let mut blobs = Vec::with_capacity(m);
        for _ in 0..m {
            // Polar placement keeps the draw count fixed and the blobs
            // inside a disk that survives warping without clipping.
            let r = 0.60 * rng.gen_range(0.0f64..1.0).sqrt();
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            blobs.push(Blob {
                cx: r * ang.cos(),
                cy: r * ang.sin(),
                rx: rng.gen_range(0.09..0.17),
                ry: rng.gen_range(0.09..0.17),
                phi: rng.gen_range(0.0..std::f64::consts::PI),
                class_id: rng.gen_range(0..3usize),
                brightness: rng.gen_range(0.8..1.0),
            });
        }
        // Salience = area; stable order with an index tie-break.
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            let aa = blobs[a].rx * blobs[a].ry;
            let ab = blobs[b].rx * blobs[b].ry;
            ab.partial_cmp(&aa).unwrap().then(a.cmp(&b))
        });
        let blobs: Vec<Blob> = order.into_iter().map(|i| blobs[i].clone()).collect();

        let dropped: Vec<bool> = (0..m)
            .map(|_| rng.gen_range(0.0f64..1.0) < spec.dropout_prob)
            .collect();
        let noise_seed = rng.gen::<u64>();

        Ok(Scene {
            image_size: spec.image_size,
            keypoint_count: spec.keypoint_count,
            blobs,
            affine,
            dropped,
            bg,
            noise_amp: spec.noise_amp,
            noise_seed,
            pair_seed,
        })
    }

    pub fn planted_keypoints(&self) -> Result<KeypointSet<f32>> {
        let pts: Vec<(f64, f64)> = self.blobs[..self.keypoint_count]
            .iter()
            .map(|b| (b.cx, b.cy))
            .collect();
        KeypointSet::from_points(&pts)
    }

    /// Blob geometry as seen in the target frame. The planted affine maps
    /// rotation+isotropic scale+translation, so ellipses stay ellipses.
    pub fn target_blob(&self, i: usize) -> Blob {
        let b = &self.blobs[i];
        let m = self.affine.matrix().to_vec();
        let (a00, a01, a02, a10, a11, a12) = (
            m[0] as f64,
            m[1] as f64,
            m[2] as f64,
            m[3] as f64,
            m[4] as f64,
            m[5] as f64,
        );
        let scale = (a00 * a00 + a10 * a10).sqrt();
        let rot = a10.atan2(a00);
        Blob {
            cx: a00 * b.cx + a01 * b.cy + a02,
            cy: a10 * b.cx + a11 * b.cy + a12,
            rx: b.rx * scale,
            ry: b.ry * scale,
            phi: b.phi + rot,
            class_id: b.class_id,
            brightness: b.brightness,
        }
    }

    fn render(&self, target_view: bool) -> Tensor<f32> {
        let s = self.image_size;
        let inv = self
            .affine
            .inverse()
            .expect("planted affine is invertible by construction")
            .matrix()
            .to_vec();
        let (bg_a, bg_b) = if target_view { DST_BG } else { SRC_BG };
        let classes = if target_view { &DST_CLASS } else { &SRC_CLASS };

        let mut img = vec![0f32; 3 * s * s];
        // Background first.
        for yi in 0..s {
            let y = axis(yi, s);
            for xi in 0..s {
                let x = axis(xi, s);
                // The tissue field rides along with the structures.
                let (fx, fy) = if target_view {
                    (
                        inv[0] as f64 * x + inv[1] as f64 * y + inv[2] as f64,
                        inv[3] as f64 * x + inv[4] as f64 * y + inv[5] as f64,
                    )
                } else {
                    (x, y)
                };
                let t = self.bg.value(fx, fy);
                for c in 0..3 {
                    img[(c * s + yi) * s + xi] =
                        (bg_a[c] + (bg_b[c] - bg_a[c]) * t) as f32;
                }
            }
        }
        // Blobs composited in salience order, restricted to bounding boxes.
        for (i, _) in self.blobs.iter().enumerate() {
            if target_view && self.dropped[i] {
                continue;
            }
            let b = if target_view {
                self.target_blob(i)
            } else {
                self.blobs[i].clone()
            };
            let color = classes[b.class_id];
            let radius = 1.9 * b.rx.max(b.ry);
            let (x0, x1) = axis_range(b.cx - radius, b.cx + radius, s);
            let (y0, y1) = axis_range(b.cy - radius, b.cy + radius, s);
            for yi in y0..y1 {
                let y = axis(yi, s);
                for xi in x0..x1 {
                    let x = axis(xi, s);
                    let cov = coverage(&b, x, y) as f32;
                    if cov > 1e-4 {
                        for c in 0..3 {
                            let px = &mut img[(c * s + yi) * s + xi];
                            let blob_c = (color[c] * b.brightness) as f32;
                            *px = *px * (1.0 - cov) + blob_c * cov;
                        }
                    }
                }
            }
        }
        if target_view && self.noise_amp > 0.0 {
            let mut nrng = stream(self.noise_seed, 0);
            let amp = self.noise_amp as f32;
            for v in &mut img {
                *v += nrng.gen_range(-amp..=amp);
            }
        }
        for v in &mut img {
            *v = v.clamp(0.0, 1.0);
        }
        Tensor::from_vec(&[3, s, s], img).expect("render shape")
    }

    pub fn render_source(&self) -> Tensor<f32> {
        self.render(false)
    }

    pub fn render_target(&self) -> Tensor<f32> {
        self.render(true)
    }

    /// Soft union of blob coverage in the requested view (no dropout applied
    /// in the source view).
    pub fn structure_mask(&self, target_view: bool) -> Tensor<f32> {
        let s = self.image_size;
        let mut mask = vec![0f32; s * s];
        for i in 0..self.blobs.len() {
            if target_view && self.dropped[i] {
                continue;
            }
            let b = if target_view {
                self.target_blob(i)
            } else {
                self.blobs[i].clone()
            };
            for yi in 0..s {
                let y = axis(yi, s);
                for xi in 0..s {
                    let x = axis(xi, s);
                    let cov = coverage(&b, x, y) as f32;
                    let px = &mut mask[yi * s + xi];
                    *px = px.max(cov);
                }
            }
        }
        Tensor::from_vec(&[1, s, s], mask).expect("mask shape")
    }

    /// Coverage of a single blob in the target frame (tests measure its
    /// centroid against the planted mapping).
    pub fn target_blob_coverage(&self, i: usize) -> Tensor<f32> {
        let s = self.image_size;
        let b = self.target_blob(i);
        let mut mask = vec![0f32; s * s];
        for yi in 0..s {
            let y = axis(yi, s);
            for xi in 0..s {
                mask[yi * s + xi] = coverage(&b, axis(xi, s), y) as f32;
            }
        }
        Tensor::from_vec(&[1, s, s], mask).expect("mask shape")
    }
}

#[inline]
fn axis(i: usize, extent: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (extent - 1) as f64
}

/// Pixel index range covering a normalized interval, clamped to the image.
fn axis_range(lo: f64, hi: f64, extent: usize) -> (usize, usize) {
    let half = (extent - 1) as f64 / 2.0;
    let a = ((lo + 1.0) * half).floor().max(0.0) as usize;
    let b = (((hi + 1.0) * half).ceil() as usize + 1).min(extent);
    (a.min(extent), b)
}

/// Deterministic pair construction: a pure function of (spec.seed, index).
pub fn make_pair(spec: &DatasetSpec, index: usize) -> Result<ImagePair> {
    let scene = Scene::generate(spec, index)?;
    Ok(ImagePair {
        source: scene.render_source(),
        target: scene.render_target(),
        planted_keypoints: scene.planted_keypoints()?,
        planted_affine: scene.affine.clone(),
        seed: scene.pair_seed,
    })
}

/// Disjoint, exhaustive, deterministic index ranges.
pub fn split(spec: &DatasetSpec, train_fraction: f64) -> (Range<usize>, Range<usize>) {
    if spec.count < 2 {
        return (0..spec.count, spec.count..spec.count);
    }
    let train = ((spec.count as f64 * train_fraction).round() as usize).clamp(1, spec.count - 1);
    (0..train, train..spec.count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::warp;

    fn quiet_spec() -> DatasetSpec {
        DatasetSpec {
            count: 4,
            max_rotation: 0.0,
            max_translation: 0.0,
            max_scale_dev: 0.0,
            dropout_prob: 0.0,
            noise_amp: 0.0,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn degenerate_bounds_give_identity_and_pure_recolor() {
        let pair = make_pair(&quiet_spec(), 0).unwrap();
        let m = pair.planted_affine.matrix().to_vec();
        assert_eq!(m, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        // Same geometry in both views.
        let scene = Scene::generate(&quiet_spec(), 0).unwrap();
        let src_mask = scene.structure_mask(false).to_vec();
        let dst_mask = scene.structure_mask(true).to_vec();
        assert_eq!(src_mask, dst_mask);
        // But genuinely different colors.
        assert_ne!(pair.source.to_vec(), pair.target.to_vec());
    }

    #[test]
    fn pairs_are_bit_deterministic() {
        let spec = DatasetSpec::default();
        let a = make_pair(&spec, 5).unwrap();
        let b = make_pair(&spec, 5).unwrap();
        assert_eq!(a.source.to_vec(), b.source.to_vec());
        assert_eq!(a.target.to_vec(), b.target.to_vec());
        assert_eq!(a.seed, b.seed);
        let c = make_pair(&spec, 6).unwrap();
        assert_ne!(a.source.to_vec(), c.source.to_vec());
    }

    #[test]
    fn warped_source_mask_overlaps_target_mask() {
        let spec = DatasetSpec {
            dropout_prob: 0.0,
            ..DatasetSpec::default()
        };
        for index in 0..3 {
            let scene = Scene::generate(&spec, index).unwrap();
            let src = scene.structure_mask(false);
            let dst = scene.structure_mask(true).to_vec();
            let warped = warp(&src, &scene.affine).unwrap().to_vec();
            let (mut inter, mut union) = (0usize, 0usize);
            for (w, d) in warped.iter().zip(dst.iter()) {
                let a = *w >= 0.5;
                let b = *d >= 0.5;
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
            let iou = inter as f64 / union as f64;
            assert!(iou >= 0.95, "pair {index}: IoU {iou}");
        }
    }

    #[test]
    fn planted_keypoints_land_on_target_centroids() {
        let spec = DatasetSpec {
            dropout_prob: 0.0,
            noise_amp: 0.0,
            ..DatasetSpec::default()
        };
        for index in 0..2 {
            let scene = Scene::generate(&spec, index).unwrap();
            let s = spec.image_size;
            let half = (s - 1) as f64 / 2.0;
            let kps = scene.planted_keypoints().unwrap();
            let mapped = scene
                .affine
                .apply_kps(&kps)
                .unwrap()
                .coords()
                .to_vec();
            for i in 0..spec.keypoint_count {
                let cov = scene.target_blob_coverage(i).to_vec();
                let (mut sx, mut sy, mut sw) = (0.0f64, 0.0f64, 0.0f64);
                for yi in 0..s {
                    for xi in 0..s {
                        let w = cov[yi * s + xi] as f64;
                        sx += w * xi as f64;
                        sy += w * yi as f64;
                        sw += w;
                    }
                }
                let (cx_px, cy_px) = (sx / sw, sy / sw);
                let want_x = (mapped[i * 2] as f64 + 1.0) * half;
                let want_y = (mapped[i * 2 + 1] as f64 + 1.0) * half;
                let dist = ((cx_px - want_x).powi(2) + (cy_px - want_y).powi(2)).sqrt();
                assert!(dist <= 1.0, "pair {index} blob {i}: {dist:.3} px");
            }
        }
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let spec = DatasetSpec {
            noise_amp: 0.05,
            ..DatasetSpec::default()
        };
        let pair = make_pair(&spec, 11).unwrap();
        for img in [&pair.source, &pair.target] {
            assert!(img.all_finite());
            assert!(img.to_vec().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn tiny_image_is_config_error() {
        let spec = DatasetSpec {
            image_size: 8,
            ..DatasetSpec::default()
        };
        assert!(matches!(make_pair(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn split_examples() {
        let mut spec = DatasetSpec::default();
        spec.count = 10;
        assert_eq!(split(&spec, 0.8), (0..8, 8..10));
        spec.count = 2;
        assert_eq!(split(&spec, 0.5), (0..1, 1..2));
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let mut spec = DatasetSpec::default();
        for (count, frac) in [(7usize, 0.33), (576, 512.0 / 576.0), (100, 0.999), (5, 0.01)] {
            spec.count = count;
            let (tr, te) = split(&spec, frac);
            assert_eq!(tr.end, te.start);
            assert_eq!(te.end, count);
            assert!(!tr.is_empty());
        }
    }
}
