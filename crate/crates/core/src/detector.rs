//! Keypoint detector with token attention, center-of-mass readout,
//! least-squares affine estimation, and differentiable warping.
//!
//! One shared (Siamese) detector serves both stains. Each of the N output
//! channels owns one token and one keypoint, so correspondence between the
//! two detected sets is by index.

use std::io::Write;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{conv_init, linear_init, zeros_param, Param};
use crate::scalar::Scalar;
use crate::tensor::{sym3_eigenvalues, Tensor};

/// N ordered keypoints in normalized [-1,1] image coordinates, stored as
/// an [N,2] tensor (x, y per row). Coordinates may carry gradients.
#[derive(Clone)]
pub struct KeypointSet<T: Scalar = f32> {
    coords: Tensor<T>,
}

impl<T: Scalar> KeypointSet<T> {
    pub fn new(coords: Tensor<T>) -> Result<Self> {
        if coords.shape().len() != 2 || coords.shape()[1] != 2 {
            return Err(Error::shape(
                "KeypointSet",
                coords.shape(),
                "expected [N,2]",
            ));
        }
        if !coords.all_finite() {
            return Err(Error::Contract("keypoint coordinates must be finite".into()));
        }
        Ok(KeypointSet { coords })
    }

    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        let mut data = Vec::with_capacity(points.len() * 2);
        for &(x, y) in points {
            data.push(T::from_f64(x));
            data.push(T::from_f64(y));
        }
        Self::new(Tensor::from_vec(&[points.len(), 2], data)?)
    }

    pub fn count(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn coords(&self) -> &Tensor<T> {
        &self.coords
    }

    pub fn detach(&self) -> KeypointSet<T> {
        KeypointSet {
            coords: self.coords.detach(),
        }
    }

    /// Plain-text export: one `index x y` row per keypoint.
    pub fn write_text(&self, w: &mut impl Write) -> Result<()> {
        let d = self.coords.data();
        for i in 0..self.count() {
            writeln!(w, "{} {} {}", i, d[i * 2].to_f64(), d[i * 2 + 1].to_f64())?;
        }
        Ok(())
    }
}

/// 2x3 affine matrix mapping source to target normalized coordinates.
#[derive(Clone)]
pub struct AffineTransform<T: Scalar = f32> {
    matrix: Tensor<T>,
}

impl<T: Scalar> AffineTransform<T> {
    /// Wraps a 2x3 matrix; the linear part must be comfortably invertible.
    pub fn from_matrix(matrix: Tensor<T>) -> Result<Self> {
        if matrix.shape() != [2, 3] {
            return Err(Error::shape("AffineTransform", matrix.shape(), "expected [2,3]"));
        }
        if !matrix.all_finite() {
            return Err(Error::Degenerate("affine matrix has non-finite entries".into()));
        }
        let t = AffineTransform { matrix };
        if t.det_linear().abs() <= 1e-6 {
            return Err(Error::Degenerate(format!(
                "affine linear part is numerically singular (|det| = {:.3e})",
                t.det_linear().abs()
            )));
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        AffineTransform {
            matrix: Tensor::from_vec(
                &[2, 3],
                vec![T::ONE, T::ZERO, T::ZERO, T::ZERO, T::ONE, T::ZERO],
            )
            .expect("identity"),
        }
    }

    /// rotation . isotropic scale, then translation.
    pub fn from_parts(rotation: f64, scale: f64, tx: f64, ty: f64) -> Result<Self> {
        let (s, c) = rotation.sin_cos();
        let m = vec![
            T::from_f64(scale * c),
            T::from_f64(-scale * s),
            T::from_f64(tx),
            T::from_f64(scale * s),
            T::from_f64(scale * c),
            T::from_f64(ty),
        ];
        Self::from_matrix(Tensor::from_vec(&[2, 3], m)?)
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn det_linear(&self) -> f64 {
        let d = self.matrix.data();
        d[0].to_f64() * d[4].to_f64() - d[1].to_f64() * d[3].to_f64()
    }

    /// [3,3] homogeneous form; differentiable in the 2x3 entries.
    pub fn homogeneous(&self) -> Tensor<T> {
        let last = Tensor::from_vec(&[1, 3], vec![T::ZERO, T::ZERO, T::ONE]).expect("row");
        Tensor::concat(&[self.matrix.clone(), last], 0).expect("concat")
    }

    /// Inverse transform, differentiable through the 3x3 inversion.
    pub fn inverse(&self) -> Result<AffineTransform<T>> {
        let inv = self.homogeneous().inv3()?;
        Ok(AffineTransform {
            matrix: inv.narrow(0, 0, 2)?,
        })
    }

    /// Map an [N,2] point tensor through the transform (differentiable in
    /// both the points and the matrix).
    pub fn apply(&self, points: &Tensor<T>) -> Result<Tensor<T>> {
        if points.shape().len() != 2 || points.shape()[1] != 2 {
            return Err(Error::shape("affine apply", points.shape(), "expected [N,2]"));
        }
        let n = points.shape()[0];
        let homog = homogeneous_columns(points)?; // [3,N]
        let mapped = self.matrix.matmul(&homog)?; // [2,N]
        mapped.transpose2d()?.reshape(&[n, 2])
    }

    pub fn apply_kps(&self, kps: &KeypointSet<T>) -> Result<KeypointSet<T>> {
        KeypointSet::new(self.apply(kps.coords())?)
    }
}

/// [N,2] points -> [3,N] homogeneous columns (x row, y row, ones row).
fn homogeneous_columns<T: Scalar>(points: &Tensor<T>) -> Result<Tensor<T>> {
    let n = points.shape()[0];
    let cols = points.transpose2d()?; // [2,N]
    let ones = Tensor::ones(&[1, n]);
    Tensor::concat(&[cols, ones], 0)
}

/// Differentiable spatial softmax readout: each heatmap channel becomes the
/// softmax-weighted mean of the cell-center coordinates.
pub fn com_readout<T: Scalar>(heatmaps: &Tensor<T>, tau: &Tensor<T>) -> Result<KeypointSet<T>> {
    if heatmaps.shape().len() != 3 {
        return Err(Error::shape("com_readout", heatmaps.shape(), "expected [N,h,w]"));
    }
    if tau.numel() != 1 || tau.item().to_f64() <= 0.0 {
        return Err(Error::Contract("com_readout: tau must be a positive scalar".into()));
    }
    let (n, h, w) = (heatmaps.shape()[0], heatmaps.shape()[1], heatmaps.shape()[2]);
    let flat = heatmaps.reshape(&[n, h * w])?;
    let weights = flat.div_scalar_t(tau)?.softmax(1)?;
    let grid = cell_center_grid::<T>(h, w); // [h*w, 2]
    KeypointSet::new(weights.matmul(&grid)?)
}

pub fn com_readout_fixed<T: Scalar>(heatmaps: &Tensor<T>, tau: f64) -> Result<KeypointSet<T>> {
    com_readout(heatmaps, &Tensor::scalar(T::from_f64(tau)))
}

/// [h*w, 2] constant of normalized cell-center coordinates (x, y).
fn cell_center_grid<T: Scalar>(h: usize, w: usize) -> Tensor<T> {
    let mut g = Vec::with_capacity(h * w * 2);
    for r in 0..h {
        for c in 0..w {
            g.push(T::from_f64(axis_coord(c, w)));
            g.push(T::from_f64(axis_coord(r, h)));
        }
    }
    Tensor::from_vec(&[h * w, 2], g).expect("grid")
}

#[inline]
fn axis_coord(i: usize, extent: usize) -> f64 {
    if extent > 1 {
        -1.0 + 2.0 * i as f64 / (extent - 1) as f64
    } else {
        0.0
    }
}

/// Closed-form ridge-regularized least squares fit of a 2x3 affine map from
/// index-matched keypoints: A = Pi_h . Ph~^T . (Ph~ Ph~^T + eps I)^-1.
/// Differentiable in both point sets.
pub fn fit_affine<T: Scalar>(
    src: &KeypointSet<T>,
    dst: &KeypointSet<T>,
    ridge: f64,
) -> Result<AffineTransform<T>> {
    let n = src.count();
    if n < 3 || dst.count() != n {
        return Err(Error::Degenerate(format!(
            "fit_affine needs >= 3 index-matched points, got {} and {}",
            n,
            dst.count()
        )));
    }
    let src_h = homogeneous_columns(src.coords())?; // [3,N]
    let dst_c = dst.coords().transpose2d()?; // [2,N]

    let normal = src_h.matmul(&src_h.transpose2d()?)?; // [3,3]
    // Conditioning gate on the raw normal matrix: rank-deficient keypoint
    // configurations (collinear or collapsed clouds) are rejected before the
    // ridge hides them.
    let nm: Vec<f64> = normal.data().iter().map(|v| v.to_f64()).collect();
    let eig = sym3_eigenvalues(&nm);
    let cond = if eig[2] <= 0.0 {
        f64::INFINITY
    } else {
        eig[0] / eig[2]
    };
    if cond > 1e12 {
        return Err(Error::Degenerate(format!(
            "fit_affine: keypoint configuration is rank-deficient (condition {cond:.3e})"
        )));
    }

    let eye = Tensor::from_vec(
        &[3, 3],
        vec![
            T::from_f64(ridge),
            T::ZERO,
            T::ZERO,
            T::ZERO,
            T::from_f64(ridge),
            T::ZERO,
            T::ZERO,
            T::ZERO,
            T::from_f64(ridge),
        ],
    )?;
    let regularized = normal.add(&eye)?;
    let inv = regularized.inv3()?;
    let matrix = dst_c.matmul(&src_h.transpose2d()?)?.matmul(&inv)?;
    AffineTransform::from_matrix(matrix)
}

/// Warp img into the target frame of `affine`: each target pixel p reads
/// img at A^-1 p via bilinear sampling. Gradients reach both the image and
/// (through the grid) the transform.
pub fn warp<T: Scalar>(img: &Tensor<T>, affine: &AffineTransform<T>) -> Result<Tensor<T>> {
    if img.shape().len() != 3 {
        return Err(Error::shape("warp", img.shape(), "expected [C,H,W]"));
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let inv = affine.inverse()?; // [2,3], differentiable
    let grid_h = target_grid_homogeneous::<T>(h, w); // [3, h*w]
    let src = inv.matrix().matmul(&grid_h)?; // [2, h*w]
    let coords = src.transpose2d()?.reshape(&[h, w, 2])?;
    img.bilinear_sample(&coords)
}

/// [3, h*w] homogeneous normalized coordinates of every target pixel center.
fn target_grid_homogeneous<T: Scalar>(h: usize, w: usize) -> Tensor<T> {
    let np = h * w;
    let mut g = vec![T::ZERO; 3 * np];
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            g[p] = T::from_f64(axis_coord(c, w));
            g[np + p] = T::from_f64(axis_coord(r, h));
            g[2 * np + p] = T::ONE;
        }
    }
    Tensor::from_vec(&[3, np], g).expect("grid")
}

/// Architecture knobs for the detector.
#[derive(Clone, Debug)]
pub struct DetectorConfig {
    pub image_size: usize,
    pub keypoints: usize,
    pub embed_dim: usize,
    pub heads: usize,
    /// tau = max(tau_factor * std(heatmaps), tau_floor)
    pub tau_factor: f64,
    pub tau_floor: f64,
    pub ridge: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            image_size: 64,
            keypoints: 128,
            embed_dim: 64,
            heads: 4,
            tau_factor: 0.1,
            tau_floor: 1e-3,
            ridge: 1e-6,
        }
    }
}

impl DetectorConfig {
    /// Spatial side of the feature/heatmap grid (total stride 4).
    pub fn grid_size(&self) -> usize {
        self.image_size / 4
    }
}

/// Hierarchical detector: conv encoder (stride-4 overall), one token per
/// feature channel, multi-head self-attention over tokens, projection back
/// to heatmaps, and CoM readout.
pub struct KeypointDetector<T: Scalar = f32> {
    pub cfg: DetectorConfig,
    conv1_w: Tensor<T>,
    conv1_b: Tensor<T>,
    conv2_w: Tensor<T>,
    conv2_b: Tensor<T>,
    conv3_w: Tensor<T>,
    conv3_b: Tensor<T>,
    tok_w: Tensor<T>,
    tok_b: Tensor<T>,
    wq: Tensor<T>,
    wk: Tensor<T>,
    wv: Tensor<T>,
    heat_w: Tensor<T>,
    heat_b: Tensor<T>,
}

const LEAKY_SLOPE: f64 = 0.2;

impl<T: Scalar> KeypointDetector<T> {
    pub fn new(cfg: DetectorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "detector image size {} must be divisible by the total stride 4",
                cfg.image_size
            )));
        }
        if cfg.embed_dim % cfg.heads != 0 {
            return Err(Error::Config(format!(
                "embed dim {} must be divisible by head count {}",
                cfg.embed_dim, cfg.heads
            )));
        }
        let s2 = cfg.grid_size() * cfg.grid_size();
        let d = cfg.embed_dim;
        let n = cfg.keypoints;
        Ok(KeypointDetector {
            conv1_w: conv_init(rng, 16, 3, 3, 1.41),
            conv1_b: zeros_param(&[16]),
            conv2_w: conv_init(rng, 32, 16, 3, 1.41),
            conv2_b: zeros_param(&[32]),
            conv3_w: conv_init(rng, n, 32, 3, 1.41),
            conv3_b: zeros_param(&[n]),
            tok_w: linear_init(rng, s2, d, 1.0),
            tok_b: zeros_param(&[d]),
            wq: linear_init(rng, d, d, 1.0),
            wk: linear_init(rng, d, d, 1.0),
            wv: linear_init(rng, d, d, 1.0),
            // Small output projection: heatmaps start near-uniform, so
            // keypoints begin as a benign central cloud.
            heat_w: linear_init(rng, d, s2, 0.1),
            heat_b: zeros_param(&[s2]),
            cfg,
        })
    }

    pub fn params(&self, prefix: &str) -> Vec<Param<T>> {
        let p = |name: &str, t: &Tensor<T>| Param::new(format!("{prefix}.{name}"), t.clone());
        vec![
            p("conv1.w", &self.conv1_w),
            p("conv1.b", &self.conv1_b),
            p("conv2.w", &self.conv2_w),
            p("conv2.b", &self.conv2_b),
            p("conv3.w", &self.conv3_w),
            p("conv3.b", &self.conv3_b),
            p("tok.w", &self.tok_w),
            p("tok.b", &self.tok_b),
            p("attn.wq", &self.wq),
            p("attn.wk", &self.wk),
            p("attn.wv", &self.wv),
            p("heat.w", &self.heat_w),
            p("heat.b", &self.heat_b),
        ]
    }

    /// Conv stack to an N-channel grid, then one token per channel.
    /// Returns (tokens [N,d], features [N,s,s]).
    pub fn encode_tokens(&self, img: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let s = self.cfg.image_size;
        if img.shape() != [3, s, s] {
            return Err(Error::shape(
                "encode_tokens",
                img.shape(),
                format!("expected [3,{s},{s}]"),
            ));
        }
        // Stride-2 stages realized as stride-1 conv + exact mean pool (the
        // odd-kernel/exact-extent conv contract cannot halve even sizes).
        let h1 = img
            .conv2d(&self.conv1_w, 1, 1)?
            .add_chan_bias(&self.conv1_b)?
            .leaky_relu(LEAKY_SLOPE)
            .resize_down(2)?;
        let h2 = h1
            .conv2d(&self.conv2_w, 1, 1)?
            .add_chan_bias(&self.conv2_b)?
            .leaky_relu(LEAKY_SLOPE)
            .resize_down(2)?;
        let feat = h2
            .conv2d(&self.conv3_w, 1, 1)?
            .add_chan_bias(&self.conv3_b)?
            .leaky_relu(LEAKY_SLOPE);
        let n = self.cfg.keypoints;
        let s2 = self.cfg.grid_size() * self.cfg.grid_size();
        let tokens = feat
            .reshape(&[n, s2])?
            .matmul(&self.tok_w)?
            .add_row_bias(&self.tok_b)?;
        Ok((tokens, feat))
    }

    /// Pre-norm multi-head self-attention with a residual connection:
    /// z + heads(norm(z)), heads from softmax(QK^T / sqrt(d_head)) V.
    pub fn mhsa(&self, tokens: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.cfg.embed_dim;
        if tokens.shape().len() != 2 || tokens.shape()[1] != d {
            return Err(Error::shape("mhsa", tokens.shape(), format!("expected [N,{d}]")));
        }
        let dh = d / self.cfg.heads;
        let zn = tokens.norm_rows(1e-5)?;
        let q = zn.matmul(&self.wq)?;
        let k = zn.matmul(&self.wk)?;
        let v = zn.matmul(&self.wv)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for hi in 0..self.cfg.heads {
            let qh = q.narrow(1, hi * dh, dh)?;
            let kh = k.narrow(1, hi * dh, dh)?;
            let vh = v.narrow(1, hi * dh, dh)?;
            let scores = qh.matmul(&kh.transpose2d()?)?.scale(scale);
            let attn = scores.softmax(1)?;
            heads.push(attn.matmul(&vh)?);
        }
        tokens.add(&Tensor::concat(&heads, 1)?)
    }

    /// Linear projection of attended tokens back onto the spatial grid.
    pub fn project_heatmaps(&self, tokens: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.cfg.grid_size();
        let n = self.cfg.keypoints;
        tokens
            .matmul(&self.heat_w)?
            .add_row_bias(&self.heat_b)?
            .reshape(&[n, s, s])
    }

    /// Temperature for the CoM readout, differentiable in the heatmaps.
    fn tau(&self, heatmaps: &Tensor<T>) -> Tensor<T> {
        heatmaps
            .std_all(1e-12)
            .scale(self.cfg.tau_factor)
            .clamp_min(self.cfg.tau_floor)
    }

    /// Full detection pipeline; deterministic for fixed parameters.
    pub fn detect(&self, img: &Tensor<T>) -> Result<KeypointSet<T>> {
        let (tokens, _) = self.encode_tokens(img)?;
        let attended = self.mhsa(&tokens)?;
        let heatmaps = self.project_heatmaps(&attended)?;
        let tau = self.tau(&heatmaps);
        com_readout(&heatmaps, &tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn small_cfg() -> DetectorConfig {
        DetectorConfig {
            image_size: 16,
            keypoints: 8,
            embed_dim: 16,
            heads: 4,
            ..DetectorConfig::default()
        }
    }

    #[test]
    fn encode_token_shapes() {
        let cfg = DetectorConfig::default();
        let det: KeypointDetector<f32> = KeypointDetector::new(cfg, &mut stream(1, 0)).unwrap();
        let img = Tensor::zeros(&[3, 64, 64]);
        let (tokens, feat) = det.encode_tokens(&img).unwrap();
        assert_eq!(tokens.shape(), &[128, 64]);
        assert_eq!(feat.shape(), &[128, 16, 16]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_tokens() {
        let mut det: KeypointDetector<f64> =
            KeypointDetector::new(small_cfg(), &mut stream(2, 0)).unwrap();
        // Biases start at zero already; zero input must produce zero tokens.
        det.tok_b = zeros_param(&[16]);
        let img = Tensor::zeros(&[3, 16, 16]);
        let (tokens, _) = det.encode_tokens(&img).unwrap();
        assert!(tokens.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn every_pixel_reaches_some_token() {
        let det: KeypointDetector<f64> =
            KeypointDetector::new(small_cfg(), &mut stream(3, 0)).unwrap();
        let mut rng = stream(4, 0);
        let base: Vec<f64> = (0..3 * 16 * 16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = Tensor::from_vec(&[3, 16, 16], base.clone()).unwrap();
        let (t0, _) = det.encode_tokens(&img).unwrap();
        let t0 = t0.to_vec();
        // Probe a scattering of single-pixel perturbations.
        for &idx in &[0usize, 37, 255, 300, 511, 650, 767] {
            let mut bumped = base.clone();
            bumped[idx] += 0.5;
            let img2 = Tensor::from_vec(&[3, 16, 16], bumped).unwrap();
            let (t1, _) = det.encode_tokens(&img2).unwrap();
            let changed = t1
                .to_vec()
                .iter()
                .zip(t0.iter())
                .any(|(a, b)| (a - b).abs() > 1e-12);
            assert!(changed, "pixel {idx} does not influence any token");
        }
    }

    #[test]
    fn mhsa_single_token_is_value_plus_residual() {
        let cfg = DetectorConfig {
            image_size: 16,
            keypoints: 1,
            embed_dim: 4,
            heads: 1,
            ..DetectorConfig::default()
        };
        let det: KeypointDetector<f64> = KeypointDetector::new(cfg, &mut stream(5, 0)).unwrap();
        let z = Tensor::from_vec(&[1, 4], vec![0.5, -1.0, 2.0, 0.1]).unwrap();
        let out = det.mhsa(&z).unwrap();
        // With one token the attention weight is exactly 1: out = z + V(norm(z)).
        let zn = z.norm_rows(1e-5).unwrap();
        let want = z.add(&zn.matmul(&det.wv).unwrap()).unwrap();
        for (a, b) in out.to_vec().iter().zip(want.to_vec().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mhsa_zero_query_weights_average_values() {
        let cfg = DetectorConfig {
            image_size: 16,
            keypoints: 3,
            embed_dim: 4,
            heads: 1,
            ..DetectorConfig::default()
        };
        let mut det: KeypointDetector<f64> = KeypointDetector::new(cfg, &mut stream(6, 0)).unwrap();
        det.wq = Tensor::param(&[4, 4], vec![0.0; 16]).unwrap();
        let z = Tensor::from_vec(
            &[3, 4],
            vec![0.3, -0.2, 0.9, 0.4, -0.5, 0.8, 0.1, -0.7, 0.2, 0.6, -0.9, 0.5],
        )
        .unwrap();
        let out = det.mhsa(&z).unwrap();
        // Zero queries give uniform attention: every output row is the mean
        // of the V rows plus the residual.
        let zn = z.norm_rows(1e-5).unwrap();
        let v = zn.matmul(&det.wv).unwrap().to_vec();
        let mean_v: Vec<f64> = (0..4)
            .map(|c| (0..3).map(|r| v[r * 4 + c]).sum::<f64>() / 3.0)
            .collect();
        let zv = z.to_vec();
        for r in 0..3 {
            for c in 0..4 {
                let want = zv[r * 4 + c] + mean_v[c];
                let got = out.to_vec()[r * 4 + c];
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mhsa_two_tokens_hand_computed() {
        let cfg = DetectorConfig {
            image_size: 16,
            keypoints: 2,
            embed_dim: 2,
            heads: 1,
            ..DetectorConfig::default()
        };
        let mut det: KeypointDetector<f64> = KeypointDetector::new(cfg, &mut stream(7, 0)).unwrap();
        det.wq = Tensor::param(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        det.wk = Tensor::param(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        det.wv = Tensor::param(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let z = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = det.mhsa(&z).unwrap();

        // By hand with identity projections: the normalized rows are (a,-a)
        // and (-a,a) with a = 0.5 / sqrt(0.25 + eps); Q=K=V=zn, dh=2.
        let a = 0.5 / (0.25f64 + 1e-5).sqrt();
        let s_same = 2.0 * a * a / 2.0f64.sqrt();
        let e = (2.0 * s_same).exp();
        let w_same = e / (e + 1.0);
        let w_other = 1.0 / (e + 1.0);
        // Row 0: softmax-weighted V rows plus the residual (1,0).
        let want00 = w_same * a + w_other * -a + 1.0;
        let want01 = w_same * -a + w_other * a;
        let got = out.to_vec();
        assert!((got[0] - want00).abs() < 1e-12, "{} vs {}", got[0], want00);
        assert!((got[1] - want01).abs() < 1e-12);
    }

    #[test]
    fn com_dominant_cell_wins() {
        // One cell at 1e4, rest 0, tau = 1: keypoint lands on that cell.
        let mut h = vec![0.0f64; 25];
        h[7] = 1e4; // row 1, col 2 of a 5x5 grid
        let heat = Tensor::from_vec(&[1, 5, 5], h).unwrap();
        let kp = com_readout_fixed(&heat, 1.0).unwrap();
        let c = kp.coords().to_vec();
        let want_x = axis_coord(2, 5);
        let want_y = axis_coord(1, 5);
        assert!((c[0] - want_x).abs() < 1e-6);
        assert!((c[1] - want_y).abs() < 1e-6);
    }

    #[test]
    fn com_uniform_heatmap_is_grid_centroid() {
        let heat = Tensor::<f64>::full(&[2, 4, 4], 0.37);
        let kp = com_readout_fixed(&heat, 1.0).unwrap();
        for &v in kp.coords().to_vec().iter() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn com_two_equal_peaks_average() {
        // Peaks at x=-0.5 and x=+0.5 on the same row: keypoint x = 0.
        let s = 9; // axis coords: -1, -0.75, ..., 1 => -0.5 at col 2, +0.5 at col 6
        let mut h = vec![0.0f64; s * s];
        h[4 * s + 2] = 50.0;
        h[4 * s + 6] = 50.0;
        let heat = Tensor::from_vec(&[1, s, s], h).unwrap();
        let kp = com_readout_fixed(&heat, 1.0).unwrap();
        let c = kp.coords().to_vec();
        assert!(c[0].abs() < 1e-9, "x = {}", c[0]);
        assert!((c[1] - axis_coord(4, s)).abs() < 1e-9);
    }

    #[test]
    fn detect_outputs_lie_in_unit_box_and_repeat() {
        let det: KeypointDetector<f32> =
            KeypointDetector::new(small_cfg(), &mut stream(8, 0)).unwrap();
        let mut rng = stream(9, 0);
        let img = Tensor::from_vec(
            &[3, 16, 16],
            (0..3 * 256).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let a = det.detect(&img).unwrap();
        let b = det.detect(&img).unwrap();
        assert_eq!(a.coords().to_vec(), b.coords().to_vec());
        for &v in a.coords().to_vec().iter() {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn fit_affine_identity_case() {
        // The ridge term biases the solve by ~eps/lambda_min, so the exact
        // identity check runs with a vanishing ridge.
        let src =
            KeypointSet::<f64>::from_points(&[(0.0, 0.0), (0.5, -0.2), (-0.3, 0.4), (0.1, 0.8)])
                .unwrap();
        let a = fit_affine(&src, &src, 1e-12).unwrap();
        let m = a.matrix().to_vec();
        let want = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        for (g, w) in m.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-9, "{m:?}");
        }
    }

    #[test]
    fn fit_affine_recovers_planted_transform() {
        let mut rng = stream(10, 0);
        let pts: Vec<(f64, f64)> = (0..128)
            .map(|_| (rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)))
            .collect();
        let src = KeypointSet::<f64>::from_points(&pts).unwrap();
        let planted = AffineTransform::<f64>::from_parts(0.21, 1.08, 0.12, -0.07).unwrap();
        let dst = planted.apply_kps(&src).unwrap();
        let fit = fit_affine(&src, &dst, 1e-6).unwrap();
        for (g, w) in fit
            .matrix()
            .to_vec()
            .iter()
            .zip(planted.matrix().to_vec().iter())
        {
            assert!((g - w).abs() < 1e-6, "entry {g} vs {w}");
        }
    }

    #[test]
    fn fit_affine_identical_points_is_degenerate() {
        let pts = vec![(0.3, -0.2); 16];
        let src = KeypointSet::<f64>::from_points(&pts).unwrap();
        let dst = KeypointSet::<f64>::from_points(&pts).unwrap();
        assert!(matches!(
            fit_affine(&src, &dst, 1e-6),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn fit_affine_too_few_points_errors() {
        let src = KeypointSet::<f64>::from_points(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert!(fit_affine(&src, &src, 1e-6).is_err());
    }

    #[test]
    fn warp_identity_is_exact() {
        let mut rng = stream(11, 0);
        let img = Tensor::<f64>::from_vec(
            &[3, 8, 8],
            (0..192).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let out = warp(&img, &AffineTransform::identity()).unwrap();
        assert_eq!(out.to_vec(), img.to_vec());
    }

    #[test]
    fn warp_integer_translation_matches_index_shift() {
        let s = 8usize;
        let mut rng = stream(12, 0);
        let data: Vec<f64> = (0..3 * s * s).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = Tensor::from_vec(&[3, s, s], data.clone()).unwrap();
        // Shift by (dx=2, dy=1) pixels: A maps source -> target.
        let (dx, dy) = (2i64, 1i64);
        let t = AffineTransform::<f64>::from_parts(
            0.0,
            1.0,
            2.0 * dx as f64 / (s - 1) as f64,
            2.0 * dy as f64 / (s - 1) as f64,
        )
        .unwrap();
        let out = warp(&img, &t).unwrap().to_vec();
        for c in 0..3 {
            for y in 0..s as i64 {
                for x in 0..s as i64 {
                    let (sx, sy) = (x - dx, y - dy);
                    let want = if sx >= 0 && sx < s as i64 && sy >= 0 && sy < s as i64 {
                        data[(c * s as i64 * s as i64 + sy * s as i64 + sx) as usize]
                    } else {
                        0.0
                    };
                    let got = out[(c * s as i64 * s as i64 + y * s as i64 + x) as usize];
                    assert_eq!(got, want, "c={c} x={x} y={y}");
                }
            }
        }
    }

    #[test]
    fn warp_roundtrip_interior() {
        // Bilinear resampling error scales with curvature * pixel^2, so a
        // smooth image on a reasonable grid keeps the double warp < 1e-3.
        let s = 32usize;
        let mut data = vec![0.0f64; 3 * s * s];
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    let fx = x as f64 / s as f64;
                    let fy = y as f64 / s as f64;
                    data[(c * s + y) * s + x] =
                        0.5 + 0.3 * (2.1 * fx + 1.4 * fy + c as f64).sin() * (1.6 * fy).cos();
                }
            }
        }
        let img = Tensor::from_vec(&[3, s, s], data.clone()).unwrap();
        let t = AffineTransform::<f64>::from_parts(0.1, 1.05, 0.05, -0.04).unwrap();
        let back = t.inverse().unwrap();
        let round = warp(&warp(&img, &t).unwrap(), &back).unwrap().to_vec();
        // Interior region only: stay away from the zero-fill frame.
        for c in 0..3 {
            for y in 6..s - 6 {
                for x in 6..s - 6 {
                    let i = (c * s + y) * s + x;
                    assert!(
                        (round[i] - data[i]).abs() < 1e-3,
                        "c={c} x={x} y={y}: {} vs {}",
                        round[i],
                        data[i]
                    );
                }
            }
        }
    }

    #[test]
    fn fit_is_equivariant_to_source_normalization() {
        // fit(s*src + t, dst) composed with the normalization map equals
        // fit(src, dst) within 1e-6.
        let mut rng = stream(13, 0);
        let pts: Vec<(f64, f64)> = (0..64)
            .map(|_| (rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)))
            .collect();
        let src = KeypointSet::<f64>::from_points(&pts).unwrap();
        let planted = AffineTransform::<f64>::from_parts(-0.15, 0.95, -0.08, 0.1).unwrap();
        let dst = planted.apply_kps(&src).unwrap();

        let norm = AffineTransform::<f64>::from_parts(0.0, 1.6, 0.07, -0.12).unwrap();
        let src_n = norm.apply_kps(&src).unwrap();
        let fit_n = fit_affine(&src_n, &dst, 1e-9).unwrap();
        // fit_n . norm should equal the direct fit.
        let direct = fit_affine(&src, &dst, 1e-9).unwrap();
        let composed = fit_n
            .homogeneous()
            .matmul(&norm.homogeneous())
            .unwrap()
            .narrow(0, 0, 2)
            .unwrap();
        for (a, b) in composed
            .to_vec()
            .iter()
            .zip(direct.matrix().to_vec().iter())
        {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
