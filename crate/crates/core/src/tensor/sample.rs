use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pixel-space coordinates within 1e-6 of a lattice point are snapped onto
/// it, so warps that are integer translations in pixel space reproduce
/// index-shifted images bit-exactly.
const LATTICE_SNAP: f64 = 1e-6;

#[inline]
fn snap(u: f64) -> f64 {
    let r = u.round();
    if (u - r).abs() < LATTICE_SNAP {
        r
    } else {
        u
    }
}

impl<T: Scalar> Tensor<T> {
    /// Sample img [C,H,W] at normalized coords [Ho,Wo,2] (last axis: x, y).
    /// (-1,-1) is the top-left pixel center, (1,1) the bottom-right pixel
    /// center; reads outside the pixel lattice are 0. Gradients flow to both
    /// the image and the coordinates.
    pub fn bilinear_sample(&self, coords: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape().len() != 3 {
            return Err(Error::shape("bilinear_sample", self.shape(), "image must be rank 3"));
        }
        if coords.shape().len() != 3 || coords.shape()[2] != 2 {
            return Err(Error::shape(
                "bilinear_sample",
                coords.shape(),
                "coords must be [H,W,2]",
            ));
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (oh, ow) = (coords.shape()[0], coords.shape()[1]);
        let np = oh * ow;

        // Per point: x0, y0 (lattice corner) and fractional offsets.
        let mut corner = vec![(0isize, 0isize); np];
        let mut frac = vec![(0.0f64, 0.0f64); np];
        {
            let cd = coords.data();
            for p in 0..np {
                let x = cd[p * 2].to_f64();
                let y = cd[p * 2 + 1].to_f64();
                let u = snap((x + 1.0) * (w as f64 - 1.0) / 2.0);
                let v = snap((y + 1.0) * (h as f64 - 1.0) / 2.0);
                let x0 = u.floor();
                let y0 = v.floor();
                corner[p] = (x0 as isize, y0 as isize);
                frac[p] = (u - x0, v - y0);
            }
        }

        let inside =
            move |xi: isize, yi: isize| xi >= 0 && xi < w as isize && yi >= 0 && yi < h as isize;
        let img = self.data();
        let mut out = vec![T::ZERO; c * np];
        for ci in 0..c {
            let plane = &img[ci * h * w..(ci + 1) * h * w];
            let dst = &mut out[ci * np..(ci + 1) * np];
            for p in 0..np {
                let (x0, y0) = corner[p];
                let (fx, fy) = frac[p];
                let mut acc = 0.0f64;
                for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
                    if wy == 0.0 {
                        continue;
                    }
                    for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
                        if wx == 0.0 {
                            continue;
                        }
                        let (xi, yi) = (x0 + dx, y0 + dy);
                        if inside(xi, yi) {
                            acc += wy * wx * plane[yi as usize * w + xi as usize].to_f64();
                        }
                    }
                }
                dst[p] = T::from_f64(acc);
            }
        }
        drop(img);

        let out_shape = vec![c, oh, ow];
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone(), coords.clone()],
            Box::new(move |g, ps| {
                let read = |plane: &[T], xi: isize, yi: isize| -> f64 {
                    if inside(xi, yi) {
                        plane[yi as usize * w + xi as usize].to_f64()
                    } else {
                        0.0
                    }
                };
                if ps[0].requires_grad() {
                    ps[0].accum_grad_with(|dimg| {
                        for ci in 0..c {
                            let dplane = &mut dimg[ci * h * w..(ci + 1) * h * w];
                            let gs = &g[ci * np..(ci + 1) * np];
                            for p in 0..np {
                                let (x0, y0) = corner[p];
                                let (fx, fy) = frac[p];
                                let gv = gs[p].to_f64();
                                for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
                                    for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
                                        let (xi, yi) = (x0 + dx, y0 + dy);
                                        if wy * wx != 0.0 && inside(xi, yi) {
                                            dplane[yi as usize * w + xi as usize] +=
                                                T::from_f64(gv * wy * wx);
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                if ps[1].requires_grad() {
                    let img = ps[0].data();
                    ps[1].accum_grad_with(|dcoords| {
                        for p in 0..np {
                            let (x0, y0) = corner[p];
                            let (fx, fy) = frac[p];
                            let mut du = 0.0f64;
                            let mut dv = 0.0f64;
                            for ci in 0..c {
                                let plane = &img[ci * h * w..(ci + 1) * h * w];
                                let gv = g[ci * np + p].to_f64();
                                if gv == 0.0 {
                                    continue;
                                }
                                let v00 = read(plane, x0, y0);
                                let v01 = read(plane, x0 + 1, y0);
                                let v10 = read(plane, x0, y0 + 1);
                                let v11 = read(plane, x0 + 1, y0 + 1);
                                du += gv * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                                dv += gv * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                            }
                            dcoords[p * 2] += T::from_f64(du * (w as f64 - 1.0) / 2.0);
                            dcoords[p * 2 + 1] += T::from_f64(dv * (h as f64 - 1.0) / 2.0);
                        }
                    });
                }
            }),
        ))
    }

    /// Non-overlapping mean pooling by an integer factor.
    pub fn resize_down(&self, factor: usize) -> Result<Tensor<T>> {
        if self.shape().len() != 3 {
            return Err(Error::shape("resize_down", self.shape(), "expected rank 3"));
        }
        if factor == 0 {
            return Err(Error::shape("resize_down", self.shape(), "factor must be >= 1"));
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::shape(
                "resize_down",
                self.shape(),
                format!("extents not divisible by {factor}"),
            ));
        }
        let (oh, ow) = (h / factor, w / factor);
        let x = self.data();
        let inv = T::from_f64(1.0 / (factor * factor) as f64);
        let mut y = vec![T::ZERO; c * oh * ow];
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = T::ZERO;
                    for dy in 0..factor {
                        let row = (oy * factor + dy) * w + ox * factor;
                        for dx in 0..factor {
                            s += plane[row + dx];
                        }
                    }
                    y[(ci * oh + oy) * ow + ox] = s * inv;
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            vec![c, oh, ow],
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|dx| {
                    for ci in 0..c {
                        let dplane = &mut dx[ci * h * w..(ci + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[(ci * oh + oy) * ow + ox] * inv;
                                for dy in 0..factor {
                                    let row = (oy * factor + dy) * w + ox * factor;
                                    for dxx in 0..factor {
                                        dplane[row + dxx] += gv;
                                    }
                                }
                            }
                        }
                    }
                });
            }),
        ))
    }

    /// Nearest-neighbor upsampling by an integer factor.
    pub fn resize_up(&self, factor: usize) -> Result<Tensor<T>> {
        if self.shape().len() != 3 {
            return Err(Error::shape("resize_up", self.shape(), "expected rank 3"));
        }
        if factor == 0 {
            return Err(Error::shape("resize_up", self.shape(), "factor must be >= 1"));
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (oh, ow) = (h * factor, w * factor);
        let x = self.data();
        let mut y = vec![T::ZERO; c * oh * ow];
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for oy in 0..oh {
                let src_row = (oy / factor) * w;
                let dst_row = (ci * oh + oy) * ow;
                for ox in 0..ow {
                    y[dst_row + ox] = plane[src_row + ox / factor];
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            vec![c, oh, ow],
            y,
            vec![self.clone()],
            Box::new(move |g, ps| {
                ps[0].accum_grad_with(|dx| {
                    for ci in 0..c {
                        let dplane = &mut dx[ci * h * w..(ci + 1) * h * w];
                        for oy in 0..oh {
                            let src_row = (oy / factor) * w;
                            let g_row = (ci * oh + oy) * ow;
                            for ox in 0..ow {
                                dplane[src_row + ox / factor] += g[g_row + ox];
                            }
                        }
                    }
                });
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_grid(h: usize, w: usize) -> Tensor<f64> {
        let mut c = Vec::with_capacity(h * w * 2);
        for y in 0..h {
            for x in 0..w {
                c.push(if w > 1 { -1.0 + 2.0 * x as f64 / (w - 1) as f64 } else { 0.0 });
                c.push(if h > 1 { -1.0 + 2.0 * y as f64 / (h - 1) as f64 } else { 0.0 });
            }
        }
        Tensor::from_vec(&[h, w, 2], c).unwrap()
    }

    #[test]
    fn identity_grid_is_bit_identical() {
        let mut rng = crate::rng::stream(3, 9);
        use rand::Rng;
        let data: Vec<f64> = (0..2 * 6 * 5).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = Tensor::<f64>::from_vec(&[2, 6, 5], data.clone()).unwrap();
        let out = img.bilinear_sample(&identity_grid(6, 5)).unwrap();
        assert_eq!(out.to_vec(), data);
    }

    #[test]
    fn center_of_2x2_is_mean_of_neighbors() {
        let img = Tensor::<f64>::from_vec(&[1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let coords = Tensor::from_vec(&[1, 1, 2], vec![0.0, 0.0]).unwrap();
        let out = img.bilinear_sample(&coords).unwrap();
        assert!((out.item() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn far_outside_reads_zero() {
        let img = Tensor::<f64>::ones(&[1, 4, 4]);
        let coords = Tensor::from_vec(&[1, 1, 2], vec![-3.0, -3.0]).unwrap();
        let out = img.bilinear_sample(&coords).unwrap();
        assert_eq!(out.item(), 0.0);
    }

    #[test]
    fn down_factor_1_is_identity() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(x.resize_down(1).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn down_factor_2_means() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let y = x.resize_down(2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.item(), 4.0);
    }

    #[test]
    fn up_then_down_is_identity() {
        let x = Tensor::<f64>::from_vec(&[2, 2, 3], (0..12).map(|i| i as f64).collect()).unwrap();
        for factor in 1..4 {
            let y = x.resize_up(factor).unwrap().resize_down(factor).unwrap();
            assert_eq!(y.to_vec(), x.to_vec());
        }
    }

    #[test]
    fn indivisible_extent_is_shape_error() {
        let x = Tensor::<f64>::zeros(&[1, 5, 4]);
        assert!(x.resize_down(2).is_err());
    }
}
