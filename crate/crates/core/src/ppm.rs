//! 8-bit binary PPM (P6) import/export. Values quantize by round(v * 255);
//! grayscale tensors export with replicated channels.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn write_ppm<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let (c, h, w) = match img.shape() {
        [c @ (1 | 3), h, w] => (*c, *h, *w),
        other => {
            return Err(Error::shape("write_ppm", other, "expected [1|3,H,W]"));
        }
    };
    let d = img.data();
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "P6\n{w} {h}\n255\n")?;
    let mut buf = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let src = if c == 1 { 0 } else { ch };
                let v = d[(src * h + y) * w + x].to_f64();
                buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;

    let mut next_token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and '#' comments between header fields.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Config("ppm: truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if next_token(&bytes)? != "P6" {
        return Err(Error::Config("ppm: not a P6 file".into()));
    }
    let w: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| Error::Config("ppm: bad width".into()))?;
    let h: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| Error::Config("ppm: bad height".into()))?;
    let maxval: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| Error::Config("ppm: bad maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Config(format!("ppm: unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + h * w * 3 {
        return Err(Error::Config("ppm: truncated pixel data".into()));
    }
    let mut data = vec![0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = bytes[pos + (y * w + x) * 3 + c] as f32 / 255.0;
                data[(c * h + y) * w + x] = v;
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}
