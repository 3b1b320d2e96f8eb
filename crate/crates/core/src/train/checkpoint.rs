//! Versioned binary checkpoints: magic "KSTCKPT\0", u32 version, config
//! digest, step counter, a flat name -> shape -> little-endian f32 table,
//! and the optimizer moment state. Loading reproduces forward outputs
//! bit-identically.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const MAGIC: &[u8; 8] = b"KSTCKPT\0";
pub const VERSION: u32 = 1;

pub struct Checkpoint {
    pub config_digest: u64,
    pub step: u64,
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
    /// (optimizer label, steps taken, per-slot (m, v) in parameter order).
    pub optimizers: Vec<(String, u64, Vec<(Vec<f64>, Vec<f64>)>)>,
}

impl Checkpoint {
    pub fn from_params(
        config_digest: u64,
        step: u64,
        params: &ParamSet<f32>,
        optimizers: Vec<(String, u64, Vec<(Vec<f64>, Vec<f64>)>)>,
    ) -> Self {
        Checkpoint {
            config_digest,
            step,
            params: params
                .iter()
                .map(|p| {
                    (
                        p.name.clone(),
                        p.tensor.shape().to_vec(),
                        p.tensor.to_vec(),
                    )
                })
                .collect(),
            optimizers,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.config_digest.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;

        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, shape, data) in &self.params {
            write_string(&mut w, name)?;
            w.write_all(&(shape.len() as u8).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }

        w.write_all(&(self.optimizers.len() as u32).to_le_bytes())?;
        for (label, t, slots) in &self.optimizers {
            write_string(&mut w, label)?;
            w.write_all(&t.to_le_bytes())?;
            w.write_all(&(slots.len() as u32).to_le_bytes())?;
            for (m, v) in slots {
                w.write_all(&(m.len() as u32).to_le_bytes())?;
                for &x in m {
                    w.write_all(&x.to_le_bytes())?;
                }
                for &x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = fs::File::open(path)?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut c = Cursor {
            bytes: &bytes,
            pos: 0,
        };

        if c.take(8)? != MAGIC.as_slice() {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = c.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let config_digest = c.u64()?;
        let step = c.u64()?;

        let n_params = c.u32()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = c.string()?;
            let ndim = c.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(c.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f32::from_le_bytes(c.take(4)?.try_into().unwrap()));
            }
            params.push((name, shape, data));
        }

        let n_opt = c.u32()? as usize;
        let mut optimizers = Vec::with_capacity(n_opt);
        for _ in 0..n_opt {
            let label = c.string()?;
            let t = c.u64()?;
            let n_slots = c.u32()? as usize;
            let mut slots = Vec::with_capacity(n_slots);
            for _ in 0..n_slots {
                let len = c.u32()? as usize;
                let mut m = Vec::with_capacity(len);
                for _ in 0..len {
                    m.push(f64::from_le_bytes(c.take(8)?.try_into().unwrap()));
                }
                let mut v = Vec::with_capacity(len);
                for _ in 0..len {
                    v.push(f64::from_le_bytes(c.take(8)?.try_into().unwrap()));
                }
                slots.push((m, v));
            }
            optimizers.push((label, t, slots));
        }

        Ok(Checkpoint {
            config_digest,
            step,
            params,
            optimizers,
        })
    }

    /// Copy stored values into a live parameter set (names and shapes must
    /// match exactly).
    pub fn apply_params(&self, params: &ParamSet<f32>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: checkpoint {} vs model {}",
                self.params.len(),
                params.len()
            )));
        }
        for (name, shape, data) in &self.params {
            let p = params.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("parameter `{name}` missing from model"))
            })?;
            if p.tensor.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` shape mismatch: {:?} vs {:?}",
                    shape,
                    p.tensor.shape()
                )));
            }
            p.tensor.set_data(data);
        }
        Ok(())
    }
}

fn write_string(w: &mut impl Write, s: &str) -> Result<()> {
    let b = s.as_bytes();
    w.write_all(&(b.len() as u16).to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("bad utf8 in name".into()))
    }
}
