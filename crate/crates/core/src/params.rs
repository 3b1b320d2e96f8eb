use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A named model weight. Only learnable parameters are visited by the
/// optimizer; fixed ones (e.g. frozen feature extractors) still checkpoint.
#[derive(Clone)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub learnable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        Param {
            name: name.into(),
            tensor,
            learnable: true,
        }
    }

    pub fn frozen(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        Param {
            name: name.into(),
            tensor,
            learnable: false,
        }
    }
}

/// Flat parameter table with unique names, in declaration order.
pub struct ParamSet<T: Scalar = f32> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(params: Vec<Param<T>>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &params {
            if !seen.insert(p.name.clone()) {
                return Err(Error::Contract(format!(
                    "duplicate parameter name {}",
                    p.name
                )));
            }
        }
        Ok(ParamSet { params })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn learnable(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter().filter(|p| p.learnable)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    /// Euclidean norm over all learnable values (diagnostics).
    pub fn value_norm(&self) -> f64 {
        let mut s = 0.0;
        for p in self.learnable() {
            for v in p.tensor.data().iter() {
                let x = v.to_f64();
                s += x * x;
            }
        }
        s.sqrt()
    }
}

/// He-style uniform fan-in init for conv kernels [c_out, c_in, k, k].
pub fn conv_init<T: Scalar>(
    rng: &mut ChaCha8Rng,
    c_out: usize,
    c_in: usize,
    k: usize,
    gain: f64,
) -> Tensor<T> {
    let fan_in = (c_in * k * k) as f64;
    let bound = gain * (3.0 / fan_in).sqrt();
    let n = c_out * c_in * k * k;
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::param(&[c_out, c_in, k, k], data).expect("init shape")
}

/// He-style uniform fan-in init for matrices [rows, cols] used as x . W.
pub fn linear_init<T: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    gain: f64,
) -> Tensor<T> {
    let fan_in = rows as f64;
    let bound = gain * (3.0 / fan_in).sqrt();
    let data: Vec<T> = (0..rows * cols)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::param(&[rows, cols], data).expect("init shape")
}

pub fn zeros_param<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::param(shape, vec![T::ZERO; n]).expect("init shape")
}
