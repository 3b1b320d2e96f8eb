use rand::seq::SliceRandom;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::stream;

/// Compare reverse-mode gradients of a scalar-valued composition against
/// central differences, element by element, over every listed tensor.
/// Returns max over elements of |analytic - numeric| / max(1, |numeric|).
pub fn grad_check<F>(f: F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    grad_check_sampled(f, params, 1e-5, usize::MAX)
}

/// As `grad_check`, probing at most `max_per_tensor` elements of each tensor
/// (a deterministic random subset) — keeps full-model checks tractable.
pub fn grad_check_sampled<F>(
    f: F,
    params: &[Tensor<f64>],
    step: f64,
    max_per_tensor: usize,
) -> Result<f64>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    let out = f()?;
    if out.numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check requires a scalar-valued composition, got shape {:?}",
            out.shape()
        )));
    }
    for p in params {
        p.zero_grad();
    }
    out.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut rng = stream(0x6e61_6272, params.len() as u64);
    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let indices: Vec<usize> = if n <= max_per_tensor {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all.truncate(max_per_tensor);
            all
        };
        for idx in indices {
            let v0 = p.peek(idx);
            p.poke(idx, v0 + step);
            let plus = f()?.item();
            p.poke(idx, v0 - step);
            let minus = f()?.item();
            p.poke(idx, v0);
            let numeric = (plus - minus) / (2.0 * step);
            let rel = (analytic[pi][idx] - numeric).abs() / numeric.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_sum_passes() {
        let mut rng = stream(11, 0);
        use rand::Rng;
        let a = Tensor::<f64>::param(&[3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let b = Tensor::<f64>::param(&[4, 2], (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let err = grad_check(
            || Ok(a.matmul(&b)?.sum_all()),
            &[a.clone(), b.clone()],
        )
        .unwrap();
        assert!(err < 1e-7, "matmul grad check error {err}");
    }

    #[test]
    fn non_scalar_output_is_contract_error() {
        let a = Tensor::<f64>::param(&[2, 2], vec![1.0; 4]).unwrap();
        let r = grad_check(|| Ok(a.scale(2.0)), &[a.clone()]);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
