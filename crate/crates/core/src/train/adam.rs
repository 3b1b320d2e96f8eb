use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam over an ordered slice of parameter tensors. Moment buffers live
/// here; the update rewrites the parameter data in place.
pub struct Adam<T: Scalar = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    slots: Vec<Slot<T>>,
}

struct Slot<T: Scalar> {
    tensor: Tensor<T>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Tensor<T>], lr: f64, beta1: f64, beta2: f64) -> Self {
        let slots = params
            .iter()
            .map(|t| Slot {
                tensor: t.clone(),
                m: vec![0.0; t.numel()],
                v: vec![0.0; t.numel()],
            })
            .collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            slots,
        }
    }

    /// One update from the gradients currently stored on the parameters.
    /// Parameters without a gradient are skipped (treated as zero grad).
    pub fn step(&mut self) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for slot in &mut self.slots {
            let Some(grad) = slot.tensor.grad() else {
                continue;
            };
            let (b1, b2) = (self.beta1, self.beta2);
            let (lr, eps) = (self.lr, self.eps);
            let m = &mut slot.m;
            let v = &mut slot.v;
            slot.tensor.update_data(|i, value| {
                let g = grad[i].to_f64();
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *value = T::from_f64(value.to_f64() - lr * mh / (vh.sqrt() + eps));
            });
        }
    }

    pub fn zero_grads(&self) {
        for s in &self.slots {
            s.tensor.zero_grad();
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// State export in slot order: (m, v) per parameter.
    pub fn state(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.slots.iter().map(|s| (s.m.clone(), s.v.clone())).collect()
    }

    pub fn restore(&mut self, t: u64, state: Vec<(Vec<f64>, Vec<f64>)>) {
        assert_eq!(state.len(), self.slots.len(), "optimizer state size mismatch");
        self.t = t;
        for (slot, (m, v)) in self.slots.iter_mut().zip(state) {
            assert_eq!(m.len(), slot.m.len());
            slot.m = m;
            slot.v = v;
        }
    }
}
