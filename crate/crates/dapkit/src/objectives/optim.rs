use super::config::TrainConfig;
use crate::error::{DapError, Result};
use crate::model::ModelParams;
use crate::numcore::Tensor;

/// Adam with decoupled weight decay. Decay is skipped for biases, layer
/// norm parameters, and embedding tables (see `ModelParams::decays`).
/// Moment buffers follow the model's visit order; tensors without a
/// gradient this step are left untouched.
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> Self {
        let sizes: Vec<usize> = params.visit().iter().map(|(_, t)| t.len()).collect();
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Apply one update with gradients aligned to the visit order.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &[Option<Tensor>],
        lr: f64,
    ) -> Result<()> {
        let mut slots = params.visit_mut();
        if grads.len() != slots.len() {
            return Err(DapError::Shape(format!(
                "optimizer: {} gradients for {} parameter tensors",
                grads.len(),
                slots.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (name, tensor)) in slots.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            if g.shape() != tensor.shape() {
                return Err(DapError::Shape(format!(
                    "optimizer: gradient shape {:?} for {name} with shape {:?}",
                    g.shape(),
                    tensor.shape()
                )));
            }
            let decay = if ModelParams::decays(name) {
                self.weight_decay
            } else {
                0.0
            };
            let mut data = tensor.data().to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (p, &gj)) in data.iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *p -= lr * (mh / (vh.sqrt() + self.eps) + decay * *p);
            }
            **tensor = Tensor::new(tensor.shape().to_vec(), data)?;
        }
        Ok(())
    }
}
