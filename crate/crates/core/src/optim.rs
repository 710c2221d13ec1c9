//! Decoupled-weight-decay optimizer (moment decay 0.9/0.999, eps 1e-8)
//! with global-norm gradient clipping, plus the warmup + cosine
//! learning-rate schedule.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Per-parameter first/second moment estimates and the step counter.
pub struct OptimizerState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: usize,
}

impl OptimizerState {
    pub fn new(params: &[(String, Tensor)]) -> OptimizerState {
        OptimizerState {
            m: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    /// Rebuild from checkpointed moments.
    pub fn restore(
        params: &[(String, Tensor)],
        m: Vec<Vec<f32>>,
        v: Vec<Vec<f32>>,
        step: usize,
    ) -> Result<OptimizerState> {
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::invalid(
                "optimizer restore",
                "moment count does not match parameter count",
            ));
        }
        for (i, (_, p)) in params.iter().enumerate() {
            if m[i].len() != p.numel() || v[i].len() != p.numel() {
                return Err(Error::invalid(
                    "optimizer restore",
                    format!("moment {i} length does not match parameter"),
                ));
            }
        }
        Ok(OptimizerState { m, v, step })
    }

    /// One decoupled update: `p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)`.
    /// Parameters without an accumulated gradient are treated as zero-grad.
    /// Returns the pre-clip global gradient norm.
    pub fn apply(
        &mut self,
        params: &[(String, Tensor)],
        lr: f64,
        weight_decay: f64,
        clip_global_norm: Option<f64>,
    ) -> f64 {
        self.step += 1;
        let grads: Vec<Vec<f32>> = params
            .iter()
            .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        let mut norm_sq = 0f64;
        for g in &grads {
            for &v in g {
                norm_sq += v as f64 * v as f64;
            }
        }
        let norm = norm_sq.sqrt();
        let scale = match clip_global_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for (i, (_, p)) in params.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let g = &grads[i];
            p.update_data(|data| {
                for j in 0..data.len() {
                    let gj = g[j] as f64 * scale;
                    let mj = BETA1 * m[j] as f64 + (1.0 - BETA1) * gj;
                    let vj = BETA2 * v[j] as f64 + (1.0 - BETA2) * gj * gj;
                    m[j] = mj as f32;
                    v[j] = vj as f32;
                    let m_hat = mj / bc1;
                    let v_hat = vj / bc2;
                    let pj = data[j] as f64;
                    data[j] = (pj - lr * weight_decay * pj - lr * m_hat / (v_hat.sqrt() + EPS)) as f32;
                }
            });
        }
        norm
    }
}

pub fn zero_grads(params: &[(String, Tensor)]) {
    for (_, p) in params {
        p.clear_grad();
    }
}

/// Linear warmup to `lr_init`, then cosine annealing to ~0 at the final step.
pub fn lr_at(step: usize, iterations: usize, warmup_steps: usize, lr_init: f64) -> Result<f64> {
    if step >= iterations {
        return Err(Error::invalid(
            "lr_at",
            format!("step {step} out of range [0, {iterations})"),
        ));
    }
    if step < warmup_steps {
        return Ok(lr_init * step as f64 / warmup_steps as f64);
    }
    let span = (iterations - warmup_steps) as f64;
    let progress = (step - warmup_steps) as f64 / span;
    Ok(lr_init * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
