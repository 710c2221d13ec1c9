//! Noise schedule, forward diffusion, and the deterministic reverse update.
//!
//! The schedule keeps `beta` and the cumulative `alpha_bar` in f64; tensor
//! updates load f32 elements, combine them with f64 coefficients, and round
//! once on store.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Per-timestep noise magnitudes: `beta[s]` for s = 1..T and the running
/// product `alpha_bar[t] = prod_{s<=t} (1 - beta[s])`.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta schedule from `beta_start` to `beta_end` inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
        if steps == 0 {
            return Err(Error::invalid("make_schedule", "T must be >= 1"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(
                "make_schedule",
                format!("need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"),
            ));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|s| beta_start + (beta_end - beta_start) * s as f64 / (steps - 1) as f64)
                .collect()
        };
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut prod = 1f64;
        for &b in &betas {
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        Ok(NoiseSchedule { betas, alpha_bar })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// `beta_t` for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_bar_t` for t in 0..=T, with the boundary convention
    /// `alpha_bar_0 = 1` so the final reverse step lands on the clean latent.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    fn check_t(&self, op: &'static str, t: usize) -> Result<()> {
        let _ = op;
        if t == 0 || t > self.len() {
            Err(Error::TimestepOutOfRange { t, max: self.len() })
        } else {
            Ok(())
        }
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    } else {
        Ok(())
    }
}

/// Forward noising: `sqrt(alpha_bar_t) * z + sqrt(1 - alpha_bar_t) * eps`.
/// The caller supplies `eps` and controls randomness.
pub fn forward_diffuse(
    z: &Tensor,
    t: usize,
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    schedule.check_t("forward_diffuse", t)?;
    check_same_shape("forward_diffuse", z, eps)?;
    let ab = schedule.alpha_bar(t);
    let (ca, cb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let zd = z.data();
    let ed = eps.data();
    let out: Vec<f32> = zd
        .iter()
        .zip(ed.iter())
        .map(|(&zv, &ev)| (ca * zv as f64 + cb * ev as f64) as f32)
        .collect();
    drop(zd);
    drop(ed);
    Tensor::from_vec(z.shape(), out)
}

/// Uniform timestep draw over {1, ..., T}.
pub fn sample_timestep(rng: &mut Rng, schedule: &NoiseSchedule) -> usize {
    use rand::Rng as _;
    rng.gen_range(1..=schedule.len())
}

/// Invert the forward process: `(z_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t)`.
pub fn predict_x0(
    z_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    schedule.check_t("predict_x0", t)?;
    check_same_shape("predict_x0", z_t, eps_hat)?;
    let ab = schedule.alpha_bar(t);
    let (ca, cb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let zd = z_t.data();
    let ed = eps_hat.data();
    let out: Vec<f32> = zd
        .iter()
        .zip(ed.iter())
        .map(|(&zv, &ev)| ((zv as f64 - cb * ev as f64) / ca) as f32)
        .collect();
    drop(zd);
    drop(ed);
    Tensor::from_vec(z_t.shape(), out)
}

/// Deterministic reverse update (eta = 0): re-estimate the clean latent and
/// re-noise it to the earlier timestep with the same predicted noise.
pub fn ddim_step(
    z_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    schedule.check_t("ddim_step", t)?;
    if t_prev >= t {
        return Err(Error::invalid(
            "ddim_step",
            format!("timesteps must decrease, got t={t}, t_prev={t_prev}"),
        ));
    }
    let x0 = predict_x0(z_t, eps_hat, t, schedule)?;
    let ab_prev = schedule.alpha_bar(t_prev);
    let (ca, cb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let xd = x0.data();
    let ed = eps_hat.data();
    let out: Vec<f32> = xd
        .iter()
        .zip(ed.iter())
        .map(|(&xv, &ev)| (ca * xv as f64 + cb * ev as f64) as f32)
        .collect();
    drop(xd);
    drop(ed);
    Tensor::from_vec(z_t.shape(), out)
}

/// Strictly decreasing subsequence of [1, T] visited at inference.
#[derive(Debug, Clone)]
pub struct InferencePlan {
    timesteps: Vec<usize>,
}

impl InferencePlan {
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    /// Consecutive (t, t_prev) pairs; the final pair ends at 0.
    pub fn step_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.timesteps.len()).map(move |i| {
            let t = self.timesteps[i];
            let prev = self.timesteps.get(i + 1).copied().unwrap_or(0);
            (t, prev)
        })
    }
}

/// Evenly spaced plan with ties broken toward larger t:
/// `t_j = T - floor(j * T / steps)`, so `steps == T` yields T, T-1, ..., 1.
pub fn make_inference_plan(total: usize, steps: usize) -> Result<InferencePlan> {
    if steps == 0 || steps > total {
        return Err(Error::invalid(
            "make_inference_plan",
            format!("steps must satisfy 1 <= steps <= {total}, got {steps}"),
        ));
    }
    let timesteps: Vec<usize> = (0..steps).map(|j| total - j * total / steps).collect();
    debug_assert!(timesteps.windows(2).all(|w| w[0] > w[1]));
    debug_assert!(*timesteps.last().unwrap() >= 1);
    Ok(InferencePlan { timesteps })
}
