//! Confidence-guided diffusion loss.
//!
//! Per pixel p the default objective is
//!
//! ```text
//! l_p = w_p * r_p^2  -  beta * log(c_p)  +  tau
//! ```
//!
//! where `r_p^2` is the squared noise residual averaged over the latent
//! channels, `c_p` the predicted confidence (treated as precision: larger
//! means more certain), and `w_p = c_p^beta`, optionally detached from the
//! gradient. `beta = 0` reduces the gradient with respect to the predicted
//! noise to the plain MSE gradient; `beta = 1` with attached weights has
//! its confidence stationary point at `c* = 1 / r^2`.
//!
//! A literal variant (`literal_eq3`) weights the raw (unsquared) residual
//! by `c^beta` and takes a Frobenius norm over all entries; it is kept
//! behind a switch for comparison and is not the default.

use crate::error::{Error, Result};
use crate::tensor::{self as tn, Tape, Tensor};

pub const DEFAULT_TAU: f32 = 1.837_877_1; // ln(2*pi)

/// Confidence floor applied before the log term.
pub const CONF_FLOOR: f32 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// Confidence exponent in [0, 1].
    pub beta: f32,
    /// Margin term keeping per-pixel losses non-negative for c <= 2*pi.
    pub tau: f32,
    /// Detach the weighting factor `c^beta` from the gradient.
    pub stop_grad_weight: bool,
    /// Use the literal norm-of-weighted-residual variant.
    pub literal_eq3: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 1.0,
            tau: DEFAULT_TAU,
            stop_grad_weight: false,
            literal_eq3: false,
        }
    }
}

impl LossConfig {
    pub fn mse() -> Self {
        LossConfig {
            beta: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(
                "cdiff_loss",
                format!("beta must be in [0, 1], got {}", self.beta),
            ));
        }
        Ok(())
    }
}

fn channel_axis(op: &'static str, eps: &Tensor, conf: &Tensor) -> Result<usize> {
    let rank = eps.shape().len();
    let axis = match rank {
        3 => 0,
        4 => 1,
        _ => {
            return Err(Error::invalid(
                op,
                format!("expected (C,h,w) or (N,C,h,w), got {:?}", eps.shape()),
            ))
        }
    };
    let mut conf_shape = eps.shape().to_vec();
    conf_shape[axis] = 1;
    if conf.shape() != conf_shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: conf.shape().to_vec(),
            rhs: conf_shape,
        });
    }
    Ok(axis)
}

fn check_conf_positive(conf: &Tensor) -> Result<()> {
    if let Some(&bad) = conf.data().iter().find(|&&v| v <= 0.0) {
        return Err(Error::domain(
            "cdiff_loss",
            format!("non-positive confidence value {bad}"),
        ));
    }
    Ok(())
}

/// `c^beta` with the special cases kept exact.
fn conf_pow(tape: Option<&Tape>, c: &Tensor, beta: f32) -> Result<Tensor> {
    if beta == 0.0 {
        Ok(Tensor::ones(c.shape()))
    } else if beta == 1.0 {
        Ok(c.clone())
    } else {
        let lc = tn::log(tape, c)?;
        Ok(tn::exp(tape, &tn::affine(tape, &lc, beta, 0.0)))
    }
}

/// Per-pixel loss map, shape (..., 1, h, w).
pub fn cdiff_loss_map(
    tape: Option<&Tape>,
    eps: &Tensor,
    eps_hat: &Tensor,
    conf: &Tensor,
    cfg: &LossConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if eps.shape() != eps_hat.shape() {
        return Err(Error::ShapeMismatch {
            op: "cdiff_loss",
            lhs: eps.shape().to_vec(),
            rhs: eps_hat.shape().to_vec(),
        });
    }
    let axis = channel_axis("cdiff_loss", eps, conf)?;
    check_conf_positive(conf)?;
    let c = tn::clamp(tape, conf, CONF_FLOOR, f32::INFINITY);

    let diff = tn::sub(tape, eps, eps_hat)?;
    let rsq = {
        let sq = tn::mul(tape, &diff, &diff)?;
        tn::mean_axes(tape, &sq, &[axis], true)?
    };
    let mut weight = conf_pow(tape, &c, cfg.beta)?;
    if cfg.stop_grad_weight {
        weight = weight.detach();
    }
    let weighted = tn::mul(tape, &weight, &rsq)?;
    // -beta * log(c) + tau; at beta = 0 this is the constant tau.
    let reg = if cfg.beta == 0.0 {
        Tensor::full(c.shape(), cfg.tau)
    } else {
        let lc = tn::log(tape, &c)?;
        tn::affine(tape, &lc, -cfg.beta, cfg.tau)
    };
    tn::add(tape, &weighted, &reg)
}

/// Scalar confidence-guided diffusion loss: mean of the per-pixel map.
pub fn cdiff_loss(
    tape: Option<&Tape>,
    eps: &Tensor,
    eps_hat: &Tensor,
    conf: &Tensor,
    cfg: &LossConfig,
) -> Result<Tensor> {
    if cfg.literal_eq3 {
        return literal_norm_loss(tape, eps, eps_hat, conf, cfg);
    }
    let map = cdiff_loss_map(tape, eps, eps_hat, conf, cfg)?;
    Ok(tn::mean_all(tape, &map))
}

/// Literal variant: Frobenius norm of `(eps - eps_hat) * c^beta - beta*log(c) + tau`
/// with the confidence broadcast across channels.
fn literal_norm_loss(
    tape: Option<&Tape>,
    eps: &Tensor,
    eps_hat: &Tensor,
    conf: &Tensor,
    cfg: &LossConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if eps.shape() != eps_hat.shape() {
        return Err(Error::ShapeMismatch {
            op: "cdiff_loss",
            lhs: eps.shape().to_vec(),
            rhs: eps_hat.shape().to_vec(),
        });
    }
    channel_axis("cdiff_loss", eps, conf)?;
    check_conf_positive(conf)?;
    let c = tn::clamp(tape, conf, CONF_FLOOR, f32::INFINITY);
    let mut weight = conf_pow(tape, &c, cfg.beta)?;
    if cfg.stop_grad_weight {
        weight = weight.detach();
    }
    let diff = tn::sub(tape, eps, eps_hat)?;
    let weighted = tn::mul(tape, &diff, &weight)?;
    let reg = if cfg.beta == 0.0 {
        Tensor::full(c.shape(), cfg.tau)
    } else {
        let lc = tn::log(tape, &c)?;
        tn::affine(tape, &lc, -cfg.beta, cfg.tau)
    };
    let m = tn::add(tape, &weighted, &reg)?;
    let sq = tn::mul(tape, &m, &m)?;
    tn::sqrt(tape, &tn::sum_all(tape, &sq))
}

/// Analytic-vs-numeric gradient report for the confidence input.
#[derive(Debug, Clone)]
pub struct ConfidenceGradReport {
    pub analytic: Vec<f32>,
    pub numeric: Vec<f32>,
    pub max_rel_error: f64,
}

/// Scalar f64 re-statement of the loss, independent of the tensor stack.
/// `conf` is given in f64 so the harness can take clean central differences.
fn reference_loss_f64(eps: &Tensor, eps_hat: &Tensor, conf: &[f64], cfg: &LossConfig) -> f64 {
    let shape = eps.shape();
    let (channels, cells) = match shape.len() {
        3 => (shape[0], shape[1] * shape[2]),
        4 => (shape[1], shape[0] * shape[2] * shape[3]),
        _ => unreachable!("validated by caller"),
    };
    // Pixel-major view: for rank 4 the conf layout is (N,1,h,w), i.e. one
    // value per (n, y, x) cell; channels are contiguous blocks per sample.
    let ed = eps.data();
    let hd = eps_hat.data();
    let tau = cfg.tau as f64;
    let beta = cfg.beta as f64;
    let spatial = if shape.len() == 3 {
        shape[1] * shape[2]
    } else {
        shape[2] * shape[3]
    };
    let mut total = 0f64;
    for cell in 0..cells {
        let (n, p) = (cell / spatial, cell % spatial);
        let mut rsq = 0f64;
        for ch in 0..channels {
            let idx = (n * channels + ch) * spatial + p;
            let d = ed[idx] as f64 - hd[idx] as f64;
            rsq += d * d;
        }
        rsq /= channels as f64;
        let c = conf[cell].max(CONF_FLOOR as f64);
        let term = if cfg.literal_eq3 {
            unreachable!("reference covers the default reading only")
        } else {
            c.powf(beta) * rsq - beta * c.ln() + tau
        };
        total += term;
    }
    total / cells as f64
}

/// Check harness: differentiates the loss with respect to the confidence
/// map analytically (tape) and numerically (central differences on an
/// independent f64 scalar restatement of the objective).
pub fn confidence_regularizer_gradients(
    eps: &Tensor,
    eps_hat: &Tensor,
    conf: &Tensor,
    cfg: &LossConfig,
) -> Result<ConfidenceGradReport> {
    if cfg.literal_eq3 {
        return Err(Error::invalid(
            "confidence_regularizer_gradients",
            "harness covers the default loss reading",
        ));
    }
    let conf_param = Tensor::param(conf.shape(), conf.to_vec())?;
    let tape = Tape::new();
    let loss = cdiff_loss(Some(&tape), eps, eps_hat, &conf_param, cfg)?;
    tape.backward(&loss)?;
    let analytic = conf_param.grad().unwrap_or_else(|| vec![0.0; conf.numel()]);

    let step = 1e-3f64;
    let mut c64: Vec<f64> = conf.data().iter().map(|&v| v as f64).collect();
    let mut numeric = vec![0f32; conf_param.numel()];
    for i in 0..c64.len() {
        let orig = c64[i];
        c64[i] = orig + step;
        let plus = reference_loss_f64(eps, eps_hat, &c64, cfg);
        c64[i] = orig - step;
        let minus = reference_loss_f64(eps, eps_hat, &c64, cfg);
        c64[i] = orig;
        numeric[i] = ((plus - minus) / (2.0 * step)) as f32;
    }
    let max_rel_error = analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| ((a as f64 - n as f64).abs()) / (n as f64).abs().max(1.0))
        .fold(0f64, f64::max);
    Ok(ConfidenceGradReport {
        analytic,
        numeric,
        max_rel_error,
    })
}

/// Gradient-descend a free scalar confidence against a fixed residual.
/// With `beta = 1` and attached weights this converges to `1 / r_sq`.
pub fn descend_confidence(r_sq: f32, steps: usize, lr: f32, cfg: &LossConfig) -> Result<f32> {
    let r = r_sq.sqrt();
    let eps = Tensor::from_vec(&[1, 1, 1], vec![r])?;
    let eps_hat = Tensor::zeros(&[1, 1, 1]);
    let mut c = 1.0f32;
    for _ in 0..steps {
        let conf = Tensor::param(&[1, 1, 1], vec![c])?;
        let tape = Tape::new();
        let loss = cdiff_loss(Some(&tape), &eps, &eps_hat, &conf, cfg)?;
        tape.backward(&loss)?;
        let g = conf.grad().map(|g| g[0]).unwrap_or(0.0);
        c = (c - lr * g).max(1e-4);
    }
    Ok(c)
}
