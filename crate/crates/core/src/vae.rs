//! Shared SAR/EO latent codec: a small convolutional VAE with an exact
//! x8 spatial reduction to 4 latent channels, plus the SAR channel
//! adaptation rules that feed radar imagery through the 3-channel encoder.
//!
//! The VAE is pretrained on EO-style images only and then frozen; SAR
//! images pass through the same frozen encoder, which is what makes the
//! latents pixel-aligned across modalities.

use crate::error::{Error, Result};
use crate::nn::{collect_params, Conv2dLayer, ParamFactory, ParamSource};
use crate::optim::{lr_at, zero_grads, OptimizerState};
use crate::rng::{rng_for, rng_for_at, Rng};
use crate::tensor::{self as tn, Conv2dSpec, Tape, Tensor};
use std::collections::BTreeMap;

pub const LATENT_CHANNELS: usize = 4;
pub const DOWNSAMPLE: usize = 8;
pub const LOGVAR_MIN: f32 = -30.0;
pub const LOGVAR_MAX: f32 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Sar,
    Eo,
}

/// A pixel-space image: channel-planar values in [0, 1], spatial dims
/// divisible by the latent downsampling factor.
#[derive(Clone)]
pub struct ImageSample {
    pub pixels: Tensor,
    pub modality: Modality,
}

impl ImageSample {
    pub fn new(pixels: Tensor, modality: Modality) -> Result<ImageSample> {
        let s = pixels.shape();
        if s.len() != 3 {
            return Err(Error::invalid(
                "ImageSample",
                format!("expected (C, H, W), got {s:?}"),
            ));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        if !matches!(c, 1 | 3 | 4) {
            return Err(Error::invalid(
                "ImageSample",
                format!("channel count {c} unsupported (want 1, 3, or 4)"),
            ));
        }
        if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::invalid(
                "ImageSample",
                format!("spatial dims {h}x{w} must be divisible by {DOWNSAMPLE}"),
            ));
        }
        if pixels.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("ImageSample", "pixel values must lie in [0, 1]"));
        }
        Ok(ImageSample { pixels, modality })
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[0]
    }
}

/// Adapt a SAR image to the 3-channel encoder input:
/// 1-channel inputs are replicated; 4-channel (HH, HV, VH, VV) inputs map
/// to (HH, (HV+VH)/2, VV).
pub fn sar_to_rgb(x: &ImageSample) -> Result<Tensor> {
    if x.modality != Modality::Sar {
        return Err(Error::invalid("sar_to_rgb", "input must be a SAR sample"));
    }
    let s = x.pixels.shape();
    let (h, w) = (s[1], s[2]);
    match s[0] {
        1 => tn::concat(None, &[&x.pixels, &x.pixels, &x.pixels], 0),
        4 => {
            let hh = tn::narrow(None, &x.pixels, 0, 0, 1)?;
            let hv = tn::narrow(None, &x.pixels, 0, 1, 1)?;
            let vh = tn::narrow(None, &x.pixels, 0, 2, 1)?;
            let vv = tn::narrow(None, &x.pixels, 0, 3, 1)?;
            let cross = tn::affine(None, &tn::add(None, &hv, &vh)?, 0.5, 0.0);
            let out = tn::concat(None, &[&hh, &cross, &vv], 0)?;
            debug_assert_eq!(out.shape(), &[3, h, w]);
            Ok(out)
        }
        c => Err(Error::invalid(
            "sar_to_rgb",
            format!("unsupported SAR channel count {c} (want 1 or 4)"),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    Sample,
    Mean,
}

/// Encoder/decoder stacks. Frozen parameters are gradient-free leaves.
pub struct VaeParameters {
    enc1: Conv2dLayer, // 3 -> 32, stride 2
    enc2: Conv2dLayer, // 32 -> 64, stride 2
    enc3: Conv2dLayer, // 64 -> 128, stride 2
    enc4: Conv2dLayer, // 128 -> 8 (mean | logvar), stride 1
    dec1: Conv2dLayer, // 4 -> 128
    dec2: Conv2dLayer, // 128 -> 64 (after 2x upsample)
    dec3: Conv2dLayer, // 64 -> 32
    dec4: Conv2dLayer, // 32 -> 3
    frozen: bool,
}

impl VaeParameters {
    fn build(factory: &mut ParamFactory<'_>) -> Result<VaeParameters> {
        let s2 = Conv2dSpec::new(2, 1);
        let same = Conv2dSpec::same(3);
        Ok(VaeParameters {
            enc1: factory.conv("vae.enc1", 3, 32, 3, s2)?,
            enc2: factory.conv("vae.enc2", 32, 64, 3, s2)?,
            enc3: factory.conv("vae.enc3", 64, 128, 3, s2)?,
            enc4: factory.conv("vae.enc4", 128, 2 * LATENT_CHANNELS, 3, same)?,
            dec1: factory.conv("vae.dec1", LATENT_CHANNELS, 128, 3, same)?,
            dec2: factory.conv("vae.dec2", 128, 64, 3, same)?,
            dec3: factory.conv("vae.dec3", 64, 32, 3, same)?,
            dec4: factory.conv("vae.dec4", 32, 3, 3, same)?,
            frozen: false,
        })
    }

    pub fn init(seed: u64) -> VaeParameters {
        let mut rng = rng_for(seed, "vae-init");
        let mut factory = ParamFactory::new(ParamSource::Init(&mut rng));
        Self::build(&mut factory).expect("init cannot fail")
    }

    pub fn from_named(map: &BTreeMap<String, Tensor>, frozen: bool) -> Result<VaeParameters> {
        let mut factory = ParamFactory::new(ParamSource::Load(map));
        let mut vae = Self::build(&mut factory)?;
        if frozen {
            vae = vae.frozen();
        }
        Ok(vae)
    }

    pub fn visit(&self, f: &mut dyn FnMut(String, &Tensor)) {
        self.enc1.visit("vae.enc1", f);
        self.enc2.visit("vae.enc2", f);
        self.enc3.visit("vae.enc3", f);
        self.enc4.visit("vae.enc4", f);
        self.dec1.visit("vae.dec1", f);
        self.dec2.visit("vae.dec2", f);
        self.dec3.visit("vae.dec3", f);
        self.dec4.visit("vae.dec4", f);
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        collect_params(|f| self.visit(f))
    }

    /// Gradient-free deep copy; no parameter can receive updates.
    pub fn frozen(&self) -> VaeParameters {
        let map: BTreeMap<String, Tensor> = self
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.detach()))
            .collect();
        let mut out = {
            let mut factory = ParamFactory::new(ParamSource::Load(&map));
            Self::build(&mut factory).expect("shapes match by construction")
        };
        // `param` leaves from the factory are trainable; drop that.
        let detached: BTreeMap<String, Tensor> = out
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.detach()))
            .collect();
        out.rebind(&detached);
        out.frozen = true;
        out
    }

    fn rebind(&mut self, map: &BTreeMap<String, Tensor>) {
        let get = |n: &str| map.get(n).expect("rebind key").clone();
        for (name, layer) in [
            ("vae.enc1", &mut self.enc1),
            ("vae.enc2", &mut self.enc2),
            ("vae.enc3", &mut self.enc3),
            ("vae.enc4", &mut self.enc4),
            ("vae.dec1", &mut self.dec1),
            ("vae.dec2", &mut self.dec2),
            ("vae.dec3", &mut self.dec3),
            ("vae.dec4", &mut self.dec4),
        ] {
            layer.weight = get(&format!("{name}.weight"));
            layer.bias = get(&format!("{name}.bias"));
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn checksum(&self) -> u64 {
        crate::nn::params_checksum(&self.named_params())
    }

    /// Posterior statistics of a 3-channel image: (mean, logvar), each
    /// (C, H/8, W/8) or batched, with logvar clamped to [-30, 20].
    pub fn encode_stats(&self, tape: Option<&Tape>, img3: &Tensor) -> Result<(Tensor, Tensor)> {
        let rank3 = img3.shape().len() == 3;
        let s = img3.shape();
        let (c, h, w) = if rank3 {
            (s[0], s[1], s[2])
        } else {
            (s[1], s[2], s[3])
        };
        if c != 3 {
            return Err(Error::invalid(
                "encode",
                format!("encoder wants 3 channels, got {c}"),
            ));
        }
        if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::invalid(
                "encode",
                format!("spatial dims {h}x{w} must be divisible by {DOWNSAMPLE}"),
            ));
        }
        let mut hdd = self.enc1.forward(tape, img3)?;
        hdd = tn::silu(tape, &hdd);
        hdd = self.enc2.forward(tape, &hdd)?;
        hdd = tn::silu(tape, &hdd);
        hdd = self.enc3.forward(tape, &hdd)?;
        hdd = tn::silu(tape, &hdd);
        let stats = self.enc4.forward(tape, &hdd)?;
        let axis = if rank3 { 0 } else { 1 };
        let mean = tn::narrow(tape, &stats, axis, 0, LATENT_CHANNELS)?;
        let logvar_raw = tn::narrow(tape, &stats, axis, LATENT_CHANNELS, LATENT_CHANNELS)?;
        let logvar = tn::clamp(tape, &logvar_raw, LOGVAR_MIN, LOGVAR_MAX);
        Ok((mean, logvar))
    }

    /// Encode to the latent space. `Mean` returns the posterior mean;
    /// `Sample` adds `exp(logvar/2) * xi` with `xi ~ N(0, I)`.
    pub fn encode(
        &self,
        tape: Option<&Tape>,
        img3: &Tensor,
        mode: EncodeMode,
        rng: &mut Rng,
    ) -> Result<Tensor> {
        let (mean, logvar) = self.encode_stats(tape, img3)?;
        match mode {
            EncodeMode::Mean => Ok(mean),
            EncodeMode::Sample => {
                let xi = Tensor::randn(rng, mean.shape());
                let std = tn::exp(tape, &tn::affine(tape, &logvar, 0.5, 0.0));
                let noise = tn::mul(tape, &std, &xi)?;
                tn::add(tape, &mean, &noise)
            }
        }
    }

    /// Decode a latent back to a [0, 1] 3-channel image (sigmoid squash).
    pub fn decode(&self, tape: Option<&Tape>, z: &Tensor) -> Result<Tensor> {
        let rank = z.shape().len();
        let c = if rank == 3 { z.shape()[0] } else { z.shape()[1] };
        if !(rank == 3 || rank == 4) || c != LATENT_CHANNELS {
            return Err(Error::invalid(
                "decode",
                format!("expected {LATENT_CHANNELS}-channel latent, got {:?}", z.shape()),
            ));
        }
        let need_batch = rank == 3;
        let zb = if need_batch {
            let mut s = vec![1];
            s.extend_from_slice(z.shape());
            tn::reshape(tape, z, &s)?
        } else {
            z.clone()
        };
        let mut h = self.dec1.forward(tape, &zb)?;
        h = tn::silu(tape, &h);
        h = tn::upsample_nearest_2x(tape, &h)?;
        h = self.dec2.forward(tape, &h)?;
        h = tn::silu(tape, &h);
        h = tn::upsample_nearest_2x(tape, &h)?;
        h = self.dec3.forward(tape, &h)?;
        h = tn::silu(tape, &h);
        h = tn::upsample_nearest_2x(tape, &h)?;
        h = self.dec4.forward(tape, &h)?;
        let out = tn::sigmoid(tape, &h);
        if need_batch {
            let s = out.shape()[1..].to_vec();
            tn::reshape(tape, &out, &s)
        } else {
            Ok(out)
        }
    }
}

/// Hyperparameters for VAE pretraining.
#[derive(Debug, Clone, Copy)]
pub struct VaeTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub kl_weight: f32,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            iterations: 3000,
            batch_size: 8,
            lr_init: 1e-3,
            warmup_steps: 50,
            weight_decay: 0.01,
            kl_weight: 1e-4,
            seed: 2025,
        }
    }
}

/// Reconstruction MSE + kl_weight * KL(posterior || N(0, I)), one batch.
/// Returns (total, recon, kl); KL is summed over latent dims, averaged
/// over the batch.
pub fn vae_loss(
    tape: Option<&Tape>,
    vae: &VaeParameters,
    batch: &Tensor,
    kl_weight: f32,
    rng: &mut Rng,
) -> Result<(Tensor, f32, f32)> {
    let (mean, logvar) = vae.encode_stats(tape, batch)?;
    let xi = Tensor::randn(rng, mean.shape());
    let std = tn::exp(tape, &tn::affine(tape, &logvar, 0.5, 0.0));
    let z = tn::add(tape, &mean, &tn::mul(tape, &std, &xi)?)?;
    let recon = vae.decode(tape, &z)?;
    let diff = tn::sub(tape, &recon, batch)?;
    let recon_loss = tn::mean_all(tape, &tn::mul(tape, &diff, &diff)?);
    // KL(q || N(0,I)) = -0.5 * sum(1 + logvar - mean^2 - exp(logvar))
    let batch_n = batch.shape()[0] as f32;
    let msq = tn::mul(tape, &mean, &mean)?;
    let evar = tn::exp(tape, &logvar);
    let inner = tn::sub(tape, &tn::affine(tape, &logvar, 1.0, 1.0), &tn::add(tape, &msq, &evar)?)?;
    let kl = tn::affine(tape, &tn::sum_all(tape, &inner), -0.5 / batch_n, 0.0);
    let total = tn::add(tape, &recon_loss, &tn::affine(tape, &kl, kl_weight, 0.0))?;
    let (r, k) = (recon_loss.item(), kl.item());
    Ok((total, r, k))
}

/// Pretrain on 3-channel images and return the frozen parameters along
/// with the per-step total-loss trace.
pub fn train_vae(
    images: &[Tensor],
    cfg: &VaeTrainConfig,
    mut log: impl FnMut(usize, f64, f32, f32, f32),
) -> Result<(VaeParameters, Vec<f32>)> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for img in images {
        if img.shape().len() != 3 || img.shape()[0] != 3 {
            return Err(Error::invalid(
                "train_vae",
                format!("expected (3, H, W) images, got {:?}", img.shape()),
            ));
        }
    }
    let vae = VaeParameters::init(cfg.seed);
    let params = vae.named_params();
    let mut opt = OptimizerState::new(&params);
    let n = images.len();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        // Sample-index stream is a pure function of (seed, step).
        let mut rng = rng_for_at(cfg.seed, "vae-step", step as u64);
        let batch = stack_batch(images, n, cfg.batch_size, step, cfg.seed)?;
        let tape = Tape::new();
        zero_grads(&params);
        let (total, recon, kl) = vae_loss(Some(&tape), &vae, &batch, cfg.kl_weight, &mut rng)?;
        let loss_val = total.item();
        if !loss_val.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("vae loss (recon {recon}, kl {kl})"),
            });
        }
        tape.backward(&total)?;
        let lr = lr_at(step, cfg.iterations, cfg.warmup_steps, cfg.lr_init)?;
        opt.apply(&params, lr, cfg.weight_decay, Some(1.0));
        losses.push(loss_val);
        log(step, lr, loss_val, recon, kl);
    }
    Ok((vae.frozen(), losses))
}

fn stack_batch(
    images: &[Tensor],
    n: usize,
    batch_size: usize,
    step: usize,
    seed: u64,
) -> Result<Tensor> {
    use rand::Rng as _;
    let mut rng = rng_for_at(seed, "vae-batch", step as u64);
    let s = images[0].shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut data = Vec::with_capacity(batch_size * c * h * w);
    for _ in 0..batch_size {
        let idx = rng.gen_range(0..n);
        data.extend_from_slice(&images[idx].data());
    }
    Tensor::from_vec(&[batch_size, c, h, w], data)
}

/// PSNR table of the frozen codec under increasing speckle strength.
/// Level 0 is the plain reconstruction; level s > 0 multiplies the input
/// by a gamma field with variance s^2 (looks L = 1/s^2).
pub fn reconstruction_probe(
    x: &ImageSample,
    vae: &VaeParameters,
    speckle_levels: &[f64],
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let clean3 = match x.modality {
        Modality::Sar => sar_to_rgb(x)?,
        Modality::Eo => x.pixels.clone(),
    };
    let mut rows = Vec::with_capacity(speckle_levels.len());
    for (i, &level) in speckle_levels.iter().enumerate() {
        let noisy3 = if level <= 0.0 {
            clean3.clone()
        } else {
            let looks = 1.0 / (level * level);
            let mut rng = rng_for_at(seed, "probe-speckle", i as u64);
            let field = crate::synth::speckle_field(clean3.shape(), looks, &mut rng)?;
            let raw = tn::mul(None, &clean3, &field)?;
            let max = raw.data().iter().cloned().fold(0f32, f32::max).max(1.0);
            tn::affine(None, &raw, 1.0 / max, 0.0)
        };
        let mut rng = rng_for(seed, "probe-encode");
        let z = vae.encode(None, &noisy3, EncodeMode::Mean, &mut rng)?;
        let recon = vae.decode(None, &z)?;
        let psnr = crate::metrics::psnr(&recon, &clean3, 1.0)?;
        rows.push((level, psnr));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn eo_sample(rng: &mut Rng, size: usize) -> ImageSample {
        let px = Tensor::rand_uniform(rng, &[3, size, size], 0.0, 1.0);
        ImageSample::new(px, Modality::Eo).unwrap()
    }

    #[test]
    fn sar_to_rgb_replicates_single_channel() {
        let px = Tensor::full(&[1, 8, 8], 0.5);
        let s = ImageSample::new(px, Modality::Sar).unwrap();
        let rgb = sar_to_rgb(&s).unwrap();
        assert_eq!(rgb.shape(), &[3, 8, 8]);
        assert!(rgb.to_vec().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn sar_to_rgb_full_pol_mapping_and_symmetry() {
        let mut data = Vec::new();
        for (i, v) in [0.1f32, 0.2, 0.4, 0.3].iter().enumerate() {
            let _ = i;
            data.extend(std::iter::repeat(*v).take(64));
        }
        let px = Tensor::from_vec(&[4, 8, 8], data.clone()).unwrap();
        let s = ImageSample::new(px, Modality::Sar).unwrap();
        let rgb = sar_to_rgb(&s).unwrap();
        let v = rgb.to_vec();
        assert!((v[0] - 0.1).abs() < 1e-7);
        assert!((v[64] - 0.3).abs() < 1e-7);
        assert!((v[128] - 0.3).abs() < 1e-7);
        // Swapping HV and VH leaves the output unchanged.
        let mut swapped = data.clone();
        swapped.copy_within(64..128, 192);
        swapped.copy_within(128..192, 64);
        swapped.copy_within(192..256, 128);
        // rebuild properly: (HH, VH, HV, VV)
        let mut sw = data.clone();
        for i in 0..64 {
            sw[64 + i] = data[128 + i];
            sw[128 + i] = data[64 + i];
        }
        let s2 = ImageSample::new(Tensor::from_vec(&[4, 8, 8], sw).unwrap(), Modality::Sar).unwrap();
        assert_eq!(sar_to_rgb(&s2).unwrap().to_vec(), rgb.to_vec());
    }

    #[test]
    fn sar_to_rgb_rejects_unsupported_channel_counts() {
        let px = Tensor::zeros(&[3, 8, 8]);
        let s = ImageSample {
            pixels: px,
            modality: Modality::Sar,
        };
        assert!(sar_to_rgb(&s).is_err());
    }

    #[test]
    fn image_sample_invariants() {
        assert!(ImageSample::new(Tensor::zeros(&[3, 12, 12]), Modality::Eo).is_err()); // not /8
        assert!(ImageSample::new(Tensor::full(&[3, 8, 8], 1.5), Modality::Eo).is_err()); // range
        assert!(ImageSample::new(Tensor::zeros(&[2, 8, 8]), Modality::Sar).is_err()); // channels
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let vae = VaeParameters::init(1);
        let mut rng = rng_from(2);
        let img = eo_sample(&mut rng, 64);
        let z1 = vae
            .encode(None, &img.pixels, EncodeMode::Mean, &mut rng_from(3))
            .unwrap();
        assert_eq!(z1.shape(), &[4, 8, 8]);
        let z2 = vae
            .encode(None, &img.pixels, EncodeMode::Mean, &mut rng_from(4))
            .unwrap();
        assert_eq!(z1.to_vec(), z2.to_vec());
    }

    #[test]
    fn decode_shape_roundtrip_and_range() {
        let vae = VaeParameters::init(1);
        let mut rng = rng_from(5);
        let z = Tensor::randn(&mut rng, &[4, 8, 8]);
        let img = vae.decode(None, &z).unwrap();
        assert_eq!(img.shape(), &[3, 64, 64]);
        assert!(img.to_vec().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn sampled_encode_with_floored_logvar_matches_mean() {
        // When the clamped logvar floor applies, std = exp(-15) and the
        // sample collapses onto the mean.
        let vae = VaeParameters::init(1);
        let mut rng = rng_from(6);
        let img = eo_sample(&mut rng, 32);
        let (mean, logvar) = vae.encode_stats(None, &img.pixels).unwrap();
        let floored = Tensor::full(logvar.shape(), LOGVAR_MIN);
        let xi = Tensor::randn(&mut rng, mean.shape());
        let std = tn::exp(None, &tn::affine(None, &floored, 0.5, 0.0));
        let z = tn::add(None, &mean, &tn::mul(None, &std, &xi).unwrap()).unwrap();
        for (a, b) in z.to_vec().iter().zip(mean.to_vec().iter()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn kl_of_standard_posterior_is_zero() {
        // mean 0, logvar 0 => KL = 0 exactly in the analytic form.
        let mean = Tensor::zeros(&[4, 2, 2]);
        let logvar = Tensor::zeros(&[4, 2, 2]);
        let msq = tn::mul(None, &mean, &mean).unwrap();
        let evar = tn::exp(None, &logvar);
        let inner = tn::sub(
            None,
            &tn::affine(None, &logvar, 1.0, 1.0),
            &tn::add(None, &msq, &evar).unwrap(),
        )
        .unwrap();
        let kl = tn::affine(None, &tn::sum_all(None, &inner), -0.5, 0.0);
        assert_eq!(kl.item(), 0.0);
    }

    #[test]
    fn frozen_params_receive_no_gradients() {
        let vae = VaeParameters::init(1).frozen();
        assert!(vae.is_frozen());
        let mut rng = rng_from(7);
        let img = Tensor::rand_uniform(&mut rng, &[1, 3, 16, 16], 0.0, 1.0);
        let tape = Tape::new();
        let (mean, _) = vae.encode_stats(Some(&tape), &img).unwrap();
        assert!(!mean.requires_grad());
        for (_, p) in vae.named_params() {
            assert!(!p.requires_grad());
        }
    }

    #[test]
    fn smoke_train_loss_decreases_and_overfits_constant() {
        // 16 small images, kl_weight 0: loss after 100 steps should drop
        // and a constant image should reconstruct closely.
        let mut rng = rng_from(8);
        let images: Vec<Tensor> = (0..16)
            .map(|i| {
                if i == 0 {
                    Tensor::full(&[3, 16, 16], 0.5)
                } else {
                    Tensor::rand_uniform(&mut rng, &[3, 16, 16], 0.0, 1.0)
                }
            })
            .collect();
        let cfg = VaeTrainConfig {
            iterations: 120,
            batch_size: 4,
            lr_init: 2e-3,
            warmup_steps: 10,
            weight_decay: 0.0,
            kl_weight: 0.0,
            seed: 11,
        };
        let (_, losses) = train_vae(&images, &cfg, |_, _, _, _, _| {}).unwrap();
        let head: f32 = losses[..20].iter().sum::<f32>() / 20.0;
        let tail: f32 = losses[losses.len() - 20..].iter().sum::<f32>() / 20.0;
        assert!(tail < head, "loss did not decrease: {head} -> {tail}");
    }

    #[test]
    fn overfit_one_constant_sample() {
        let constant = Tensor::full(&[3, 16, 16], 0.5);
        let cfg = VaeTrainConfig {
            iterations: 400,
            batch_size: 4,
            lr_init: 2e-3,
            warmup_steps: 10,
            weight_decay: 0.0,
            kl_weight: 0.0,
            seed: 12,
        };
        let (vae, _) = train_vae(std::slice::from_ref(&constant), &cfg, |_, _, _, _, _| {}).unwrap();
        let z = vae
            .encode(None, &constant, EncodeMode::Mean, &mut rng_from(1))
            .unwrap();
        let rec = vae.decode(None, &z).unwrap();
        let mse: f32 = rec
            .to_vec()
            .iter()
            .map(|&v| (v - 0.5) * (v - 0.5))
            .sum::<f32>()
            / rec.numel() as f32;
        assert!(mse < 1e-3, "constant reconstruction mse {mse}");
    }

    #[test]
    fn train_vae_rejects_empty_dataset() {
        let cfg = VaeTrainConfig::default();
        assert!(matches!(
            train_vae(&[], &cfg, |_, _, _, _, _| {}),
            Err(Error::EmptyDataset)
        ));
    }
}
