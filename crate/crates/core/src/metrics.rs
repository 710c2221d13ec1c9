//! Reference-based image metrics and confidence-map diagnostics.

use crate::error::{Error, Result};
use crate::synth::{DatasetManifest, ManifestEntry};
use crate::tensor::Tensor;
use crate::vae::ImageSample;

/// PSNR sentinel for identical inputs (and overall cap), in dB.
pub const PSNR_CAP: f64 = 100.0;

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio: `10 * log10(peak^2 / MSE)`, capped at 100 dB.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    check_same("psnr", a, b)?;
    let ad = a.data();
    let bd = b.data();
    let mut acc = 0f64;
    for (&x, &y) in ad.iter().zip(bd.iter()) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    let mse = acc / ad.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5) and the
/// canonical constants, averaged over channels and valid window positions.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    ssim_with(a, b, 11, 1.5, 0.01, 0.03, peak)
}

pub fn ssim_with(
    a: &Tensor,
    b: &Tensor,
    window: usize,
    sigma: f64,
    k1: f64,
    k2: f64,
    peak: f64,
) -> Result<f64> {
    check_same("ssim", a, b)?;
    let s = a.shape();
    if s.len() != 3 {
        return Err(Error::invalid("ssim", format!("expected (C, H, W), got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if h < window || w < window {
        return Err(Error::invalid(
            "ssim",
            format!("image {h}x{w} smaller than the {window}x{window} window"),
        ));
    }
    // Normalized separable Gaussian weights.
    let half = (window - 1) as f64 / 2.0;
    let g1: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let gsum: f64 = g1.iter().sum();
    let g1: Vec<f64> = g1.iter().map(|v| v / gsum).collect();
    let c1 = (k1 * peak) * (k1 * peak);
    let c2 = (k2 * peak) * (k2 * peak);
    let ad = a.data();
    let bd = b.data();
    let mut total = 0f64;
    let mut count = 0usize;
    for ch in 0..c {
        let ap = &ad[ch * h * w..(ch + 1) * h * w];
        let bp = &bd[ch * h * w..(ch + 1) * h * w];
        for y0 in 0..=(h - window) {
            for x0 in 0..=(w - window) {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0f64, 0f64, 0f64, 0f64, 0f64);
                for dy in 0..window {
                    let row = (y0 + dy) * w + x0;
                    let wy = g1[dy];
                    for dx in 0..window {
                        let wgt = wy * g1[dx];
                        let av = ap[row + dx] as f64;
                        let bv = bp[row + dx] as f64;
                        ma += wgt * av;
                        mb += wgt * bv;
                        saa += wgt * av * av;
                        sbb += wgt * bv * bv;
                        sab += wgt * av * bv;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                let val = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                total += val;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Spatial correlation coefficient outcome; `degenerate` marks a
/// zero-variance high-pass field (value forced to 0).
#[derive(Debug, Clone, Copy)]
pub struct SccResult {
    pub value: f64,
    pub degenerate: bool,
}

const LAPLACIAN: [[f64; 3]; 3] = [[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]];

fn highpass(plane: &[f32], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h - 2, w - 2);
    let mut out = vec![0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0f64;
            for ky in 0..3 {
                for kx in 0..3 {
                    acc += LAPLACIAN[ky][kx] * plane[(y + ky) * w + (x + kx)] as f64;
                }
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Pearson correlation between Laplacian high-pass responses (valid
/// region), averaged over channels.
pub fn scc(a: &Tensor, b: &Tensor) -> Result<SccResult> {
    check_same("scc", a, b)?;
    let s = a.shape();
    if s.len() != 3 || s[1] < 3 || s[2] < 3 {
        return Err(Error::invalid(
            "scc",
            format!("expected (C, H>=3, W>=3), got {s:?}"),
        ));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let ad = a.data();
    let bd = b.data();
    let mut total = 0f64;
    let mut degenerate = false;
    for ch in 0..c {
        let ha = highpass(&ad[ch * h * w..(ch + 1) * h * w], h, w);
        let hb = highpass(&bd[ch * h * w..(ch + 1) * h * w], h, w);
        let n = ha.len() as f64;
        let ma = ha.iter().sum::<f64>() / n;
        let mb = hb.iter().sum::<f64>() / n;
        let (mut num, mut va, mut vb) = (0f64, 0f64, 0f64);
        for (&x, &y) in ha.iter().zip(hb.iter()) {
            num += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        if va < 1e-12 || vb < 1e-12 {
            degenerate = true;
        } else {
            total += num / (va * vb).sqrt();
        }
    }
    Ok(SccResult {
        value: if degenerate { 0.0 } else { total / c as f64 },
        degenerate,
    })
}

/// Max-pool a (1, H, W) mask down to (1, h, w), h = H / factor.
pub fn pool_mask_to_latent(mask: &Tensor, factor: usize) -> Result<Tensor> {
    let s = mask.shape();
    if s.len() != 3 || s[0] != 1 || s[1] % factor != 0 || s[2] % factor != 0 {
        return Err(Error::invalid(
            "pool_mask",
            format!("mask {s:?} not divisible by factor {factor}"),
        ));
    }
    let (h, w) = (s[1] / factor, s[2] / factor);
    let md = mask.data();
    let mut out = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut m = 0f32;
            for dy in 0..factor {
                for dx in 0..factor {
                    m = m.max(md[(y * factor + dy) * s[2] + x * factor + dx]);
                }
            }
            out[y * w + x] = if m > 0.5 { 1.0 } else { 0.0 };
        }
    }
    Tensor::from_vec(&[1, h, w], out)
}

/// AUROC of `score = -confidence` against binary discrepancy labels over
/// all latent cells: low confidence should predict masked (discrepant)
/// cells. Ties receive average rank credit.
pub fn confidence_auroc(conf_maps: &[Tensor], masks: &[Tensor]) -> Result<f64> {
    if conf_maps.len() != masks.len() || conf_maps.is_empty() {
        return Err(Error::invalid(
            "confidence_auroc",
            "need matching, non-empty confidence and mask sets",
        ));
    }
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for (cmap, mask) in conf_maps.iter().zip(masks.iter()) {
        check_same("confidence_auroc", cmap, mask)?;
        let cd = cmap.data();
        let md = mask.data();
        for (&c, &m) in cd.iter().zip(md.iter()) {
            scored.push((-(c as f64), m > 0.5));
        }
    }
    let pos = scored.iter().filter(|(_, l)| *l).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClassMask);
    }
    // Rank-sum with tie averaging.
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank_sum_pos = 0f64;
    let mut i = 0usize;
    while i < scored.len() {
        let mut j = i;
        while j + 1 < scored.len() && scored[j + 1].0 == scored[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for item in &scored[i..=j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    let n = neg as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone)]
pub struct SampleMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub scc: f64,
}

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub rows: Vec<SampleMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_scc: f64,
    pub confidence_auroc: Option<f64>,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<SampleMetrics>, confidence_auroc: Option<f64>) -> MetricReport {
        let n = rows.len().max(1) as f64;
        let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        let mean_scc = rows.iter().map(|r| r.scc).sum::<f64>() / n;
        MetricReport {
            rows,
            mean_psnr,
            mean_ssim,
            mean_scc,
            confidence_auroc,
        }
    }

    pub fn median_psnr(&self) -> f64 {
        let mut v: Vec<f64> = self.rows.iter().map(|r| r.psnr).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if v.is_empty() {
            return f64::NAN;
        }
        let mid = v.len() / 2;
        if v.len() % 2 == 1 {
            v[mid]
        } else {
            0.5 * (v[mid - 1] + v[mid])
        }
    }

    /// Tab-separated report: header, one row per sample, `ALL` aggregate.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tpsnr\tssim\tscc\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\n",
                r.id, r.psnr, r.ssim, r.scc
            ));
        }
        out.push_str(&format!(
            "ALL\t{:.6}\t{:.6}\t{:.6}\n",
            self.mean_psnr, self.mean_ssim, self.mean_scc
        ));
        if let Some(auroc) = self.confidence_auroc {
            out.push_str(&format!("CONF_AUROC\t{auroc:.6}\n"));
        }
        out
    }
}

/// Evaluate every test pair of a manifest. `translate` produces the
/// predicted EO image for a SAR input; `confidence_probe`, when given,
/// produces a latent-resolution confidence map for the pair (evaluated
/// only on entries that carry a discrepancy mask).
pub fn evaluate_manifest(
    manifest: &DatasetManifest,
    mut translate: impl FnMut(&ManifestEntry, &ImageSample) -> Result<Tensor>,
    mut confidence_probe: Option<
        impl FnMut(&ManifestEntry, &ImageSample, &ImageSample) -> Result<Tensor>,
    >,
) -> Result<MetricReport> {
    let test: Vec<&ManifestEntry> = manifest.test_entries().collect();
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let missing: Vec<String> = test
        .iter()
        .filter(|e| manifest.load_pair(e).is_err())
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(
            "evaluate_manifest",
            format!("missing or unreadable files for ids: {}", missing.join(", ")),
        ));
    }
    let mut rows = Vec::with_capacity(test.len());
    let mut conf_maps = Vec::new();
    let mut pooled_masks = Vec::new();
    for e in &test {
        let (sar, eo, mask) = manifest.load_pair(e)?;
        let pred = translate(e, &sar)?;
        let p = psnr(&pred, &eo.pixels, 1.0)?;
        let s = ssim(&pred, &eo.pixels, 1.0)?;
        let c = scc(&pred, &eo.pixels)?;
        rows.push(SampleMetrics {
            id: e.id.clone(),
            psnr: p,
            ssim: s,
            scc: c.value,
        });
        if let (Some(probe), Some(mask)) = (confidence_probe.as_mut(), mask) {
            let cmap = probe(e, &sar, &eo)?;
            let factor = mask.shape()[1] / cmap.shape()[1];
            pooled_masks.push(pool_mask_to_latent(&mask, factor)?);
            conf_maps.push(cmap);
        }
    }
    let auroc = if conf_maps.is_empty() {
        None
    } else {
        Some(confidence_auroc(&conf_maps, &pooled_masks)?)
    };
    Ok(MetricReport::from_rows(rows, auroc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn psnr_identity_and_uniform_offset() {
        let a = Tensor::full(&[3, 8, 8], 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
        let b = Tensor::full(&[3, 8, 8], 0.6);
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-4, "psnr {p}");
    }

    #[test]
    fn psnr_matches_scalar_oracle() {
        let mut rng = rng_from(50);
        let a = Tensor::rand_uniform(&mut rng, &[3, 6, 6], 0.0, 1.0);
        let b = Tensor::rand_uniform(&mut rng, &[3, 6, 6], 0.0, 1.0);
        let got = psnr(&a, &b, 1.0).unwrap();
        let mut acc = 0f64;
        for (&x, &y) in a.data().iter().zip(b.data().iter()) {
            acc += (x as f64 - y as f64).powi(2);
        }
        let oracle = 10.0 * (1.0 / (acc / 108.0)).log10();
        assert!((got - oracle).abs() < 1e-6);
        assert!(psnr(&a, &Tensor::zeros(&[3, 5, 5]), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_constant_pairs() {
        let mut rng = rng_from(51);
        let a = Tensor::rand_uniform(&mut rng, &[3, 16, 16], 0.0, 1.0);
        let s = ssim(&a, &a, 1.0).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "self ssim {s}");
        let c5 = Tensor::full(&[1, 12, 12], 0.5);
        assert!((ssim(&c5, &c5, 1.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_constant_luminance_analytic() {
        let a = Tensor::full(&[1, 12, 12], 0.2);
        let b = Tensor::full(&[1, 12, 12], 0.8);
        let c1 = 0.01f64 * 0.01;
        let expect = (2.0 * 0.2 * 0.8 + c1) / (0.2f64.powi(2) + 0.8f64.powi(2) + c1);
        let got = ssim(&a, &b, 1.0).unwrap();
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::zeros(&[1, 8, 8]);
        assert!(ssim(&a, &a, 1.0).is_err());
    }

    #[test]
    fn scc_self_and_degenerate() {
        let mut rng = rng_from(52);
        let a = Tensor::rand_uniform(&mut rng, &[1, 16, 16], 0.0, 1.0);
        let r = scc(&a, &a).unwrap();
        assert!(!r.degenerate);
        assert!((r.value - 1.0).abs() < 1e-9, "self scc {}", r.value);
        let flat = Tensor::full(&[1, 16, 16], 0.3);
        let d = scc(&a, &flat).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn scc_independent_noise_is_near_zero() {
        let mut rng = rng_from(53);
        let a = Tensor::rand_uniform(&mut rng, &[1, 64, 64], 0.0, 1.0);
        let b = Tensor::rand_uniform(&mut rng, &[1, 64, 64], 0.0, 1.0);
        let r = scc(&a, &b).unwrap();
        assert!(r.value.abs() < 0.05, "null scc {}", r.value);
    }

    #[test]
    fn metric_symmetry() {
        let mut rng = rng_from(54);
        let a = Tensor::rand_uniform(&mut rng, &[3, 16, 16], 0.0, 1.0);
        let b = Tensor::rand_uniform(&mut rng, &[3, 16, 16], 0.0, 1.0);
        assert!((psnr(&a, &b, 1.0).unwrap() - psnr(&b, &a, 1.0).unwrap()).abs() < 1e-9);
        assert!((ssim(&a, &b, 1.0).unwrap() - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-9);
        assert!((scc(&a, &b).unwrap().value - scc(&b, &a).unwrap().value).abs() < 1e-9);
    }

    #[test]
    fn degradation_monotonicity() {
        let mut rng = rng_from(55);
        let a = Tensor::rand_uniform(&mut rng, &[3, 32, 32], 0.2, 0.8);
        let mut last_psnr = f64::INFINITY;
        let mut last_ssim = f64::INFINITY;
        for level in 1..=5 {
            let sigma = 0.02 * level as f32;
            let noise = Tensor::randn(&mut rng, &[3, 32, 32]);
            let noisy: Vec<f32> = a
                .data()
                .iter()
                .zip(noise.data().iter())
                .map(|(&v, &n)| (v + sigma * n).clamp(0.0, 1.0))
                .collect();
            let b = Tensor::from_vec(&[3, 32, 32], noisy).unwrap();
            let p = psnr(&a, &b, 1.0).unwrap();
            let s = ssim(&a, &b, 1.0).unwrap();
            assert!(p < last_psnr, "psnr not decreasing at level {level}");
            assert!(s < last_ssim, "ssim not decreasing at level {level}");
            last_psnr = p;
            last_ssim = s;
        }
    }

    #[test]
    fn auroc_perfect_inverted_and_null() {
        let mut rng = rng_from(56);
        // 16 maps of 32x32 cells = 16384 cells.
        let mut masks = Vec::new();
        let mut perfect = Vec::new();
        let mut inverted = Vec::new();
        let mut random = Vec::new();
        for _ in 0..16 {
            let m: Vec<f32> = (0..1024)
                .map(|_| if rng.gen_bool(0.2) { 1.0 } else { 0.0 })
                .collect();
            let mask = Tensor::from_vec(&[1, 32, 32], m.clone()).unwrap();
            perfect.push(
                Tensor::from_vec(&[1, 32, 32], m.iter().map(|&v| 1.0 - v).collect()).unwrap(),
            );
            inverted.push(Tensor::from_vec(&[1, 32, 32], m.clone()).unwrap());
            random.push(Tensor::rand_uniform(&mut rng, &[1, 32, 32], 0.0, 1.0));
            masks.push(mask);
        }
        assert_eq!(confidence_auroc(&perfect, &masks).unwrap(), 1.0);
        assert_eq!(confidence_auroc(&inverted, &masks).unwrap(), 0.0);
        let null = confidence_auroc(&random, &masks).unwrap();
        assert!((null - 0.5).abs() < 0.03, "null auroc {null}");
    }

    #[test]
    fn auroc_invariant_under_monotone_transform() {
        let mut rng = rng_from(57);
        let conf: Vec<Tensor> = (0..4)
            .map(|_| Tensor::rand_uniform(&mut rng, &[1, 16, 16], 0.0, 2.0))
            .collect();
        let masks: Vec<Tensor> = (0..4)
            .map(|_| {
                let m: Vec<f32> = (0..256)
                    .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
                    .collect();
                Tensor::from_vec(&[1, 16, 16], m).unwrap()
            })
            .collect();
        let base = confidence_auroc(&conf, &masks).unwrap();
        let scaled: Vec<Tensor> = conf
            .iter()
            .map(|c| crate::tensor::affine(None, c, 2.0, 1.0))
            .collect();
        let after = confidence_auroc(&scaled, &masks).unwrap();
        assert!((base - after).abs() < 1e-12);
    }

    #[test]
    fn auroc_needs_both_classes() {
        let conf = vec![Tensor::ones(&[1, 4, 4])];
        let masks = vec![Tensor::zeros(&[1, 4, 4])];
        assert!(matches!(
            confidence_auroc(&conf, &masks),
            Err(Error::SingleClassMask)
        ));
    }

    #[test]
    fn mask_pooling_is_max() {
        let mut m = vec![0f32; 64];
        m[9] = 1.0; // inside the top-left 4x4 block
        let mask = Tensor::from_vec(&[1, 8, 8], m).unwrap();
        let pooled = pool_mask_to_latent(&mask, 4).unwrap();
        assert_eq!(pooled.shape(), &[1, 2, 2]);
        assert_eq!(pooled.to_vec(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn report_aggregate_is_mean_of_rows() {
        let rows = vec![
            SampleMetrics {
                id: "a".into(),
                psnr: 10.0,
                ssim: 0.5,
                scc: 0.1,
            },
            SampleMetrics {
                id: "b".into(),
                psnr: 20.0,
                ssim: 0.7,
                scc: 0.3,
            },
        ];
        let rep = MetricReport::from_rows(rows, None);
        assert!((rep.mean_psnr - 15.0).abs() < 1e-9);
        assert!((rep.mean_ssim - 0.6).abs() < 1e-9);
        assert!((rep.mean_scc - 0.2).abs() < 1e-9);
        let tsv = rep.to_tsv();
        assert!(tsv.starts_with("id\tpsnr\tssim\tscc\n"));
        assert!(tsv.contains("\nALL\t"));
        assert_eq!(tsv.lines().count(), 4);
    }

    use rand::Rng as _;
}
