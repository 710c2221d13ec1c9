//! Distributional and consistency oracles for the diffusion process.

use sar2eo_core::diffusion::{
    ddim_step, forward_diffuse, make_inference_plan, predict_x0, NoiseSchedule,
};
use sar2eo_core::rng::rng_from;
use sar2eo_core::tensor::Tensor;

fn schedule() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
}

#[test]
fn forward_marginal_moments_match_theory() {
    // Per-pixel sample mean -> sqrt(ab)*z, sample variance -> 1 - ab,
    // each within 4 standard errors over 10^4 standard-normal draws.
    let s = schedule();
    let mut rng = rng_from(20250);
    let shape = [4, 2, 2];
    let z = Tensor::rand_uniform(&mut rng, &shape, -1.0, 1.0);
    let n = 10_000usize;
    for t in [1usize, 500, 1000] {
        let ab = s.alpha_bar(t);
        let mean_expect: Vec<f64> = z.to_vec().iter().map(|&v| ab.sqrt() * v as f64).collect();
        let var_expect = 1.0 - ab;
        let numel = z.numel();
        let mut sum = vec![0f64; numel];
        let mut sumsq = vec![0f64; numel];
        for _ in 0..n {
            let eps = Tensor::randn(&mut rng, &shape);
            let zt = forward_diffuse(&z, t, &eps, &s).unwrap();
            for (i, &v) in zt.to_vec().iter().enumerate() {
                sum[i] += v as f64;
                sumsq[i] += (v as f64) * (v as f64);
            }
        }
        let se_mean = var_expect.sqrt() / (n as f64).sqrt();
        let se_var = var_expect * (2.0 / (n as f64 - 1.0)).sqrt();
        for i in 0..numel {
            let m = sum[i] / n as f64;
            let v = sumsq[i] / n as f64 - m * m;
            assert!(
                (m - mean_expect[i]).abs() < 4.0 * se_mean,
                "t={t} pixel {i}: mean {m} vs {} (se {se_mean})",
                mean_expect[i]
            );
            assert!(
                (v - var_expect).abs() < 4.0 * se_var,
                "t={t} pixel {i}: var {v} vs {var_expect} (se {se_var})"
            );
        }
    }
}

#[test]
fn ddim_single_step_consistency_oracle() {
    // Build z_t with known noise; stepping back with that same noise must
    // land on forward_diffuse(z0, t_prev, eps).
    let s = schedule();
    let mut rng = rng_from(31);
    use rand::Rng as _;
    for case in 0..100 {
        let z0 = Tensor::rand_uniform(&mut rng, &[4, 2, 2], -1.0, 1.0);
        let eps = Tensor::rand_uniform(&mut rng, &[4, 2, 2], -1.0, 1.0);
        let t = rng.gen_range(2..=1000);
        let t_prev = rng.gen_range(1..t);
        let z_t = forward_diffuse(&z0, t, &eps, &s).unwrap();
        let stepped = ddim_step(&z_t, &eps, t, t_prev, &s).unwrap();
        let direct = forward_diffuse(&z0, t_prev, &eps, &s).unwrap();
        for (i, (a, b)) in stepped.to_vec().iter().zip(direct.to_vec().iter()).enumerate() {
            assert!(
                (a - b).abs() < 1e-5,
                "case {case} t={t}->{t_prev} elem {i}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn predict_x0_roundtrip_100_cases() {
    let s = schedule();
    let mut rng = rng_from(32);
    use rand::Rng as _;
    for case in 0..100 {
        let z0 = Tensor::rand_uniform(&mut rng, &[4, 2, 2], -1.0, 1.0);
        let eps = Tensor::rand_uniform(&mut rng, &[4, 2, 2], -1.0, 1.0);
        let t = rng.gen_range(1..=1000);
        let z_t = forward_diffuse(&z0, t, &eps, &s).unwrap();
        let rec = predict_x0(&z_t, &eps, t, &s).unwrap();
        for (a, b) in rec.to_vec().iter().zip(z0.to_vec().iter()) {
            assert!((a - b).abs() < 1e-5, "case {case} t={t}: {a} vs {b}");
        }
    }
}

#[test]
fn oracle_noise_recovery_along_50_step_plan() {
    // Walking the inference plan with the exact forward noise recovers z0.
    let s = schedule();
    let plan = make_inference_plan(1000, 50).unwrap();
    let mut rng = rng_from(33);
    for case in 0..100 {
        let z0 = Tensor::randn(&mut rng, &[4, 2, 2]);
        let eps = Tensor::randn(&mut rng, &[4, 2, 2]);
        let mut z = forward_diffuse(&z0, plan.timesteps()[0], &eps, &s).unwrap();
        for (t, t_prev) in plan.step_pairs() {
            z = ddim_step(&z, &eps, t, t_prev, &s).unwrap();
        }
        for (i, (a, b)) in z.to_vec().iter().zip(z0.to_vec().iter()).enumerate() {
            assert!(
                (a - b).abs() < 1e-4,
                "case {case} elem {i}: {a} vs {b} (err {:.2e})",
                (a - b).abs()
            );
        }
    }
}

#[test]
fn oracle_noise_recovery_full_length_plan() {
    // Full-length (T-step) plan; moderate input scale keeps accumulated
    // f32 store rounding within the 1e-4 contract.
    let s = schedule();
    let plan = make_inference_plan(1000, 1000).unwrap();
    let mut rng = rng_from(34);
    for _case in 0..3 {
        let z0 = Tensor::rand_uniform(&mut rng, &[4, 2, 2], -0.5, 0.5);
        let eps = Tensor::rand_uniform(&mut rng, &[4, 2, 2], -0.5, 0.5);
        let mut z = forward_diffuse(&z0, 1000, &eps, &s).unwrap();
        for (t, t_prev) in plan.step_pairs() {
            z = ddim_step(&z, &eps, t, t_prev, &s).unwrap();
        }
        for (a, b) in z.to_vec().iter().zip(z0.to_vec().iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }
}

#[test]
fn ddim_is_bit_deterministic() {
    let s = schedule();
    let mut rng = rng_from(35);
    let z = Tensor::randn(&mut rng, &[4, 4, 4]);
    let e = Tensor::randn(&mut rng, &[4, 4, 4]);
    let a = ddim_step(&z, &e, 600, 420, &s).unwrap();
    let b = ddim_step(&z, &e, 600, 420, &s).unwrap();
    assert_eq!(a.to_vec(), b.to_vec());
}
