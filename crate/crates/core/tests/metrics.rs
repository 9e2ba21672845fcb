use deepisp::metrics::{psnr, Space, PSNR_CAP_DB};
use deepisp::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rand_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[h, w, 3], |_| rng.random_range(0.0..1.0))
}

/// Mean of squared differences, accumulated in two passes for stability.
fn psnr_oracle(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let scale = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mse = d.iter().map(|v| (v / scale).powi(2)).sum::<f64>() / n * scale * scale;
    -10.0 * mse.log10()
}

#[test]
fn closed_forms() {
    let a = Tensor::filled(&[4, 6, 3], 0.3);
    assert_eq!(psnr(&a, &a, Space::Linear).unwrap(), PSNR_CAP_DB);
    let b = a.map(|v| v + 0.1);
    assert!((psnr(&a, &b, Space::Linear).unwrap() - 20.0).abs() < 1e-9);
    assert!(psnr(&a, &Tensor::zeros(&[4, 5, 3]), Space::Linear).is_err());
}

#[test]
fn linear_psnr_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let a = rand_image(&mut rng, h, w);
        let b = rand_image(&mut rng, h, w);
        let got = psnr(&a, &b, Space::Linear).unwrap();
        assert!((got - psnr_oracle(a.data(), b.data())).abs() < 1e-9);
    }
}

#[test]
fn srgb_space_encodes_both_sides() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_image(&mut rng, 5, 5);
    let b = rand_image(&mut rng, 5, 5);
    let enc = |t: &Tensor| t.map(deepisp::color::linear_to_srgb);
    let expect = psnr_oracle(enc(&a).data(), enc(&b).data());
    assert!((psnr(&a, &b, Space::Srgb).unwrap() - expect).abs() < 1e-9);
}

proptest! {
    #[test]
    fn psnr_is_symmetric(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_image(&mut rng, 6, 7);
        let b = rand_image(&mut rng, 6, 7);
        for space in [Space::Linear, Space::Srgb] {
            prop_assert_eq!(psnr(&a, &b, space).unwrap(), psnr(&b, &a, space).unwrap());
        }
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed in 0u64..10_000, s1 in 0.001f64..0.1, extra in 0.001f64..0.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = rand_image(&mut rng, 8, 8);
        let z: Vec<f64> = (0..clean.len()).map(|_| rng.sample(StandardNormal)).collect();
        let noisy = |s: f64| {
            let mut t = clean.clone();
            for (v, n) in t.data_mut().iter_mut().zip(&z) {
                *v += s * n;
            }
            t
        };
        let p1 = psnr(&clean, &noisy(s1), Space::Linear).unwrap();
        let p2 = psnr(&clean, &noisy(s1 + extra), Space::Linear).unwrap();
        prop_assert!(p2 < p1);
    }
}
