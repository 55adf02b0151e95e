use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specpred::metrics::{
    framewise, framewise_csv, mse_frame, psnr_frame, psnr_from_mse, sor_accuracy, ssim_frame, MAX_PIXEL,
};
use specpred::Tensor;

fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize, ch: usize) -> Vec<f64> {
    (0..h * w * ch).map(|_| rng.random_range(0..=255u32) as f64).collect()
}

fn naive_mse(p: &[f64], t: &[f64], h: usize, w: usize, ch: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..ch {
        let mut sum = 0.0;
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) * ch + c;
                sum += (p[i] - t[i]).powi(2);
            }
        }
        total += sum / (h * w) as f64;
    }
    total / ch as f64
}

fn naive_ssim(p: &[f64], t: &[f64], h: usize, w: usize, ch: usize) -> f64 {
    let gray = |f: &[f64], y: usize, x: usize| {
        let i = (y * w + x) * ch;
        if ch == 1 {
            f[i]
        } else {
            0.299 * f[i] + 0.587 * f[i + 1] + 0.114 * f[i + 2]
        }
    };
    let n = (h * w) as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            mx += gray(p, y, x);
            my += gray(t, y, x);
        }
    }
    mx /= n;
    my /= n;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let a = gray(p, y, x) - mx;
            let b = gray(t, y, x) - my;
            vx += a * a;
            vy += b * b;
            cov += a * b;
        }
    }
    vx /= n;
    vy /= n;
    cov /= n;
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

#[test]
fn brute_force_oracles_on_8x8() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for ch in [1, 3] {
        for _ in 0..20 {
            let p = random_frame(&mut rng, 8, 8, ch);
            let t = random_frame(&mut rng, 8, 8, ch);
            let mse = naive_mse(&p, &t, 8, 8, ch);
            assert!((mse_frame(&p, &t, ch).unwrap() - mse).abs() < 1e-9);
            let psnr = 10.0 * (255.0f64 * 255.0 / mse).log10();
            assert!((psnr_frame(&p, &t, ch).unwrap() - psnr).abs() < 1e-9);
            assert!((ssim_frame(&p, &t, ch).unwrap() - naive_ssim(&p, &t, 8, 8, ch)).abs() < 1e-9);
        }
    }
}

#[test]
fn ssim_of_a_4x4_fixture() {
    let p: Vec<f64> = (1..=16).map(|i| 10.0 * i as f64).collect();
    let t = [12., 18., 35., 40., 45., 66., 70., 79., 95., 99., 100., 125., 128., 150., 140., 170.];
    assert!((ssim_frame(&p, &t, 1).unwrap() - 0.992226236582363).abs() < 1e-12);
}

#[test]
fn identical_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = random_frame(&mut rng, 8, 8, 3);
    assert_eq!(mse_frame(&f, &f, 3).unwrap(), 0.0);
    assert_eq!(psnr_frame(&f, &f, 3).unwrap(), f64::INFINITY);
    assert!((ssim_frame(&f, &f, 3).unwrap() - 1.0).abs() < 1e-12);
    assert!(mse_frame(&f, &f[1..], 3).is_err());
}

fn clip(rng: &mut ChaCha8Rng, k: usize) -> Tensor {
    Tensor::from_fn([k, 8, 8, 3], |_| rng.random::<f32>())
}

fn noisy(t: &Tensor, sigma: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = rand_distr::Normal::new(0.0f32, sigma).unwrap();
    let data = t.data().iter().map(|&v| (v + rng.sample(normal)).clamp(0.0, 1.0)).collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

#[test]
fn framewise_report_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let truths: Vec<Tensor> = (0..6).map(|_| clip(&mut rng, 4)).collect();
    let rows = framewise(&truths, &truths).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r.mse, 0.0);
        assert!((r.ssim - 1.0).abs() < 1e-12);
    }
    let csv = framewise_csv(&rows);
    assert_eq!(csv.lines().count(), 1 + 4);
    assert_eq!(csv.lines().nth(1).unwrap(), "0,0.000000,99.000000,1.000000");

    let low: Vec<Tensor> = truths.iter().map(|t| noisy(t, 0.02, &mut rng)).collect();
    let high: Vec<Tensor> = truths.iter().map(|t| noisy(t, 0.1, &mut rng)).collect();
    let a = framewise(&low, &truths).unwrap();
    let b = framewise(&high, &truths).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(y.mse > x.mse, "frame {}: {} vs {}", x.k, y.mse, x.mse);
    }
    assert!(framewise(&low[..2], &truths).is_err());
}

#[test]
fn accuracy_endpoints() {
    let t = vec![vec![0.1, 0.5, 0.9], vec![0.0, 0.2, 0.3]];
    assert_eq!(sor_accuracy(&t, &t, 0.0).unwrap().accuracy, 1.0);
    let off: Vec<Vec<f64>> = t.iter().map(|s| s.iter().map(|v| v + 0.06).collect()).collect();
    let r = sor_accuracy(&off, &t, 0.05).unwrap();
    assert_eq!((r.correct, r.accuracy, r.n_time, r.k), (0, 0.0, 2, 3));
    assert!(sor_accuracy(&off, &t[..1], 0.05).is_err());
    assert!(sor_accuracy(&[vec![0.0; 2]], &[vec![0.0; 3]], 0.05).is_err());
}

proptest! {
    #[test]
    fn psnr_strictly_decreasing(a in 1e-6f64..1e5, b in 1e-6f64..1e5) {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(psnr_from_mse(lo) > psnr_from_mse(hi));
        prop_assert_eq!(psnr_from_mse(MAX_PIXEL * MAX_PIXEL), 0.0);
    }

    #[test]
    fn ssim_is_symmetric(seed in 0u64..1000, ch in prop::sample::select(vec![1usize, 3])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_frame(&mut rng, 6, 5, ch);
        let t = random_frame(&mut rng, 6, 5, ch);
        let s = ssim_frame(&p, &t, ch).unwrap();
        prop_assert_eq!(s, ssim_frame(&t, &p, ch).unwrap());
        prop_assert!(s <= 1.0);
    }

    #[test]
    fn accuracy_monotone_in_lambda(
        pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 4..40),
        l1 in 0.0f64..0.5,
        dl in 0.0f64..0.5,
    ) {
        let k = 4;
        let n = pairs.len() / k;
        let pred: Vec<Vec<f64>> = (0..n).map(|i| pairs[i * k..(i + 1) * k].iter().map(|p| p.0).collect()).collect();
        let truth: Vec<Vec<f64>> = (0..n).map(|i| pairs[i * k..(i + 1) * k].iter().map(|p| p.1).collect()).collect();
        let a = sor_accuracy(&pred, &truth, l1).unwrap();
        let b = sor_accuracy(&pred, &truth, l1 + dl).unwrap();
        prop_assert!(b.accuracy >= a.accuracy);
        prop_assert!((0.0..=1.0).contains(&a.accuracy));
    }
}
