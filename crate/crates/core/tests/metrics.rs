use dmalign_core::caption::{LexiconTagger, TokenizedCaption};
use dmalign_core::grid::BitGrid;
use dmalign_core::metrics::*;
use dmalign_core::seed;
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::Rng;

fn random_image(w: u32, h: u32, s: u64) -> RgbImage {
    let mut rng = seed::rng(s);
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

fn mean_cov2(xs: &[Vec<f64>]) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = xs.len() as f64;
    let mu = [xs.iter().map(|v| v[0]).sum::<f64>() / n, xs.iter().map(|v| v[1]).sum::<f64>() / n];
    let mut c = [[0.0; 2]; 2];
    for v in xs {
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += (v[i] - mu[i]) * (v[j] - mu[j]) / (n - 1.0);
            }
        }
    }
    (mu, c)
}

/// 2-D Fréchet distance with `tr √M = √(tr M + 2√det M)` for `M = C1·C2`.
fn fid2_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (m1, c1) = mean_cov2(a);
    let (m2, c2) = mean_cov2(b);
    let mut prod = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            prod[i][j] = c1[i][0] * c2[0][j] + c1[i][1] * c2[1][j];
        }
    }
    let det = |m: [[f64; 2]; 2]| m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let tr_sqrt = (prod[0][0] + prod[1][1] + 2.0 * det(prod).max(0.0).sqrt()).sqrt();
    (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2) + c1[0][0] + c1[1][1] + c2[0][0] + c2[1][1] - 2.0 * tr_sqrt
}

fn gaussian_set(n: usize, s: u64, shift: f64, stretch: f64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(s);
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(-1.0..1.0);
            let y: f64 = rng.random_range(-1.0..1.0);
            vec![stretch * x + shift, 0.5 * x + y]
        })
        .collect()
}

#[test]
fn fid_of_a_set_with_itself_is_zero() {
    for s in 0..5 {
        let a = gaussian_set(40, s, 0.0, 1.5);
        assert!(fid_from_features(&a, &a).unwrap().abs() < 1e-8);
    }
    let imgs: Vec<RgbImage> = (0..6).map(|s| random_image(16, 16, s)).collect();
    assert!(fid(&imgs, &imgs, &PixelStats).unwrap().abs() < 1e-8);
}

#[test]
fn fid_matches_two_dimensional_closed_form() {
    for s in 0..10 {
        let a = gaussian_set(30, s, 0.0, 1.0);
        let b = gaussian_set(25, 100 + s, 0.7, 2.0);
        let got = fid_from_features(&a, &b).unwrap();
        let want = fid2_oracle(&a, &b);
        assert!((got - want).abs() < 1e-8 * want.max(1.0), "{got} vs {want}");
    }
}

#[test]
fn fid_one_dimensional_case() {
    let r = 1.0 / 2f64.sqrt();
    let a = vec![vec![-r], vec![r]];
    let b = vec![vec![1.0 - r], vec![1.0 + r]];
    assert!((fid_from_features(&a, &b).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn clipscore_closed_forms() {
    assert_eq!(clipscore(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 2.5);
    assert_eq!(clipscore(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
    assert_eq!(clipscore(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(), 0.0);
    let cos = (1.0 * 1.0 + 0.0 * 1.0) / 2f64.sqrt();
    assert!((clipscore(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 2.5 * cos).abs() < 1e-12);
}

#[test]
fn lpips_identity_layer_is_pixel_distance() {
    for s in 0..4 {
        let (a, b) = (random_image(8, 6, s), random_image(8, 6, 50 + s));
        let mut sum = 0.0f64;
        for (p, q) in a.pixels().zip(b.pixels()) {
            for c in 0..3 {
                sum += (p.0[c] as f64 - q.0[c] as f64).powi(2);
            }
        }
        let oracle = sum / (8.0 * 6.0);
        assert!((lpips(&a, &b, &IdentityPixels).unwrap() - oracle).abs() < 1e-9 * oracle.max(1.0));
    }
}

#[test]
fn pwmse_matches_direct_sum() {
    let (a, b) = (random_image(10, 10, 1), random_image(10, 10, 2));
    let mask = BitGrid::rect(10, 10, 2, 3, 7, 9);
    let mut sum = 0.0;
    let mut n = 0.0;
    for (x, y, p) in a.enumerate_pixels() {
        if mask.get(x as usize, y as usize) {
            let q = b.get_pixel(x, y);
            for c in 0..3 {
                sum += (p.0[c] as f64 - q.0[c] as f64).powi(2);
                n += 1.0;
            }
        }
    }
    assert!((pwmse(&a, &b, Some(&mask)).unwrap() - sum / n).abs() < 1e-9);
    assert_eq!(pwmse(&a, &a, None).unwrap(), 0.0);
}

#[test]
fn identical_output_scores_zero_on_background() {
    let img = random_image(32, 32, 9);
    let refined = BitGrid::rect(32, 32, 0, 0, 8, 8);
    let cap = TokenizedCaption::analyze("a red square", &LexiconTagger::bundled()).unwrap();
    let r = background_report(&img, &img, &refined, Some(&cap), &MetricProviders::default()).unwrap();
    assert_eq!(r.pwmse, 0.0);
    assert_eq!(r.lpips, 0.0);
    assert!(r.fid.unwrap().abs() < 1e-8);
    assert!(r.csv_row().starts_with("background,0,0,"));
}

proptest! {
    #[test]
    fn metric_ranges(s1 in 0u64..1000, s2 in 0u64..1000) {
        let (a, b) = (random_image(8, 8, s1), random_image(8, 8, s2));
        prop_assert!(pwmse(&a, &b, None).unwrap() >= 0.0);
        let l = lpips(&a, &b, &RawPyramid).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l - lpips(&b, &a, &RawPyramid).unwrap()).abs() < 1e-9);
        let u: Vec<f64> = (0..4).map(|i| ((s1 + i) % 7) as f64 - 3.0).collect();
        let v: Vec<f64> = (0..4).map(|i| ((s2 * 3 + i) % 5) as f64 - 2.0).collect();
        if let Ok(c) = clipscore(&u, &v) {
            prop_assert!((0.0..=2.5).contains(&c));
        }
    }
}
