use dmalign_core::diffusion::*;
use dmalign_core::grid::{BitGrid, Grid};
use dmalign_core::{par, seed};
use image::{Rgb, RgbImage};

fn hand_schedule() -> NoiseSchedule {
    // ᾱ_0 = 5/9, ᾱ_1 = 1/2, β_1 = 0.1
    NoiseSchedule::from_betas(vec![4.0 / 9.0, 0.1]).unwrap()
}

#[test]
fn defaults() {
    assert_eq!(DEFAULT_GUIDANCE, 7.5);
    assert_eq!(DEFAULT_STEPS, 50);
    assert_eq!(inference_schedule(DEFAULT_STEPS).unwrap().T(), 50);
}

#[test]
fn terminal_sample_is_standard_normal() {
    let full = training_schedule();
    let x0 = Grid::filled(1, 1, 1, 0.8);
    let none = BitGrid::new(1, 1);
    let draws: Vec<f64> = par::map_range(10_000, |i| {
        forward_sample(&x0, full.T() - 1, &full, &none, seed::derive(7, 0, i as u64)).unwrap().0.values[0] as f64
    });
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((var - 1.0).abs() < 0.1, "var {var}");
}

#[test]
fn reverse_mean_and_variance_hand_values() {
    let s = hand_schedule();
    assert!((s.alpha_bar(1) - 0.5).abs() < 1e-12);
    let x = Grid::filled(1, 1, 1, 1.0);
    let m = reverse_mean(&x, 1, &x, &s).unwrap().values[0] as f64;
    let oracle = (1.0 / 0.9f64.sqrt()) * (1.0 - 0.1 / 0.5f64.sqrt());
    assert!((m - oracle).abs() < 1e-6, "{m} vs {oracle}");
    let v = posterior_variance(&s, 1);
    assert!((v - 0.1 * (1.0 - 5.0 / 9.0) / 0.5).abs() < 1e-12);
    assert!((v - 0.08888).abs() < 1e-5);
}

#[test]
fn last_step_is_deterministic_and_t0_rejected() {
    let s = hand_schedule();
    let x = Grid::filled(1, 2, 2, 0.3);
    let e = Grid::filled(1, 2, 2, -0.2);
    assert_eq!(reverse_step(&x, 1, &e, &s, 1).unwrap(), reverse_mean(&x, 1, &e, &s).unwrap());
    assert!(reverse_step(&x, 0, &e, &s, 1).is_err());
}

/// With the true ε, the reverse mean equals the forward posterior mean
/// `(√ᾱ_{t−1}β_t x0 + √α_t(1−ᾱ_{t−1}) x_t)/(1−ᾱ_t)`.
#[test]
fn reverse_mean_with_true_noise_matches_posterior() {
    let s = inference_schedule(20).unwrap();
    let x0 = gaussian_like((2, 3, 3), 4);
    let none = BitGrid::new(3, 3);
    for t in [1usize, 5, 19] {
        let (xt, eps) = forward_sample(&x0, t, &s, &none, 11).unwrap();
        let got = reverse_mean(&xt, t, &eps, &s).unwrap();
        let (a, ap, b) = (s.alpha_bar(t), s.alpha_bar(t - 1), s.beta(t));
        for i in 0..x0.values.len() {
            let want = (ap.sqrt() * b * x0.values[i] as f64 + (1.0 - b).sqrt() * (1.0 - ap) * xt.values[i] as f64) / (1.0 - a);
            assert!((got.values[i] as f64 - want).abs() < 1e-4, "t={t} i={i}");
        }
    }
}

#[test]
fn guidance_one_is_bit_exact_and_two_extrapolates() {
    let stub = FnDenoiser::new("affine", |x, _, c| {
        let shift = if c.iter().any(|&v| v != 0.0) { 1.0 } else { 0.0 };
        Grid { values: x.values.iter().map(|v| 0.5 * v + shift).collect(), ..x.clone() }
    });
    let x = gaussian_like((3, 4, 4), 2);
    let c = embed_tokens(&["cat".to_string()]);
    let cond = stub.predict(&x, 0.5, &c).unwrap();
    let one = guided_noise(&stub, &x, 0.5, &c, 1.0).unwrap();
    assert_eq!(one.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), cond.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    // s = 2: 2·(0.5x + 1) − 0.5x = 0.5x + 2
    let two = guided_noise(&stub, &x, 0.5, &c, 2.0).unwrap();
    for (g, v) in two.values.iter().zip(&x.values) {
        assert!((g - (0.5 * v + 2.0)).abs() < 1e-6);
    }
    assert!(guided_noise(&stub, &x, 0.5, &c, -1.0).is_err());
}

#[test]
fn pool_codec_is_a_projection() {
    let codec = PoolCodec::new(4).unwrap();
    let img = RgbImage::from_fn(32, 32, |x, y| Rgb([(x * 8) as u8, (y * 8) as u8, ((x + y) * 4) as u8]));
    let z = codec.encode(&img).unwrap();
    let z2 = codec.encode_grid(&codec.decode_grid(&z).unwrap()).unwrap();
    for (a, b) in z.values.iter().zip(&z2.values) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(codec.encode(&RgbImage::new(30, 32)).is_err());
}

#[test]
fn toy_gradient_matches_finite_differences() {
    // one 3×3 conv from 1 channel to 1 channel: 9 weights + 1 bias
    let arch = ConvArch { channels: 1, hidden: vec![], kernel: 3, cond_dim: 0, time_dim: 0 };
    let model = ConvDenoiser::init(arch, &mut seed::rng(3)).unwrap();
    assert_eq!(model.num_params(), 10);
    let xt = gaussian_like((1, 4, 5), 1);
    let eps = gaussian_like((1, 4, 5), 2);
    let (_, grad) = model.loss_and_grad(&xt, 0.4, &[], &eps).unwrap();
    for k in 0..model.num_params() {
        let h = 1e-2f32;
        let at = |d: f32| {
            let mut m = model.clone();
            m.params[k] += d;
            m.loss_and_grad(&xt, 0.4, &[], &eps).unwrap().0
        };
        let num = (at(h) - at(-h)) / (2.0 * h as f64);
        let tol = 1e-3 * (grad[k] as f64).abs().max(num.abs()) + 1e-4;
        assert!((grad[k] as f64 - num).abs() <= tol, "param {k}: {} vs {num}", grad[k]);
    }
}

#[test]
fn full_model_gradient_spot_check() {
    let arch = ConvArch { channels: 2, hidden: vec![3], kernel: 3, cond_dim: 4, time_dim: 2 };
    let model = ConvDenoiser::init(arch, &mut seed::rng(5)).unwrap();
    let xt = gaussian_like((2, 3, 3), 1);
    let eps = gaussian_like((2, 3, 3), 2);
    let cond = [0.3, -0.2, 0.5, 0.1];
    let (_, grad) = model.loss_and_grad(&xt, 0.7, &cond, &eps).unwrap();
    for k in (0..model.num_params()).step_by(7) {
        let h = 1e-2f32;
        let at = |d: f32| {
            let mut m = model.clone();
            m.params[k] += d;
            m.loss_and_grad(&xt, 0.7, &cond, &eps).unwrap().0
        };
        let num = (at(h) - at(-h)) / (2.0 * h as f64);
        let tol = 2e-2 * (grad[k] as f64).abs().max(num.abs()) + 1e-3;
        assert!((grad[k] as f64 - num).abs() <= tol, "param {k}: {} vs {num}", grad[k]);
    }
}

#[test]
fn zero_model_loss_is_noise_energy() {
    // a zero-weight model predicts 0, so the loss is Σ ε² ≈ element count
    let model = ConvDenoiser::zeros(ConvArch::shapes_default()).unwrap();
    let data: Vec<(RgbImage, String)> =
        shapes::dataset(64, 32, 1).into_iter().map(|(_, i, c)| (i, c)).collect();
    let codec = PoolCodec::new(4).unwrap();
    let samples = encode_dataset(&data, &codec).unwrap();
    let loss = denoising_loss(&model, &samples, &training_schedule(), 4, 9).unwrap();
    let elements = (3 * 8 * 8) as f64;
    assert!((loss / elements - 1.0).abs() < 0.05, "loss {loss}");
}

#[test]
fn training_reduces_loss_on_one_image() {
    let data: Vec<(RgbImage, String)> = shapes::dataset(1, 32, 3).into_iter().map(|(_, i, c)| (i, c)).collect();
    let codec = PoolCodec::new(4).unwrap();
    let arch = ConvArch { channels: 3, hidden: vec![8], kernel: 3, cond_dim: COND_DIM, time_dim: 4 };
    let cfg = DenoiserTrainConfig { epochs: 150, batch_size: 1, learning_rate: 1e-2, draws_per_image: 4, ..Default::default() };
    let (model, report) = train_denoiser(&data, &codec, arch, &training_schedule(), &cfg).unwrap();
    let first = report.epoch_loss[..10].iter().sum::<f64>();
    let last = report.epoch_loss[report.epoch_loss.len() - 10..].iter().sum::<f64>();
    assert!(last < 0.8 * first, "{first} -> {last}");
    assert!(model.params.iter().all(|p| p.is_finite()));
}

#[test]
fn sampling_is_deterministic() {
    let model = ConvDenoiser::shipped().unwrap();
    let s = inference_schedule(10).unwrap();
    let c = embed_tokens(&["a".into(), "blue".into(), "circle".into()]);
    let run = || {
        let mut x = gaussian_like((3, 16, 16), 5);
        for t in (1..s.T()).rev() {
            let e = guided_noise(&model, &x, s.noise_level(t), &c, DEFAULT_GUIDANCE).unwrap();
            x = reverse_step(&x, t, &e, &s, seed::derive(5, 1, t as u64)).unwrap();
        }
        x
    };
    assert_eq!(run(), run());
}

#[test]
fn shipped_model_metadata() {
    let bundle = dmalign_core::io::TensorBundle::load(std::path::Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/data/shapes_denoiser.bin"
    )))
    .unwrap();
    let secs = bundle.meta["training"]["seconds_single_thread"].as_f64().unwrap();
    assert!(secs <= 600.0, "shipped denoiser took {secs}s to train");
    assert_eq!(ConvDenoiser::from_bundle(&bundle).unwrap().arch, ConvArch::shapes_default());
}
