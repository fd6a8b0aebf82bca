//! Quick quality check for a shapes denoiser: the red → blue square edit
//! and a few unmasked conditional samples.
//!
//!     cargo run --release -p dmalign-core --example eval_shapes -- [params.bin] [seeds]

use std::path::PathBuf;

use dmalign_core::diffusion::shapes::{ShapeKind, ShapeScene};
use dmalign_core::diffusion::{embed_tokens, inference_schedule, ConvDenoiser, PoolCodec, DEFAULT_GUIDANCE, DEFAULT_STEPS};
use dmalign_core::grid::BitGrid;
use dmalign_core::inpaint::{inpaint, InpaintModel};
use dmalign_core::mask::{binarize, cancellation_map, diffusion_mask, refine, MaskModel};

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn channel_means(img: &image::RgbImage, m: &BitGrid) -> [f64; 3] {
    let mut s = [0.0; 3];
    let mut n = 0.0f64;
    for (x, y, p) in img.enumerate_pixels() {
        if m.get(x as usize, y as usize) {
            for c in 0..3 {
                s[c] += p.0[c] as f64;
            }
            n += 1.0;
        }
    }
    s.map(|v| v / n.max(1.0))
}

fn pwmse(a: &image::RgbImage, b: &image::RgbImage) -> f64 {
    a.as_raw().iter().zip(b.as_raw()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.as_raw().len() as f64
}

fn main() -> dmalign_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let model = match args.get(1) {
        Some(p) => ConvDenoiser::load(&PathBuf::from(p))?,
        None => ConvDenoiser::shipped()?,
    };
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let schedule = inference_schedule(DEFAULT_STEPS)?;
    let codec = PoolCodec::new(4)?;
    let c1 = embed_tokens(&toks("a red square"));
    let c2 = embed_tokens(&toks("a blue square"));
    let mm = MaskModel { schedule: &schedule, denoiser: &model, codec: &codec, guidance: DEFAULT_GUIDANCE };
    let im = InpaintModel { schedule: &schedule, denoiser: &model, codec: &codec, guidance: DEFAULT_GUIDANCE };
    let mut wins = 0;
    for seed in 0..seeds {
        let scene = ShapeScene { kind: ShapeKind::Square, color: "red".into(), cx: 24 + seed as i64 * 4, cy: 30, radius: 11 };
        let img = scene.render(64, 64);
        let square = scene.mask(64, 64);
        let soft = diffusion_mask(&img, &c1, &c2, &mm, DEFAULT_STEPS.div_ceil(2), seed)?;
        let bin = binarize(&soft, 0.5)?;
        let refined = refine(&bin, &square, &BitGrid::new(64, 64), 4)?;
        let cancel = cancellation_map(&BitGrid::new(64, 64), 4)?;
        let out = inpaint(&img, &refined.mask, &cancel, &c2, &im, seed, None)?;
        let full = inpaint(&img, &BitGrid::full(64, 64), &cancel, &c2, &im, seed, None)?;
        let mean = channel_means(&out, &refined.mask);
        let sq = channel_means(&out, &square);
        let (pm, pf) = (pwmse(&img, &out), pwmse(&img, &full));
        let ok = mean[2] > mean[0] && pm < pf;
        wins += ok as usize;
        println!(
            "seed {seed}: diff-mask {:4} px, refined {:4} px, mean rgb in refined {:?}, in square {:?}, pwmse masked {pm:.0} vs full {pf:.0} {}",
            bin.popcount() * 16,
            refined.mask.popcount(),
            mean.map(|v| v.round()),
            sq.map(|v| v.round()),
            if ok { "ok" } else { "FAIL" }
        );
        if seed == 0 {
            out.save("/tmp/edit0.png").ok();
            full.save("/tmp/full0.png").ok();
        }
    }
    println!("{wins}/{seeds} edits pass");
    for cap in ["a blue circle", "a red triangle", "a green square", "a yellow circle"] {
        let c = embed_tokens(&toks(cap));
        let blank = image::RgbImage::from_pixel(64, 64, image::Rgb([255, 255, 255]));
        let out = inpaint(&blank, &BitGrid::full(64, 64), &BitGrid::new(16, 16), &c, &im, 7, None)?;
        let non_white = BitGrid::from_fn(64, 64, |x, y| out.get_pixel(x as u32, y as u32).0.iter().any(|&v| v < 200));
        println!("{cap}: {} non-white px, mean rgb there {:?}", non_white.popcount(), channel_means(&out, &non_white).map(|v| v.round()));
        out.save(format!("/tmp/sample_{}.png", cap.replace(' ', "_"))).ok();
    }
    Ok(())
}
