//! Regenerates `data/shapes_denoiser.bin` (+ `.json` sidecar).
//!
//!     cargo run --release -p dmalign-core --example train_shapes -- [images] [epochs] [out]

use std::path::PathBuf;

use dmalign_core::diffusion::{train_shapes_denoiser, ConvArch, DenoiserTrainConfig};

fn main() -> dmalign_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let images = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(26);
    let out = args.get(3).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("crates/core/data/shapes_denoiser.bin"));
    let cfg = DenoiserTrainConfig { epochs, ..Default::default() };
    let (model, report) = dmalign_core::par::sequential(|| train_shapes_denoiser(images, 64, ConvArch::shapes_default(), &cfg))?;
    for (e, l) in report.epoch_loss.iter().enumerate() {
        println!("epoch {e:3}  loss {l:.3}");
    }
    println!("{} steps in {:.1}s", report.steps, report.seconds);
    let mut bundle = model.to_bundle();
    bundle.meta["training"] = serde_json::json!({
        "images": images,
        "image_size": 64,
        "codec_factor": dmalign_core::diffusion::SHAPES_CODEC_FACTOR,
        "config": cfg,
        "seconds_single_thread": report.seconds,
        "final_loss": report.epoch_loss.last(),
    });
    bundle.save(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
