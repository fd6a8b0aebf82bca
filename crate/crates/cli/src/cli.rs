use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use image::RgbImage;
use serde::Deserialize;

use dmalign_core::aligner::{load_corpus, AlignerParams, HashEmbedder, SpanAligner, TrainConfig, TrainExample, Trainer, DEFAULT_EMBED_DIM, DEFAULT_MAX_SPAN};
use dmalign_core::caption::TokenizedCaption;
use dmalign_core::diffusion::{
    shapes, training_schedule, train_denoiser, ConvArch, ConvDenoiser, DenoiserTrainConfig, PoolCodec,
};
use dmalign_core::grid::BitGrid;
use dmalign_core::grounding::provider_from;
use dmalign_core::io::{encode_mask_pgm, encode_soft_pgm, load_mask_pgm, load_png, read_bytes, write_bytes};
use dmalign_core::metrics::{background_report, fid, image_report, MetricReport};
use dmalign_core::pipeline::{
    align_captions, caption_mask, plan_edit, run_edit, upsample_soft, AblationFlags, EditConfig, Models, RunOptions,
    SessionStore,
};
use dmalign_core::seed;

use crate::server::{serve, AppState};

#[derive(Parser)]
#[command(name = "dmalign", version, about = "Caption-driven image editing with alignment-refined diffusion masks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Edit an image from a source/target caption pair.
    Edit(EditArgs),
    /// Print the word alignment and edit plan for a caption pair.
    Align(AlignArgs),
    /// Compute the caption-difference mask only.
    Mask(MaskArgs),
    /// Score input/output pairs listed in a manifest.
    Eval(EvalArgs),
    /// Train a denoiser on a caption-labelled image folder or on synthetic shapes.
    TrainDenoiser(TrainDenoiserArgs),
    /// Train aligner parameters on a gold alignment corpus.
    TrainAligner(TrainAlignerArgs),
    /// Run the HTTP session API.
    Serve(ServeArgs),
}

#[derive(Args, Clone, Default)]
pub struct ModelArgs {
    /// Directory of `<lemma>.pgm` grounding masks.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Denoiser parameter file (default: the bundled shapes denoiser).
    #[arg(long)]
    pub denoiser: Option<PathBuf>,
    /// Aligner parameter file (default: the lexical prior).
    #[arg(long)]
    pub aligner: Option<PathBuf>,
}

impl ModelArgs {
    pub fn load(&self) -> anyhow::Result<Models> {
        let grounding = Arc::from(provider_from(self.fixtures.as_deref())?);
        let mut models = match &self.denoiser {
            Some(p) => Models::with_denoiser(Arc::new(ConvDenoiser::load(p)?), grounding)?,
            None => Models::shipped(grounding)?,
        };
        if let Some(p) = &self.aligner {
            let params = AlignerParams::load(p)?;
            models.aligner = SpanAligner::new(params.clone(), Arc::new(HashEmbedder::new(params.dim)))?;
        }
        Ok(models)
    }
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// JSON file with edit defaults; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub guidance: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Timestep of the inference schedule used for the mask.
    #[arg(long)]
    pub mask_step: Option<usize>,
    #[arg(long)]
    pub min_confidence: Option<f64>,
    /// Comma-separated: no_diffusion_mask, no_noise_cancellation,
    /// no_refinement, no_modifiers, no_nonshared_keep.
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> anyhow::Result<EditConfig> {
        let mut cfg = match &self.config {
            Some(p) => serde_json::from_slice(&read_bytes(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => EditConfig::default(),
        };
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.guidance {
            cfg.guidance = v;
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.mask_step.is_some() {
            cfg.mask_step = self.mask_step;
        }
        if let Some(v) = self.min_confidence {
            cfg.min_confidence = v;
        }
        for flag in &self.ablate {
            cfg.ablations.set(flag)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
pub struct EditArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value = "dmalign-out")]
    pub out: PathBuf,
    /// Print the edit plan JSON to stdout.
    #[arg(long)]
    pub dump_plan: bool,
    /// Also write the latent after every reverse step.
    #[arg(long)]
    pub dump_latents: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub models: ModelArgs,
}

#[derive(Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    /// Comma-separated planner ablations (no_modifiers, no_nonshared_keep).
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
    #[arg(long)]
    pub aligner: Option<PathBuf>,
}

#[derive(Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value = "dmalign-mask")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub models: ModelArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    /// JSON list of `{input, output, mask?, target_caption?}`; paths are
    /// relative to the manifest.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainDenoiserArgs {
    /// Folder with PNG images and `captions.json` (`{"file.png": "caption"}`).
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Train on this many random shape scenes instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = dmalign_core::diffusion::SHAPES_CODEC_FACTOR)]
    pub factor: usize,
    #[arg(long, default_value = "denoiser.bin")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainAlignerArgs {
    /// Gold alignment corpus (JSON list of `{source, target, alignment}`).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Start from random weights instead of the lexical prior.
    #[arg(long)]
    pub random_init: bool,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value = "aligner.bin")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Session directory (default: `$DM_ALIGN_DATA_DIR` or `./dmalign-data`).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[command(flatten)]
    pub models: ModelArgs,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Edit(a) => edit(a),
        Command::Align(a) => align(a),
        Command::Mask(a) => mask(a),
        Command::Eval(a) => eval(a),
        Command::TrainDenoiser(a) => train_denoiser_cmd(a),
        Command::TrainAligner(a) => train_aligner(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn edit(a: EditArgs) -> anyhow::Result<()> {
    let cfg = a.config.resolve()?;
    let models = a.models.load()?;
    let image = load_png(&a.image)?;
    let options = RunOptions { out_dir: Some(a.out.clone()), dump_latents: a.dump_latents };
    let o = run_edit(&image, &a.source, &a.target, &cfg, &models, &options)?;
    if a.dump_plan {
        println!("{}", serde_json::to_string_pretty(&o.plan)?);
    }
    let h = o.refined.histogram();
    eprintln!(
        "refined mask: {} px ({} from diffusion, {} from alter regions, {} removed by keep); wrote {}",
        o.metrics.refined_pixels,
        h.from_diffusion,
        h.from_alter_union,
        h.removed_by_keep,
        a.out.display()
    );
    Ok(())
}

fn align(a: AlignArgs) -> anyhow::Result<()> {
    let mut flags = AblationFlags::default();
    for f in &a.ablate {
        flags.set(f)?;
    }
    let mut models = Models::without_grounding()?;
    if let Some(p) = &a.aligner {
        let params = AlignerParams::load(p)?;
        models.aligner = SpanAligner::new(params.clone(), Arc::new(HashEmbedder::new(params.dim)))?;
    }
    let (c1, c2, alignment) = align_captions(&a.source, &a.target, &models)?;
    let plan = plan_edit(&c1, &c2, &alignment, flags)?;
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "alignment": alignment, "plan": plan }))?);
    Ok(())
}

fn mask(a: MaskArgs) -> anyhow::Result<()> {
    let cfg = a.config.resolve()?;
    let models = a.models.load()?;
    let image = load_png(&a.image)?;
    let c1 = TokenizedCaption::analyze(&a.source, models.tagger.as_ref())?;
    let c2 = TokenizedCaption::analyze(&a.target, models.tagger.as_ref())?;
    let (soft, bin) = caption_mask(&image, &c1, &c2, &cfg, &models)?;
    let f = models.codec.factor();
    write_bytes(&a.out.join("soft_mask.pgm"), &encode_soft_pgm(&upsample_soft(&soft, f)?))?;
    write_bytes(&a.out.join("diffusion_mask.pgm"), &encode_mask_pgm(&bin.upsample(f)))?;
    eprintln!("diffusion mask: {} of {} latent cells; wrote {}", bin.popcount(), bin.bits.len(), a.out.display());
    Ok(())
}

#[derive(Deserialize)]
struct EvalPair {
    input: PathBuf,
    output: PathBuf,
    #[serde(default)]
    mask: Option<PathBuf>,
    #[serde(default)]
    target_caption: Option<String>,
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let pairs: Vec<EvalPair> = serde_json::from_slice(&read_bytes(&a.pairs)?).context("parsing pairs manifest")?;
    if pairs.is_empty() {
        bail!("pairs manifest is empty");
    }
    let base = a.pairs.parent().unwrap_or(Path::new("."));
    let models = Models::without_grounding()?;
    let mut rows = vec![format!("name,{}", MetricReport::CSV_HEADER)];
    let (mut inputs, mut outputs) = (Vec::new(), Vec::new());
    for p in &pairs {
        let input = load_png(&base.join(&p.input))?;
        let output = load_png(&base.join(&p.output))?;
        let caption = p
            .target_caption
            .as_deref()
            .map(|t| TokenizedCaption::analyze(t, models.tagger.as_ref()))
            .transpose()?;
        let name = p.output.display().to_string();
        let r = image_report(&input, &output, caption.as_ref(), &models.metrics)?;
        rows.push(format!("{name},{}", r.csv_row()));
        if let Some(m) = &p.mask {
            let mask: BitGrid = load_mask_pgm(&base.join(m))?;
            if mask.popcount() < mask.bits.len() {
                let r = background_report(&input, &output, &mask, caption.as_ref(), &models.metrics)?;
                rows.push(format!("{name},{}", r.csv_row()));
            }
        }
        inputs.push(input);
        outputs.push(output);
    }
    if inputs.len() >= 2 {
        let d = fid(&inputs, &outputs, models.metrics.fid.as_ref())?;
        rows.push(format!("<set>,image,,,{d},,{}@{},,", models.metrics.fid.name(), models.metrics.fid.version()));
    }
    let text = rows.join("\n") + "\n";
    match &a.out {
        Some(p) => write_bytes(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_captioned_folder(dir: &Path) -> anyhow::Result<Vec<(RgbImage, String)>> {
    let captions: std::collections::BTreeMap<String, String> =
        serde_json::from_slice(&read_bytes(&dir.join("captions.json"))?).context("parsing captions.json")?;
    captions
        .into_iter()
        .map(|(file, cap)| Ok((load_png(&dir.join(&file))?, cap)))
        .collect()
}

fn train_denoiser_cmd(a: TrainDenoiserArgs) -> anyhow::Result<()> {
    let data = match (&a.data, a.synthetic) {
        (Some(dir), None) => load_captioned_folder(dir)?,
        (None, Some(n)) => shapes::dataset(n, 64, seed::derive(a.seed, 0x4441, 0)).into_iter().map(|(_, i, c)| (i, c)).collect(),
        _ => bail!("pass exactly one of --data DIR or --synthetic N"),
    };
    if data.is_empty() {
        bail!("no training images");
    }
    let cfg = DenoiserTrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        ..Default::default()
    };
    let codec = PoolCodec::new(a.factor)?;
    let (model, report) = train_denoiser(&data, &codec, ConvArch::shapes_default(), &training_schedule(), &cfg)?;
    for (e, l) in report.epoch_loss.iter().enumerate() {
        eprintln!("epoch {e:3}  loss {l:.3}");
    }
    let mut bundle = model.to_bundle();
    bundle.meta["training"] = serde_json::json!({
        "images": data.len(),
        "codec_factor": a.factor,
        "config": cfg,
        "seconds": report.seconds,
    });
    bundle.save(&a.out)?;
    eprintln!("{} steps in {:.1}s; wrote {}", report.steps, report.seconds, a.out.display());
    Ok(())
}

fn train_aligner(a: TrainAlignerArgs) -> anyhow::Result<()> {
    let corpus = load_corpus(&a.data)?;
    let examples = corpus
        .iter()
        .map(|p| TrainExample::from_pair(p, DEFAULT_MAX_SPAN))
        .collect::<Result<Vec<_>, _>>()?;
    let params = if a.random_init {
        AlignerParams::random(DEFAULT_EMBED_DIM, a.hidden, DEFAULT_MAX_SPAN, &mut seed::rng(a.seed))
    } else {
        AlignerParams::lexical_prior(DEFAULT_EMBED_DIM, DEFAULT_MAX_SPAN)
    };
    let aligner = SpanAligner::new(params, Arc::new(HashEmbedder::default()))?;
    let cfg = TrainConfig { epochs: a.epochs, learning_rate: a.lr, lambda: a.lambda, seed: a.seed, ..Default::default() };
    let mut trainer = Trainer::new(aligner, cfg);
    let report = trainer.fit(&examples)?;
    eprintln!("mean NLL {:.4} -> {:.4} over {} epochs", report.initial_nll, report.final_nll(), a.epochs);
    trainer.aligner.params.save(&a.out)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> anyhow::Result<()> {
    let store = match &a.data_dir {
        Some(d) => SessionStore::open(d)?,
        None => SessionStore::from_env()?,
    };
    let state = Arc::new(AppState { store, models: a.models.load()? });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(state, a.port))
}
