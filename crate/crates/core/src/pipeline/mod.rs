//! End-to-end edit: align → classify → ground → mask → refine → inpaint →
//! score, with ablation switches and on-disk artifacts.

mod session;

pub use session::{RunRecord, RunStatus, SessionManifest, SessionStore, DATA_DIR_ENV};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::aligner::{align_bidirectional_merge, AlignerParams, HashEmbedder, SpanAligner, SpanAlignmentPath, WordAlignmentSet, DEFAULT_EMBED_DIM, DEFAULT_MAX_SPAN};
use crate::caption::{LexiconTagger, TaggerProvider, TokenizedCaption};
use crate::diffusion::{
    embed_caption, inference_schedule, ConvDenoiser, Denoiser, LatentCodec, PoolCodec, DEFAULT_GUIDANCE, DEFAULT_STEPS,
    SHAPES_CODEC_FACTOR,
};
use crate::grid::{BitGrid, Grid, SoftMask};
use crate::grounding::{ground_nouns, union_regions, GroundingProvider, GroundingResult, NounQuery, NullProvider, DEFAULT_MIN_CONFIDENCE};
use crate::inpaint::{inpaint, InpaintModel};
use crate::io::{encode_mask_pgm, encode_png, encode_soft_pgm, encode_dmg1, write_bytes};
use crate::mask::{binarize, cancellation_map, default_mask_step, diffusion_mask, refine, MaskModel, Provenance, ProvenanceHistogram, RefinedMask};
use crate::metrics::{background_report, image_report, MetricProviders, MetricReport};
use crate::planner::{classify, EditPlan, PlannedNoun};
use crate::{seed, Error, Result};

/// Seed tags for the mask and inpainting noise streams.
pub const TAG_MASK: u64 = 0x4d41;
pub const TAG_INPAINT: u64 = 0x4950;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Independent switches that disable one pipeline component each.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Refined mask is `alter \ keep`.
    pub no_diffusion_mask: bool,
    /// Cancellation map is empty.
    pub no_noise_cancellation: bool,
    /// Refined mask is the upsampled diffusion mask alone.
    pub no_refinement: bool,
    /// Modifier-changed nouns are treated as identical.
    pub no_modifiers: bool,
    /// Deleted nouns are dropped from keep.
    pub no_nonshared_keep: bool,
}

impl AblationFlags {
    pub const NAMES: [&'static str; 5] =
        ["no_diffusion_mask", "no_noise_cancellation", "no_refinement", "no_modifiers", "no_nonshared_keep"];

    pub fn set(&mut self, name: &str) -> Result<()> {
        let slot = match name.trim().replace('-', "_").as_str() {
            "no_diffusion_mask" => &mut self.no_diffusion_mask,
            "no_noise_cancellation" => &mut self.no_noise_cancellation,
            "no_refinement" => &mut self.no_refinement,
            "no_modifiers" => &mut self.no_modifiers,
            "no_nonshared_keep" => &mut self.no_nonshared_keep,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown ablation {other:?}, expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        *slot = true;
        Ok(())
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        let on = [
            self.no_diffusion_mask,
            self.no_noise_cancellation,
            self.no_refinement,
            self.no_modifiers,
            self.no_nonshared_keep,
        ];
        Self::NAMES.iter().zip(on).filter(|(_, b)| *b).map(|(n, _)| *n).collect()
    }
}

/// Comma-separated flag names.
impl FromStr for AblationFlags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut flags = AblationFlags::default();
        for name in s.split(',').filter(|n| !n.trim().is_empty()) {
            flags.set(name)?;
        }
        Ok(flags)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    pub steps: usize,
    pub guidance: f64,
    pub threshold: f64,
    pub seed: u64,
    /// Timestep of the inference schedule at which the mask is computed;
    /// `⌈steps/2⌉` when absent.
    pub mask_step: Option<usize>,
    pub min_confidence: f64,
    pub ablations: AblationFlags,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig {
            steps: DEFAULT_STEPS,
            guidance: DEFAULT_GUIDANCE,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            mask_step: None,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            ablations: AblationFlags::default(),
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidArgument(format!("steps must be at least 2, got {}", self.steps)));
        }
        if !self.guidance.is_finite() || self.guidance < 0.0 {
            return Err(Error::InvalidArgument(format!("guidance must be a non-negative number, got {}", self.guidance)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::InvalidArgument(format!("min_confidence {} outside [0, 1]", self.min_confidence)));
        }
        if let Some(t) = self.mask_step {
            if t == 0 || t >= self.steps {
                return Err(Error::InvalidArgument(format!("mask_step {t} outside 1..{}", self.steps)));
            }
        }
        Ok(())
    }

    pub fn mask_step(&self) -> usize {
        self.mask_step.unwrap_or_else(|| default_mask_step(self.steps))
    }
}

/// Everything the pipeline reads but never mutates.
pub struct Models {
    pub tagger: Arc<dyn TaggerProvider>,
    pub aligner: SpanAligner,
    pub denoiser: Arc<dyn Denoiser>,
    pub codec: Arc<dyn LatentCodec>,
    pub grounding: Arc<dyn GroundingProvider>,
    pub metrics: MetricProviders,
}

impl Models {
    /// Bundled tagger, lexical-prior aligner, shipped shapes denoiser with
    /// its pooling codec, and the given grounding provider.
    pub fn shipped(grounding: Arc<dyn GroundingProvider>) -> Result<Self> {
        Self::with_denoiser(Arc::new(ConvDenoiser::shipped()?), grounding)
    }

    pub fn with_denoiser(denoiser: Arc<dyn Denoiser>, grounding: Arc<dyn GroundingProvider>) -> Result<Self> {
        let aligner = SpanAligner::new(
            AlignerParams::lexical_prior(DEFAULT_EMBED_DIM, DEFAULT_MAX_SPAN),
            Arc::new(HashEmbedder::default()),
        )?;
        Ok(Models {
            tagger: Arc::new(LexiconTagger::bundled()),
            aligner,
            denoiser,
            codec: Arc::new(PoolCodec::new(SHAPES_CODEC_FACTOR)?),
            grounding,
            metrics: MetricProviders::default(),
        })
    }

    pub fn without_grounding() -> Result<Self> {
        Self::shipped(Arc::new(NullProvider))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentArtifact {
    pub source_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    pub forward: SpanAlignmentPath,
    pub backward: SpanAlignmentPath,
    pub merged: WordAlignmentSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingArtifact {
    pub provider: String,
    pub min_confidence: f64,
    pub alter: Vec<GroundingSummary>,
    pub keep: Vec<GroundingSummary>,
    pub alter_pixels: usize,
    pub keep_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingSummary {
    pub noun: String,
    pub prompt: String,
    pub confidence: f64,
    pub pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub image: MetricReport,
    /// Absent when the refined mask covers the whole image.
    pub background: Option<MetricReport>,
    pub refined_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceArtifact {
    pub histogram: ProvenanceHistogram,
    pub diffusion_mask_cells: usize,
    pub cancelled_cells: usize,
}

/// In-memory result of one edit.
#[derive(Clone, Debug)]
pub struct EditOutcome {
    pub config: EditConfig,
    pub source: TokenizedCaption,
    pub target: TokenizedCaption,
    pub alignment: AlignmentArtifact,
    pub plan: EditPlan,
    pub grounding: GroundingArtifact,
    pub alter_region: BitGrid,
    pub keep_region: BitGrid,
    /// Latent resolution.
    pub soft_mask: SoftMask,
    pub diffusion_mask: BitGrid,
    pub refined: RefinedMask,
    pub cancel: BitGrid,
    pub output: RgbImage,
    pub metrics: RunMetrics,
    pub latents: Vec<Grid>,
}

/// Artifact kinds and their file names inside a run directory.
pub const ARTIFACTS: [(&str, &str); 6] = [
    ("alignment", "alignment.json"),
    ("plan", "plan.json"),
    ("soft_mask", "soft_mask.pgm"),
    ("refined_mask", "refined_mask.pgm"),
    ("output", "output.png"),
    ("metrics", "metrics.json"),
];

pub const EXTRA_ARTIFACTS: [(&str, &str); 4] = [
    ("grounding", "grounding.json"),
    ("provenance", "provenance.json"),
    ("config", "config.json"),
    ("diffusion_mask", "diffusion_mask.pgm"),
];

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Write each artifact here as soon as its stage finishes.
    pub out_dir: Option<PathBuf>,
    pub dump_latents: bool,
}

struct Sink<'a> {
    dir: Option<&'a Path>,
}

impl Sink<'_> {
    fn put(&mut self, file: &str, bytes: impl FnOnce() -> Result<Vec<u8>>) -> Result<()> {
        if let Some(dir) = self.dir {
            write_bytes(&dir.join(file), &bytes()?)?;
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<()> {
        self.put(file, || Ok(serde_json::to_vec_pretty(value)?))
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Tokenizes both captions and aligns them in both directions.
pub fn align_captions(
    source_caption: &str,
    target_caption: &str,
    models: &Models,
) -> Result<(TokenizedCaption, TokenizedCaption, AlignmentArtifact)> {
    let c1 = TokenizedCaption::analyze(source_caption, models.tagger.as_ref())?;
    let c2 = TokenizedCaption::analyze(target_caption, models.tagger.as_ref())?;
    let (forward, backward) = models.aligner.decode_pair(&c1.tokens, &c2.tokens)?;
    let merged = align_bidirectional_merge(&forward, &backward)?;
    let art = AlignmentArtifact { source_tokens: c1.tokens.clone(), target_tokens: c2.tokens.clone(), forward, backward, merged };
    Ok((c1, c2, art))
}

/// Keep/alter plan with the planner ablations applied.
pub fn plan_edit(
    c1: &TokenizedCaption,
    c2: &TokenizedCaption,
    alignment: &AlignmentArtifact,
    flags: AblationFlags,
) -> Result<EditPlan> {
    let mut plan = classify(c1, c2, &alignment.merged)?;
    if flags.no_modifiers {
        plan = plan.without_modifiers();
    }
    if flags.no_nonshared_keep {
        plan = plan.without_deleted_keep();
    }
    Ok(plan)
}

/// Soft and binarized caption-difference masks at latent resolution.
pub fn caption_mask(
    image: &RgbImage,
    c1: &TokenizedCaption,
    c2: &TokenizedCaption,
    config: &EditConfig,
    models: &Models,
) -> Result<(SoftMask, BitGrid)> {
    config.validate()?;
    let schedule = inference_schedule(config.steps)?;
    let mm = MaskModel {
        schedule: &schedule,
        denoiser: models.denoiser.as_ref(),
        codec: models.codec.as_ref(),
        guidance: config.guidance,
    };
    let (e1, e2) = (embed_caption(c1), embed_caption(c2));
    let soft = diffusion_mask(image, &e1, &e2, &mm, config.mask_step(), seed::derive(config.seed, TAG_MASK, 0))?;
    let bin = binarize(&soft, config.threshold)?;
    Ok((soft, bin))
}

/// Nearest-neighbour upsampling of a latent-resolution soft mask.
pub fn upsample_soft(soft: &SoftMask, f: usize) -> Result<SoftMask> {
    let (w, h) = (soft.width * f, soft.height * f);
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            values.push(soft.values[(y / f) * soft.width + x / f]);
        }
    }
    SoftMask::new(w, h, values)
}

fn queries(c1: &TokenizedCaption, nouns: &[PlannedNoun]) -> Vec<NounQuery> {
    nouns
        .iter()
        .map(|n| NounQuery { lemma: c1.lemma(n.source.head_index), prompt: n.source_phrase.clone() })
        .collect()
}

fn summaries(queries: &[NounQuery], results: &[GroundingResult]) -> Vec<GroundingSummary> {
    queries
        .iter()
        .zip(results)
        .map(|(q, r)| GroundingSummary {
            noun: r.noun.clone(),
            prompt: q.prompt.clone(),
            confidence: r.confidence,
            pixels: r.mask.popcount(),
        })
        .collect()
}

/// Runs the full pipeline on one image and caption pair.
///
/// With `options.out_dir` set, artifacts are written stage by stage, so a
/// failing run leaves the earlier ones (and `error.txt`) behind.
pub fn run_edit(
    image: &RgbImage,
    source_caption: &str,
    target_caption: &str,
    config: &EditConfig,
    models: &Models,
    options: &RunOptions,
) -> Result<EditOutcome> {
    let mut sink = Sink { dir: options.out_dir.as_deref() };
    let result = run_stages(image, source_caption, target_caption, config, models, options, &mut sink);
    if let (Err(e), Some(dir)) = (&result, options.out_dir.as_deref()) {
        let _ = write_bytes(&dir.join("error.txt"), format!("{e}\n").as_bytes());
    }
    result
}

fn run_stages(
    image: &RgbImage,
    source_caption: &str,
    target_caption: &str,
    config: &EditConfig,
    models: &Models,
    options: &RunOptions,
    sink: &mut Sink<'_>,
) -> Result<EditOutcome> {
    stage("config", config.validate())?;
    sink.json("config.json", config)?;
    let flags = config.ablations;
    let (w, h) = (image.width() as usize, image.height() as usize);
    let f = models.codec.factor();
    stage("config", models.codec.check_image(w, h))?;

    let (c1, c2, alignment) = stage("align", align_captions(source_caption, target_caption, models))?;
    sink.json("alignment.json", &alignment)?;

    let plan = stage("classify", plan_edit(&c1, &c2, &alignment, flags))?;
    sink.json("plan.json", &plan)?;

    let (alter_q, keep_q) = (queries(&c1, &plan.alter), queries(&c1, &plan.keep));
    let (alter_region, keep_region, grounding) = stage("ground", (|| {
        let provider = models.grounding.as_ref();
        let alter_r = ground_nouns(image, &alter_q, provider)?;
        let keep_r = ground_nouns(image, &keep_q, provider)?;
        let alter = union_regions(&alter_r, config.min_confidence, w, h)?;
        let keep = union_regions(&keep_r, config.min_confidence, w, h)?;
        let art = GroundingArtifact {
            provider: provider.name().to_string(),
            min_confidence: config.min_confidence,
            alter: summaries(&alter_q, &alter_r),
            keep: summaries(&keep_q, &keep_r),
            alter_pixels: alter.popcount(),
            keep_pixels: keep.popcount(),
        };
        Ok((alter, keep, art))
    })())?;
    sink.json("grounding.json", &grounding)?;

    let schedule = stage("mask", inference_schedule(config.steps))?;
    let cond2 = embed_caption(&c2);
    let (soft, diffusion) = if flags.no_diffusion_mask {
        let zero = stage("mask", SoftMask::new(w / f, h / f, vec![0.0; (w / f) * (h / f)]))?;
        (zero, BitGrid::new(w / f, h / f))
    } else {
        stage("mask", caption_mask(image, &c1, &c2, config, models))?
    };
    sink.put("soft_mask.pgm", || Ok(encode_soft_pgm(&upsample_soft(&soft, f)?)))?;
    sink.put("diffusion_mask.pgm", || Ok(encode_mask_pgm(&diffusion.upsample(f))))?;

    let (refined, cancel) = stage("refine", (|| {
        let none = BitGrid::new(w, h);
        let refined = if flags.no_refinement {
            RefinedMask::plain(diffusion.upsample(f), Provenance::FromDiffusion)
        } else {
            refine(&diffusion, &alter_region, &keep_region, f)?
        };
        let cancel = cancellation_map(if flags.no_noise_cancellation { &none } else { &keep_region }, f)?;
        Ok((refined, cancel))
    })())?;
    sink.put("refined_mask.pgm", || Ok(encode_mask_pgm(&refined.mask)))?;
    let provenance = ProvenanceArtifact {
        histogram: refined.histogram(),
        diffusion_mask_cells: diffusion.popcount(),
        cancelled_cells: cancel.popcount(),
    };
    sink.json("provenance.json", &provenance)?;

    let mut latents = Vec::new();
    let output = stage("inpaint", {
        let im = InpaintModel {
            schedule: &schedule,
            denoiser: models.denoiser.as_ref(),
            codec: models.codec.as_ref(),
            guidance: config.guidance,
        };
        let buf = options.dump_latents.then_some(&mut latents);
        inpaint(image, &refined.mask, &cancel, &cond2, &im, seed::derive(config.seed, TAG_INPAINT, 0), buf)
    })?;
    sink.put("output.png", || encode_png(&output))?;
    if options.dump_latents {
        for (i, g) in latents.iter().enumerate() {
            let t = latents.len() - i - 1;
            sink.put(&format!("latents/x_{t:03}.dmg"), || Ok(encode_dmg1(g)))?;
        }
    }

    let metrics = stage("metrics", (|| {
        let image_m = image_report(image, &output, Some(&c2), &models.metrics)?;
        let background = if refined.mask.popcount() == w * h {
            None
        } else {
            Some(background_report(image, &output, &refined.mask, Some(&c2), &models.metrics)?)
        };
        Ok(RunMetrics { image: image_m, background, refined_pixels: refined.mask.popcount() })
    })())?;
    sink.json("metrics.json", &metrics)?;

    Ok(EditOutcome {
        config: config.clone(),
        source: c1,
        target: c2,
        alignment,
        plan,
        grounding,
        alter_region,
        keep_region,
        soft_mask: soft,
        diffusion_mask: diffusion,
        refined,
        cancel,
        output,
        metrics,
        latents,
    })
}

/// Artifact kind → file name for a run directory written by [`run_edit`].
pub fn artifact_files(dump_latents: bool, steps: usize) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> =
        ARTIFACTS.iter().chain(&EXTRA_ARTIFACTS).map(|(k, v)| (k.to_string(), v.to_string())).collect();
    if dump_latents {
        for t in 0..steps.saturating_sub(1) {
            out.insert(format!("latent_{t:03}"), format!("latents/x_{t:03}.dmg"));
        }
    }
    out
}
