//! Small-scale DDPM machinery: schedules, forward noising with noise
//! cancellation, ancestral reverse steps, classifier-free guidance, latent
//! codecs, caption conditioning and a trainable convolutional denoiser.

mod codec;
mod condition;
mod denoiser;
mod process;
mod schedule;
pub mod shapes;
mod train;

pub use codec::{make_codec, CodecKind, IdentityCodec, LatentCodec, PoolCodec};
pub use condition::{embed_caption, embed_tokens, unconditional, COND_DIM};
pub use denoiser::{time_features, ConstantDenoiser, ConvArch, ConvDenoiser, Denoiser, FnDenoiser};
pub use process::{
    forward_sample, gaussian_like, guided_noise, posterior_variance, reverse_mean, reverse_step, CancellationMap,
    DEFAULT_GUIDANCE,
};
pub use schedule::{
    inference_schedule, make_schedule, training_schedule, NoiseSchedule, BETA_END, BETA_START, DEFAULT_STEPS,
    TRAIN_STEPS,
};
pub use train::{
    batch_loss_and_grad, denoising_loss, encode_dataset, fit_denoiser, train_denoiser, train_shapes_denoiser, DenoiserTrainConfig,
    DenoiserTrainReport, LatentSample,
};

/// Latent downsampling factor used with the shipped denoiser.
pub const SHAPES_CODEC_FACTOR: usize = 4;
