//! Word-alignment guided diffusion masking for text-driven image editing.
//!
//! The pipeline runs in five stages: align the source and target captions
//! with a semi-Markov CRF, classify nouns into keep/alter sets, ground those
//! nouns to image regions, compute a caption-difference diffusion mask and
//! refine it with the grounded regions, then inpaint the refined mask with a
//! small latent diffusion model. The [`metrics`] module scores the result.

pub mod aligner;
pub mod caption;
pub mod diffusion;
pub mod error;
pub mod grid;
pub mod grounding;
pub mod inpaint;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod planner;
pub mod scenes;
pub mod seed;

pub use error::{Error, Result};
