//! Dual-branch diffusion policy for visuomotor control.
//!
//! A denoiser generates action chunks conditioned either on a latent action
//! inferred from images alone or on a fused image and proprioception
//! representation. A Koopman latent-dynamics loss shapes the visual features,
//! and at run time the chunks of both branches are pooled and selected by
//! their test-time loss.

pub mod aggregator;
pub mod diffusion;
pub mod error;
pub mod koopman;
pub mod pipeline;

pub use error::{Error, Result};
