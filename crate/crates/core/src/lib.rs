//! Conditional flow-matching edge detection at desk scale.
//!
//! An unconditional velocity transformer is pretrained on edge maps, then
//! specialized to image-conditioned edge generation by training only a
//! low-rank adapter on the condition-token projections plus a condition
//! projector. Training mixes the flow-matching objective with a pixel-space
//! weighted cross-entropy whose gradient is injected directly on the
//! one-step clean latent estimate. Sampling integrates a guided velocity
//! field with explicit Euler steps, and the [`eval`] module scores edge maps
//! with the usual ODS/OIS F-measure protocol.

pub mod checkpoint;
pub mod codec;
pub mod config;
mod error;
pub mod eval;
pub mod flow;
pub mod image;
pub mod net;
pub mod numerics;
pub mod par;
pub mod pipeline;
pub mod pixel;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
