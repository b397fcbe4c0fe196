//! Windowed-attention transformer GAN components.
//!
//! Token features are `[B, H·W, C]` views of `[B, H, W, C]` grids with
//! row-major spatial flattening. Networks are built into a parameter store
//! and evaluated through a [`nn::Ctx`] that can also tap residual norms and
//! capture attention weights.

pub mod attention;
pub mod blocks;
pub mod checkpoint;
pub mod diagnostics;
pub mod networks;
pub mod nn;

pub use attention::{attention_op_count, Attention, AttentionConfig, AttentionOutput};
pub use blocks::{AdaNorm, NormKind, Placement, ToRgb, TransformerBlock};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use diagnostics::{CapturedAttention, NormRatioTrace, TapRecord};
pub use networks::{census, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
pub use nn::{Builder, Ctx, Role};
