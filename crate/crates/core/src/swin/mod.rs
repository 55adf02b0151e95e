//! 3D shifted-window transformer building blocks.

mod block;
pub mod flops;
pub mod patch;
pub mod window;

pub use block::{
    attention_macs, reset_attention_macs, LayerNorm, Linear, SwinBlock, SwinStage, LN_EPS,
};
pub use patch::{PatchEmbed, PatchExpanding, PatchMerging};
pub use window::{BlockGeometry, WindowLayout, MASK_VALUE};
