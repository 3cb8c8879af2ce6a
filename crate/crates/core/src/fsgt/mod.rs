//! Frequency-selective graph attention and the toy networks built from it.
//!
//! A feature map is cut into non-overlapping windows ([`patch`]); each window
//! is a graph node. An attention head ([`attention`]) builds a similarity graph
//! over the nodes, keeps only the high-frequency part of the node matrix for its
//! keys and attends with scaled dot products. Several heads with different
//! cutoffs, a channel concatenation and a 1×1 convolution form the block's
//! residual update. [`blocks`] holds the dense residual blocks (DMRB) and the
//! hybrid block (HTB) that combines both; [`dsa`] turns discriminator
//! activations into a spatial attention map; [`toy`] wires small generator and
//! discriminator networks.

pub mod attention;
pub mod blocks;
pub mod complexity;
pub mod dsa;
pub mod patch;
pub mod spec;
pub mod toy;

pub use attention::{fsga_head, ForwardCtx, HeadWeights, MultiHeadFsga, SpectralBases};
pub use blocks::{Dmrb, Htb};
pub use complexity::{affine_fit, attention_complexity_bench, ComplexityRow};
pub use dsa::{attention_gate, dsa_map, dsa_on_tape, dsa_raw, gate_on_tape};
pub use patch::{patch_merge, patch_partition};
pub use spec::{dynamic_cutoffs, AttentionSpec};
pub use toy::{
    guided_input, DiscriminatorConfig, DiscriminatorPass, FsgtDiscriminator, FsgtGenerator,
    GeneratorConfig,
};
