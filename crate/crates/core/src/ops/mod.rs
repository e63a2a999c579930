//! Differentiable operations. Each submodule exposes plain tensor kernels
//! plus the matching [`Graph`](crate::graph::Graph) methods that record
//! backward rules.

pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod shape;
pub mod spectral;

pub use conv::{conv2d, conv_out_len, conv_transpose2d, deform_conv2d};
pub use elementwise::{binary, gelu_scalar, layer_norm_axis0, BinaryOp};
pub use linalg::{matmul, softmax, transpose};
pub use shape::{crop, gather_tokens, reflect_index, reflect_pad, scatter_tokens};
pub use spectral::spectral_reweight;
