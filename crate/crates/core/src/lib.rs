pub mod audit;
pub mod config;
pub mod dre;
pub mod error;
pub mod ffn;
pub mod fft;
pub mod graph;
pub mod image_io;
pub mod layers;
pub mod model;
pub mod ops;
pub mod oracle;
pub mod params;
pub mod polar;
pub mod rsas;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod weights_io;

pub use config::{RunConfig, TrainConfig};
pub use error::{Result, RstError};
pub use graph::{Fault, Gradients, Graph, NodeId, OpRecord, Var};
pub use model::{build, check_weights, count_flops, forward, FlopTable, ModelConfig, Plans};
pub use params::{ParamSet, WeightStore};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;
