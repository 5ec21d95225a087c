pub mod bitstream;
pub mod config;
pub mod decoder;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod fixtures;
pub mod frontend;
pub mod losses;
pub mod model;
pub mod nn;
pub mod srvq;
pub mod tensor;
pub mod weights;

pub use bitstream::{FrameCodes, StreamHeader, SubbandCode};
pub use config::{BandLayout, ConfigError, ModelConfig, ModelType};
pub use dsp::AudioBuffer;
pub use error::{GullError, Result};
pub use model::{toy_config, DecodeOptions, Encoded, GullModel};
pub use tensor::Embeddings;
pub use weights::{ParamStore, Tensor};
