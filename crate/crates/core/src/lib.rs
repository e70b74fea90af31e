pub mod error;
pub mod nn;
pub mod tensor;
pub mod mask_codec;
pub mod model;
pub mod metrics;
pub mod data;
pub mod inference;
pub mod training;
pub mod experiment;
