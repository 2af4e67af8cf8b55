//! Corpus preparation, instruction-data assembly, adapter math and evaluation
//! metrics for adapting a language model to a low-resource language.

pub mod adapter;
pub mod corpus;
pub mod kv;
pub mod metrics;
pub mod normalize;
pub mod rng;
pub mod scalar;
pub mod sft;
pub mod tokenize;

pub type AdapterLayerF64 = adapter::AdapterLayer<f64>;
pub type AdapterLayerF32 = adapter::AdapterLayer<f32>;
pub type AdapterGradsF64 = adapter::AdapterGrads<f64>;
pub type AdapterGradsF32 = adapter::AdapterGrads<f32>;
pub type MatrixF64 = adapter::Matrix<f64>;
pub type MatrixF32 = adapter::Matrix<f32>;
pub type ToyTaskF64 = adapter::ToyTask<f64>;
pub type ToyTaskF32 = adapter::ToyTask<f32>;
