//! Command-line pipeline: synthetic data, head training, quantization,
//! evaluation, benchmarking and spray planning.

pub mod commands;
pub mod image_io;
pub mod synth;
pub mod workdir;
