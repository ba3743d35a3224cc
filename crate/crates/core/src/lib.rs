//! Edge-inference toolkit for leaf-disease classification: float and int8
//! MobileNetV2-style execution, post-training quantization, classifier-head
//! training, evaluation and variable-rate spray planning.

pub mod error;
pub mod evalbench;
pub mod fixed_point;
pub mod graph;
pub mod kernels;
pub mod quant;
pub mod quantizer;
pub mod scalar;
pub mod spray;
pub mod tensor;
pub mod trainer;

pub use error::{Error, LoadError, Result};
pub use fixed_point::{requantize, to_fixed_point, FixedPointMultiplier};
pub use quant::{compute_quant_params, dequantize, quantize, QuantMode, QuantParams};
pub use scalar::Scalar;
pub use tensor::{DType, QTensor, Shape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
