//! Post-training int8 quantization: calibration, conversion and
//! float-versus-int8 agreement reporting.

mod calibrate;
mod compare;
mod convert;

pub use calibrate::{calibrate, CalibrationStats, TensorRange};
pub use compare::{argmax, compare_models, predict, AgreementReport, LabeledImage};
pub use convert::quantize_model;
