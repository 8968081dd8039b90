//! Dense numeric building blocks: tensors, the LSTM cell, softmax, Adam and
//! a finite-difference gradient checker.

pub mod adam;
pub mod dd;
pub mod gradcheck;
pub mod lstm;
pub mod ops;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use dd::Dd;
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, LossValue};
pub use lstm::{lstm_backward, lstm_step, sigmoid, LstmParams, LstmState, StepCache, StepGrads};
pub use ops::{log_softmax, softmax};
pub use params::{clip_global_norm, NamedTensors, ParamSet};
pub use tensor::Tensor;
