//! Calibration measurement, decomposition and recalibration for binary
//! prediction-market trades.
//!
//! Numerical cores are generic over [`scalar::Scalar`]; the aliases below fix
//! the common types at `f64` or `f32`.

pub mod bayes;
pub mod calib;
pub mod decomp;
pub mod ingest;
pub mod resample;
pub mod scalar;
pub mod special;
pub mod synth;

pub type CalibrationFit64 = calib::CalibrationFit<f64>;
pub type CalibrationFit32 = calib::CalibrationFit<f32>;
pub type SlopeGrid64 = decomp::SlopeGrid<f64>;
pub type SlopeGrid32 = decomp::SlopeGrid<f32>;
pub type ComponentSet64 = decomp::ComponentSet<f64>;
pub type ComponentSet32 = decomp::ComponentSet<f32>;
pub type VarianceTable64 = decomp::VarianceTable<f64>;
pub type VarianceTable32 = decomp::VarianceTable<f32>;
pub type ScaleEffect64 = decomp::ScaleEffect<f64>;
pub type ScaleEffect32 = decomp::ScaleEffect<f32>;
pub type HierarchicalModel64 = bayes::HierarchicalModel<f64>;
pub type HierarchicalModel32 = bayes::HierarchicalModel<f32>;
pub type ModelParams64 = bayes::ModelParams<f64>;
pub type ModelParams32 = bayes::ModelParams<f32>;
