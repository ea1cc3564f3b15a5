pub mod cli;
pub mod cooccur;
pub mod dataset;
pub mod ensemble;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod scalar;
pub mod trainer;

pub type Matrix64 = nn::Matrix<f64>;
pub type Matrix32 = nn::Matrix<f32>;
pub type FusionModel64 = models::FusionModel<f64>;
pub type FusionModel32 = models::FusionModel<f32>;
pub type GraphModel64 = models::GraphModel<f64>;
pub type GraphModel32 = models::GraphModel<f32>;
