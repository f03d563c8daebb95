//! Vehicle sideslip-angle estimation workbench.
//!
//! Model-based observers (EKF and UKF over a single-track model with Dugoff
//! tyres, optionally fed with measured axle forces and an adaptive force-noise
//! law) and data-driven regressors (feed-forward and LSTM networks) are trained,
//! tuned and scored on synthetic manoeuvres produced by a richer two-track
//! plant.

pub mod datapipe;
pub mod error;
pub mod evaluation;
pub mod frame;
pub mod kalman;
pub mod neural;
pub mod pipeline;
pub mod plant_sim;
pub mod selftest;
pub mod tuning;
pub mod vehicle_model;

pub use error::{Error, Result};
