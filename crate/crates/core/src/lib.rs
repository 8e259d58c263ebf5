//! Forecast-assisted traffic signal control.
//!
//! A queue-based microsimulator, a spatio-temporal graph convolutional forecaster, per-intersection
//! DQN agents and the control loop that combines forecasts with live observations.

pub mod control;
pub mod dqn;
pub mod experiment;
mod io_util;
pub mod linalg;
pub mod microsim;
pub mod netgraph;
pub mod nn;
pub mod params;
pub mod scenario;
pub mod stgcn;
