pub mod calibration;
pub mod cli;
pub mod data;
pub mod discovery;
pub mod effects;
pub mod error;
pub mod learners;
pub mod linalg;
pub mod rng;
pub mod simulation;
pub mod stats;
pub mod pipeline;
pub mod experiments;
