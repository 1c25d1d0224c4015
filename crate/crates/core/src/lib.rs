//! Simulator, compiler and reference detectors for the SID impostor-detection
//! accelerator.

pub mod compile;
pub mod data;
pub mod detection;
pub mod energy;
pub mod isa;
pub mod machine;
pub mod models;
pub mod numerics;
pub mod pipeline;
