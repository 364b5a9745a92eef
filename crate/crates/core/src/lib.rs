pub mod arch;
pub mod cli;
pub mod data;
pub mod engine;
pub mod loss;
pub mod metrics;
pub mod nn;
