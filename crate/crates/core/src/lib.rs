pub mod adapter;
pub mod aeq;
pub mod bench;
pub mod cli;
pub mod edge;
pub mod nn;
pub mod rgba;
pub mod rng;
pub mod synth;
