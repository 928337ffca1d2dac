pub mod dynamics;
pub mod error;
pub mod inference;
pub mod io;
pub mod rescale;
pub mod stats;
pub mod synth;
pub mod uq;
pub mod kernelwalk;
pub mod hitting;
pub mod experiments;
pub mod cli;
