pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod numerics;
pub mod prompter;
pub mod rng;
pub mod synthetic;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
