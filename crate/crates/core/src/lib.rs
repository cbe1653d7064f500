pub mod cli;
pub mod datagen;
pub mod equivariant;
pub mod error;
pub mod grid;
pub mod network;
pub mod repr;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
