pub mod analysis;
pub mod claims;
pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod optim;

pub use error::{Error, Result};
