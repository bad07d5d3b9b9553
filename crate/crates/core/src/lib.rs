pub mod borrowing;
pub mod decision;
pub mod error;
pub mod inference;
pub mod numerics;
pub mod rng;
pub mod simlab;
pub mod strategy;

pub use error::{Error, Result};
