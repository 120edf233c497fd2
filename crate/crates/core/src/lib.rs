pub mod bayes;
pub mod design;
pub mod effects;
pub mod error;
pub mod freq;
pub mod mcmc;
pub mod network;
pub mod numerics;
pub mod sim;

pub use error::{CnmaError, Result};
