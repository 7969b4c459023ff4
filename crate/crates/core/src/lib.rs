pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod report;
pub mod satpl;
pub mod trainer;
pub mod types;
pub mod uscl;

pub use error::{Error, LossTerm, Result};
