pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gar;
pub mod gradcheck;
pub mod graph;
pub mod kv;
pub mod matrix;
pub mod network;
pub mod parallel;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::Rng;
