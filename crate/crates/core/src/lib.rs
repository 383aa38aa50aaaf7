pub mod autodiff;
pub mod coattention;
pub mod corpus;
pub mod error;
pub mod fusion;
pub mod ggnn;
pub mod graph;
pub mod harness;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod text;

pub use error::{Error, Result};
pub use tensor::Tensor;
