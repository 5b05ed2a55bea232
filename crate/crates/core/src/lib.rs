pub mod autodiff;
pub mod data;
pub mod error;
pub mod nn;
pub mod pairing;
pub mod tensor;

pub use autodiff::{gradcheck, Gradients, Graph, Var};
pub use data::{Dataset, LabeledSample};
pub use error::{Error, Result};
pub use pairing::{Pair, PairSet};
pub use tensor::Tensor;
