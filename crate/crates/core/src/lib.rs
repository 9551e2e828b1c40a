pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod model;
pub mod optim;
pub mod synthetic;
pub mod tensor;
pub mod training;
pub mod transition;

pub use error::{Error, Result};
