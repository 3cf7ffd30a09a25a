pub mod amplitude;
pub mod constants;
pub mod error;
pub mod estimation;
pub mod langevin;
pub mod model;
pub mod pipeline;
pub mod roots;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};
