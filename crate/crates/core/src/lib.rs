pub mod basis;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod formula;
pub mod inference;
pub mod linalg;
pub mod ocat;
pub mod simulate;

pub use error::{Error, Result};
