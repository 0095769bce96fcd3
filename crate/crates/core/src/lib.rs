pub mod calderon;
pub mod deeponet;
pub mod error;
pub mod fem;
pub mod hilbert;
pub mod measures;
pub mod sparse;

pub use error::{Error, Result};
