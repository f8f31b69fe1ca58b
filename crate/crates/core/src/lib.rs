pub mod error;
pub mod linalg;
pub mod qstates;
pub mod random;

pub use error::{QstError, Result};
pub mod measurement;
pub mod ansatz;
pub mod baseline;
pub mod metrics;
pub mod objective;
pub mod optimize;
