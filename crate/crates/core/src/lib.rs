//! Mean-square stability analysis and state-feedback synthesis for
//! discrete-time linear systems with i.i.d. random parameters.

pub mod analysis;
pub mod dist;
pub mod error;
pub mod examples;
pub mod linalg;
pub mod moments;
pub mod sampled;
pub mod simulate;
pub mod synthesis;
pub mod sysmodel;

pub use error::{Error, Result};
