//! File formats, synthetic evaluation and the command-line front end for
//! [`stmmreg_core`].

pub mod cli;
pub mod error;
pub mod eval;
pub mod io;

pub use error::{Error, Result};
pub use stmmreg_core as core;
