//! Sample-level simulator for symbol-synchronous OOK flooding over
//! multi-hop RF networks.

pub mod analysis;
pub mod channel;
pub mod cli;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod modem;
pub mod node;
pub mod signal;
pub mod sim;
pub mod topology;
pub mod trace;

pub use error::{Error, Result};
