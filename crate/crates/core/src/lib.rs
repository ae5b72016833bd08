//! Link-level simulator for orthogonal delay-Doppler division multiplexing
//! (ODDM) over doubly-selective channels.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel;
pub mod cli;
pub mod detectors;
pub mod error;
pub mod grid_modem;
pub mod linalg;
pub mod pilot;
pub mod sim;

pub use error::{Error, Result};
