//! Constrained Markov power/admission games on a multiple-access channel.

pub mod cmdp;
pub mod config;
pub mod error;
pub mod experiment;
pub mod game;
pub mod iine;
pub mod io;
pub mod lp;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
