//! File fragment classification with light-weight depthwise-separable 1D CNNs.
//!
//! The crate covers the numeric core ([`tensor`]), the layer zoo ([`layers`]), the three
//! network variants and their checkpoints ([`models`]), analytic cost accounting
//! ([`cost`]), corpus handling ([`data`]), training and evaluation ([`train`]) and the
//! block classifier / benchmark used by the command line ([`carve`]).

pub mod carve;
pub mod cost;
pub mod data;
pub mod error;
pub mod layers;
pub mod models;
pub mod tensor;
#[doc(hidden)]
pub mod testutil;
pub mod train;

pub use error::{Error, ErrorClass, Result};
