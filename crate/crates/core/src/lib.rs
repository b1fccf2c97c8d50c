//! Reduced-order PLL model of an aggregated wind power plant, with
//! reverse-time stability boundaries and clearing-time search.

// Checks are written `!(x > 0.0)` so that NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod integrate;
pub mod linalg;
pub mod model;
pub mod network;
pub mod roa;
pub mod scenario;

pub use error::{Error, Result};
pub use model::{GridEquivalent, PllParams, RomCoefficients, RomState, StateScale};
