//! Two-dimensional TM inverse scattering laboratory.
// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classic;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod glyph;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod selfcheck;
pub mod store;

pub use error::{Error, FormatError, Result};
