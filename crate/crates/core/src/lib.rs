//! Object referring in short video clips: ranks candidate boxes by the
//! probability of a referring expression given appearance, depth, motion and
//! gaze features.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod dataio;
pub mod error;
pub mod eval;
pub mod features;
pub mod gaze;
pub mod language;
pub mod model;
pub mod numkit;
pub mod pipeline;
pub mod proposals;

pub use error::{Error, Result};
