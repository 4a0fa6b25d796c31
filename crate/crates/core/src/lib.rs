//! Individualized hear-through equalization.
//!
//! * [`spectra`]: impulse/frequency response containers and measurement sets.
//! * [`eqdesign`]: regularized least-squares equalization filter design.
//! * [`drp`]: eardrum response prediction from the secondary path.
//! * [`synthdata`]: synthetic ear-canal databases.
//! * [`eval`]: error metrics and the leave-one-out comparison harness.
//! * [`io`]: database, filter and model file formats.

pub mod drp;
pub mod eqdesign;
pub mod error;
pub mod eval;
pub mod io;
pub mod spectra;
pub mod synthdata;

pub use error::{Error, Result};
