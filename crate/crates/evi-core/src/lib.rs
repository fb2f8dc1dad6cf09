#![cfg_attr(not(feature = "std"), no_std)]
//! Minimizing-movement and splitting schemes for gradient flows driven by
//! general cost functions, together with the numerical machinery that probes
//! the associated evolution variational inequalities (EVI): discrete and
//! continuous residuals, contraction and energy identities, dyadic Cauchy and
//! error estimates, entropic transport divergences, and brute-force convexity
//! certificates for cost couplings.
//!
//! The crate is `no_std`-compatible (allocation required). Without the default
//! `std` feature, enable `libm` to supply the float math.

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("evi-core needs either the `std` feature (default) or the `libm` feature");

pub mod certify;
pub mod costs;
pub mod energy;
pub mod error;
pub mod evi;
pub(crate) mod math;
pub mod report;
pub mod scheme;
pub mod sinkhorn;
pub mod space;
pub mod transform;
pub mod value;

pub use error::{Error, Result};
pub use report::{CheckReport, Verdict, WorstLocation};
pub use value::Value;
