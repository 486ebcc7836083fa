//! Real-principal-type operators on the circle.
//!
//! The crate works with operators on `L^2(T)` whose principal symbol splits as
//! `p(x, xi) = a_+(x) |xi|^m` for `xi > 0` and `a_-(x) |xi|^m` for `xi < 0`.
//! It provides:
//!
//! * [`symbols`]: trigonometric polynomials, zero sets, characteristic orders
//!   and the order/ellipticity rule for essential self-adjointness;
//! * [`hamflow`]: adaptive integration of the Hamilton flow, finite-time
//!   blow-up detection and the completeness probe at fiber infinity;
//! * [`microlocal`]: escape functions and grid checks of the escape and
//!   commutator symbol inequalities;
//! * [`wkb`]: the transport hierarchy at a radial source and the synthesized
//!   one-sided quasimode;
//! * [`spectral`]: Fourier-basis matrices, recurrence shooting for `L^2`
//!   solutions of `(P - z) u = 0`, and truncation spectra.

pub mod error;
pub mod fit;
pub mod hamflow;
pub mod microlocal;
pub mod spectral;
pub mod symbols;
pub mod wkb;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
