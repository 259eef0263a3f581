//! Semiclassical heat-kernel machinery for the Witten-deformed Hodge Laplacian.
//!
//! The crate is organised bottom-up:
//!
//! * [`exterior_algebra`] — creation/annihilation operators, `E±`, supertrace and
//!   operator exponentials on `Λ*(ℝⁿ)`.
//! * [`matrix_functions`] — even spectral functions of symmetric PSD matrices.
//! * [`mehler_kernel`] — matrix Mehler kernels `Φ`, `Φ₀`, the pointwise operator
//!   `φ₀`, the cut-off parametrix `H` and its defect `K₀`.
//! * [`witten_laplacian`] — model manifolds, the discrete deformed complex,
//!   exact heat kernels, zeros/indices and the semiclassical supertrace.
//! * [`levi_iteration`] — the Volterra (Levi) series turning `H` into the exact
//!   fundamental solution on flat tori.
//! * [`geodesic_trig`] — geodesic flows, Jacobi propagators and SAS triangle
//!   solving on 2-D surfaces.
//! * [`cli`] — configuration, experiment drivers and report serialisation.

// `!(x < y)` is used deliberately so that NaN fails the comparison.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the component formulas they implement.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod exterior_algebra;
pub mod geodesic_trig;
pub mod levi_iteration;
pub mod matrix_functions;
pub mod mehler_kernel;
pub mod quadrature;
pub mod rng;
pub mod witten_laplacian;

pub use error::{Error, Result};
