//! Kronecker-structured Tikhonov regularization for image deblurring, with
//! a Kronecker SVD preconditioner evaluated in emulated low precision.
//!
//! The crate is organized bottom-up:
//!
//! - [`precision`]: rounding doubles to narrower floating-point formats.
//! - [`lpblas`]: dot products and matrix products with per-stage rounding.
//! - [`kron`]: Kronecker products and sums acting on column-major `vec`s.
//! - [`deblur`]: PSFs, blur operators and reproducible test problems.
//! - [`factor`]: nearest Kronecker product and the preconditioner.
//! - [`regparam`]: choosing `λ` from the approximate spectrum.
//! - [`krylov`]: CGLS, PCG and flexible PCG.

pub mod deblur;
pub mod factor;
pub mod kron;
pub mod krylov;
pub mod lpblas;
pub mod precision;
pub mod regparam;
pub mod schema;
