//! Learning Green's functions of linear PDEs with reproducing kernels.
//!
//! The solution operator of a linear boundary value problem is modelled as the
//! affine map `u(y) = beta(y) + int G(x, y) f(x) dx`. The Green's function `G`
//! and bias `beta` are parametrized through reproducing kernels and weight fields
//! on tensor grids, trained by penalized least squares, and can be evaluated on
//! grids other than the training grid.
//!
//! The crate is `no_std` with `alloc` when the default `std` feature is off;
//! `std` only adds parallel Gram assembly and wall-clock timing.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod estimator;
pub mod grid;
pub mod kernels;
pub mod pde;
pub mod spectral;
pub mod stochastic;
mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use estimator::{GreensModel, NullBasis};
pub use grid::{Axis, Grid, Interval};
pub use kernels::{
    causal_mask, convolutional, eval_kernel, gram_cross, symmetrize, Direction, KernelOperator, KernelSpec,
    ProductFactor,
};
pub use stochastic::{FunctionSample, RngState};
