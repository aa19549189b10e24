//! Numerical toolkit for quantum Landau damping near translation-invariant steady states.

pub mod diagnostics;
pub mod error;
pub mod interp;
pub mod kernels;
pub mod linear;
pub mod nonlinear;
pub mod penrose;
pub mod quad;

pub use error::{Error, Result};
pub use kernels::{InteractionKernel, KernelSpec, ProfileSpec, VelocityProfile};
