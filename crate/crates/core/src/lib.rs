//! # visco2d
//!
//! Pseudospectral solver for two-dimensional flows of viscoelastic rate-type
//! fluids with stress diffusion on the periodic unit torus.
//!
//! The unknowns are a zero-mean divergence-free velocity `v` and a symmetric
//! positive definite conformation tensor `B`:
//!
//! ```text
//! ∂t v + (v·∇)v + ∇p = Δv + 2a div S(B) + f,            div v = 0
//! ∂t B + (v·∇)B − a(DB + BD) − (WB − BW) + R(B) = ΔB
//! S(B) = (1−β)(B−I) + β(B²−B),   R(B) = δ₁(B−I) + δ₂(B²−B)
//! ```
//!
//! Besides the time stepper the crate carries the diagnostics that close the
//! energy balance (free energy ψ, dissipation ξ), the eigenvalue positivity
//! monitor, the twin-run stability functional, an ε-regularized Galerkin
//! variant of the right-hand side, and a verification harness.
//!
//! Data-parallel kernels run on rayon when the `parallel` feature is enabled
//! (the default) and sequentially otherwise; both builds produce bit-identical
//! results.

// `!(x > 0.0)` style checks are kept because they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod constitutive;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod harness;
pub mod init;
pub mod io;
pub mod par;
pub mod spectral;
pub mod timeloop;

pub use config::{ModelParams, Preset, RunConfig, ValidatedConfig};
pub use diagnostics::DiagnosticsRecord;
pub use dynamics::{Dynamics, Forcing, NoForcing, Tendency};
pub use error::{ConfigError, Error, Result};
pub use fields::{State, SymTensorField, VectorField};
pub use spectral::{Field, SpectralGrid, Spectrum};
pub use timeloop::{Scheme, Stepper, StepperOptions};
