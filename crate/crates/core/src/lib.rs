//! Spectral toolkit for the periodic derivative nonlinear Schrödinger equation:
//! Fourier-truncated states, the gauge transform, conserved functionals,
//! truncated flows, Gibbs-type ensembles and the numerical experiments built
//! on them.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod functionals;
pub mod gauge;
pub mod measure;
pub mod spectral;

pub use error::{Error, Result};
pub use spectral::{SpectralState, C64};
