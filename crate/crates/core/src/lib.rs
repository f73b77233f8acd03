//! Symmetric logarithmic derivatives, quantum Fisher information and
//! Cramér–Rao bounds for multiphase estimation on pure states mixed with
//! white noise.
//!
//! The crate cross-checks closed-form results for the white-noise family
//! `ρ = η|Ψ(φ)⟩⟨Ψ(φ)| + (1 − η)/d · I` against generic numerical routes:
//! an eigenbasis SLD solver, the spectral pair-sum QFIM, a nested-commutator
//! series for the exponential form, and finite differences of the Uhlmann
//! fidelity.

pub mod cli;
pub mod crb;
pub mod error;
pub mod linalg;
#[cfg(test)]
mod properties;
pub mod qfim;
pub mod sampling;
pub mod sld;
pub mod states;

pub use error::{Error, Result};
