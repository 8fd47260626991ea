//! Criticality analysis for illicit supply chains modeled as moderated
//! transport cascades.
//!
//! A chain is described in three stages. Items enter at a top enthalpy
//! through receptors, are worked down through a forwarding stage of
//! mediators that shed enthalpy in uniform contraction steps, and leave
//! through a last-mile stage whose equilibrium spectrum sets delivery odds.
//! Each stage leaks flow to loss interactions; the product of the three
//! escape probabilities against the chain's multiplication factor decides
//! whether the market sustains itself.
//!
//! The crate provides the deterministic analysis (escape integrals, stepwise
//! profiles, spatial diffusion of the retail region), a Monte Carlo
//! simulator that replays the same physics per item, and search strategies
//! that pick mediator line-ups under a budget.

pub mod diffusion;
pub mod error;
pub mod model;
pub mod moderation;
pub mod montecarlo;
pub mod optimize;
pub mod spectra;
pub mod transport;

mod quad;

pub use error::{Error, ErrorKind, Result};
