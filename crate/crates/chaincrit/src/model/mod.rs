//! Core quantities: enthalpy, lethargy, macroscopic factors, interactors,
//! chain documents, and the criticality factorization.

mod chain;
mod factors;

pub use chain::{ChainReport, ChainSpec, StageKind, StageSpec, Warning};
pub use factors::{InteractionKind, Interactor, MacroFactor, Role, SigmaProfile};

pub(crate) use factors::stage_breakpoints;

use crate::error::{Error, Result};

/// Multiplicative difficulty of moving one item through a market, stored in
/// log form so that products of many large attributes stay representable.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Enthalpy {
    ln_h: f64,
}

impl Enthalpy {
    /// Wraps a positive finite enthalpy value.
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::InvalidAttribute(format!(
                "enthalpy must be positive and finite, got {value}"
            )));
        }
        Ok(Self { ln_h: value.ln() })
    }

    /// Builds directly from a natural log value; `ln_h` may exceed the range
    /// where `exp` stays finite.
    pub fn from_ln(ln_h: f64) -> Result<Self> {
        if !ln_h.is_finite() {
            return Err(Error::InvalidAttribute(format!(
                "log-enthalpy must be finite, got {ln_h}"
            )));
        }
        Ok(Self { ln_h })
    }

    /// Linear-scale value. Overflows to infinity for ln H beyond ~709.
    pub fn value(&self) -> f64 {
        self.ln_h.exp()
    }

    pub fn ln(&self) -> f64 {
        self.ln_h
    }
}

impl std::fmt::Display for Enthalpy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// Product of per-hop difficulty attributes, computed in log space.
/// Every attribute must be positive and finite; an empty list is rejected.
pub fn enthalpy_from_attributes(attributes: &[f64]) -> Result<Enthalpy> {
    if attributes.is_empty() {
        return Err(Error::InvalidAttribute(
            "enthalpy needs at least one attribute".into(),
        ));
    }
    let mut ln_h = 0.0;
    for (i, &a) in attributes.iter().enumerate() {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidAttribute(format!(
                "attribute {i} must be positive and finite, got {a}"
            )));
        }
        ln_h += a.ln();
    }
    Enthalpy::from_ln(ln_h)
}

/// Supply lethargy u = ln(H_max / H). Zero at the chain top, increasing as
/// items are worked down toward delivery. Requires H <= H_max.
pub fn lethargy(h: Enthalpy, h_max: Enthalpy) -> Result<f64> {
    let u = h_max.ln() - h.ln();
    if u < 0.0 {
        return Err(Error::Domain(format!(
            "enthalpy {} exceeds chain maximum {}",
            h.value(),
            h_max.value()
        )));
    }
    Ok(u)
}

/// Inverse of `lethargy`: the enthalpy sitting at lethargy `u` below `h_max`.
pub fn enthalpy_at(u: f64, h_max: Enthalpy) -> Result<Enthalpy> {
    if !u.is_finite() || u < 0.0 {
        return Err(Error::Domain(format!(
            "lethargy must be finite and non-negative, got {u}"
        )));
    }
    Enthalpy::from_ln(h_max.ln() - u)
}

/// Macroscopic factor value N * sigma(H) for one interactor population.
pub fn macro_factor_value(factor: &MacroFactor, h: Enthalpy) -> Result<f64> {
    factor.value(h.value())
}

/// Interaction rate per unit time: flow (items per unit time) times the
/// macroscopic factor at H.
pub fn interaction_rate(factor: &MacroFactor, flow: f64, h: Enthalpy) -> Result<f64> {
    if !(flow >= 0.0) || !flow.is_finite() {
        return Err(Error::InvalidAttribute(format!(
            "flow must be non-negative and finite, got {flow}"
        )));
    }
    Ok(flow * factor.value(h.value())?)
}

/// Default half-width of the band around 1.0 treated as "critical".
pub const DEFAULT_CRITICALITY_TOLERANCE: f64 = 1e-9;

/// Effective multiplication k_eff = k / (P_e * p * P_c) and whether it sits
/// within the default tolerance of 1.0.
///
/// Each escape probability must lie in (0, 1]; a zero makes the chain
/// singular rather than merely subcritical.
pub fn criticality(p_e: f64, p: f64, p_c: f64, k: f64) -> Result<(f64, bool)> {
    criticality_with_tolerance(p_e, p, p_c, k, DEFAULT_CRITICALITY_TOLERANCE)
}

/// `criticality` with an explicit half-width for the critical band.
pub fn criticality_with_tolerance(
    p_e: f64,
    p: f64,
    p_c: f64,
    k: f64,
    tolerance: f64,
) -> Result<(f64, bool)> {
    for (name, v) in [("entry escape", p_e), ("forwarding escape", p), ("last-mile escape", p_c)] {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!(
                "{name} probability must lie in [0, 1], got {v}"
            )));
        }
        if v == 0.0 {
            return Err(Error::SingularChain(format!(
                "{name} probability is zero; criticality is undefined"
            )));
        }
    }
    if !k.is_finite() || k < 0.0 {
        return Err(Error::Domain(format!(
            "multiplication factor must be finite and non-negative, got {k}"
        )));
    }
    if !(tolerance >= 0.0) || !tolerance.is_finite() {
        return Err(Error::Domain(format!(
            "criticality tolerance must be finite and non-negative, got {tolerance}"
        )));
    }
    let k_eff = k / (p_e * p * p_c);
    Ok((k_eff, (k_eff - 1.0).abs() <= tolerance))
}
