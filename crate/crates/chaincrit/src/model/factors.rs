//! Interactor populations and their per-interaction strength profiles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four ways an interactor can engage an item in transit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    /// Accepting an item into the chain at the top.
    Entry,
    /// Moving an item down-chain while shedding enthalpy.
    Forwarding,
    /// Final hand-off to a consumer.
    Delivery,
    /// Removal from the chain: seizure, attrition, abandonment.
    Loss,
}

impl InteractionKind {
    pub fn label(&self) -> &'static str {
        match self {
            InteractionKind::Entry => "entry",
            InteractionKind::Forwarding => "forwarding",
            InteractionKind::Delivery => "delivery",
            InteractionKind::Loss => "loss",
        }
    }
}

/// Enthalpy dependence of a per-interaction strength sigma(H).
///
/// `log_bins` is piecewise-constant on log-spaced bins over [h_lo, h_hi] and
/// zero outside that range; `power_law` is coeff * H^exponent on H > 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaProfile {
    Constant {
        value: f64,
    },
    PowerLaw {
        coeff: f64,
        exponent: f64,
    },
    LogBins {
        h_lo: f64,
        h_hi: f64,
        values: Vec<f64>,
    },
}

impl SigmaProfile {
    /// Strength at enthalpy `h`. Errors when `h` lies outside the profile's
    /// domain rather than extrapolating.
    pub fn value(&self, h: f64) -> Result<f64> {
        if !h.is_finite() || h < 0.0 {
            return Err(Error::Domain(format!(
                "sigma profile evaluated at invalid enthalpy {h}"
            )));
        }
        match self {
            SigmaProfile::Constant { value } => Ok(*value),
            SigmaProfile::PowerLaw { coeff, exponent } => {
                if h == 0.0 {
                    if *exponent > 0.0 {
                        Ok(0.0)
                    } else if *exponent == 0.0 {
                        Ok(*coeff)
                    } else {
                        Err(Error::Domain(
                            "power-law sigma with negative exponent diverges at H = 0".into(),
                        ))
                    }
                } else {
                    Ok(coeff * h.powf(*exponent))
                }
            }
            SigmaProfile::LogBins { h_lo, h_hi, values } => {
                if h < *h_lo || h > *h_hi {
                    return Ok(0.0);
                }
                if h == *h_hi {
                    return Ok(values[values.len() - 1]);
                }
                let span = h_hi.ln() - h_lo.ln();
                let pos = (h.ln() - h_lo.ln()) / span * values.len() as f64;
                let idx = (pos.floor() as usize).min(values.len() - 1);
                Ok(values[idx])
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SigmaProfile::Constant { value } => {
                if !value.is_finite() || *value < 0.0 {
                    return Err(Error::Schema(format!(
                        "constant sigma must be finite and non-negative, got {value}"
                    )));
                }
            }
            SigmaProfile::PowerLaw { coeff, exponent } => {
                if !coeff.is_finite() || *coeff < 0.0 {
                    return Err(Error::Schema(format!(
                        "power-law coefficient must be finite and non-negative, got {coeff}"
                    )));
                }
                if !exponent.is_finite() {
                    return Err(Error::Schema(format!(
                        "power-law exponent must be finite, got {exponent}"
                    )));
                }
            }
            SigmaProfile::LogBins { h_lo, h_hi, values } => {
                if !(h_lo.is_finite() && h_hi.is_finite() && *h_lo > 0.0 && h_hi > h_lo) {
                    return Err(Error::Schema(format!(
                        "log-bin range must satisfy 0 < h_lo < h_hi, got [{h_lo}, {h_hi}]"
                    )));
                }
                if values.is_empty() {
                    return Err(Error::Schema("log-bin profile needs at least one bin".into()));
                }
                for (i, v) in values.iter().enumerate() {
                    if !v.is_finite() || *v < 0.0 {
                        return Err(Error::Schema(format!(
                            "log-bin value {i} must be finite and non-negative, got {v}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Interior points where the profile is allowed to jump; integrators split
    /// intervals here so discontinuities never sit inside a panel.
    pub(crate) fn breakpoints(&self) -> Vec<f64> {
        match self {
            SigmaProfile::Constant { .. } | SigmaProfile::PowerLaw { .. } => Vec::new(),
            SigmaProfile::LogBins { h_lo, h_hi, values } => {
                let n = values.len();
                let ln_lo = h_lo.ln();
                let step = (h_hi.ln() - ln_lo) / n as f64;
                let mut pts = Vec::with_capacity(n + 1);
                for i in 0..=n {
                    pts.push((ln_lo + step * i as f64).exp());
                }
                pts
            }
        }
    }
}

/// A population of identical interactors: count N times strength sigma(H).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroFactor {
    /// Population size; fractional values express part-time participation.
    pub count: f64,
    pub sigma: SigmaProfile,
}

impl MacroFactor {
    /// Macroscopic value N * sigma(H).
    pub fn value(&self, h: f64) -> Result<f64> {
        Ok(self.count * self.sigma.value(h)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.count.is_finite() || self.count < 0.0 {
            return Err(Error::Schema(format!(
                "population count must be finite and non-negative, got {}",
                self.count
            )));
        }
        self.sigma.validate()
    }
}

/// What an interactor population does inside its stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Entry-stage actor that accepts items into the chain.
    Receptor,
    /// Forwarding-stage actor that moves items down in enthalpy.
    Mediator,
    /// Last-mile actor that delivers items to consumers.
    Courier,
    /// Pure removal: carries only loss interactions.
    Absorber,
}

impl Role {
    pub fn label(&self) -> &'static str {
        match self {
            Role::Receptor => "receptor",
            Role::Mediator => "mediator",
            Role::Courier => "courier",
            Role::Absorber => "absorber",
        }
    }

    /// The interaction the role exists to perform.
    fn required_kind(&self) -> Option<InteractionKind> {
        match self {
            Role::Receptor => Some(InteractionKind::Entry),
            Role::Mediator => Some(InteractionKind::Forwarding),
            Role::Courier => Some(InteractionKind::Delivery),
            Role::Absorber => Some(InteractionKind::Loss),
        }
    }

    /// Which interactions the role may carry at all.
    fn allowed_kinds(&self) -> &'static [InteractionKind] {
        match self {
            Role::Receptor => &[InteractionKind::Entry, InteractionKind::Loss],
            Role::Mediator => &[InteractionKind::Forwarding, InteractionKind::Loss],
            Role::Courier => &[InteractionKind::Delivery, InteractionKind::Loss],
            Role::Absorber => &[InteractionKind::Loss],
        }
    }
}

/// One named interactor population with its strength profiles per
/// interaction kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interactor {
    pub name: String,
    pub role: Role,
    /// Inertia bound on how much enthalpy one forwarding interaction can
    /// absorb. Required for mediators, meaningless otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    /// Price of adding one copy of this population in catalog optimization.
    #[serde(default)]
    pub cost: f64,
    pub factors: BTreeMap<InteractionKind, MacroFactor>,
}

impl Interactor {
    pub fn factor(&self, kind: InteractionKind) -> Option<&MacroFactor> {
        self.factors.get(&kind)
    }

    /// Macroscopic factor for `kind` at enthalpy `h`; zero when the
    /// interactor does not carry that interaction.
    pub fn factor_value(&self, kind: InteractionKind, h: f64) -> Result<f64> {
        match self.factors.get(&kind) {
            Some(f) => f.value(h),
            None => Ok(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Schema("interactor name must be non-empty".into()));
        }
        if !self.cost.is_finite() || self.cost < 0.0 {
            return Err(Error::Schema(format!(
                "interactor {} cost must be finite and non-negative, got {}",
                self.name, self.cost
            )));
        }
        let required = self.role.required_kind().expect("every role has a purpose");
        if !self.factors.contains_key(&required) {
            return Err(Error::Schema(format!(
                "{} {} is missing its {} factor",
                self.role.label(),
                self.name,
                required.label()
            )));
        }
        let allowed = self.role.allowed_kinds();
        for kind in self.factors.keys() {
            if !allowed.contains(kind) {
                return Err(Error::Schema(format!(
                    "{} {} may not carry a {} factor",
                    self.role.label(),
                    self.name,
                    kind.label()
                )));
            }
        }
        for factor in self.factors.values() {
            factor.validate()?;
        }
        match self.role {
            Role::Mediator => {
                let cap = self.capacity.ok_or_else(|| {
                    Error::Schema(format!("mediator {} needs a capacity", self.name))
                })?;
                if !cap.is_finite() || cap <= 0.0 {
                    return Err(Error::Schema(format!(
                        "mediator {} capacity must be positive and finite, got {cap}",
                        self.name
                    )));
                }
            }
            _ => {
                if self.capacity.is_some() {
                    return Err(Error::Schema(format!(
                        "{} {} must not declare a capacity",
                        self.role.label(),
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Union of all profile breakpoints for the given kinds, sorted and deduped;
/// used to pre-split integration intervals.
pub(crate) fn stage_breakpoints(interactors: &[Interactor], kinds: &[InteractionKind]) -> Vec<f64> {
    let mut pts: Vec<f64> = Vec::new();
    for it in interactors {
        for kind in kinds {
            if let Some(f) = it.factor(*kind) {
                pts.extend(f.sigma.breakpoints());
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn constant_factor(count: f64, value: f64) -> MacroFactor {
        MacroFactor {
            count,
            sigma: SigmaProfile::Constant { value },
        }
    }

    #[test]
    fn power_law_profile_follows_its_exponent() {
        let p = SigmaProfile::PowerLaw {
            coeff: 0.01,
            exponent: -1.0,
        };
        assert_relative_eq!(p.value(0.5).unwrap(), 0.02, max_relative = 1e-12);
        assert_relative_eq!(p.value(100.0).unwrap(), 1e-4, max_relative = 1e-12);
        assert!(matches!(p.value(0.0), Err(Error::Domain(_))));

        let rising = SigmaProfile::PowerLaw {
            coeff: 2.0,
            exponent: 0.5,
        };
        assert_eq!(rising.value(0.0).unwrap(), 0.0);
    }

    #[test]
    fn log_bins_select_by_log_position_and_vanish_outside() {
        let p = SigmaProfile::LogBins {
            h_lo: 1.0,
            h_hi: 100.0,
            values: vec![0.3, 0.7],
        };
        // bins: [1, 10) -> 0.3, [10, 100] -> 0.7
        assert_eq!(p.value(1.0).unwrap(), 0.3);
        assert_eq!(p.value(9.99).unwrap(), 0.3);
        assert_eq!(p.value(10.0).unwrap(), 0.7);
        assert_eq!(p.value(100.0).unwrap(), 0.7);
        assert_eq!(p.value(0.5).unwrap(), 0.0);
        assert_eq!(p.value(150.0).unwrap(), 0.0);

        let edges = p.breakpoints();
        assert_eq!(edges.len(), 3);
        assert_relative_eq!(edges[1], 10.0, max_relative = 1e-12);
    }

    #[test]
    fn profiles_reject_negative_or_nonfinite_parameters() {
        assert!(SigmaProfile::Constant { value: -0.1 }.validate().is_err());
        assert!(SigmaProfile::PowerLaw {
            coeff: f64::NAN,
            exponent: 1.0
        }
        .validate()
        .is_err());
        assert!(SigmaProfile::LogBins {
            h_lo: 2.0,
            h_hi: 1.0,
            values: vec![0.1]
        }
        .validate()
        .is_err());
        assert!(SigmaProfile::LogBins {
            h_lo: 1.0,
            h_hi: 2.0,
            values: vec![]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn role_factor_coherence_is_enforced() {
        let mut factors = BTreeMap::new();
        factors.insert(InteractionKind::Forwarding, constant_factor(1.0, 0.9));
        let mut it = Interactor {
            name: "wholesaler".into(),
            role: Role::Mediator,
            capacity: Some(5.0),
            cost: 0.0,
            factors,
        };
        assert!(it.validate().is_ok());

        it.factors
            .insert(InteractionKind::Entry, constant_factor(1.0, 0.1));
        assert!(matches!(it.validate(), Err(Error::Schema(_))));

        it.factors.remove(&InteractionKind::Entry);
        it.capacity = None;
        assert!(it.validate().is_err());

        let absorber = Interactor {
            name: "patrol".into(),
            role: Role::Absorber,
            capacity: None,
            cost: 0.0,
            factors: BTreeMap::from([(InteractionKind::Loss, constant_factor(1.0, 0.1))]),
        };
        assert!(absorber.validate().is_ok());
    }

    #[test]
    fn missing_interaction_reads_as_zero_strength() {
        let absorber = Interactor {
            name: "patrol".into(),
            role: Role::Absorber,
            capacity: None,
            cost: 0.0,
            factors: BTreeMap::from([(InteractionKind::Loss, constant_factor(2.0, 0.25))]),
        };
        assert_eq!(
            absorber
                .factor_value(InteractionKind::Forwarding, 1.0)
                .unwrap(),
            0.0
        );
        assert_relative_eq!(
            absorber.factor_value(InteractionKind::Loss, 1.0).unwrap(),
            0.5
        );
    }

    #[test]
    fn sigma_profile_json_round_trip_is_tagged_by_kind() {
        let p = SigmaProfile::PowerLaw {
            coeff: 0.01,
            exponent: -1.0,
        };
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"kind\":\"power_law\""));
        let back: SigmaProfile = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);

        let err = serde_json::from_str::<SigmaProfile>(
            "{\"kind\":\"constant\",\"value\":1.0,\"extra\":2}",
        );
        assert!(err.is_err());
    }
}
