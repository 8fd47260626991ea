//! Chain documents: the three-stage market description, validation, and the
//! analysis report emitted for one chain.

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::model::factors::{Interactor, Role};

/// Only schema version accepted by this crate.
pub const SUPPORTED_SPEC_VERSION: u32 = 1;

/// Non-fatal validation finding. The chain is usable but the modeling
/// assumptions deserve a second look.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warning {
    pub message: String,
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// The three stages an item crosses between production and consumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Entry,
    Forwarding,
    LastMile,
}

impl StageKind {
    pub fn label(&self) -> &'static str {
        match self {
            StageKind::Entry => "entry",
            StageKind::Forwarding => "forwarding",
            StageKind::LastMile => "last-mile",
        }
    }
}

/// Borrowed view of one stage together with the enthalpy window it spans.
#[derive(Debug, Clone, Copy)]
pub struct StageSpec<'a> {
    pub kind: StageKind,
    pub interactors: &'a [Interactor],
    /// (low, high) enthalpy bounds of the stage window. Entry interactions
    /// are evaluated at the top of the window.
    pub window: (f64, f64),
}

/// Complete description of one supply chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub spec_version: u32,
    /// Inertia of one item in transit; sets the scatter kernel together with
    /// each mediator's capacity.
    pub item_inertia: f64,
    /// Items entering the chain per unit time.
    pub total_flow: f64,
    /// Enthalpy at which items enter the chain.
    pub h_max: f64,
    /// Enthalpy below which items leave forwarding for the last mile.
    pub h_c: f64,
    /// Market temperature of the last-mile equilibrium spectrum.
    pub lastmile_temperature: f64,
    /// Market temperature of the first-mile spectrum; defaults to the
    /// last-mile temperature when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub firstmile_temperature: Option<f64>,
    pub entry: Vec<Interactor>,
    pub forwarding: Vec<Interactor>,
    pub lastmile: Vec<Interactor>,
    /// Optional spatial model of the retail region.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionSpec>,
}

impl ChainSpec {
    /// Parses a JSON document, mapping parse failures to schema errors.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("chain document: {e}")))
    }

    /// Canonical pretty-printed form with a trailing newline. Two chains with
    /// equal content serialize to identical bytes.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("chain document serializes");
        s.push('\n');
        s
    }

    /// Structural and numeric validation. Returns advisory warnings on
    /// success; hard violations come back as errors.
    pub fn validate(&self) -> Result<Vec<Warning>> {
        if self.spec_version != SUPPORTED_SPEC_VERSION {
            return Err(Error::Schema(format!(
                "unsupported spec_version {}, expected {SUPPORTED_SPEC_VERSION}",
                self.spec_version
            )));
        }
        for (name, v) in [
            ("item_inertia", self.item_inertia),
            ("total_flow", self.total_flow),
            ("h_max", self.h_max),
            ("h_c", self.h_c),
            ("lastmile_temperature", self.lastmile_temperature),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Schema(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if let Some(t) = self.firstmile_temperature {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::Schema(format!(
                    "firstmile_temperature must be positive and finite, got {t}"
                )));
            }
        }
        if self.h_c > self.h_max {
            return Err(Error::Schema(format!(
                "h_c ({}) must not exceed h_max ({})",
                self.h_c, self.h_max
            )));
        }

        let mut warnings = Vec::new();
        if self.h_c == self.h_max {
            warnings.push(Warning {
                message: "h_c equals h_max: the forwarding window is empty and every accepted \
                          item goes straight to the last mile"
                    .into(),
            });
        }

        self.validate_stage(StageKind::Entry, &self.entry, Role::Receptor, "receptor")?;
        self.validate_stage(
            StageKind::Forwarding,
            &self.forwarding,
            Role::Mediator,
            "mediator",
        )?;
        self.validate_stage(StageKind::LastMile, &self.lastmile, Role::Courier, "courier")?;

        for it in self.mediators() {
            let cap = it.capacity.expect("validated mediators carry a capacity");
            if cap <= self.item_inertia {
                return Err(Error::InertiaOrder {
                    capacity: cap,
                    item_inertia: self.item_inertia,
                });
            }
            if cap <= crate::moderation::DEFAULT_ISOTROPY_FACTOR * self.item_inertia {
                warnings.push(Warning {
                    message: format!(
                        "mediator {} capacity {cap} is within {}x of the item inertia {}; \
                         the isotropic scatter kernel is dubious this close to the item scale",
                        it.name,
                        crate::moderation::DEFAULT_ISOTROPY_FACTOR,
                        self.item_inertia
                    ),
                });
            }
        }

        if let Some(d) = &self.diffusion {
            warnings.extend(d.validate()?);
        }
        Ok(warnings)
    }

    fn validate_stage(
        &self,
        kind: StageKind,
        interactors: &[Interactor],
        lead_role: Role,
        lead_label: &str,
    ) -> Result<()> {
        for it in interactors {
            it.validate()?;
            if it.role != lead_role && it.role != Role::Absorber {
                return Err(Error::Schema(format!(
                    "{} stage admits only {lead_label}s and absorbers, found {} {}",
                    kind.label(),
                    it.role.label(),
                    it.name
                )));
            }
        }
        if !interactors.iter().any(|it| it.role == lead_role) {
            return Err(Error::EmptyStage(format!(
                "{} stage has no {lead_label}",
                kind.label()
            )));
        }
        Ok(())
    }

    /// Stage view with its enthalpy window.
    pub fn stage(&self, kind: StageKind) -> StageSpec<'_> {
        match kind {
            StageKind::Entry => StageSpec {
                kind,
                interactors: &self.entry,
                window: (0.0, self.h_max),
            },
            StageKind::Forwarding => StageSpec {
                kind,
                interactors: &self.forwarding,
                window: (self.h_c, self.h_max),
            },
            StageKind::LastMile => StageSpec {
                kind,
                interactors: &self.lastmile,
                window: (0.0, self.h_c),
            },
        }
    }

    /// Lethargy depth of the forwarding window, ln(h_max / h_c).
    pub fn u_max(&self) -> f64 {
        (self.h_max / self.h_c).ln()
    }

    pub fn firstmile_temperature(&self) -> f64 {
        self.firstmile_temperature
            .unwrap_or(self.lastmile_temperature)
    }

    pub fn mediators(&self) -> impl Iterator<Item = &Interactor> {
        self.forwarding.iter().filter(|it| it.role == Role::Mediator)
    }

    pub fn couriers(&self) -> impl Iterator<Item = &Interactor> {
        self.lastmile.iter().filter(|it| it.role == Role::Courier)
    }
}

mod maybe_infinite {
    //! Mediation ability serializes as a JSON number when finite and as the
    //! string "infinite" for a lossless forwarding stage.

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            ser.serialize_str("infinite")
        } else {
            ser.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Number(v) => Ok(v),
            Raw::Text(s) if s == "infinite" => Ok(f64::INFINITY),
            Raw::Text(s) => Err(D::Error::custom(format!(
                "expected a number or \"infinite\", got \"{s}\""
            ))),
        }
    }
}

/// Deterministic analysis results for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainReport {
    /// Entry escape probability.
    pub p_e: f64,
    /// Forwarding escape probability down to h_c.
    pub p: f64,
    /// Last-mile escape probability.
    pub p_c: f64,
    /// Underlying multiplication factor.
    pub k: f64,
    /// Effective multiplication k / (p_e * p * p_c).
    pub k_eff: f64,
    pub is_critical: bool,
    /// Flow-weighted moderation power of the forwarding stage at h_max.
    pub xi_mix: f64,
    /// Mediation ability of the forwarding stage at h_max; "infinite" when
    /// the stage carries no loss.
    #[serde(with = "maybe_infinite")]
    pub ma: f64,
    /// Temperature multiplier applied to the last-mile spectrum.
    pub theta: f64,
    /// Diffusion length of the retail region, when a diffusion model exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_length: Option<f64>,
    /// Feasible retail radius, when a diffusion model exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility_radius: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::factors::{InteractionKind, MacroFactor, SigmaProfile};
    use std::collections::BTreeMap;

    fn interactor(name: &str, role: Role, kinds: &[(InteractionKind, f64, f64)]) -> Interactor {
        let mut factors = BTreeMap::new();
        for (kind, count, value) in kinds {
            factors.insert(
                *kind,
                MacroFactor {
                    count: *count,
                    sigma: SigmaProfile::Constant { value: *value },
                },
            );
        }
        Interactor {
            name: name.into(),
            role,
            capacity: if role == Role::Mediator { Some(5.0) } else { None },
            cost: 0.0,
            factors,
        }
    }

    fn minimal_chain() -> ChainSpec {
        ChainSpec {
            spec_version: 1,
            item_inertia: 1.0,
            total_flow: 1000.0,
            h_max: 100.0,
            h_c: 1.0,
            lastmile_temperature: 0.25,
            firstmile_temperature: None,
            entry: vec![interactor(
                "port",
                Role::Receptor,
                &[(InteractionKind::Entry, 1.0, 2.0)],
            )],
            forwarding: vec![interactor(
                "wholesaler",
                Role::Mediator,
                &[(InteractionKind::Forwarding, 1.0, 0.9)],
            )],
            lastmile: vec![interactor(
                "courier",
                Role::Courier,
                &[(InteractionKind::Delivery, 1.0, 3.0)],
            )],
            diffusion: None,
        }
    }

    #[test]
    fn minimal_chain_validates_cleanly() {
        let warnings = minimal_chain().validate().unwrap();
        assert!(warnings.is_empty(), "unexpected warnings: {warnings:?}");
    }

    #[test]
    fn version_gate_is_exact() {
        let mut chain = minimal_chain();
        chain.spec_version = 2;
        assert!(matches!(chain.validate(), Err(Error::Schema(_))));
    }

    #[test]
    fn stage_windows_partition_the_enthalpy_range() {
        let chain = minimal_chain();
        assert_eq!(chain.stage(StageKind::Entry).window, (0.0, 100.0));
        assert_eq!(chain.stage(StageKind::Forwarding).window, (1.0, 100.0));
        assert_eq!(chain.stage(StageKind::LastMile).window, (0.0, 1.0));
        approx::assert_relative_eq!(chain.u_max(), 100.0f64.ln());
    }

    #[test]
    fn stages_require_their_lead_role() {
        let mut chain = minimal_chain();
        chain.forwarding = vec![interactor(
            "patrol",
            Role::Absorber,
            &[(InteractionKind::Loss, 1.0, 0.1)],
        )];
        assert!(matches!(chain.validate(), Err(Error::EmptyStage(_))));

        let mut chain = minimal_chain();
        chain.entry.push(interactor(
            "stray",
            Role::Courier,
            &[(InteractionKind::Delivery, 1.0, 1.0)],
        ));
        assert!(matches!(chain.validate(), Err(Error::Schema(_))));
    }

    #[test]
    fn mediator_capacity_must_exceed_item_inertia() {
        let mut chain = minimal_chain();
        chain.item_inertia = 5.0;
        assert!(matches!(chain.validate(), Err(Error::InertiaOrder { .. })));
    }

    #[test]
    fn near_item_scale_capacity_warns_but_passes() {
        let mut chain = minimal_chain();
        chain.forwarding[0].capacity = Some(3.0);
        let warnings = chain.validate().unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].message.contains("isotropic"));
    }

    #[test]
    fn degenerate_window_is_allowed_with_warning() {
        let mut chain = minimal_chain();
        chain.h_c = chain.h_max;
        let warnings = chain.validate().unwrap();
        assert!(warnings.iter().any(|w| w.message.contains("h_c")));
        assert_eq!(chain.u_max(), 0.0);
    }

    #[test]
    fn inverted_window_is_rejected() {
        let mut chain = minimal_chain();
        chain.h_c = 200.0;
        assert!(matches!(chain.validate(), Err(Error::Schema(_))));
    }

    #[test]
    fn canonical_json_round_trips_bit_exactly() {
        let chain = minimal_chain();
        let text = chain.to_canonical_json();
        let back = ChainSpec::from_json(&text).unwrap();
        assert_eq!(chain, back);
        assert_eq!(text, back.to_canonical_json());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut doc: serde_json::Value =
            serde_json::from_str(&minimal_chain().to_canonical_json()).unwrap();
        doc.as_object_mut()
            .unwrap()
            .insert("surprise".into(), serde_json::json!(1));
        let err = ChainSpec::from_json(&doc.to_string()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn firstmile_temperature_defaults_to_lastmile() {
        let mut chain = minimal_chain();
        assert_eq!(chain.firstmile_temperature(), 0.25);
        chain.firstmile_temperature = Some(2.0);
        assert_eq!(chain.firstmile_temperature(), 2.0);
    }

    #[test]
    fn report_serializes_infinite_mediation_ability_as_string() {
        let report = ChainReport {
            p_e: 0.8,
            p: 0.5,
            p_c: 0.75,
            k: 0.3,
            k_eff: 1.0,
            is_critical: true,
            xi_mix: 0.35,
            ma: f64::INFINITY,
            theta: 1.5,
            diffusion_length: None,
            feasibility_radius: None,
        };
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"ma\":\"infinite\""));
        let back: ChainReport = serde_json::from_str(&json).unwrap();
        assert!(back.ma.is_infinite());

        let finite = ChainReport { ma: 3.25, ..report };
        let json = serde_json::to_string(&finite).unwrap();
        assert!(json.contains("\"ma\":3.25"));
    }
}
