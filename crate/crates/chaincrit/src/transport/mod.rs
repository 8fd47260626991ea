//! Escape probabilities for the three chain stages and the full criticality
//! analysis: entry branching, the forwarding survival integral with its
//! stepwise profile, and the spectrum-weighted last mile.

pub mod lastmile;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{criticality, ChainReport, ChainSpec, InteractionKind, Interactor, Role};
use crate::moderation::{mediation_ability, xi_mixture, xi_of_mediator};
use crate::quad;
use crate::spectra::{temperature_multiplier, MBSpectrum};

pub use lastmile::{LastMileContext, LastMileEstimator, DEFAULT_MODE, LASTMILE_REL_TOL};

/// Quadrature tolerance for the forwarding survival integral.
pub const TRANSPORT_REL_TOL: f64 = 1e-8;

/// One sampled point of an escape profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    /// Enthalpy of the sample, log-spaced from h_max down to h_c.
    pub h: f64,
    /// Lethargy ln(h_max / h) of the sample.
    pub lethargy: f64,
    /// Survival probability from h_max down to this enthalpy.
    pub p: f64,
    /// Fraction lost since the previous sample, 1 - p_i / p_{i-1}.
    pub step_loss_share: f64,
}

/// Stepwise forwarding survival, ordered from h_max down to h_c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeProfile {
    pub points: Vec<ProfilePoint>,
}

fn sum_sigma(interactors: &[Interactor], kind: InteractionKind, h: f64) -> Result<f64> {
    let mut total = 0.0;
    for it in interactors {
        total += it.factor_value(kind, h)?;
    }
    Ok(total)
}

/// Entry escape: accepted flow over all entry interactions, evaluated at the
/// single entry enthalpy `h_max`. The flow factor cancels exactly.
pub fn entry_escape(
    receptors: &[Interactor],
    absorbers: &[Interactor],
    h_max: f64,
) -> Result<f64> {
    let sigma_e = sum_sigma(receptors, InteractionKind::Entry, h_max)?;
    let sigma_l = sum_sigma(receptors, InteractionKind::Loss, h_max)?
        + sum_sigma(absorbers, InteractionKind::Loss, h_max)?;
    let total = sigma_e + sigma_l;
    if total <= 0.0 {
        return Err(Error::EmptyStage(
            "entry stage has no interaction strength at h_max".into(),
        ));
    }
    Ok(sigma_e / total)
}

/// Forwarding stage with each mediator's enthalpy-independent xi computed
/// once up front.
struct ForwardingView<'a> {
    stage: &'a [Interactor],
    mediators: Vec<(&'a Interactor, f64)>,
}

impl<'a> ForwardingView<'a> {
    fn new(chain: &'a ChainSpec) -> Result<Self> {
        let mut mediators = Vec::new();
        for med in chain.mediators() {
            mediators.push((med, xi_of_mediator(med, chain.item_inertia)?));
        }
        Ok(Self {
            stage: &chain.forwarding,
            mediators,
        })
    }

    /// Loss density per unit lethargy at enthalpy `h`:
    /// Sigma_l / (xi_mix * (Sigma_f + Sigma_l)).
    fn loss_density(&self, h: f64) -> Result<f64> {
        let sigma_f = sum_sigma(self.stage, InteractionKind::Forwarding, h)?;
        let sigma_l = sum_sigma(self.stage, InteractionKind::Loss, h)?;
        if sigma_f + sigma_l <= 0.0 {
            return Err(Error::DegenerateForwarding(format!(
                "no forwarding or loss strength at enthalpy {h}"
            )));
        }
        if sigma_l == 0.0 {
            return Ok(0.0);
        }
        let mut weight = 0.0;
        let mut weighted_xi = 0.0;
        for (med, xi) in &self.mediators {
            let s = med.factor_value(InteractionKind::Forwarding, h)?;
            weight += s;
            weighted_xi += s * xi;
        }
        if weight <= 0.0 {
            return Err(Error::NoForwarding(format!(
                "loss without any forwarding strength at enthalpy {h}"
            )));
        }
        let xi_mix = weighted_xi / weight;
        Ok(sigma_l / (xi_mix * (sigma_f + sigma_l)))
    }

    /// Integral of the loss density in lethargy between two enthalpies,
    /// h_lo <= h_hi; survival over the slice is exp(-integral).
    fn loss_exponent(&self, chain: &ChainSpec, h_lo: f64, h_hi: f64) -> Result<f64> {
        if h_lo >= h_hi {
            return Ok(0.0);
        }
        // integrate in lethargy u = ln(h_max / h)
        let u_lo = (chain.h_max / h_hi).ln();
        let u_hi = (chain.h_max / h_lo).ln();
        let breaks: Vec<f64> = crate::model::stage_breakpoints(
            &chain.forwarding,
            &[InteractionKind::Forwarding, InteractionKind::Loss],
        )
        .into_iter()
        .filter(|h| *h > h_lo && *h < h_hi)
        .map(|h| (chain.h_max / h).ln())
        .collect();
        quad::integrate_split(
            |u| self.loss_density(chain.h_max * (-u).exp()),
            u_lo,
            u_hi,
            &breaks,
            TRANSPORT_REL_TOL,
        )
    }
}

/// Survival probability of forwarding from h_max down to `h`.
pub fn forwarding_escape_to(chain: &ChainSpec, h: f64) -> Result<f64> {
    if !h.is_finite() || h < chain.h_c || h > chain.h_max {
        return Err(Error::Domain(format!(
            "forwarding escape target {h} outside window [{}, {}]",
            chain.h_c, chain.h_max
        )));
    }
    let view = ForwardingView::new(chain)?;
    Ok((-view.loss_exponent(chain, h, chain.h_max)?).exp())
}

/// Survival over the whole forwarding window, down to h_c.
pub fn forwarding_escape(chain: &ChainSpec) -> Result<f64> {
    forwarding_escape_to(chain, chain.h_c)
}

/// Survival profile on `n_steps` log-spaced enthalpies from h_max to h_c,
/// integrated slice by slice so that ln p accumulates exactly.
pub fn escape_profile(chain: &ChainSpec, n_steps: usize) -> Result<EscapeProfile> {
    if n_steps < 2 {
        return Err(Error::Domain(format!(
            "escape profile needs at least 2 steps, got {n_steps}"
        )));
    }
    let view = ForwardingView::new(chain)?;
    let ratio = chain.h_c / chain.h_max;
    let mut points = Vec::with_capacity(n_steps);
    let mut ln_p = 0.0;
    let mut prev_h = chain.h_max;
    let mut prev_p = 1.0;
    for i in 0..n_steps {
        let frac = i as f64 / (n_steps - 1) as f64;
        let h = chain.h_max * ratio.powf(frac);
        let (p, share) = if i == 0 {
            (1.0, 0.0)
        } else {
            ln_p -= view.loss_exponent(chain, h, prev_h)?;
            let p = ln_p.exp();
            (p, 1.0 - p / prev_p)
        };
        points.push(ProfilePoint {
            h,
            lethargy: (chain.h_max / h).ln(),
            p,
            step_loss_share: share,
        });
        prev_h = h;
        prev_p = p;
    }
    Ok(EscapeProfile { points })
}

/// Builds the temperature-adjusted spectrum the last-mile stage sees and
/// returns the multiplier alongside.
pub(crate) fn lastmile_context(chain: &ChainSpec) -> Result<(LastMileContext<'_>, f64)> {
    let t = chain.lastmile_temperature;
    let sigma_d_at_t = sum_sigma(&chain.lastmile, InteractionKind::Delivery, t)?;
    let sigma_l_at_t = sum_sigma(&chain.lastmile, InteractionKind::Loss, t)?;
    let xi_at_hc = xi_mixture(chain.mediators(), chain.h_c, chain.item_inertia)?;
    let sigma_f_at_hc = sum_sigma(&chain.forwarding, InteractionKind::Forwarding, chain.h_c)?;
    let theta = temperature_multiplier(sigma_d_at_t, sigma_l_at_t, xi_at_hc, sigma_f_at_hc)?;
    let spectrum = MBSpectrum::new(theta * t, chain.total_flow)?;
    Ok((
        LastMileContext {
            interactors: &chain.lastmile,
            h_c: chain.h_c,
            spectrum,
        },
        theta,
    ))
}

/// Last-mile escape with the default rate-ratio estimator.
pub fn lastmile_escape(chain: &ChainSpec) -> Result<f64> {
    lastmile_escape_mode(chain, DEFAULT_MODE)
}

/// Last-mile escape with an explicitly named estimator.
pub fn lastmile_escape_mode(chain: &ChainSpec, mode: &str) -> Result<f64> {
    let est = lastmile::estimator(mode)?;
    let (ctx, _) = lastmile_context(chain)?;
    est.estimate(&ctx)
}

/// The temperature-adjusted spectrum the last mile draws from.
pub fn lastmile_spectrum(chain: &ChainSpec) -> Result<MBSpectrum> {
    let (ctx, _) = lastmile_context(chain)?;
    Ok(ctx.spectrum)
}

/// Full deterministic analysis with the default last-mile estimator.
pub fn analyze(chain: &ChainSpec) -> Result<ChainReport> {
    analyze_with_mode(chain, DEFAULT_MODE)
}

/// Full deterministic analysis; `lastmile_mode` picks the registered
/// last-mile estimator.
pub fn analyze_with_mode(chain: &ChainSpec, lastmile_mode: &str) -> Result<ChainReport> {
    chain.validate()?;
    let p_e = entry_escape(&chain.entry, &[], chain.h_max)?;
    let p = forwarding_escape(chain)?;

    let est = lastmile::estimator(lastmile_mode)?;
    let (ctx, theta) = lastmile_context(chain)?;
    let p_c = est.estimate(&ctx)?;

    let k = p_e * p * p_c;
    let (k_eff, is_critical) = criticality(p_e, p, p_c, k)?;

    let absorbers = chain.forwarding.iter().filter(|it| it.role == Role::Absorber);
    let xi_mix = xi_mixture(chain.mediators(), chain.h_max, chain.item_inertia)?;
    let ma = mediation_ability(
        chain.mediators(),
        absorbers,
        chain.h_max,
        chain.item_inertia,
    )?;

    let (diffusion_length, feasibility_radius) = match &chain.diffusion {
        Some(spec) => (
            Some(spec.length_at(0.0)),
            Some(crate::diffusion::feasibility_radius(spec)?),
        ),
        None => (None, None),
    };

    Ok(ChainReport {
        p_e,
        p,
        p_c,
        k,
        k_eff,
        is_critical,
        xi_mix,
        ma,
        theta,
        diffusion_length,
        feasibility_radius,
    })
}
