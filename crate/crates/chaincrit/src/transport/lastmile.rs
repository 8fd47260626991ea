//! Last-mile escape estimators. The default reads the escape as a ratio of
//! interaction rates integrated over the last-mile spectrum; an alternative
//! averages the pointwise branching ratio. Both are registered by name and
//! selectable at run time.

use crate::error::{Error, Result};
use crate::model::{InteractionKind, Interactor};
use crate::quad;
use crate::spectra::{MBSpectrum, TAIL_CUTOFF_MULTIPLE};

/// Quadrature tolerance for last-mile integrals.
pub const LASTMILE_REL_TOL: f64 = 1e-8;

/// Name of the estimator used when none is requested.
pub const DEFAULT_MODE: &str = "rate-ratio";

/// Everything an estimator needs: the last-mile stage, its enthalpy window
/// top, and the temperature-adjusted spectrum the stage sees.
#[derive(Debug, Clone, Copy)]
pub struct LastMileContext<'a> {
    pub interactors: &'a [Interactor],
    pub h_c: f64,
    pub spectrum: MBSpectrum,
}

impl<'a> LastMileContext<'a> {
    fn sigma(&self, kind: InteractionKind, h: f64) -> Result<f64> {
        let mut total = 0.0;
        for it in self.interactors {
            total += it.factor_value(kind, h)?;
        }
        Ok(total)
    }

    /// Integrates `f(H) * pdf(H)` over the last-mile window in the variable
    /// r = sqrt(H), which removes the spectrum's sqrt kink at zero.
    fn spectrum_integral<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(f64) -> Result<f64>,
    {
        let hi = self.h_c.min(TAIL_CUTOFF_MULTIPLE * self.spectrum.t);
        if hi <= 0.0 {
            return Ok(0.0);
        }
        let norm = 2.0 * std::f64::consts::PI
            / (std::f64::consts::PI * self.spectrum.t).powf(1.5);
        let mut breaks: Vec<f64> = Vec::new();
        for it in self.interactors {
            for kind in [InteractionKind::Delivery, InteractionKind::Loss] {
                if let Some(factor) = it.factor(kind) {
                    breaks.extend(
                        factor
                            .sigma
                            .breakpoints()
                            .iter()
                            .map(|h| h.sqrt()),
                    );
                }
            }
        }
        quad::integrate_split(
            |r| {
                let h = r * r;
                let pdf = norm * r * (-h / self.spectrum.t).exp();
                Ok(f(h)? * pdf * 2.0 * r)
            },
            0.0,
            hi.sqrt(),
            &breaks,
            LASTMILE_REL_TOL,
        )
    }
}

/// A way of collapsing the last-mile stage to one escape probability.
pub trait LastMileEstimator: Sync {
    fn name(&self) -> &'static str;
    fn estimate(&self, ctx: &LastMileContext<'_>) -> Result<f64>;
}

/// Ratio of integrated interaction rates: delivered flow over all removed
/// flow across the last-mile window.
pub struct RateRatio;

impl LastMileEstimator for RateRatio {
    fn name(&self) -> &'static str {
        "rate-ratio"
    }

    fn estimate(&self, ctx: &LastMileContext<'_>) -> Result<f64> {
        let delivered = ctx.spectrum_integral(|h| ctx.sigma(InteractionKind::Delivery, h))?;
        let removed = ctx.spectrum_integral(|h| {
            Ok(ctx.sigma(InteractionKind::Delivery, h)? + ctx.sigma(InteractionKind::Loss, h)?)
        })?;
        if removed <= 0.0 {
            return Err(Error::EmptyStage(
                "last-mile stage removes no flow anywhere in its window".into(),
            ));
        }
        Ok(delivered / removed)
    }
}

/// Spectrum-weighted mean of the pointwise branching ratio
/// Sigma_d / (Sigma_d + Sigma_l). Coincides with `RateRatio` for constant
/// factors. Requires positive total removal at every sampled enthalpy.
pub struct PointwiseMean;

impl LastMileEstimator for PointwiseMean {
    fn name(&self) -> &'static str {
        "pointwise-mean"
    }

    fn estimate(&self, ctx: &LastMileContext<'_>) -> Result<f64> {
        let weighted = ctx.spectrum_integral(|h| {
            let d = ctx.sigma(InteractionKind::Delivery, h)?;
            let l = ctx.sigma(InteractionKind::Loss, h)?;
            if d + l <= 0.0 {
                return Err(Error::EmptyStage(format!(
                    "pointwise branching ratio undefined at enthalpy {h}: no removal"
                )));
            }
            Ok(d / (d + l))
        })?;
        let mass = ctx.spectrum_integral(|_| Ok(1.0))?;
        if mass <= 0.0 {
            return Err(Error::EmptyStage(
                "last-mile spectrum carries no mass below h_c".into(),
            ));
        }
        Ok(weighted / mass)
    }
}

static RATE_RATIO: RateRatio = RateRatio;
static POINTWISE_MEAN: PointwiseMean = PointwiseMean;

/// All registered estimators, default first.
pub fn estimators() -> &'static [&'static dyn LastMileEstimator] {
    static REGISTRY: [&dyn LastMileEstimator; 2] = [&RATE_RATIO, &POINTWISE_MEAN];
    &REGISTRY
}

/// Looks an estimator up by its registered name.
pub fn estimator(name: &str) -> Result<&'static dyn LastMileEstimator> {
    estimators()
        .iter()
        .copied()
        .find(|e| e.name() == name)
        .ok_or_else(|| {
            let known: Vec<&str> = estimators().iter().map(|e| e.name()).collect();
            Error::Schema(format!(
                "unknown last-mile escape mode \"{name}\"; known modes: {}",
                known.join(", ")
            ))
        })
}
