//! Maxwell-Boltzmann enthalpy spectra for first-mile and last-mile flow,
//! flow quadrature over enthalpy windows, and the last-mile temperature
//! multiplier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::quad;

/// Relative tolerance of all spectrum quadratures.
pub const SPECTRUM_REL_TOL: f64 = 1e-9;

/// Upper integration bound in units of T; the gamma tail beyond 40 T holds
/// less than 1e-16 of the mass.
pub(crate) const TAIL_CUTOFF_MULTIPLE: f64 = 40.0;

/// Equilibrium enthalpy spectrum of items in a market at temperature T,
/// scaled by the total flow it carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MBSpectrum {
    /// Market temperature: scale of the gamma-shaped spectrum.
    pub t: f64,
    /// Items per unit time carried by the whole spectrum.
    pub w_total: f64,
}

impl MBSpectrum {
    pub fn new(t: f64, w_total: f64) -> Result<Self> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::InvalidAttribute(format!(
                "market temperature must be positive and finite, got {t}"
            )));
        }
        if !w_total.is_finite() || w_total <= 0.0 {
            return Err(Error::InvalidAttribute(format!(
                "total flow must be positive and finite, got {w_total}"
            )));
        }
        Ok(Self { t, w_total })
    }

    /// Analytic mean (3/2) T.
    pub fn mean(&self) -> f64 {
        1.5 * self.t
    }

    /// Analytic variance (3/2) T^2.
    pub fn variance(&self) -> f64 {
        1.5 * self.t * self.t
    }

    /// Most probable enthalpy T/2.
    pub fn mode(&self) -> f64 {
        0.5 * self.t
    }
}

/// Spectrum density at enthalpy `h`:
/// 2 pi sqrt(H) / (pi T)^(3/2) * exp(-H / T).
pub fn mb_pdf(s: &MBSpectrum, h: f64) -> Result<f64> {
    if !h.is_finite() || h < 0.0 {
        return Err(Error::Domain(format!(
            "spectrum density evaluated at invalid enthalpy {h}"
        )));
    }
    let norm = 2.0 * std::f64::consts::PI / (std::f64::consts::PI * s.t).powf(1.5);
    Ok(norm * h.sqrt() * (-h / s.t).exp())
}

/// `n` i.i.d. draws from the spectrum (gamma with shape 3/2 and scale T),
/// deterministic for a given seed.
pub fn mb_sample(s: &MBSpectrum, seed: u64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    let gamma = Gamma::new(1.5, s.t).expect("validated spectrum parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| gamma.sample(&mut rng)).collect())
}

/// Flow carried between two enthalpies: w_total times the pdf mass on
/// [h_lo, h_hi]. The upper bound may be infinite.
pub fn total_flow(s: &MBSpectrum, h_lo: f64, h_hi: f64) -> Result<f64> {
    if h_lo.is_nan() || h_hi.is_nan() || h_lo < 0.0 || h_lo >= h_hi {
        return Err(Error::Domain(format!(
            "flow window must satisfy 0 <= lo < hi, got [{h_lo}, {h_hi}]"
        )));
    }
    let cutoff = TAIL_CUTOFF_MULTIPLE * s.t;
    let hi = h_hi.min(cutoff);
    if h_lo >= hi {
        return Ok(0.0);
    }
    // Substituting H = r^2 removes the sqrt kink at zero, leaving a smooth
    // r^2 exp(-r^2 / T) integrand.
    let norm = 2.0 * std::f64::consts::PI / (std::f64::consts::PI * s.t).powf(1.5);
    let mass = quad::integrate(
        |r| Ok(norm * 2.0 * r * r * (-r * r / s.t).exp()),
        h_lo.sqrt(),
        hi.sqrt(),
        SPECTRUM_REL_TOL,
    )?;
    Ok(s.w_total * mass)
}

/// Temperature multiplier for the last-mile spectrum: the ratio of total
/// last-mile interaction to moderated forwarding supply,
/// theta = 1 + (Sigma_d + Sigma_l) / (xi * Sigma_f), always >= 1.
pub fn temperature_multiplier(
    sigma_d_at_t: f64,
    sigma_l_at_t: f64,
    xi: f64,
    sigma_f_at_hc: f64,
) -> Result<f64> {
    for (name, v) in [
        ("last-mile delivery factor", sigma_d_at_t),
        ("last-mile loss factor", sigma_l_at_t),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Domain(format!(
                "{name} must be finite and non-negative, got {v}"
            )));
        }
    }
    if !xi.is_finite() || !sigma_f_at_hc.is_finite() || xi * sigma_f_at_hc <= 0.0 {
        return Err(Error::NoForwarding(format!(
            "temperature multiplier needs positive moderated forwarding strength, \
             got xi = {xi}, sigma_f = {sigma_f_at_hc}"
        )));
    }
    Ok(1.0 + (sigma_d_at_t + sigma_l_at_t) / (xi * sigma_f_at_hc))
}
