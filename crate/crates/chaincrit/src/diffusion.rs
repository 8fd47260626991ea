//! Spatial model of the retail region: diffusion length, planar flux
//! profiles for constant and piecewise-constant coefficients, and the
//! feasible delivery radius.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Warning;

/// Default number of diffusion lengths taken as the feasible radius.
pub const DEFAULT_FEASIBILITY_MULTIPLE: f64 = 6.0;

/// Allowed band for the feasibility multiple; values outside are clamped
/// with a warning.
pub const FEASIBILITY_MULTIPLE_RANGE: (f64, f64) = (5.0, 6.0);

const MAX_GRID: usize = 1 << 24;

fn default_multiple() -> f64 {
    DEFAULT_FEASIBILITY_MULTIPLE
}

/// A coefficient that is constant or piecewise-constant in the distance from
/// the distribution front. `steps` uses `values[0]` on [0, breaks[0]),
/// `values[i]` on [breaks[i-1], breaks[i]), and the last value beyond the
/// last break.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PiecewiseX {
    Constant { value: f64 },
    Steps { breaks: Vec<f64>, values: Vec<f64> },
}

impl PiecewiseX {
    pub fn value_at(&self, x: f64) -> f64 {
        match self {
            PiecewiseX::Constant { value } => *value,
            PiecewiseX::Steps { breaks, values } => {
                let idx = breaks.partition_point(|b| *b <= x);
                values[idx]
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, PiecewiseX::Constant { .. })
    }

    fn validate(&self, name: &str, minimum_exclusive: Option<f64>) -> Result<()> {
        let check = |v: f64| -> Result<()> {
            if !v.is_finite() {
                return Err(Error::Schema(format!("{name} must be finite, got {v}")));
            }
            match minimum_exclusive {
                Some(min) if v <= min => Err(Error::Schema(format!(
                    "{name} must exceed {min}, got {v}"
                ))),
                None if v < 0.0 => Err(Error::Schema(format!(
                    "{name} must be non-negative, got {v}"
                ))),
                _ => Ok(()),
            }
        };
        match self {
            PiecewiseX::Constant { value } => check(*value),
            PiecewiseX::Steps { breaks, values } => {
                if values.len() != breaks.len() + 1 {
                    return Err(Error::Schema(format!(
                        "{name}: {} breaks need {} values, got {}",
                        breaks.len(),
                        breaks.len() + 1,
                        values.len()
                    )));
                }
                let mut prev = 0.0;
                for b in breaks {
                    if !b.is_finite() || *b <= prev {
                        return Err(Error::Schema(format!(
                            "{name} breaks must be positive, finite, and strictly increasing"
                        )));
                    }
                    prev = *b;
                }
                values.iter().try_for_each(|v| check(*v))
            }
        }
    }
}

/// Spatial description of the retail region behind the distribution front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    /// Diffusion constant (area per unit time), possibly varying with x.
    pub d: PiecewiseX,
    /// Delivery removal factor vs x.
    pub sigma_d: PiecewiseX,
    /// Loss removal factor vs x.
    pub sigma_l: PiecewiseX,
    /// Courier flux at the front, items per time per area.
    pub phi0: f64,
    /// Feasible radius in units of the diffusion length; clamped to [5, 6].
    #[serde(default = "default_multiple")]
    pub feasibility_multiple: f64,
    /// Extent of the solved region.
    pub x_max: f64,
    /// Number of grid intervals for the numeric solver.
    pub grid_n: usize,
}

impl DiffusionSpec {
    pub fn validate(&self) -> Result<Vec<Warning>> {
        self.d.validate("diffusion constant", Some(0.0))?;
        self.sigma_d.validate("delivery removal", None)?;
        self.sigma_l.validate("loss removal", None)?;
        if !self.phi0.is_finite() || self.phi0 <= 0.0 {
            return Err(Error::Schema(format!(
                "front flux must be positive and finite, got {}",
                self.phi0
            )));
        }
        if !self.x_max.is_finite() || self.x_max <= 0.0 {
            return Err(Error::Schema(format!(
                "x_max must be positive and finite, got {}",
                self.x_max
            )));
        }
        if self.grid_n < 16 || self.grid_n > MAX_GRID {
            return Err(Error::Schema(format!(
                "grid_n must lie in [16, {MAX_GRID}], got {}",
                self.grid_n
            )));
        }
        if !self.feasibility_multiple.is_finite() {
            return Err(Error::Schema(format!(
                "feasibility multiple must be finite, got {}",
                self.feasibility_multiple
            )));
        }
        let mut probe_points = vec![0.0];
        for profile in [&self.sigma_d, &self.sigma_l] {
            if let PiecewiseX::Steps { breaks, .. } = profile {
                probe_points.extend_from_slice(breaks);
            }
        }
        if !probe_points.iter().any(|x| self.removal_at(*x) > 0.0) {
            return Err(Error::Schema(
                "removal sigma_d + sigma_l must be positive somewhere".into(),
            ));
        }
        let mut warnings = Vec::new();
        let (lo, hi) = FEASIBILITY_MULTIPLE_RANGE;
        if self.feasibility_multiple < lo || self.feasibility_multiple > hi {
            warnings.push(Warning {
                message: format!(
                    "feasibility multiple {} lies outside [{lo}, {hi}] and is clamped to {}",
                    self.feasibility_multiple,
                    self.effective_multiple()
                ),
            });
        }
        Ok(warnings)
    }

    /// Feasibility multiple after clamping to the supported band.
    pub fn effective_multiple(&self) -> f64 {
        let (lo, hi) = FEASIBILITY_MULTIPLE_RANGE;
        self.feasibility_multiple.clamp(lo, hi)
    }

    pub fn removal_at(&self, x: f64) -> f64 {
        self.sigma_d.value_at(x) + self.sigma_l.value_at(x)
    }

    /// Local diffusion length at distance x; infinite where removal is zero.
    pub fn length_at(&self, x: f64) -> f64 {
        let removal = self.removal_at(x);
        if removal == 0.0 {
            f64::INFINITY
        } else {
            (self.d.value_at(x) / removal).sqrt()
        }
    }

    pub fn has_constant_coefficients(&self) -> bool {
        self.d.is_constant() && self.sigma_d.is_constant() && self.sigma_l.is_constant()
    }
}

/// One sampled point of a courier flux profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxPoint {
    pub x: f64,
    pub phi: f64,
}

/// Courier flux vs distance from the distribution front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxProfile {
    pub points: Vec<FluxPoint>,
}

/// Diffusion length L = sqrt(D / (Sigma_d + Sigma_l)). Zero removal gives an
/// infinite length as a distinguished value.
pub fn diffusion_length(d: f64, sigma_d: f64, sigma_l: f64) -> Result<f64> {
    if !d.is_finite() || d <= 0.0 {
        return Err(Error::Domain(format!(
            "diffusion constant must be positive and finite, got {d}"
        )));
    }
    for (name, v) in [("sigma_d", sigma_d), ("sigma_l", sigma_l)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Domain(format!(
                "{name} must be finite and non-negative, got {v}"
            )));
        }
    }
    let removal = sigma_d + sigma_l;
    if removal == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((d / removal).sqrt())
}

fn grid(spec: &DiffusionSpec) -> (f64, Vec<f64>) {
    let h = spec.x_max / spec.grid_n as f64;
    let xs = (0..=spec.grid_n).map(|i| i as f64 * h).collect();
    (h, xs)
}

/// Closed-form profile phi0 * exp(-x / L) for constant coefficients, sampled
/// on the same grid the numeric solver uses.
pub fn flux_profile_analytic(spec: &DiffusionSpec) -> Result<FluxProfile> {
    spec.validate()?;
    if !spec.has_constant_coefficients() {
        return Err(Error::Domain(
            "analytic flux profile requires constant coefficients".into(),
        ));
    }
    let l = spec.length_at(0.0);
    let (_, xs) = grid(spec);
    let points = xs
        .into_iter()
        .map(|x| FluxPoint {
            x,
            phi: spec.phi0 * (-x / l).exp(),
        })
        .collect();
    Ok(FluxProfile { points })
}

/// Second-order finite-difference solution of phi'' = phi / L(x)^2 with
/// phi(0) = phi0 and an exponential-decay far boundary at x_max.
pub fn flux_profile_numeric(spec: &DiffusionSpec) -> Result<FluxProfile> {
    spec.validate()?;
    let n = spec.grid_n;
    let (h, xs) = grid(spec);

    // Unknowns phi_1 .. phi_n; phi_0 is the Dirichlet front value.
    // Interior rows: phi_{i-1} - (2 + h^2/L_i^2) phi_i + phi_{i+1} = 0.
    // Far row uses a ghost node from the Robin condition phi' = -phi / L_n:
    // 2 phi_{n-1} - (2 + 2h/L_n + h^2/L_n^2) phi_n = 0.
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 1..=n {
        let l = spec.length_at(xs[i]);
        let k = if l.is_finite() { (h / l).powi(2) } else { 0.0 };
        let row = i - 1;
        if i < n {
            sub[row] = 1.0;
            diag[row] = -(2.0 + k);
            sup[row] = 1.0;
            rhs[row] = 0.0;
        } else {
            let robin = if l.is_finite() { 2.0 * h / l } else { 0.0 };
            sub[row] = 2.0;
            diag[row] = -(2.0 + robin + k);
            rhs[row] = 0.0;
        }
    }
    rhs[0] = -spec.phi0;

    // Thomas algorithm; the system is strictly diagonally dominant.
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    c_prime[0] = sup[0] / diag[0];
    d_prime[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - sub[i] * c_prime[i - 1];
        if denom == 0.0 {
            return Err(Error::Numeric(
                "tridiagonal elimination hit a zero pivot".into(),
            ));
        }
        c_prime[i] = sup[i] / denom;
        d_prime[i] = (rhs[i] - sub[i] * d_prime[i - 1]) / denom;
    }
    let mut phi = vec![0.0; n + 1];
    phi[0] = spec.phi0;
    phi[n] = d_prime[n - 1];
    for i in (1..n).rev() {
        phi[i] = d_prime[i - 1] - c_prime[i - 1] * phi[i + 1];
    }

    // The direct solve should be exact to rounding; a large residual means
    // the system was ill-conditioned enough to distrust.
    let mut max_residual: f64 = 0.0;
    let mut scale: f64 = spec.phi0.abs();
    for i in 1..n {
        let l = spec.length_at(xs[i]);
        let k = if l.is_finite() { (h / l).powi(2) } else { 0.0 };
        let r = phi[i - 1] - (2.0 + k) * phi[i] + phi[i + 1];
        max_residual = max_residual.max(r.abs());
        scale = scale.max(phi[i].abs());
    }
    if max_residual > 1e-8 * scale {
        return Err(Error::Numeric(format!(
            "flux solve left residual {max_residual:.3e} against scale {scale:.3e}"
        )));
    }

    let points = xs
        .into_iter()
        .zip(phi)
        .map(|(x, phi)| FluxPoint { x, phi })
        .collect();
    Ok(FluxProfile { points })
}

/// Radius within which delivery stays feasible: `multiple * L` for constant
/// coefficients, otherwise the first x where the numeric profile decays
/// below exp(-multiple) of the front flux.
pub fn feasibility_radius(spec: &DiffusionSpec) -> Result<f64> {
    spec.validate()?;
    let multiple = spec.effective_multiple();
    if spec.has_constant_coefficients() {
        return Ok(multiple * spec.length_at(0.0));
    }
    let profile = flux_profile_numeric(spec)?;
    let target = spec.phi0 * (-multiple).exp();
    for pair in profile.points.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b.phi < target {
            if a.phi <= target || b.phi <= 0.0 {
                return Ok(a.x);
            }
            // log-linear interpolation between grid points
            let t = (target.ln() - a.phi.ln()) / (b.phi.ln() - a.phi.ln());
            return Ok(a.x + t * (b.x - a.x));
        }
    }
    // Still above target at x_max: extrapolate with the local decay length.
    let last = *profile.points.last().expect("profile is non-empty");
    let l_tail = spec.length_at(spec.x_max);
    if !l_tail.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(last.x + l_tail * (multiple + (last.phi / spec.phi0).ln()))
}
