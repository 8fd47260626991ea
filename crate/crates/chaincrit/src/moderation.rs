//! Forwarding-stage moderation: the per-interaction enthalpy contraction
//! kernel, mean log-loss per interaction (xi) for single mediators and
//! mixtures, and mediation ability.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{InteractionKind, Interactor};

/// Capacity-to-inertia ratio below which the isotropic kernel is considered
/// dubious; chains still compute but validation warns.
pub const DEFAULT_ISOTROPY_FACTOR: f64 = 4.0;

/// Enthalpy contraction kernel of one mediator handling one item: after an
/// interaction the item's enthalpy is uniform on [a * H, H].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterKernel {
    item_inertia: f64,
    capacity: f64,
    a: f64,
    /// 1 - a computed directly as 4 m M / (M + m)^2, accurate when a -> 1.
    one_minus_a: f64,
}

impl ScatterKernel {
    /// Builds the kernel for an item of inertia `item_inertia` handled by a
    /// mediator of capacity `capacity`. The capacity must strictly exceed
    /// the item inertia.
    pub fn new(item_inertia: f64, capacity: f64) -> Result<Self> {
        if !item_inertia.is_finite() || item_inertia <= 0.0 {
            return Err(Error::Kernel(format!(
                "item inertia must be positive and finite, got {item_inertia}"
            )));
        }
        if !capacity.is_finite() || capacity <= 0.0 {
            return Err(Error::Kernel(format!(
                "mediator capacity must be positive and finite, got {capacity}"
            )));
        }
        if capacity <= item_inertia {
            return Err(Error::InertiaOrder {
                capacity,
                item_inertia,
            });
        }
        let sum = capacity + item_inertia;
        let ratio = (capacity - item_inertia) / sum;
        let one_minus_a = 4.0 * item_inertia * capacity / (sum * sum);
        Ok(Self {
            item_inertia,
            capacity,
            a: ratio * ratio,
            one_minus_a,
        })
    }

    /// Contraction ratio a = ((M - m) / (M + m))^2, the lowest fraction of
    /// the incoming enthalpy one interaction can leave.
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn item_inertia(&self) -> f64 {
        self.item_inertia
    }

    /// True when the capacity sits within `DEFAULT_ISOTROPY_FACTOR` of the
    /// item inertia, where the uniform kernel is a stretch.
    pub fn isotropy_dubious(&self) -> bool {
        self.capacity <= DEFAULT_ISOTROPY_FACTOR * self.item_inertia
    }
}

/// Contraction ratio for an item of inertia `m` and a mediator of capacity
/// `capacity_m`; errors unless capacity > m > 0.
pub fn alpha(m: f64, capacity_m: f64) -> Result<f64> {
    Ok(ScatterKernel::new(m, capacity_m)?.a())
}

/// Kernel density: uniform 1 / ((1 - a) H_in) on [a H_in, H_in], zero
/// elsewhere.
pub fn g_pdf(kernel: &ScatterKernel, h_in: f64, h_out: f64) -> Result<f64> {
    if !h_in.is_finite() || h_in <= 0.0 {
        return Err(Error::Domain(format!(
            "kernel density needs positive incoming enthalpy, got {h_in}"
        )));
    }
    if h_out >= kernel.a * h_in && h_out <= h_in {
        Ok(1.0 / (kernel.one_minus_a * h_in))
    } else {
        Ok(0.0)
    }
}

/// One post-interaction enthalpy: uniform on [a H_in, H_in].
pub fn g_sample<R: Rng + ?Sized>(kernel: &ScatterKernel, h_in: f64, rng: &mut R) -> f64 {
    h_in * (kernel.a + kernel.one_minus_a * rng.random::<f64>())
}

/// Mean lethargy gain per interaction,
/// xi = 1 + a ln(a) / (1 - a), independent of the incoming enthalpy.
pub fn xi_single(kernel: &ScatterKernel) -> f64 {
    let d = kernel.one_minus_a;
    1.0 + (1.0 - d) * (-d).ln_1p() / d
}

/// Per-interaction lethargy gain of one mediator, precomputed once since it
/// does not depend on the item's enthalpy.
pub fn xi_of_mediator(mediator: &Interactor, item_inertia: f64) -> Result<f64> {
    let capacity = mediator
        .capacity
        .ok_or_else(|| Error::Schema(format!("mediator {} has no capacity", mediator.name)))?;
    Ok(xi_single(&ScatterKernel::new(item_inertia, capacity)?))
}

/// Flow-weighted mean lethargy gain of a mediator mixture at enthalpy `h`:
/// each mediator's xi weighted by its share of the forwarding strength.
pub fn xi_mixture<'a, I>(mediators: I, h: f64, item_inertia: f64) -> Result<f64>
where
    I: IntoIterator<Item = &'a Interactor>,
{
    let mut total_strength = 0.0;
    let mut weighted = 0.0;
    for med in mediators {
        let strength = med.factor_value(InteractionKind::Forwarding, h)?;
        if strength == 0.0 {
            continue;
        }
        total_strength += strength;
        weighted += strength * xi_of_mediator(med, item_inertia)?;
    }
    if total_strength <= 0.0 {
        return Err(Error::NoForwarding(format!(
            "no mediator has forwarding strength at enthalpy {h}"
        )));
    }
    Ok(weighted / total_strength)
}

/// Mediation ability at enthalpy `h`: moderated forwarding strength over
/// loss strength, MA = xi_mix * Sigma_f / Sigma_l. Loss sums over the
/// mediators and the stage absorbers. A lossless stage has infinite MA,
/// returned as a distinguished value rather than an error.
pub fn mediation_ability<'a, I, J>(
    mediators: I,
    absorbers: J,
    h: f64,
    item_inertia: f64,
) -> Result<f64>
where
    I: IntoIterator<Item = &'a Interactor>,
    J: IntoIterator<Item = &'a Interactor>,
{
    let mediators: Vec<&Interactor> = mediators.into_iter().collect();
    let xi = xi_mixture(mediators.iter().copied(), h, item_inertia)?;
    let mut sigma_f = 0.0;
    let mut sigma_l = 0.0;
    for med in &mediators {
        sigma_f += med.factor_value(InteractionKind::Forwarding, h)?;
        sigma_l += med.factor_value(InteractionKind::Loss, h)?;
    }
    for abs in absorbers {
        sigma_l += abs.factor_value(InteractionKind::Loss, h)?;
    }
    if sigma_l == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(xi * sigma_f / sigma_l)
}
