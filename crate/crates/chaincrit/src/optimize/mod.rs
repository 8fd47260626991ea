//! Mediator-pool selection under a cost budget.
//!
//! A [`Catalog`] lists candidate mediators with unit costs. A selection is a
//! multiset of catalog indices; evaluating it swaps the selected mediators
//! into the base chain's forwarding stage (stage absorbers are kept, since
//! they model the environment rather than the operator's choices) and scores
//! the resulting chain. Two search strategies are registered by name:
//! `exhaustive` enumerates every affordable multiset, `anneal` runs seeded
//! simulated annealing over add/remove/swap moves.

mod anneal;
mod exhaustive;

pub use anneal::{anneal_restarts, Anneal};
pub use exhaustive::Exhaustive;

use crate::error::{Error, Result};
use crate::model::{ChainSpec, Interactor, Role};
use crate::{moderation, transport};
use serde::{Deserialize, Serialize};

/// Selections whose objectives differ by at most this much are ties and fall
/// through to the secondary keys (mixture moderation, then index order).
pub const OBJECTIVE_TIE_TOLERANCE: f64 = 1e-12;

/// What a selection is scored by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// End-to-end criticality `k` of the rebuilt chain.
    K,
    /// Mediation ability of the rebuilt forwarding stage at `h_max`.
    Ma,
}

impl Objective {
    pub fn label(&self) -> &'static str {
        match self {
            Objective::K => "k",
            Objective::Ma => "ma",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(Objective::K),
            "ma" => Ok(Objective::Ma),
            other => Err(Error::Schema(format!(
                "unknown objective `{other}`; known objectives: k, ma"
            ))),
        }
    }
}

/// Candidate mediators available for purchase.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub candidates: Vec<Interactor>,
    pub budget: f64,
    /// Copies allowed of each single candidate.
    pub max_copies: u32,
}

impl Catalog {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn validate(&self, item_inertia: f64) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::EmptyStage("catalog has no candidates".into()));
        }
        if !self.budget.is_finite() || self.budget < 0.0 {
            return Err(Error::Budget(format!(
                "budget must be finite and non-negative, got {}",
                self.budget
            )));
        }
        if self.max_copies == 0 {
            return Err(Error::Budget(
                "max_copies must be at least 1".into(),
            ));
        }
        let mut min_cost = f64::INFINITY;
        for candidate in &self.candidates {
            candidate.validate()?;
            if candidate.role != Role::Mediator {
                return Err(Error::Schema(format!(
                    "catalog candidate `{}` must have the mediator role, got {}",
                    candidate.name,
                    candidate.role.label()
                )));
            }
            let capacity = candidate.capacity.unwrap_or(0.0);
            if capacity <= item_inertia {
                return Err(Error::InertiaOrder {
                    capacity,
                    item_inertia,
                });
            }
            min_cost = min_cost.min(candidate.cost);
        }
        if min_cost > self.budget {
            return Err(Error::Budget(format!(
                "cheapest candidate costs {min_cost} but the budget is {}",
                self.budget
            )));
        }
        Ok(())
    }

    /// Cost of a multiset of candidate indices.
    pub fn cost(&self, indices: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for &i in indices {
            let candidate = self.candidates.get(i).ok_or_else(|| {
                Error::Domain(format!(
                    "candidate index {i} out of range (catalog has {})",
                    self.candidates.len()
                ))
            })?;
            total += candidate.cost;
        }
        Ok(total)
    }
}

/// A chosen multiset of candidates with its cost and score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    /// Sorted candidate indices; repeats mean extra copies.
    pub indices: Vec<usize>,
    pub total_cost: f64,
    pub objective: f64,
}

/// Incumbent improvement recorded during a search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    /// Objective evaluations performed when this incumbent was adopted.
    pub evaluations: u64,
    pub objective: f64,
}

/// Search result: the best selection found plus the incumbent trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizeOutcome {
    pub selection: Selection,
    pub trajectory: Vec<TrajectoryPoint>,
    pub evaluations: u64,
}

/// Everything a strategy needs for one run.
pub struct OptimizeContext<'a> {
    pub catalog: &'a Catalog,
    pub base_chain: &'a ChainSpec,
    pub objective: Objective,
    pub seed: u64,
    pub iterations: u64,
}

/// A search strategy, registered by name.
pub trait OptimizeStrategy: Sync {
    fn name(&self) -> &'static str;
    fn optimize(&self, ctx: &OptimizeContext) -> Result<OptimizeOutcome>;
}

static EXHAUSTIVE: Exhaustive = Exhaustive;
static ANNEAL: Anneal = Anneal;

/// All registered strategies.
pub fn strategies() -> &'static [&'static dyn OptimizeStrategy] {
    static REGISTRY: [&dyn OptimizeStrategy; 2] = [&EXHAUSTIVE, &ANNEAL];
    &REGISTRY
}

/// Look up a strategy by name.
pub fn strategy(name: &str) -> Result<&'static dyn OptimizeStrategy> {
    strategies()
        .iter()
        .copied()
        .find(|s| s.name() == name)
        .ok_or_else(|| {
            let known: Vec<&str> = strategies().iter().map(|s| s.name()).collect();
            Error::Schema(format!(
                "unknown optimizer `{name}`; known optimizers: {}",
                known.join(", ")
            ))
        })
}

/// Replace the base chain's forwarding mediators with the selection.
///
/// Copies of a candidate merge into one interactor with its counts scaled,
/// so duplication raises the stage strength without changing per-step
/// moderation. Stage absorbers from the base chain are retained.
pub fn chain_with_selection(
    catalog: &Catalog,
    base_chain: &ChainSpec,
    indices: &[usize],
) -> Result<ChainSpec> {
    let mut copies = vec![0u32; catalog.candidates.len()];
    for &i in indices {
        if i >= copies.len() {
            return Err(Error::Domain(format!(
                "candidate index {i} out of range (catalog has {})",
                copies.len()
            )));
        }
        copies[i] += 1;
    }
    let mut forwarding: Vec<Interactor> = base_chain
        .forwarding
        .iter()
        .filter(|x| x.role == Role::Absorber)
        .cloned()
        .collect();
    for (candidate, &n) in catalog.candidates.iter().zip(&copies) {
        if n == 0 {
            continue;
        }
        let mut mediator = candidate.clone();
        if n > 1 {
            for factor in mediator.factors.values_mut() {
                factor.count *= f64::from(n);
            }
        }
        forwarding.push(mediator);
    }
    let mut chain = base_chain.clone();
    chain.forwarding = forwarding;
    Ok(chain)
}

/// Score a feasible selection against the base chain.
///
/// `K` analyzes the rebuilt chain end to end; `Ma` scores only the rebuilt
/// forwarding stage at `h_max`. Empty selections cannot forward and
/// over-budget selections are rejected.
pub fn evaluate(
    indices: &[usize],
    catalog: &Catalog,
    base_chain: &ChainSpec,
    objective: Objective,
) -> Result<f64> {
    Ok(score(indices, catalog, base_chain, objective)?.objective)
}

/// Objective plus the tie-break key.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Score {
    pub objective: f64,
    pub xi_mixture: f64,
}

pub(crate) fn score(
    indices: &[usize],
    catalog: &Catalog,
    base_chain: &ChainSpec,
    objective: Objective,
) -> Result<Score> {
    if indices.is_empty() {
        return Err(Error::NoForwarding(
            "an empty selection has no mediators".into(),
        ));
    }
    let total_cost = catalog.cost(indices)?;
    if total_cost > catalog.budget {
        return Err(Error::Budget(format!(
            "selection costs {total_cost} but the budget is {}",
            catalog.budget
        )));
    }
    let chain = chain_with_selection(catalog, base_chain, indices)?;
    let xi_mixture =
        moderation::xi_mixture(chain.mediators(), chain.h_max, chain.item_inertia)?;
    let objective = match objective {
        Objective::K => transport::analyze(&chain)?.k,
        Objective::Ma => moderation::mediation_ability(
            chain.mediators(),
            chain
                .forwarding
                .iter()
                .filter(|x| x.role == Role::Absorber),
            chain.h_max,
            chain.item_inertia,
        )?,
    };
    Ok(Score {
        objective,
        xi_mixture,
    })
}

/// Strict "is the challenger better" order used by every strategy.
///
/// Higher objective wins; within the tie tolerance a higher mixture
/// moderation wins; a full tie goes to the lexicographically smaller index
/// multiset, so results are deterministic regardless of visit order.
pub(crate) fn improves(
    new: &Score,
    new_indices: &[usize],
    old: &Score,
    old_indices: &[usize],
) -> bool {
    // Two infinite objectives give a NaN delta; both comparisons below are
    // then false, which correctly treats them as tied.
    let delta = new.objective - old.objective;
    if delta > OBJECTIVE_TIE_TOLERANCE {
        return true;
    }
    if delta < -OBJECTIVE_TIE_TOLERANCE {
        return false;
    }
    let xi_delta = new.xi_mixture - old.xi_mixture;
    if xi_delta > OBJECTIVE_TIE_TOLERANCE {
        return true;
    }
    if xi_delta < -OBJECTIVE_TIE_TOLERANCE {
        return false;
    }
    new_indices < old_indices
}
