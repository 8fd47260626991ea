//! Exhaustive selection search: the oracle strategy for small catalogs.

use super::{
    improves, score, OptimizeContext, OptimizeOutcome, OptimizeStrategy, Score, Selection,
    TrajectoryPoint,
};
use crate::error::{Error, Result};

/// Enumerated selections may not exceed this many.
pub const MAX_SEARCH_SPACE: u128 = 1 << 20;

/// Enumerates every multiset with up to `max_copies` of each candidate,
/// pruning branches that exceed the budget. Guaranteed global optimum under
/// the shared tie-break order; refuses search spaces above [`MAX_SEARCH_SPACE`].
pub struct Exhaustive;

impl OptimizeStrategy for Exhaustive {
    fn name(&self) -> &'static str {
        "exhaustive"
    }

    fn optimize(&self, ctx: &OptimizeContext) -> Result<OptimizeOutcome> {
        ctx.catalog.validate(ctx.base_chain.item_inertia)?;
        let n = ctx.catalog.candidates.len();
        let size = search_space(n, ctx.catalog.max_copies);
        if size > MAX_SEARCH_SPACE {
            return Err(Error::SpaceTooLarge {
                size,
                limit: MAX_SEARCH_SPACE,
            });
        }

        let mut search = Search {
            ctx,
            copies: vec![0u32; n],
            evaluations: 0,
            best: None,
            trajectory: Vec::new(),
        };
        search.descend(0, 0.0)?;
        let (score, indices) = search.best.ok_or_else(|| {
            Error::Budget(format!(
                "no nonempty selection fits the budget {}",
                ctx.catalog.budget
            ))
        })?;
        Ok(OptimizeOutcome {
            selection: Selection {
                total_cost: ctx.catalog.cost(&indices)?,
                objective: score.objective,
                indices,
            },
            trajectory: search.trajectory,
            evaluations: search.evaluations,
        })
    }
}

/// (max_copies + 1)^n, saturating well above the refusal limit.
fn search_space(n: usize, max_copies: u32) -> u128 {
    let base = u128::from(max_copies) + 1;
    let mut size: u128 = 1;
    for _ in 0..n {
        size = size.saturating_mul(base);
        if size > MAX_SEARCH_SPACE.saturating_mul(2) {
            return size;
        }
    }
    size
}

struct Search<'a, 'b> {
    ctx: &'a OptimizeContext<'b>,
    copies: Vec<u32>,
    evaluations: u64,
    best: Option<(Score, Vec<usize>)>,
    trajectory: Vec<TrajectoryPoint>,
}

impl Search<'_, '_> {
    fn descend(&mut self, candidate: usize, cost: f64) -> Result<()> {
        if candidate == self.copies.len() {
            return self.consider();
        }
        let unit = self.ctx.catalog.candidates[candidate].cost;
        for copies in 0..=self.ctx.catalog.max_copies {
            let branch_cost = cost + f64::from(copies) * unit;
            if branch_cost > self.ctx.catalog.budget {
                break;
            }
            self.copies[candidate] = copies;
            self.descend(candidate + 1, branch_cost)?;
        }
        self.copies[candidate] = 0;
        Ok(())
    }

    fn consider(&mut self) -> Result<()> {
        let indices = expand(&self.copies);
        if indices.is_empty() {
            return Ok(());
        }
        let score = score(
            &indices,
            self.ctx.catalog,
            self.ctx.base_chain,
            self.ctx.objective,
        )?;
        self.evaluations += 1;
        let replace = match &self.best {
            None => true,
            Some((best, best_indices)) => improves(&score, &indices, best, best_indices),
        };
        if replace {
            self.trajectory.push(TrajectoryPoint {
                evaluations: self.evaluations,
                objective: score.objective,
            });
            self.best = Some((score, indices));
        }
        Ok(())
    }
}

/// Copies-per-candidate vector to a sorted index multiset.
pub(crate) fn expand(copies: &[u32]) -> Vec<usize> {
    let mut indices = Vec::new();
    for (i, &n) in copies.iter().enumerate() {
        for _ in 0..n {
            indices.push(i);
        }
    }
    indices
}
