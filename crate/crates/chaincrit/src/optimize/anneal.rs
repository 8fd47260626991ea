//! Simulated annealing over selection multisets.

use super::{
    improves, score, Catalog, Objective, OptimizeContext, OptimizeOutcome, OptimizeStrategy,
    Score, Selection, TrajectoryPoint,
};
use super::exhaustive::expand;
use crate::error::{Error, Result};
use crate::model::ChainSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::HashMap;

/// Geometric cooling factor applied once per iteration.
pub const COOLING_FACTOR: f64 = 0.995;

/// Random feasible selections scored to calibrate the start temperature.
const TEMPERATURE_SAMPLES: usize = 100;

/// Seeded annealing: a deterministic greedy start, then add/remove/swap
/// moves accepted by the Metropolis rule under geometric cooling. Returns
/// the best selection seen anywhere in the run. Zero iterations return the
/// greedy start itself. Selections that fail to evaluate (for example a
/// candidate with no forwarding strength at `h_max`) are treated as
/// infeasible moves rather than hard errors.
pub struct Anneal;

impl OptimizeStrategy for Anneal {
    fn name(&self) -> &'static str {
        "anneal"
    }

    fn optimize(&self, ctx: &OptimizeContext) -> Result<OptimizeOutcome> {
        ctx.catalog.validate(ctx.base_chain.item_inertia)?;
        Run::new(ctx).execute()
    }
}

/// Runs one annealing instance per seed in parallel and keeps the best
/// outcome; exact objective ties go to the lowest seed.
pub fn anneal_restarts(
    catalog: &Catalog,
    base_chain: &ChainSpec,
    objective: Objective,
    seeds: &[u64],
    iterations: u64,
) -> Result<(u64, OptimizeOutcome)> {
    if seeds.is_empty() {
        return Err(Error::Domain("restarts need at least one seed".into()));
    }
    let mut runs: Vec<(u64, Result<OptimizeOutcome>)> = seeds
        .par_iter()
        .map(|&seed| {
            let ctx = OptimizeContext {
                catalog,
                base_chain,
                objective,
                seed,
                iterations,
            };
            (seed, Anneal.optimize(&ctx))
        })
        .collect();
    runs.sort_by_key(|(seed, _)| *seed);

    let mut best: Option<(u64, OptimizeOutcome)> = None;
    for (seed, run) in runs {
        let outcome = run?;
        best = Some(match best {
            None => (seed, outcome),
            Some((best_seed, best_outcome)) => {
                if outcome.selection.objective
                    > best_outcome.selection.objective + super::OBJECTIVE_TIE_TOLERANCE
                {
                    (seed, outcome)
                } else {
                    (best_seed, best_outcome)
                }
            }
        });
    }
    Ok(best.expect("at least one seed"))
}

struct Run<'a, 'b> {
    ctx: &'a OptimizeContext<'b>,
    rng: ChaCha8Rng,
    /// Copies per candidate for every selection scored so far; `None` marks
    /// selections that failed to evaluate.
    cache: HashMap<Vec<u32>, Option<Score>>,
    evaluations: u64,
    copies: Vec<u32>,
    current: Option<Score>,
    best: Option<(Score, Vec<usize>)>,
    trajectory: Vec<TrajectoryPoint>,
}

impl Run<'_, '_> {
    fn new<'a, 'b>(ctx: &'a OptimizeContext<'b>) -> Run<'a, 'b> {
        Run {
            ctx,
            rng: ChaCha8Rng::seed_from_u64(ctx.seed),
            cache: HashMap::new(),
            evaluations: 0,
            copies: vec![0; ctx.catalog.candidates.len()],
            current: None,
            best: None,
            trajectory: Vec::new(),
        }
    }

    fn execute(mut self) -> Result<OptimizeOutcome> {
        self.greedy_start()?;
        if self.ctx.iterations > 0 {
            let mut temperature = self.initial_temperature();
            for _ in 0..self.ctx.iterations {
                let Some(proposal) = self.propose() else {
                    break;
                };
                if let Some(score) = self.scored(&proposal) {
                    self.note_best(score, &proposal);
                    let delta =
                        score.objective - self.current.expect("greedy start set").objective;
                    let accept =
                        delta > 0.0 || self.rng.random::<f64>() < (delta / temperature).exp();
                    if accept {
                        self.copies = proposal;
                        self.current = Some(score);
                    }
                }
                temperature *= COOLING_FACTOR;
            }
        }
        let (score, indices) = self.best.expect("greedy start set");
        Ok(OptimizeOutcome {
            selection: Selection {
                total_cost: self.ctx.catalog.cost(&indices)?,
                objective: score.objective,
                indices,
            },
            trajectory: self.trajectory,
            evaluations: self.evaluations,
        })
    }

    /// Scores a copies vector through the memo cache; `None` means the
    /// selection cannot be evaluated and the move should be rejected.
    fn scored(&mut self, copies: &[u32]) -> Option<Score> {
        if let Some(hit) = self.cache.get(copies) {
            return *hit;
        }
        let result = score(
            &expand(copies),
            self.ctx.catalog,
            self.ctx.base_chain,
            self.ctx.objective,
        )
        .ok();
        self.evaluations += 1;
        self.cache.insert(copies.to_vec(), result);
        result
    }

    fn note_best(&mut self, score: Score, copies: &[u32]) {
        let indices = expand(copies);
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
    }

    /// Deterministic start: repeatedly add the single best affordable copy
    /// while doing so improves the selection. The first addition is
    /// mandatory because an empty selection cannot forward.
    fn greedy_start(&mut self) -> Result<()> {
        loop {
            let mut step: Option<(Score, usize)> = None;
            for i in 0..self.copies.len() {
                if !self.can_add(i, &self.copies) {
                    continue;
                }
                let mut copies = self.copies.clone();
                copies[i] += 1;
                let Some(score) = self.scored(&copies) else {
                    continue;
                };
                let replace = match &step {
                    None => true,
                    Some((best, best_i)) => {
                        let mut best_copies = self.copies.clone();
                        best_copies[*best_i] += 1;
                        improves(&score, &expand(&copies), best, &expand(&best_copies))
                    }
                };
                if replace {
                    step = Some((score, i));
                }
            }
            let Some((score, i)) = step else {
                break;
            };
            let take = match &self.current {
                None => true,
                Some(current) => {
                    let mut copies = self.copies.clone();
                    copies[i] += 1;
                    improves(&score, &expand(&copies), current, &expand(&self.copies))
                }
            };
            if !take {
                break;
            }
            self.copies[i] += 1;
            self.current = Some(score);
        }
        match self.current {
            Some(score) => {
                let copies = self.copies.clone();
                self.note_best(score, &copies);
                Ok(())
            }
            None => Err(Error::Budget(format!(
                "no single candidate yields a feasible selection under budget {}",
                self.ctx.catalog.budget
            ))),
        }
    }

    /// Start temperature: the objective's spread over random feasible
    /// selections, so early moves accept swings of typical size.
    fn initial_temperature(&mut self) -> f64 {
        let mut samples = Vec::with_capacity(TEMPERATURE_SAMPLES);
        for _ in 0..TEMPERATURE_SAMPLES {
            let copies = self.random_feasible();
            if let Some(score) = self.scored(&copies) {
                self.note_best(score, &copies);
                if score.objective.is_finite() {
                    samples.push(score.objective);
                }
            }
        }
        if samples.len() < 2 {
            return 1.0;
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
            / (samples.len() - 1) as f64;
        let spread = var.sqrt();
        if spread.is_finite() && spread > 0.0 {
            spread
        } else {
            1.0
        }
    }

    fn random_feasible(&mut self) -> Vec<u32> {
        let n = self.copies.len();
        let mut copies = vec![0u32; n];
        loop {
            let addable: Vec<usize> = (0..n)
                .filter(|&i| self.can_add(i, &copies))
                .collect();
            if addable.is_empty() {
                break;
            }
            let i = addable[self.rng.random_range(0..addable.len())];
            copies[i] += 1;
            if self.rng.random::<f64>() >= 0.7 {
                break;
            }
        }
        copies
    }

    /// Cost of `copies` with one optional removal and one optional addition
    /// applied, summed in candidate order. Recomputing from scratch keeps
    /// feasibility a function of the selection alone; an incrementally
    /// updated cost drifts by rounding and can lose budget-exact moves.
    fn cost_with(&self, copies: &[u32], remove: Option<usize>, add: Option<usize>) -> f64 {
        let candidates = &self.ctx.catalog.candidates;
        (0..copies.len())
            .map(|k| {
                let mut count = copies[k] as i64;
                if remove == Some(k) {
                    count -= 1;
                }
                if add == Some(k) {
                    count += 1;
                }
                count as f64 * candidates[k].cost
            })
            .sum()
    }

    fn can_add(&self, i: usize, copies: &[u32]) -> bool {
        copies[i] < self.ctx.catalog.max_copies
            && self.cost_with(copies, None, Some(i)) <= self.ctx.catalog.budget
    }

    /// One neighbor of the current selection, or `None` when no move exists.
    fn propose(&mut self) -> Option<Vec<u32>> {
        let n = self.ctx.catalog.candidates.len();
        let total: u32 = self.copies.iter().sum();

        let adds: Vec<usize> = (0..n)
            .filter(|&i| self.can_add(i, &self.copies))
            .collect();
        let removes: Vec<usize> = if total > 1 {
            (0..n).filter(|&i| self.copies[i] > 0).collect()
        } else {
            Vec::new()
        };
        let mut swaps: Vec<(usize, usize)> = Vec::new();
        for i in (0..n).filter(|&i| self.copies[i] > 0) {
            for j in (0..n).filter(|&j| j != i) {
                if self.copies[j] < self.ctx.catalog.max_copies
                    && self.cost_with(&self.copies, Some(i), Some(j)) <= self.ctx.catalog.budget
                {
                    swaps.push((i, j));
                }
            }
        }

        let mut kinds = Vec::with_capacity(3);
        if !adds.is_empty() {
            kinds.push(0);
        }
        if !removes.is_empty() {
            kinds.push(1);
        }
        if !swaps.is_empty() {
            kinds.push(2);
        }
        if kinds.is_empty() {
            return None;
        }
        let kind = kinds[self.rng.random_range(0..kinds.len())];
        let mut copies = self.copies.clone();
        match kind {
            0 => copies[adds[self.rng.random_range(0..adds.len())]] += 1,
            1 => copies[removes[self.rng.random_range(0..removes.len())]] -= 1,
            _ => {
                let (i, j) = swaps[self.rng.random_range(0..swaps.len())];
                copies[i] -= 1;
                copies[j] += 1;
            }
        }
        Some(copies)
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::{catalog_of, mediator, reference_chain};
    use super::super::{strategy, Objective, OptimizeContext};
    use super::*;
    use crate::model::{InteractionKind, MacroFactor, Role, SigmaProfile};

    fn context<'a>(
        catalog: &'a Catalog,
        base: &'a ChainSpec,
        objective: Objective,
        seed: u64,
        iterations: u64,
    ) -> OptimizeContext<'a> {
        OptimizeContext {
            catalog,
            base_chain: base,
            objective,
            seed,
            iterations,
        }
    }

    fn small_catalog() -> Catalog {
        catalog_of(
            vec![
                mediator("van", 5.0, 0.9, 0.08, 1.0),
                mediator("truck", 30.0, 0.5, 0.01, 1.5),
                mediator("bike", 2.5, 1.4, 0.20, 0.5),
                mediator("boat", 12.0, 0.7, 0.03, 2.0),
                mediator("drone", 3.5, 1.1, 0.12, 0.8),
            ],
            4.0,
            2,
        )
    }

    #[test]
    fn zero_iterations_return_the_seed_independent_greedy_start() {
        let base = reference_chain();
        let catalog = small_catalog();
        let a = Anneal
            .optimize(&context(&catalog, &base, Objective::Ma, 7, 0))
            .unwrap();
        let b = Anneal
            .optimize(&context(&catalog, &base, Objective::Ma, 123456, 0))
            .unwrap();
        assert_eq!(a.selection.indices, b.selection.indices);
        assert_eq!(
            a.selection.objective.to_bits(),
            b.selection.objective.to_bits()
        );
        assert!(!a.selection.indices.is_empty());
        assert!(a.selection.total_cost <= catalog.budget);
    }

    #[test]
    fn same_seed_reproduces_the_whole_run() {
        let base = reference_chain();
        let catalog = small_catalog();
        let a = Anneal
            .optimize(&context(&catalog, &base, Objective::Ma, 42, 300))
            .unwrap();
        let b = Anneal
            .optimize(&context(&catalog, &base, Objective::Ma, 42, 300))
            .unwrap();
        assert_eq!(a.selection.indices, b.selection.indices);
        assert_eq!(
            a.selection.objective.to_bits(),
            b.selection.objective.to_bits()
        );
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.evaluations, b.evaluations);
    }

    #[test]
    fn trajectory_is_monotone_and_never_below_the_greedy_start() {
        let base = reference_chain();
        let catalog = small_catalog();
        let greedy = Anneal
            .optimize(&context(&catalog, &base, Objective::Ma, 9, 0))
            .unwrap();
        let run = Anneal
            .optimize(&context(&catalog, &base, Objective::Ma, 9, 500))
            .unwrap();
        for pair in run.trajectory.windows(2) {
            assert!(pair[1].objective >= pair[0].objective - 1e-12);
        }
        assert_eq!(run.trajectory[0].objective, greedy.selection.objective);
        assert_eq!(
            run.trajectory.last().unwrap().objective,
            run.selection.objective
        );
        assert!(run.selection.objective >= greedy.selection.objective);
        assert!(run.selection.total_cost <= catalog.budget);
    }

    #[test]
    fn attains_the_exhaustive_optimum_on_a_small_catalog() {
        let base = reference_chain();
        let catalog = small_catalog();
        let truth = strategy("exhaustive")
            .unwrap()
            .optimize(&context(&catalog, &base, Objective::Ma, 0, 0))
            .unwrap();
        for seed in [1, 2, 3, 4, 5] {
            let run = Anneal
                .optimize(&context(&catalog, &base, Objective::Ma, seed, 1500))
                .unwrap();
            assert!(
                (run.selection.objective - truth.selection.objective).abs() <= 1e-12,
                "seed {seed}: {} vs {}",
                run.selection.objective,
                truth.selection.objective
            );
        }
    }

    #[test]
    fn restarts_prefer_the_lowest_seed_on_ties() {
        let base = reference_chain();
        let catalog = catalog_of(vec![mediator("van", 5.0, 0.9, 0.05, 1.0)], 1.0, 1);
        // One candidate and one copy: every seed lands on the same selection.
        let (seed, outcome) = anneal_restarts(&catalog, &base, Objective::Ma, &[9, 3, 7], 50)
            .unwrap();
        assert_eq!(seed, 3);
        assert_eq!(outcome.selection.indices, vec![0]);
    }

    #[test]
    fn unevaluable_catalog_reports_a_budget_error() {
        let base = reference_chain();
        // Forwarding strength lives entirely below h_max, so the mixture
        // moderation is undefined at the top of the window and every
        // selection fails to evaluate.
        let mut factors = std::collections::BTreeMap::new();
        factors.insert(
            InteractionKind::Forwarding,
            MacroFactor {
                count: 1.0,
                sigma: SigmaProfile::LogBins {
                    h_lo: 1.0,
                    h_hi: 10.0,
                    values: vec![0.5],
                },
            },
        );
        let stuck = crate::model::Interactor {
            name: "stuck".into(),
            role: Role::Mediator,
            capacity: Some(5.0),
            cost: 1.0,
            factors,
        };
        let catalog = catalog_of(vec![stuck], 2.0, 1);
        let err = Anneal
            .optimize(&context(&catalog, &base, Objective::K, 1, 10))
            .unwrap_err();
        assert!(matches!(err, Error::Budget(_)));
    }
}
