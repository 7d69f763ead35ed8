//! The (μ,λ) evolutionary loop, the similarity-deduplicated archive and the random baseline.
//!
//! ```text
//! pop      <- μ random programs; assess; archive.update(pop)
//! repeat generations times:
//!     offspring <- λ children of pop (crossover | mutation | reproduction)
//!     assess(new children); archive.update(offspring)
//!     pop <- survival(offspring)   // tournaments, near-duplicates swapped for archive members
//! return archive
//! ```
//!
//! Reproduced children are clones of a tournament winner and keep its assessment, so only
//! crossover and mutation offspring cost SUT executions.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitness::{assess, AssessError, EvalResult, FitnessConfig};
use crate::mrprog::{crossover, mutate, Program, TraceGrid, TreeLimits};
use crate::sut::{ExecutionCache, SutModel};
use crate::trace::distance;
use crate::SeededRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchConfigError {
    #[error("search.{0} must be at least 1")]
    Zero(&'static str),
    #[error(
        "search.crossover_rate and search.mutation_rate must be non-negative and sum to at most 1"
    )]
    Rates,
    #[error("search.population ({population}) must not exceed search.offspring ({offspring})")]
    PopulationAboveOffspring { population: usize, offspring: usize },
    #[error("search.similarity_threshold must be finite and non-negative")]
    Threshold,
    #[error("search depth bounds {0:?} are inverted")]
    Depth((usize, usize)),
}

/// Parameters of the evolutionary search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// μ: individuals per generation (also the initial population size).
    pub population: usize,
    /// λ: offspring bred per generation.
    pub offspring: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub init_depth: (usize, usize),
    pub mutation_depth: (usize, usize),
    pub max_nodes: usize,
    /// Minimum input-trace distance between two individuals considered different.
    pub similarity_threshold: f64,
    /// Archive capacity; when full a newcomer must beat the weakest member to enter.
    pub archive_size: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            population: 50,
            offspring: 80,
            generations: 40,
            crossover_rate: 0.35,
            mutation_rate: 0.35,
            tournament_size: 2,
            init_depth: (4, 8),
            mutation_depth: (2, 4),
            max_nodes: 300,
            similarity_threshold: 0.2,
            archive_size: 50,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn limits(&self) -> TreeLimits {
        TreeLimits {
            init_depth: self.init_depth,
            mutation_depth: self.mutation_depth,
            max_nodes: self.max_nodes,
        }
    }

    pub fn validate(&self) -> Result<(), SearchConfigError> {
        for (name, v) in [
            ("population", self.population),
            ("offspring", self.offspring),
            ("tournament_size", self.tournament_size),
            ("max_nodes", self.max_nodes),
            ("archive_size", self.archive_size),
        ] {
            if v == 0 {
                return Err(SearchConfigError::Zero(name));
            }
        }
        let (cx, mt) = (self.crossover_rate, self.mutation_rate);
        if !(cx >= 0.0 && mt >= 0.0 && cx + mt <= 1.0) {
            return Err(SearchConfigError::Rates);
        }
        if self.population > self.offspring {
            return Err(SearchConfigError::PopulationAboveOffspring {
                population: self.population,
                offspring: self.offspring,
            });
        }
        if !(self.similarity_threshold.is_finite() && self.similarity_threshold >= 0.0) {
            return Err(SearchConfigError::Threshold);
        }
        for bounds in [self.init_depth, self.mutation_depth] {
            if bounds.0 > bounds.1 {
                return Err(SearchConfigError::Depth(bounds));
            }
        }
        Ok(())
    }

    /// Scales μ, λ and the generation count by `factor` (at least one each, μ ≤ λ kept).
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |v: usize| (libm::round(v as f64 * factor) as usize).max(1);
        let offspring = scale(self.offspring);
        Self {
            population: scale(self.population).min(offspring),
            offspring,
            generations: if self.generations == 0 { 0 } else { scale(self.generations) },
            archive_size: self.archive_size,
            ..self.clone()
        }
    }
}

/// How an individual came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Random,
    Crossover,
    Mutation,
    Reproduction,
    Archive,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Random => "random",
            Origin::Crossover => "crossover",
            Origin::Mutation => "mutation",
            Origin::Reproduction => "reproduction",
            Origin::Archive => "archive",
        }
    }
}

/// An assessed program.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    /// Sequential assessment id within the run.
    pub id: usize,
    pub program: Program,
    pub eval: EvalResult,
}

/// One row of the evaluation log: every assessment made during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: usize,
    pub generation: usize,
    pub origin: Origin,
    pub program: Program,
    pub fitness: f64,
    pub mr_falsification: f64,
    pub control_error: f64,
    pub executions: usize,
    pub terminals: usize,
    pub diverged: bool,
}

/// Similarity-deduplicated collection of high-fitness individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    members: Vec<Individual>,
    threshold: f64,
    capacity: usize,
}

impl Archive {
    pub fn new(threshold: f64, capacity: usize) -> Self {
        Self { members: Vec::new(), threshold, capacity: capacity.max(1) }
    }

    pub fn members(&self) -> &[Individual] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn best_fitness(&self) -> Option<f64> {
        self.members.iter().map(|m| m.eval.fitness).reduce(f64::max)
    }

    /// Tries to add `individual`; returns whether it entered.
    ///
    /// Diverged individuals never enter. A newcomer closer than the threshold to any member
    /// is rejected even if it is fitter: the incumbent stays. When the archive is full the
    /// newcomer replaces the weakest member only if it is strictly fitter.
    pub fn update(&mut self, individual: &Individual) -> bool {
        if individual.eval.diverged {
            return false;
        }
        let input = &individual.eval.input;
        let similar = self
            .members
            .iter()
            .any(|m| distance(&m.eval.input, input).map_or(true, |d| d < self.threshold));
        if similar {
            return false;
        }
        if self.members.len() >= self.capacity {
            let (weakest, fit) = self
                .members
                .iter()
                .enumerate()
                .map(|(i, m)| (i, m.eval.fitness))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            if individual.eval.fitness <= fit {
                return false;
            }
            self.members.remove(weakest);
        }
        self.members.push(individual.clone());
        true
    }

    /// Pairs of members closer than the threshold; empty whenever the invariant holds.
    pub fn violations(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.members.len() {
            for j in i + 1..self.members.len() {
                let d = distance(&self.members[i].eval.input, &self.members[j].eval.input)
                    .unwrap_or(f64::NAN);
                if d.is_nan() || d < self.threshold {
                    out.push((i, j, d));
                }
            }
        }
        out
    }

    /// All pairwise input distances between members.
    pub fn pairwise_distances(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.members.len() {
            for j in i + 1..self.members.len() {
                if let Ok(d) = distance(&self.members[i].eval.input, &self.members[j].eval.input) {
                    out.push(d);
                }
            }
        }
        out
    }
}

/// Aggregates logged once per generation (generation 0 is the initial population).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Individuals assessed in this generation.
    pub assessed: usize,
    pub diverged: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub mean_control_error: f64,
    pub mean_mr_falsification: f64,
    pub archive_size: usize,
    pub archive_best_fitness: f64,
    pub archive_mean_control_error: f64,
    pub archive_mean_mr_falsification: f64,
    /// Cumulative SUT executions.
    pub executions: usize,
}

/// Result of a search or baseline run.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub archive: Archive,
    pub generations: Vec<GenerationStats>,
    pub evaluations: Vec<EvalRecord>,
    pub executions: usize,
}

/// The pieces every assessment needs.
pub struct Problem<'a> {
    pub grid: &'a TraceGrid,
    pub sut: &'a SutModel,
    pub fitness: &'a FitnessConfig,
}

struct Run<'a> {
    problem: &'a Problem<'a>,
    cache: ExecutionCache,
    evaluations: Vec<EvalRecord>,
    executions: usize,
}

impl Run<'_> {
    fn assess(
        &mut self,
        program: Program,
        generation: usize,
        origin: Origin,
    ) -> Result<Individual, AssessError> {
        let p = self.problem;
        let eval = assess(&program, p.grid, p.sut, &mut self.cache, p.fitness)?;
        let id = self.evaluations.len();
        self.executions += eval.executions;
        self.evaluations.push(EvalRecord {
            id,
            generation,
            origin,
            program: program.clone(),
            fitness: eval.fitness,
            mr_falsification: eval.mr_falsification,
            control_error: eval.control_error,
            executions: eval.executions,
            terminals: eval.terminals,
            diverged: eval.diverged,
        });
        Ok(Individual { id, program, eval })
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn generation_stats(
    generation: usize,
    assessed: usize,
    pool: &[Individual],
    archive: &Archive,
    executions: usize,
) -> GenerationStats {
    let finite = || pool.iter().filter(|i| !i.eval.diverged);
    let members = archive.members();
    GenerationStats {
        generation,
        assessed,
        diverged: pool.iter().filter(|i| i.eval.diverged).count(),
        best_fitness: pool.iter().map(|i| i.eval.fitness).fold(0.0, f64::max),
        mean_fitness: mean(pool.iter().map(|i| i.eval.fitness)),
        mean_control_error: mean(finite().map(|i| i.eval.control_error)),
        mean_mr_falsification: mean(finite().map(|i| i.eval.mr_falsification)),
        archive_size: members.len(),
        archive_best_fitness: archive.best_fitness().unwrap_or(0.0),
        archive_mean_control_error: mean(members.iter().map(|m| m.eval.control_error)),
        archive_mean_mr_falsification: mean(members.iter().map(|m| m.eval.mr_falsification)),
        executions,
    }
}

/// Index of the fittest of `size` uniformly drawn contestants (first drawn wins ties).
pub fn tournament<R: Rng + ?Sized>(pool: &[Individual], size: usize, rng: &mut R) -> usize {
    let mut best = rng.gen_range(0..pool.len());
    for _ in 1..size {
        let c = rng.gen_range(0..pool.len());
        if pool[c].eval.fitness > pool[best].eval.fitness {
            best = c;
        }
    }
    best
}

/// Picks `count` survivors from `candidates` by tournament. A winner whose input lies closer
/// than `threshold` to an already selected survivor is swapped for a random archive member;
/// with an empty archive the duplicate is kept.
pub fn survival_with_diversity<R: Rng + ?Sized>(
    candidates: &[Individual],
    count: usize,
    tournament_size: usize,
    archive: &Archive,
    threshold: f64,
    rng: &mut R,
) -> Vec<Individual> {
    let mut next: Vec<Individual> = Vec::with_capacity(count);
    for _ in 0..count {
        let winner = &candidates[tournament(candidates, tournament_size, rng)];
        let duplicate = next
            .iter()
            .any(|s| distance(&s.eval.input, &winner.eval.input).is_ok_and(|d| d < threshold));
        if duplicate && !archive.is_empty() {
            let pick = rng.gen_range(0..archive.len());
            next.push(archive.members()[pick].clone());
        } else {
            next.push(winner.clone());
        }
    }
    next
}

fn breed(
    run: &mut Run<'_>,
    pop: &[Individual],
    cfg: &SearchConfig,
    generation: usize,
    rng: &mut SeededRng,
) -> Result<(Vec<Individual>, usize), AssessError> {
    let limits = cfg.limits();
    let grid = run.problem.grid;
    let mut children: Vec<(Program, Origin)> = Vec::with_capacity(cfg.offspring + 1);
    let mut offspring: Vec<Option<Individual>> = Vec::with_capacity(cfg.offspring + 1);
    while offspring.len() < cfg.offspring {
        let roll: f64 = rng.gen();
        if roll < cfg.crossover_rate {
            let a = &pop[tournament(pop, cfg.tournament_size, rng)].program;
            let b = &pop[tournament(pop, cfg.tournament_size, rng)].program;
            let (x, y) = crossover(a, b, rng, &limits);
            children.push((x, Origin::Crossover));
            offspring.push(None);
            if offspring.len() < cfg.offspring {
                children.push((y, Origin::Crossover));
                offspring.push(None);
            }
        } else if roll < cfg.crossover_rate + cfg.mutation_rate {
            let parent = &pop[tournament(pop, cfg.tournament_size, rng)].program;
            children.push((mutate(parent, rng, grid, &limits), Origin::Mutation));
            offspring.push(None);
        } else {
            let parent = pop[tournament(pop, cfg.tournament_size, rng)].clone();
            offspring.push(Some(parent));
        }
    }
    // Assess in offspring order so ids are independent of how breeding interleaves.
    let mut fresh = children.into_iter();
    let mut assessed = 0;
    let mut out = Vec::with_capacity(offspring.len());
    for slot in offspring {
        match slot {
            Some(clone) => out.push(clone),
            None => {
                let (program, origin) = fresh.next().expect("one child per empty slot");
                out.push(run.assess(program, generation, origin)?);
                assessed += 1;
            }
        }
    }
    Ok((out, assessed))
}

/// Runs the evolutionary search.
pub fn run_search(cfg: &SearchConfig, problem: &Problem<'_>) -> Result<SearchOutcome, AssessError> {
    let mut rng = crate::rng_from_seed(cfg.seed);
    let limits = cfg.limits();
    let mut run =
        Run { problem, cache: ExecutionCache::new(), evaluations: Vec::new(), executions: 0 };
    let mut archive = Archive::new(cfg.similarity_threshold, cfg.archive_size);

    let mut pop = Vec::with_capacity(cfg.population);
    for _ in 0..cfg.population {
        let program = Program::random(&mut rng, problem.grid, &limits);
        pop.push(run.assess(program, 0, Origin::Random)?);
    }
    for ind in &pop {
        archive.update(ind);
    }
    let mut generations =
        alloc::vec![generation_stats(0, pop.len(), &pop, &archive, run.executions)];

    for generation in 1..=cfg.generations {
        let best_before = archive.best_fitness();
        let (offspring, assessed) = breed(&mut run, &pop, cfg, generation, &mut rng)?;
        for ind in &offspring {
            archive.update(ind);
        }
        debug_assert!(archive.best_fitness() >= best_before);
        generations.push(generation_stats(
            generation,
            assessed,
            &offspring,
            &archive,
            run.executions,
        ));
        pop = survival_with_diversity(
            &offspring,
            cfg.population,
            cfg.tournament_size,
            &archive,
            cfg.similarity_threshold,
            &mut rng,
        );
    }
    Ok(SearchOutcome {
        archive,
        generations,
        evaluations: run.evaluations,
        executions: run.executions,
    })
}

/// Assesses `n` independent random programs drawn like the initial population.
pub fn run_baseline(
    n: usize,
    cfg: &SearchConfig,
    problem: &Problem<'_>,
) -> Result<SearchOutcome, AssessError> {
    let mut rng = crate::rng_from_seed(cfg.seed);
    let limits = cfg.limits();
    let mut run =
        Run { problem, cache: ExecutionCache::new(), evaluations: Vec::new(), executions: 0 };
    let mut archive = Archive::new(cfg.similarity_threshold, cfg.archive_size);
    for _ in 0..n {
        let program = Program::random(&mut rng, problem.grid, &limits);
        let ind = run.assess(program, 0, Origin::Random)?;
        archive.update(&ind);
    }
    Ok(SearchOutcome {
        archive,
        generations: Vec::new(),
        evaluations: run.evaluations,
        executions: run.executions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrprog::TraceGrid;
    use crate::sut::PlantConfig;
    use crate::trace::{AmplitudeRange, Trace};
    use alloc::vec;

    fn fake(id: usize, level: f64, fitness: f64) -> Individual {
        let input = Trace::new(1, 0.1, vec![level; 4]).unwrap();
        let program: Program = "(TS 0 (TRC step 0 1 2 3))".parse().unwrap();
        Individual {
            id,
            program,
            eval: EvalResult {
                input,
                expected: None,
                actual: None,
                control_error: 0.0,
                mr_falsification: fitness,
                fitness,
                executions: 2,
                terminals: 1,
                diverged: false,
            },
        }
    }

    #[test]
    fn archive_keeps_incumbent() {
        let mut a = Archive::new(0.5, 10);
        assert!(a.update(&fake(0, 0.0, 1.0)));
        assert!(!a.update(&fake(1, 0.0, 5.0)), "identical newcomer is rejected even if fitter");
        assert!(!a.update(&fake(2, 0.3, 5.0)));
        assert!(a.update(&fake(3, 0.6, 0.1)));
        assert_eq!(a.len(), 2);
        assert!(a.violations().is_empty());
    }

    #[test]
    fn archive_rejects_diverged() {
        let mut a = Archive::new(0.5, 10);
        let mut d = fake(0, 0.0, 0.0);
        d.eval.diverged = true;
        assert!(!a.update(&d));
        assert!(a.is_empty());
    }

    #[test]
    fn full_archive_replaces_weakest() {
        let mut a = Archive::new(0.5, 2);
        assert!(a.update(&fake(0, 0.0, 1.0)));
        assert!(a.update(&fake(1, 1.0, 2.0)));
        assert!(!a.update(&fake(2, 2.0, 0.5)), "weaker than everyone");
        assert!(a.update(&fake(3, 3.0, 3.0)));
        let ids: Vec<_> = a.members().iter().map(|m| m.id).collect();
        assert_eq!(ids, vec![1, 3]);
    }

    #[test]
    fn survival_thresholds() {
        let mut rng = crate::rng_from_seed(1);
        let twins = vec![fake(0, 0.0, 1.0), fake(1, 0.0, 1.0)];
        let empty = Archive::new(0.5, 10);
        // Empty archive: duplicates are kept.
        let next = survival_with_diversity(&twins, 2, 2, &empty, 0.5, &mut rng);
        assert_eq!(next.len(), 2);

        let mut archive = Archive::new(0.5, 10);
        archive.update(&fake(7, 5.0, 0.1));
        let next = survival_with_diversity(&twins, 2, 2, &archive, 0.5, &mut rng);
        assert_eq!(next.iter().filter(|i| i.id == 7).count(), 1, "second twin swapped for archive");

        // Threshold zero never swaps.
        let next = survival_with_diversity(&twins, 5, 2, &archive, 0.0, &mut rng);
        assert!(next.iter().all(|i| i.id != 7));

        // Huge threshold swaps every pick after the first.
        let spread: Vec<_> = (0..6).map(|i| fake(i, i as f64, 1.0)).collect();
        let next = survival_with_diversity(&spread, 4, 2, &archive, 1e9, &mut rng);
        assert!(next[1..].iter().all(|i| i.id == 7));
        assert_ne!(next[0].id, 7);
    }

    #[test]
    fn tournament_prefers_fitter() {
        let pool = vec![fake(0, 0.0, 0.0), fake(1, 1.0, 10.0)];
        let mut rng = crate::rng_from_seed(2);
        let wins = (0..400).filter(|_| tournament(&pool, 2, &mut rng) == 1).count();
        // P(fitter wins) = 1 - 1/4.
        assert!((250..350).contains(&wins), "{wins}");
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = SearchConfig::default();
        assert_eq!((c.population, c.offspring, c.generations), (50, 80, 40));
        assert_eq!(c.limits(), TreeLimits::default());
        assert!(c.validate().is_ok());
        assert!(SearchConfig { crossover_rate: 0.7, mutation_rate: 0.4, ..c.clone() }
            .validate()
            .is_err());
        assert!(SearchConfig { population: 100, ..c.clone() }.validate().is_err());
        let s = c.scaled(0.25);
        assert_eq!((s.population, s.offspring, s.generations), (13, 20, 10));
    }

    fn small_problem_parts() -> (TraceGrid, SutModel, FitnessConfig) {
        let range = AmplitudeRange::uniform(1, -2.0, 2.0).unwrap();
        let grid = TraceGrid::new(4.0, 1.0, 0.04, vec![0.2], range.clone()).unwrap();
        let sut =
            SutModel::from_plant(&PlantConfig::by_name("sat2").unwrap(), range, 1.0, 0.04).unwrap();
        let fit = FitnessConfig {
            base: core::f64::consts::E,
            exponent_scale: 6.66,
            control_error_threshold: 0.15,
        };
        (grid, sut, fit)
    }

    #[test]
    fn search_is_deterministic_and_keeps_invariants() {
        let (grid, sut, fit) = small_problem_parts();
        let problem = Problem { grid: &grid, sut: &sut, fitness: &fit };
        let cfg = SearchConfig {
            population: 6,
            offspring: 10,
            generations: 3,
            seed: 4,
            ..Default::default()
        };
        let a = run_search(&cfg, &problem).unwrap();
        let b = run_search(&cfg, &problem).unwrap();
        assert_eq!(a.archive, b.archive);
        assert_eq!(a.evaluations, b.evaluations);
        assert_eq!(a.generations.len(), 4);
        assert!(a.archive.violations().is_empty());
        let bests: Vec<f64> = a.generations.iter().map(|g| g.archive_best_fitness).collect();
        assert!(bests.windows(2).all(|w| w[1] >= w[0]));
        let total: usize = a.evaluations.iter().map(|e| e.executions).sum();
        assert_eq!(total, a.executions);
        for e in &a.evaluations {
            assert!(e.diverged || e.executions == e.terminals + 1);
        }
    }

    #[test]
    fn zero_generations_archives_initial_population() {
        let (grid, sut, fit) = small_problem_parts();
        let problem = Problem { grid: &grid, sut: &sut, fitness: &fit };
        let cfg = SearchConfig {
            population: 5,
            offspring: 5,
            generations: 0,
            seed: 8,
            ..Default::default()
        };
        let out = run_search(&cfg, &problem).unwrap();
        assert_eq!(out.evaluations.len(), 5);
        let ids: Vec<usize> = out.archive.members().iter().map(|m| m.id).collect();
        let mut manual = Archive::new(cfg.similarity_threshold, cfg.archive_size);
        let baseline = run_baseline(5, &cfg, &problem).unwrap();
        for e in baseline.archive.members() {
            manual.update(e);
        }
        assert_eq!(ids, manual.members().iter().map(|m| m.id).collect::<Vec<_>>());
    }
}
