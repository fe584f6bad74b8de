//! NSGA-II: fast nondominated sorting, crowding distance, crowded binary
//! tournament and elitist (mu + lambda) survival.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mutate, single_point_crossover, EvoRng, EvolutionConfig, Genome, Individual};

/// An optimization problem over genomes with minimized objectives.
pub trait Problem: Sync {
    fn num_objectives(&self) -> usize;

    fn random_genome(&self, rng: &mut EvoRng) -> Genome;

    /// Objective vector, or `None` when the genome cannot be evaluated. Must be
    /// pure: it may run concurrently and must not depend on evaluation order.
    fn evaluate(&self, genome: &Genome) -> Option<Vec<f64>>;

    fn crossover(&self, a: &Genome, b: &Genome, rng: &mut EvoRng) -> (Genome, Genome) {
        single_point_crossover(a, b, rng)
    }

    fn mutate(&self, genome: &mut Genome, rate: f64, rng: &mut EvoRng) {
        mutate(genome, rate, rng)
    }
}

/// Strict Pareto dominance for minimization.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Partitions the points into nondominated fronts, best first.
pub fn fast_non_dominated_sort<T: AsRef<[f64]>>(points: &[T]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by_me: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for p in 0..n {
        for q in (p + 1)..n {
            let (a, b) = (points[p].as_ref(), points[q].as_ref());
            if dominates(a, b) {
                dominated_by_me[p].push(q);
                domination_count[q] += 1;
            } else if dominates(b, a) {
                dominated_by_me[q].push(p);
                domination_count[p] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by_me[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of a front.
///
/// Per objective with a nonzero range, members holding the minimum or maximum
/// value are boundaries (infinite distance); every other member adds the gap
/// between the next strictly larger and next strictly smaller values,
/// normalized by the range. Objectives with zero range contribute nothing.
/// The result does not depend on the order of the input.
pub fn crowding_distance<T: AsRef<[f64]>>(front: &[T]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = front[0].as_ref().len();
    let mut dist = vec![0.0; n];
    for k in 0..m {
        let mut values: Vec<f64> = front.iter().map(|p| p.as_ref()[k]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let (lo, hi) = (values[0], values[values.len() - 1]);
        let range = hi - lo;
        if !(range > 0.0) || !range.is_finite() {
            continue;
        }
        for (i, p) in front.iter().enumerate() {
            let v = p.as_ref()[k];
            if v == lo || v == hi {
                dist[i] = f64::INFINITY;
                continue;
            }
            let pos = values.partition_point(|x| *x < v);
            dist[i] += (values[pos + 1] - values[pos - 1]) / range;
        }
    }
    dist
}

/// Mutually nondominated solutions returned by a multi-objective run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub members: Vec<Individual>,
}

impl ParetoFront {
    pub fn is_mutually_nondominated(&self) -> bool {
        self.members.iter().all(|a| {
            self.members
                .iter()
                .all(|b| !dominates(&b.objectives, &a.objectives))
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Resumable state of an NSGA-II run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub generation: usize,
    pub seed: u64,
    pub evaluations: usize,
    pub rng: EvoRng,
    pub population: Vec<Individual>,
}

fn bits_key(objectives: &[f64]) -> Vec<u64> {
    objectives.iter().map(|v| v.to_bits()).collect()
}

/// Elitist survival from the merged parent/offspring pool.
///
/// Individuals whose objective vector repeats an earlier one are held back and
/// only used to fill slots the distinct individuals cannot; this keeps copies
/// of one point from crowding out the rest of the front.
fn survive(pool: Vec<Individual>, n: usize) -> Vec<Individual> {
    let mut seen = HashSet::new();
    let (mut unique, mut repeats) = (Vec::new(), Vec::new());
    for ind in pool {
        if seen.insert(bits_key(&ind.objectives)) {
            unique.push(ind);
        } else {
            repeats.push(ind);
        }
    }
    let objs: Vec<Vec<f64>> = unique.iter().map(|i| i.objectives.clone()).collect();
    let fronts = fast_non_dominated_sort(&objs);
    let worst_rank = fronts.len();
    let mut slots: Vec<Option<Individual>> = unique.into_iter().map(Some).collect();
    let mut next = Vec::with_capacity(n);
    for (rank, front) in fronts.iter().enumerate() {
        if next.len() >= n {
            break;
        }
        let members: Vec<&[f64]> = front.iter().map(|&i| objs[i].as_slice()).collect();
        let dist = crowding_distance(&members);
        let mut order: Vec<usize> = (0..front.len()).collect();
        if next.len() + front.len() > n {
            order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            order.truncate(n - next.len());
        }
        for k in order {
            let mut ind = slots[front[k]].take().expect("each index used once");
            ind.rank = rank;
            ind.crowding = dist[k];
            next.push(ind);
        }
    }
    for mut ind in repeats {
        if next.len() >= n {
            break;
        }
        ind.rank = worst_rank;
        ind.crowding = 0.0;
        next.push(ind);
    }
    next
}

fn evaluate_all<P: Problem>(problem: &P, genomes: Vec<Genome>) -> Vec<Individual> {
    let m = problem.num_objectives();
    let evals: Vec<Option<Vec<f64>>> = genomes.par_iter().map(|g| problem.evaluate(g)).collect();
    genomes
        .into_iter()
        .zip(evals)
        .map(|(g, e)| Individual::new(g, e.filter(|o| o.len() == m), m))
        .collect()
}

/// Crowded-comparison tournament: lower rank wins, then larger crowding.
fn tournament(pop: &[Individual], size: usize, rng: &mut EvoRng) -> usize {
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..size {
        let c = rng.random_range(0..pop.len());
        let (a, b) = (&pop[c], &pop[best]);
        if a.rank < b.rank || (a.rank == b.rank && a.crowding > b.crowding) {
            best = c;
        }
    }
    best
}

/// Stepwise NSGA-II driver.
pub struct Nsga2<'p, P: Problem> {
    problem: &'p P,
    config: EvolutionConfig,
    rng: EvoRng,
    population: Vec<Individual>,
    generation: usize,
    evaluations: usize,
}

impl<'p, P: Problem> Nsga2<'p, P> {
    /// Creates and evaluates the initial population.
    pub fn new(problem: &'p P, config: EvolutionConfig) -> Self {
        let mut rng = EvoRng::seed_from_u64(config.seed);
        let n = config.population_size;
        let genomes: Vec<Genome> = (0..n).map(|_| problem.random_genome(&mut rng)).collect();
        let population = survive(evaluate_all(problem, genomes), n);
        Self {
            problem,
            config,
            rng,
            population,
            generation: 0,
            evaluations: n,
        }
    }

    pub fn resume(problem: &'p P, config: EvolutionConfig, snapshot: Snapshot) -> Self {
        Self {
            problem,
            config,
            rng: snapshot.rng,
            population: snapshot.population,
            generation: snapshot.generation,
            evaluations: snapshot.evaluations,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            generation: self.generation,
            seed: self.config.seed,
            evaluations: self.evaluations,
            rng: self.rng.clone(),
            population: self.population.clone(),
        }
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn population(&self) -> &[Individual] {
        &self.population
    }

    pub fn is_done(&self) -> bool {
        self.generation >= self.config.generations
    }

    /// Breeds one offspring generation and applies elitist survival.
    pub fn step(&mut self) {
        let n = self.config.population_size;
        let mut offspring = Vec::with_capacity(n + 1);
        while offspring.len() < n {
            let a = tournament(&self.population, self.config.tournament_size, &mut self.rng);
            let b = tournament(&self.population, self.config.tournament_size, &mut self.rng);
            let (pa, pb) = (&self.population[a].genome, &self.population[b].genome);
            let (mut ca, mut cb) = if self.rng.random_bool(self.config.crossover_rate) {
                self.problem.crossover(pa, pb, &mut self.rng)
            } else {
                (pa.clone(), pb.clone())
            };
            self.problem
                .mutate(&mut ca, self.config.mutation_rate, &mut self.rng);
            self.problem
                .mutate(&mut cb, self.config.mutation_rate, &mut self.rng);
            offspring.push(ca);
            offspring.push(cb);
        }
        offspring.truncate(n);
        let offspring = evaluate_all(self.problem, offspring);
        self.evaluations += offspring.len();
        let mut pool = std::mem::take(&mut self.population);
        pool.extend(offspring);
        self.population = survive(pool, n);
        self.generation += 1;
    }

    /// Rank-0 members of the current population with duplicate genomes removed.
    pub fn front(&self) -> ParetoFront {
        let mut seen = HashSet::new();
        let members = self
            .population
            .iter()
            .filter(|i| i.rank == 0 && i.valid)
            .filter(|i| seen.insert(i.genome.clone()))
            .cloned()
            .collect();
        ParetoFront { members }
    }

    pub fn run(mut self) -> ParetoFront {
        while !self.is_done() {
            self.step();
        }
        self.front()
    }

    /// Runs to completion, calling `observe` after initialization and after
    /// every generation.
    pub fn run_observed(mut self, mut observe: impl FnMut(usize, &[Individual])) -> ParetoFront {
        observe(self.generation, &self.population);
        while !self.is_done() {
            self.step();
            observe(self.generation, &self.population);
        }
        self.front()
    }
}

pub fn nsga2_run<P: Problem>(problem: &P, config: &EvolutionConfig) -> ParetoFront {
    Nsga2::new(problem, config.clone()).run()
}
