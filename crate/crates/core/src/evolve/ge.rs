//! Grammatical evolution over codon strings, with Social Disaster Techniques
//! (Packing, Judgment day) and Random Offspring Generation.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    mutate, single_point_crossover, EvoRng, EvolutionConfig, Genome, Individual, RogMode,
};

/// A minimized scalar fitness over codon genomes; `None` marks an invalid
/// individual (for example a decode that ran out of wraps).
pub trait SingleObjective: Sync {
    fn evaluate(&self, codons: &[u32]) -> Option<f64>;
}

impl<F> SingleObjective for F
where
    F: Fn(&[u32]) -> Option<f64> + Sync,
{
    fn evaluate(&self, codons: &[u32]) -> Option<f64> {
        self(codons)
    }
}

fn make_individual(genome: Genome, fitness: Option<f64>) -> Individual {
    Individual::new(genome, fitness.map(|f| vec![f]), 1)
}

fn evaluate_genomes<P: SingleObjective>(problem: &P, genomes: Vec<Genome>) -> Vec<Individual> {
    let fits: Vec<Option<f64>> = genomes
        .par_iter()
        .map(|g| problem.evaluate(g.as_codons().expect("GE works on codon genomes")))
        .collect();
    genomes
        .into_iter()
        .zip(fits)
        .map(|(g, f)| make_individual(g, f.filter(|v| !v.is_nan())))
        .collect()
}

/// Index of the fittest valid individual (first on ties).
fn best_index(pop: &[Individual]) -> Option<usize> {
    pop.iter()
        .enumerate()
        .filter(|(_, i)| i.valid)
        .min_by(|a, b| a.1.fitness().total_cmp(&b.1.fitness()).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

/// Packing: within every group of individuals sharing one fitness value,
/// keep the first and randomize the rest. Invalid individuals are never kept.
/// Returns the randomized indices; their evaluations are stale afterwards.
pub fn apply_packing(pop: &mut [Individual], rng: &mut EvoRng) -> Vec<usize> {
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut randomized = Vec::new();
    for i in 0..pop.len() {
        let keep = pop[i].valid && !seen.contains_key(&pop[i].fitness().to_bits());
        if keep {
            seen.insert(pop[i].fitness().to_bits(), i);
        } else {
            randomized.push(i);
        }
    }
    for &i in &randomized {
        pop[i].genome = pop[i].genome.randomize_like(rng);
    }
    randomized
}

/// Judgment day: only the fittest individual survives; every other genome is
/// randomized. Returns the randomized indices.
pub fn apply_judgment_day(pop: &mut [Individual], rng: &mut EvoRng) -> Vec<usize> {
    let keep = best_index(pop);
    let randomized: Vec<usize> = (0..pop.len()).filter(|&i| Some(i) != keep).collect();
    for &i in &randomized {
        pop[i].genome = pop[i].genome.randomize_like(rng);
    }
    randomized
}

/// Crossover guarded by Random Offspring Generation: parents with different
/// genotypes cross normally; equal parents yield one random child and one
/// parent copy (1-RO) or two random children (2-RO).
pub fn apply_rog(a: &Genome, b: &Genome, rng: &mut EvoRng, mode: RogMode) -> (Genome, Genome) {
    if a != b || mode == RogMode::Off {
        return single_point_crossover(a, b, rng);
    }
    match mode {
        RogMode::OneRandom => (a.randomize_like(rng), b.clone()),
        RogMode::TwoRandom => (a.randomize_like(rng), b.randomize_like(rng)),
        RogMode::Off => unreachable!(),
    }
}

fn tournament(pop: &[Individual], size: usize, rng: &mut EvoRng) -> usize {
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..size {
        let c = rng.random_range(0..pop.len());
        if pop[c].fitness() < pop[best].fitness() {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    #[serde(with = "super::serde_floats::scalar")]
    pub best: f64,
    #[serde(with = "super::serde_floats::scalar")]
    pub mean_valid: f64,
    pub valid: usize,
    pub packing: bool,
    pub judgment_day: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeOutcome {
    /// Fittest valid individual ever seen, if any.
    pub best: Option<Individual>,
    pub history: Vec<GenerationLog>,
    pub evaluations: usize,
}

fn log_generation(generation: usize, pop: &[Individual], best: f64, packing: bool, jd: bool) -> GenerationLog {
    let valid: Vec<f64> = pop.iter().filter(|i| i.valid).map(|i| i.fitness()).collect();
    let mean_valid = if valid.is_empty() {
        f64::INFINITY
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    GenerationLog {
        generation,
        best,
        mean_valid,
        valid: valid.len(),
        packing,
        judgment_day: jd,
    }
}

/// Generational GE with one elite.
///
/// Each generation keeps the incumbent, fills the rest by binary tournament,
/// single-point crossover (guarded by ROG) and per-codon mutation. When SDT is
/// enabled, Judgment day fires after `judgment_day_stall` generations without
/// improvement, otherwise Packing fires whenever more than `packing_share` of
/// the population shares one fitness value. Neither operator can remove the
/// incumbent, so the best fitness never increases.
pub fn ge_run<P: SingleObjective>(
    problem: &P,
    config: &EvolutionConfig,
    chromosome_length: usize,
    codon_max: u32,
) -> GeOutcome {
    let n = config.population_size;
    let mut rng = EvoRng::seed_from_u64(config.seed);
    let genomes: Vec<Genome> = (0..n)
        .map(|_| Genome::random_codons(chromosome_length, codon_max, &mut rng))
        .collect();
    let mut pop = evaluate_genomes(problem, genomes);
    let mut evaluations = n;

    let mut best: Option<Individual> = best_index(&pop).map(|i| pop[i].clone());
    let best_fit = |b: &Option<Individual>| b.as_ref().map_or(f64::INFINITY, |i| i.fitness());
    let mut history = vec![log_generation(0, &pop, best_fit(&best), false, false)];
    let mut stall = 0usize;

    for generation in 1..=config.generations {
        let elite_idx = best_index(&pop);
        let mut children = Vec::with_capacity(n);
        while children.len() + usize::from(elite_idx.is_some()) < n {
            let a = tournament(&pop, config.tournament_size, &mut rng);
            let b = tournament(&pop, config.tournament_size, &mut rng);
            let (pa, pb) = (&pop[a].genome, &pop[b].genome);
            let (mut ca, mut cb) = if rng.random_bool(config.crossover_rate) {
                apply_rog(pa, pb, &mut rng, config.rog)
            } else {
                (pa.clone(), pb.clone())
            };
            mutate(&mut ca, config.mutation_rate, &mut rng);
            mutate(&mut cb, config.mutation_rate, &mut rng);
            children.push(ca);
            children.push(cb);
        }
        children.truncate(n - usize::from(elite_idx.is_some()));
        let children = evaluate_genomes(problem, children);
        evaluations += children.len();
        let mut next = Vec::with_capacity(n);
        if let Some(e) = elite_idx {
            next.push(pop[e].clone());
        }
        next.extend(children);
        pop = next;

        let before = best_fit(&best);
        if let Some(i) = best_index(&pop) {
            if pop[i].fitness() < before {
                best = Some(pop[i].clone());
            }
        }
        if best_fit(&best) < before {
            stall = 0;
        } else {
            stall += 1;
        }

        let (mut packing, mut jd) = (false, false);
        if config.sdt.enabled {
            let randomized = if stall >= config.sdt.judgment_day_stall {
                jd = true;
                stall = 0;
                apply_judgment_day(&mut pop, &mut rng)
            } else if largest_fitness_group(&pop) as f64 > config.sdt.packing_share * n as f64 {
                packing = true;
                apply_packing(&mut pop, &mut rng)
            } else {
                Vec::new()
            };
            if !randomized.is_empty() {
                let genomes: Vec<Genome> = randomized.iter().map(|&i| pop[i].genome.clone()).collect();
                let fresh = evaluate_genomes(problem, genomes);
                evaluations += fresh.len();
                for (i, ind) in randomized.into_iter().zip(fresh) {
                    pop[i] = ind;
                }
                if let Some(i) = best_index(&pop) {
                    if pop[i].fitness() < best_fit(&best) {
                        best = Some(pop[i].clone());
                        stall = 0;
                    }
                }
            }
        }
        history.push(log_generation(generation, &pop, best_fit(&best), packing, jd));
    }
    GeOutcome {
        best,
        history,
        evaluations,
    }
}

fn largest_fitness_group(pop: &[Individual]) -> usize {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for i in pop {
        *counts.entry(i.fitness().to_bits()).or_default() += 1;
    }
    counts.values().copied().max().unwrap_or(0)
}
