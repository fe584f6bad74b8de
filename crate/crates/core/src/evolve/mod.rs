//! Evolutionary engines shared by the three optimization layers.
//!
//! [`nsga2`] holds the multi-objective search used for register placement and
//! cache configuration; [`ge`] holds grammatical evolution together with the
//! social-disaster and random-offspring countermeasures used for allocator
//! synthesis. Both engines draw every random decision from one seeded
//! [`EvoRng`] on the calling thread; objective evaluation is pure and may run
//! on the rayon pool without affecting results.

pub mod ge;
pub mod grammar;
pub mod nsga2;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ge::{
    apply_judgment_day, apply_packing, apply_rog, ge_run, GeOutcome, GenerationLog, SingleObjective,
};
pub use grammar::{ge_decode, Decoded, Grammar, GrammarError, Symbol};
pub use nsga2::{
    crowding_distance, dominates, fast_non_dominated_sort, nsga2_run, Nsga2, ParetoFront, Problem,
    Snapshot,
};

/// The random stream used by every stochastic operator.
pub type EvoRng = ChaCha8Rng;

/// Codon upper bound (exclusive) used for GE chromosomes.
pub const CODON_MAX: u32 = 256;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Genome {
    IntegerVector { values: Vec<u32>, cardinality: Vec<u32> },
    Permutation { order: Vec<usize> },
    Codons { codons: Vec<u32>, codon_max: u32 },
}

impl Genome {
    pub fn random_integer<R: Rng + ?Sized>(cardinality: &[u32], rng: &mut R) -> Self {
        let values = cardinality.iter().map(|&c| rng.random_range(0..c)).collect();
        Genome::IntegerVector {
            values,
            cardinality: cardinality.to_vec(),
        }
    }

    pub fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Genome::Permutation { order }
    }

    pub fn random_codons<R: Rng + ?Sized>(len: usize, codon_max: u32, rng: &mut R) -> Self {
        Genome::Codons {
            codons: (0..len).map(|_| rng.random_range(0..codon_max)).collect(),
            codon_max,
        }
    }

    /// A fresh random genome of the same variant and shape.
    pub fn randomize_like<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        match self {
            Genome::IntegerVector { cardinality, .. } => Genome::random_integer(cardinality, rng),
            Genome::Permutation { order } => Genome::random_permutation(order.len(), rng),
            Genome::Codons { codons, codon_max } => {
                Genome::random_codons(codons.len(), *codon_max, rng)
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Genome::IntegerVector { values, .. } => values.len(),
            Genome::Permutation { order } => order.len(),
            Genome::Codons { codons, .. } => codons.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_well_formed(&self) -> bool {
        match self {
            Genome::IntegerVector { values, cardinality } => {
                values.len() == cardinality.len()
                    && values.iter().zip(cardinality).all(|(v, c)| v < c)
            }
            Genome::Permutation { order } => {
                let mut seen = vec![false; order.len()];
                order
                    .iter()
                    .all(|&g| g < seen.len() && !std::mem::replace(&mut seen[g], true))
            }
            Genome::Codons { codons, codon_max } => codons.iter().all(|c| c < codon_max),
        }
    }

    pub fn as_integers(&self) -> Option<&[u32]> {
        match self {
            Genome::IntegerVector { values, .. } => Some(values),
            _ => None,
        }
    }

    pub fn as_permutation(&self) -> Option<&[usize]> {
        match self {
            Genome::Permutation { order } => Some(order),
            _ => None,
        }
    }

    pub fn as_codons(&self) -> Option<&[u32]> {
        match self {
            Genome::Codons { codons, .. } => Some(codons),
            _ => None,
        }
    }
}

/// A genome together with its evaluation and NSGA-II bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    #[serde(with = "serde_floats::vec")]
    pub objectives: Vec<f64>,
    pub rank: usize,
    #[serde(with = "serde_floats::scalar")]
    pub crowding: f64,
    pub valid: bool,
}

impl Individual {
    pub fn new(genome: Genome, evaluation: Option<Vec<f64>>, num_objectives: usize) -> Self {
        let (objectives, valid) = match evaluation {
            Some(o) => (o, true),
            None => (vec![f64::INFINITY; num_objectives], false),
        };
        Self {
            genome,
            objectives,
            rank: 0,
            crowding: 0.0,
            valid,
        }
    }

    /// Single-objective fitness (first objective).
    pub fn fitness(&self) -> f64 {
        self.objectives[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RogMode {
    Off,
    /// One offspring random, the other a parent copy.
    OneRandom,
    /// Both offspring random.
    TwoRandom,
}

/// Trigger thresholds for the social-disaster operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdtPolicy {
    pub enabled: bool,
    /// Packing fires when more than this share of the population has one fitness value.
    pub packing_share: f64,
    /// Judgment day fires after this many generations without improvement.
    pub judgment_day_stall: usize,
}

impl Default for SdtPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            packing_share: 0.5,
            judgment_day_stall: 25,
        }
    }
}

impl SdtPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub generations: usize,
    pub population_size: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub max_wraps: usize,
    pub seed: u64,
    pub sdt: SdtPolicy,
    pub rog: RogMode,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self::nsga2(0.1)
    }
}

impl EvolutionConfig {
    /// NSGA-II settings used for register and cache search: 250 generations,
    /// 100 individuals, crossover 0.9, the given per-gene mutation rate.
    pub fn nsga2(mutation_rate: f64) -> Self {
        Self {
            generations: 250,
            population_size: 100,
            crossover_rate: 0.9,
            mutation_rate,
            tournament_size: 2,
            max_wraps: 0,
            seed: 1,
            sdt: SdtPolicy::disabled(),
            rog: RogMode::Off,
        }
    }

    /// GE settings used for allocator synthesis: 250 generations, 100
    /// individuals, binary tournament, crossover 0.8, mutation 0.02, 3 wraps,
    /// SDT and 1-RO enabled.
    pub fn ge() -> Self {
        Self {
            generations: 250,
            population_size: 100,
            crossover_rate: 0.8,
            mutation_rate: 0.02,
            tournament_size: 2,
            max_wraps: 3,
            seed: 1,
            sdt: SdtPolicy::default(),
            rog: RogMode::OneRandom,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.generations == 0 || self.population_size == 0 {
            return Err("generations and population size must be positive".into());
        }
        if self.tournament_size == 0 {
            return Err("tournament size must be positive".into());
        }
        for (name, r) in [
            ("crossover rate", self.crossover_rate),
            ("mutation rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Classical single-point crossover with a cut drawn uniformly from `[1, len-1]`.
///
/// Genomes shorter than two genes, or of mismatched shape, are copied.
pub fn single_point_crossover<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    rng: &mut R,
) -> (Genome, Genome) {
    let len = a.len().min(b.len());
    if len < 2 || std::mem::discriminant(a) != std::mem::discriminant(b) {
        return (a.clone(), b.clone());
    }
    let cut = rng.random_range(1..len);
    crossover_at(a, b, cut)
}

/// Suffix swap at a fixed cut. Permutation children are repaired so they stay
/// bijections: genes in the swapped suffix that duplicate the kept prefix are
/// replaced, left to right, by the missing genes in their order of appearance
/// in the other parent.
pub fn crossover_at(a: &Genome, b: &Genome, cut: usize) -> (Genome, Genome) {
    match (a, b) {
        (
            Genome::IntegerVector { values: va, cardinality },
            Genome::IntegerVector { values: vb, .. },
        ) => {
            let (ca, cb) = swap_suffix(va, vb, cut);
            (
                Genome::IntegerVector {
                    values: ca,
                    cardinality: cardinality.clone(),
                },
                Genome::IntegerVector {
                    values: cb,
                    cardinality: cardinality.clone(),
                },
            )
        }
        (Genome::Codons { codons: va, codon_max }, Genome::Codons { codons: vb, .. }) => {
            let (ca, cb) = swap_suffix(va, vb, cut);
            (
                Genome::Codons {
                    codons: ca,
                    codon_max: *codon_max,
                },
                Genome::Codons {
                    codons: cb,
                    codon_max: *codon_max,
                },
            )
        }
        (Genome::Permutation { order: pa }, Genome::Permutation { order: pb }) => {
            let (mut ca, mut cb) = swap_suffix(pa, pb, cut);
            repair_permutation(&mut ca, cut, pb);
            repair_permutation(&mut cb, cut, pa);
            (Genome::Permutation { order: ca }, Genome::Permutation { order: cb })
        }
        _ => (a.clone(), b.clone()),
    }
}

fn swap_suffix<T: Clone>(a: &[T], b: &[T], cut: usize) -> (Vec<T>, Vec<T>) {
    let cut = cut.min(a.len()).min(b.len());
    let mut ca = a[..cut].to_vec();
    ca.extend_from_slice(&b[cut..]);
    let mut cb = b[..cut].to_vec();
    cb.extend_from_slice(&a[cut..]);
    (ca, cb)
}

fn repair_permutation(child: &mut [usize], cut: usize, other: &[usize]) {
    let mut present: HashSet<usize> = child[..cut].iter().copied().collect();
    let mut dup_positions = Vec::new();
    for (i, g) in child.iter().enumerate().skip(cut) {
        if !present.insert(*g) {
            dup_positions.push(i);
        }
    }
    if dup_positions.is_empty() {
        return;
    }
    let missing: Vec<usize> = other.iter().copied().filter(|g| !present.contains(g)).collect();
    for (pos, gene) in dup_positions.into_iter().zip(missing) {
        child[pos] = gene;
    }
}

/// Per-gene mutation: integer genes and codons are resampled, permutation
/// positions are swapped with a uniformly chosen position.
pub fn mutate<R: Rng + ?Sized>(genome: &mut Genome, rate: f64, rng: &mut R) {
    match genome {
        Genome::IntegerVector { values, cardinality } => {
            for (v, &c) in values.iter_mut().zip(cardinality.iter()) {
                if rng.random_bool(rate) {
                    *v = rng.random_range(0..c);
                }
            }
        }
        Genome::Permutation { order } => {
            let n = order.len();
            for i in 0..n {
                if rng.random_bool(rate) {
                    let j = rng.random_range(0..n);
                    order.swap(i, j);
                }
            }
        }
        Genome::Codons { codons, codon_max } => {
            for c in codons.iter_mut() {
                if rng.random_bool(rate) {
                    *c = rng.random_range(0..*codon_max);
                }
            }
        }
    }
}

/// Serde helpers that keep infinities and NaN representable in JSON.
pub(crate) mod serde_floats {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(serde::Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("bad float `{other}`"))),
            },
        }
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            serde::Serialize::serialize(&to_repr(*v), s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            from_repr(Repr::deserialize(d)?)
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let reprs: Vec<Repr> = v.iter().map(|x| to_repr(*x)).collect();
            serde::Serialize::serialize(&reprs, s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(from_repr)
                .collect()
        }
    }
}
