//! Allocator synthesis: profile a heap trace, build a grammar whose sentences
//! are allocator specs tailored to it, and search that grammar with GE.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmm::{build_reference, replay, DmmError, DmmMetrics, DmmSpec, Reference};
use crate::evolve::grammar::Production;
use crate::evolve::{ge_decode, ge_run, EvolutionConfig, GenerationLog, Grammar, SingleObjective, Symbol};

fn t(s: impl Into<String>) -> Symbol {
    Symbol::t(s)
}

fn n(s: impl Into<String>) -> Symbol {
    Symbol::n(s)
}
use crate::traces::{validate_alloc_trace, AllocEvent, TraceError};

#[derive(Debug, Error)]
pub enum DmmOptError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("trace has no allocations")]
    EmptyProfile,
    #[error("reference replay failed: {0}")]
    Reference(DmmError),
    #[error("reference {0} has a zero normalizer")]
    ZeroNormalizer(&'static str),
    #[error("grammar produced no feasible DMM")]
    NoFeasible,
    #[error("invalid settings: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocProfile {
    pub size_histogram: BTreeMap<u64, u64>,
    /// Distinct sizes by descending count, ties by ascending size.
    pub top_sizes: Vec<u64>,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max_live: u64,
    pub event_count: usize,
}

/// Nearest-rank quantile of a sorted, nonempty sample.
fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

pub fn profile_trace(trace: &[AllocEvent]) -> Result<AllocProfile, DmmOptError> {
    validate_alloc_trace(trace)?;
    let mut hist = BTreeMap::new();
    let mut sizes = Vec::new();
    let mut live: HashMap<u64, u64> = HashMap::new();
    let (mut cur, mut max_live) = (0u64, 0u64);
    for ev in trace {
        match *ev {
            AllocEvent::Alloc { id, size } => {
                *hist.entry(size).or_insert(0) += 1;
                sizes.push(size);
                live.insert(id, size);
                cur += size;
                max_live = max_live.max(cur);
            }
            AllocEvent::Free { id } => cur -= live.remove(&id).expect("validated trace"),
        }
    }
    if sizes.is_empty() {
        return Err(DmmOptError::EmptyProfile);
    }
    sizes.sort_unstable();
    let mut top: Vec<(u64, u64)> = hist.iter().map(|(&s, &c)| (s, c)).collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(AllocProfile {
        size_histogram: hist,
        top_sizes: top.into_iter().map(|(s, _)| s).collect(),
        p50: nearest_rank(&sizes, 0.50),
        p90: nearest_rank(&sizes, 0.90),
        p99: nearest_rank(&sizes, 0.99),
        max_live,
        event_count: trace.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarLimits {
    pub max_regions: usize,
    /// How many of the most frequent sizes become boundary candidates.
    pub top_sizes: usize,
}

impl Default for GrammarLimits {
    fn default() -> Self {
        Self {
            max_regions: 5,
            top_sizes: 8,
        }
    }
}

/// Region boundary candidates: one past each frequent size and each
/// quantile, so that size lands below the boundary.
pub fn boundary_pool(profile: &AllocProfile, limits: &GrammarLimits) -> Vec<u64> {
    let set: BTreeSet<u64> = profile
        .top_sizes
        .iter()
        .take(limits.top_sizes)
        .chain([profile.p50, profile.p90, profile.p99].iter())
        .map(|s| s + 1)
        .collect();
    set.into_iter().collect()
}

const FLAGS: [(bool, bool); 4] = [(true, true), (true, false), (false, true), (false, false)];

fn flag_text(coalesce: bool, split: bool) -> String {
    format!("\"coalesce\":{coalesce},\"split\":{split}")
}

/// BNF whose sentences are `DmmSpec` JSON documents with at most
/// `max_regions` regions cut at the profile's boundary candidates.
pub fn generate_grammar(profile: &AllocProfile, limits: &GrammarLimits) -> Result<Grammar, DmmOptError> {
    if profile.size_histogram.is_empty() {
        return Err(DmmOptError::EmptyProfile);
    }
    if limits.max_regions == 0 {
        return Err(DmmOptError::Settings("max_regions must be positive".into()));
    }
    let mut bounds = vec![1u64];
    bounds.extend(boundary_pool(profile, limits));
    let region_name = |i: usize, k: usize| format!("region_{i}_{k}");

    let mut rules = vec![Production {
        lhs: "dmm".into(),
        alternatives: vec![vec![
            t("{\"regions\":["),
            n(region_name(0, limits.max_regions)),
            t(format!(
                "],\"header_bytes\":{},\"heap_growth_quantum\":{}}}",
                crate::dmm::DEFAULT_HEADER,
                crate::dmm::DEFAULT_QUANTUM
            )),
        ]],
    }];
    // Regions reachable from (0, max_regions), breadth first.
    let mut pending = vec![(0usize, limits.max_regions)];
    let mut seen = BTreeSet::new();
    while let Some((i, k)) = pending.pop() {
        if !seen.insert((i, k)) {
            continue;
        }
        let lo = bounds[i];
        let mut alts = vec![vec![
            t(format!("{{\"lo\":{lo},\"hi\":null,\"policy\":")),
            n("policy"),
            t("}"),
        ]];
        if k > 1 {
            for (j, &hi) in bounds.iter().enumerate().skip(i + 1) {
                alts.push(vec![
                    t(format!("{{\"lo\":{lo},\"hi\":{hi},\"policy\":")),
                    n("policy"),
                    t("},"),
                    n(region_name(j, k - 1)),
                ]);
                pending.push((j, k - 1));
            }
        }
        rules.push(Production {
            lhs: region_name(i, k),
            alternatives: alts,
        });
    }
    rules[1..].sort_by(|a, b| a.lhs.cmp(&b.lhs));

    let kind = |k: &str| format!("{{\"kind\":\"{k}\"");
    rules.push(Production {
        lhs: "policy".into(),
        alternatives: vec![
            vec![n("exact")],
            vec![t(format!("{}}}", kind("SEGREGATED_POW2")))],
            vec![t(format!("{},", kind("BUDDY_BINARY"))), n("flags"), t("}")],
            vec![t(format!("{},", kind("BUDDY_FIB"))), n("flags"), t("}")],
            vec![
                t(format!("{},\"fit\":", kind("FREE_LIST"))),
                n("fit"),
                t(",\"order\":"),
                n("order"),
                t(","),
                n("flags"),
                t("}"),
            ],
        ],
    });
    rules.push(Production {
        lhs: "exact".into(),
        alternatives: [1, 8]
            .iter()
            .map(|g| vec![t(format!("{},\"granularity\":{g}}}", kind("SEGREGATED_EXACT")))])
            .collect(),
    });
    rules.push(Production {
        lhs: "flags".into(),
        alternatives: FLAGS.iter().map(|&(c, s)| vec![t(flag_text(c, s))]).collect(),
    });
    rules.push(Production {
        lhs: "fit".into(),
        alternatives: ["FIRST", "BEST"].iter().map(|f| vec![t(format!("\"{f}\""))]).collect(),
    });
    rules.push(Production {
        lhs: "order".into(),
        alternatives: ["FIFO", "LIFO", "ADDR"]
            .iter()
            .map(|o| vec![t(format!("\"{o}\""))])
            .collect(),
    });
    Ok(Grammar::new(rules).expect("generated grammar is well formed"))
}

/// Parses and validates a phenotype.
pub fn spec_from_phenotype(text: &str) -> Result<DmmSpec, String> {
    let spec: DmmSpec = serde_json::from_str(text).map_err(|e| e.to_string())?;
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

/// Reference metrics that normalize the fitness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub kng: DmmMetrics,
    pub lea: DmmMetrics,
}

impl Normalizers {
    pub fn compute(trace: &[AllocEvent]) -> Result<Self, DmmOptError> {
        let run = |r| replay(&build_reference(r), trace).map_err(DmmOptError::Reference);
        let n = Self {
            kng: run(Reference::Kng)?,
            lea: run(Reference::Lea)?,
        };
        if n.kng.sim_time == 0 {
            return Err(DmmOptError::ZeroNormalizer("KNG"));
        }
        if n.lea.peak_memory == 0 {
            return Err(DmmOptError::ZeroNormalizer("LEA"));
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmmFitness {
    #[serde(with = "crate::evolve::serde_floats::scalar")]
    pub f: f64,
    pub t: u64,
    pub m: u64,
    pub t_kng: u64,
    pub m_lea: u64,
    pub valid: bool,
}

/// `F = 0.5 * T / T_kng + 0.5 * M / M_lea`.
pub fn fitness_value(t: u64, m: u64, norm: &Normalizers) -> f64 {
    0.5 * t as f64 / norm.kng.sim_time as f64 + 0.5 * m as f64 / norm.lea.peak_memory as f64
}

pub fn dmm_fitness(spec: &DmmSpec, trace: &[AllocEvent], norm: &Normalizers) -> DmmFitness {
    let (t_kng, m_lea) = (norm.kng.sim_time, norm.lea.peak_memory);
    match replay(spec, trace) {
        Ok(m) => DmmFitness {
            f: fitness_value(m.sim_time, m.peak_memory, norm),
            t: m.sim_time,
            m: m.peak_memory,
            t_kng,
            m_lea,
            valid: true,
        },
        Err(_) => DmmFitness {
            f: f64::INFINITY,
            t: 0,
            m: 0,
            t_kng,
            m_lea,
            valid: false,
        },
    }
}

/// GE objective: decode, parse, replay. Fitness is cached per phenotype.
pub struct DmmProblem<'a> {
    pub grammar: &'a Grammar,
    pub trace: &'a [AllocEvent],
    pub normalizers: Normalizers,
    pub max_wraps: usize,
    memo: RwLock<HashMap<String, Option<f64>>>,
}

impl<'a> DmmProblem<'a> {
    pub fn new(grammar: &'a Grammar, trace: &'a [AllocEvent], normalizers: Normalizers, max_wraps: usize) -> Self {
        Self {
            grammar,
            trace,
            normalizers,
            max_wraps,
            memo: RwLock::new(HashMap::new()),
        }
    }

    pub fn phenotype_fitness(&self, phenotype: &str) -> Option<f64> {
        if let Some(v) = self.memo.read().expect("memo lock").get(phenotype) {
            return *v;
        }
        let v = spec_from_phenotype(phenotype).ok().and_then(|spec| {
            let fit = dmm_fitness(&spec, self.trace, &self.normalizers);
            fit.valid.then_some(fit.f)
        });
        self.memo
            .write()
            .expect("memo lock")
            .insert(phenotype.to_string(), v);
        v
    }

    pub fn distinct_phenotypes(&self) -> usize {
        self.memo.read().expect("memo lock").len()
    }
}

impl SingleObjective for DmmProblem<'_> {
    fn evaluate(&self, codons: &[u32]) -> Option<f64> {
        let decoded = ge_decode(codons, self.grammar, self.max_wraps);
        self.phenotype_fitness(decoded.phenotype()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmmOptSettings {
    pub limits: GrammarLimits,
    pub chromosome_length: usize,
    pub codon_max: u32,
}

impl Default for DmmOptSettings {
    fn default() -> Self {
        Self {
            limits: GrammarLimits::default(),
            chromosome_length: 200,
            codon_max: crate::evolve::CODON_MAX,
        }
    }
}

/// Improvement of the synthesized allocator over one reference, percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub reference: String,
    pub f_ref: f64,
    pub t_ref: u64,
    pub m_ref: u64,
    pub objective_pct: f64,
    pub performance_pct: f64,
    pub memory_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmmOptOutcome {
    pub best_spec: DmmSpec,
    pub phenotype: String,
    pub fitness: DmmFitness,
    pub metrics: DmmMetrics,
    pub comparison: Vec<ComparisonRow>,
    pub history: Vec<GenerationLog>,
    pub evaluations: usize,
}

fn pct(reference: f64, value: f64) -> f64 {
    if reference == 0.0 {
        0.0
    } else {
        100.0 * (reference - value) / reference
    }
}

/// Rows comparing `fitness` against each of the five references.
pub fn compare_with_references(
    fitness: &DmmFitness,
    trace: &[AllocEvent],
    norm: &Normalizers,
) -> Result<Vec<ComparisonRow>, DmmOptError> {
    Reference::ALL
        .iter()
        .map(|&r| {
            let m = replay(&build_reference(r), trace).map_err(DmmOptError::Reference)?;
            let f_ref = fitness_value(m.sim_time, m.peak_memory, norm);
            Ok(ComparisonRow {
                reference: r.name().to_string(),
                f_ref,
                t_ref: m.sim_time,
                m_ref: m.peak_memory,
                objective_pct: pct(f_ref, fitness.f),
                performance_pct: pct(m.sim_time as f64, fitness.t as f64),
                memory_pct: pct(m.peak_memory as f64, fitness.m as f64),
            })
        })
        .collect()
}

/// Profile, build the grammar, normalize against KNG and LEA, run GE and
/// report the best allocator found.
pub fn optimize_dmm(
    trace: &[AllocEvent],
    config: &EvolutionConfig,
    settings: &DmmOptSettings,
) -> Result<DmmOptOutcome, DmmOptError> {
    config.validate().map_err(DmmOptError::Settings)?;
    if settings.chromosome_length == 0 || settings.codon_max == 0 {
        return Err(DmmOptError::Settings(
            "chromosome length and codon range must be positive".into(),
        ));
    }
    let profile = profile_trace(trace)?;
    let grammar = generate_grammar(&profile, &settings.limits)?;
    let norm = Normalizers::compute(trace)?;
    let problem = DmmProblem::new(&grammar, trace, norm, config.max_wraps);
    let out = ge_run(&problem, config, settings.chromosome_length, settings.codon_max);
    let best = out.best.ok_or(DmmOptError::NoFeasible)?;
    let codons = best.genome.as_codons().ok_or(DmmOptError::NoFeasible)?;
    let phenotype = ge_decode(codons, &grammar, config.max_wraps)
        .phenotype()
        .ok_or(DmmOptError::NoFeasible)?
        .to_string();
    let spec = spec_from_phenotype(&phenotype).map_err(|_| DmmOptError::NoFeasible)?;
    let fitness = dmm_fitness(&spec, trace, &norm);
    let metrics = replay(&spec, trace).map_err(|_| DmmOptError::NoFeasible)?;
    let comparison = compare_with_references(&fitness, trace, &norm)?;
    Ok(DmmOptOutcome {
        best_spec: spec,
        phenotype,
        fitness,
        metrics,
        comparison,
        history: out.history,
        evaluations: out.evaluations,
    })
}

pub fn comparison_to_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("reference,f_ref,t_ref,m_ref,objective_pct,performance_pct,memory_pct\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.reference, r.f_ref, r.t_ref, r.m_ref, r.objective_pct, r.performance_pct, r.memory_pct
        );
    }
    out
}

pub fn history_to_csv(history: &[GenerationLog]) -> String {
    let mut out = String::from("generation,best,mean_valid,valid,packing,judgment_day\n");
    for h in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            h.generation, h.best, h.mean_valid, h.valid, h.packing, h.judgment_day
        );
    }
    out
}
