//! Cache configuration search: an 11-gene integer encoding of the split cache
//! design space, optimized with NSGA-II over (execution time, energy).

use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{
    simulate, CacheConfig, CacheError, CacheModel, CacheParams, Prefetch, Replacement,
    WritePolicy,
};
use crate::evolve::{nsga2_run, EvoRng, EvolutionConfig, Genome, Problem};
use crate::traces::MemRef;

pub const NUM_GENES: usize = 11;

#[derive(Debug, Error, PartialEq)]
pub enum CacheOptError {
    #[error("invalid design space: {0}")]
    Space(String),
    #[error("genome does not fit the design space")]
    Genome,
    #[error("baseline `{0}` has a zero objective")]
    DegenerateBaseline(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("invalid evolution settings: {0}")]
    Evolution(String),
}

/// Ordered value menus, one per gene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub i_size: Vec<u64>,
    pub i_block: Vec<u64>,
    pub i_assoc: Vec<u64>,
    pub i_repl: Vec<Replacement>,
    pub i_prefetch: Vec<Prefetch>,
    pub d_size: Vec<u64>,
    pub d_block: Vec<u64>,
    pub d_assoc: Vec<u64>,
    pub d_repl: Vec<Replacement>,
    pub d_prefetch: Vec<Prefetch>,
    pub d_write_policy: Vec<WritePolicy>,
}

const KB: u64 = 1024;

impl Default for DesignSpace {
    /// 1-128 KB, 8-64 B blocks, 1-16 ways and every policy on both sides.
    fn default() -> Self {
        let sizes: Vec<u64> = (0..8).map(|i| KB << i).collect();
        let blocks = vec![8, 16, 32, 64];
        let assocs = vec![1, 2, 4, 8, 16];
        let repl = vec![Replacement::Lru, Replacement::Fifo, Replacement::Random];
        let pf = vec![Prefetch::OnDemand, Prefetch::Always];
        Self {
            i_size: sizes.clone(),
            i_block: blocks.clone(),
            i_assoc: assocs.clone(),
            i_repl: repl.clone(),
            i_prefetch: pf.clone(),
            d_size: sizes,
            d_block: blocks,
            d_assoc: assocs,
            d_repl: repl,
            d_prefetch: pf,
            d_write_policy: vec![WritePolicy::CopyBack, WritePolicy::WriteThrough],
        }
    }
}

fn ascending_pow2(name: &str, v: &[u64]) -> Result<(), CacheOptError> {
    if v.is_empty() {
        return Err(CacheOptError::Space(format!("`{name}` is empty")));
    }
    if v.iter().any(|x| !x.is_power_of_two()) || v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CacheOptError::Space(format!(
            "`{name}` must be ascending powers of two"
        )));
    }
    Ok(())
}

fn nonempty<T>(name: &str, v: &[T]) -> Result<(), CacheOptError> {
    if v.is_empty() {
        Err(CacheOptError::Space(format!("`{name}` is empty")))
    } else {
        Ok(())
    }
}

impl DesignSpace {
    /// 72 points: instruction size (1-32 KB) x instruction ways (1, 2, 4) x
    /// data size (1-8 KB); every other gene is fixed.
    pub fn toy() -> Self {
        Self {
            i_size: (0..6).map(|i| KB << i).collect(),
            i_block: vec![32],
            i_assoc: vec![1, 2, 4],
            i_repl: vec![Replacement::Lru],
            i_prefetch: vec![Prefetch::OnDemand],
            d_size: (0..4).map(|i| KB << i).collect(),
            d_block: vec![32],
            d_assoc: vec![2],
            d_repl: vec![Replacement::Lru],
            d_prefetch: vec![Prefetch::OnDemand],
            d_write_policy: vec![WritePolicy::CopyBack],
        }
    }

    pub fn validate(&self) -> Result<(), CacheOptError> {
        for (n, v) in [
            ("i_size", &self.i_size),
            ("i_block", &self.i_block),
            ("i_assoc", &self.i_assoc),
            ("d_size", &self.d_size),
            ("d_block", &self.d_block),
            ("d_assoc", &self.d_assoc),
        ] {
            ascending_pow2(n, v)?;
        }
        nonempty("i_repl", &self.i_repl)?;
        nonempty("i_prefetch", &self.i_prefetch)?;
        nonempty("d_repl", &self.d_repl)?;
        nonempty("d_prefetch", &self.d_prefetch)?;
        nonempty("d_write_policy", &self.d_write_policy)?;
        if self.i_size[0] < self.i_block[0] * self.i_assoc[0]
            || self.d_size[0] < self.d_block[0] * self.d_assoc[0]
        {
            return Err(CacheOptError::Space(
                "smallest size must hold one set of the smallest block and associativity".into(),
            ));
        }
        Ok(())
    }

    pub fn cardinalities(&self) -> [u32; NUM_GENES] {
        [
            self.i_size.len(),
            self.i_block.len(),
            self.i_assoc.len(),
            self.i_repl.len(),
            self.i_prefetch.len(),
            self.d_size.len(),
            self.d_block.len(),
            self.d_assoc.len(),
            self.d_repl.len(),
            self.d_prefetch.len(),
            self.d_write_policy.len(),
        ]
        .map(|n| n as u32)
    }

    pub fn num_points(&self) -> u128 {
        self.cardinalities().iter().map(|&c| c as u128).product()
    }

    /// Maps gene indices to values, repairing geometry that does not fit:
    /// first the associativity drops to the largest menu value that fits,
    /// then, if even the smallest does not, the block size drops.
    pub fn decode(&self, genes: &[u32]) -> Result<CacheConfig, CacheOptError> {
        let card = self.cardinalities();
        if genes.len() != NUM_GENES || genes.iter().zip(card).any(|(&g, c)| g >= c) {
            return Err(CacheOptError::Genome);
        }
        let g = |i: usize| genes[i] as usize;
        let side = |size: &[u64], block: &[u64], assoc: &[u64], i: usize| {
            repair(size[g(i)], block[g(i + 1)], assoc[g(i + 2)], block, assoc)
        };
        let (is, ib, ia) = side(&self.i_size, &self.i_block, &self.i_assoc, 0);
        let (ds, db, da) = side(&self.d_size, &self.d_block, &self.d_assoc, 5);
        Ok(CacheConfig {
            icache: CacheParams {
                size_bytes: is,
                block_bytes: ib,
                associativity: ia,
                replacement: self.i_repl[g(3)],
                prefetch: self.i_prefetch[g(4)],
            },
            dcache: CacheParams {
                size_bytes: ds,
                block_bytes: db,
                associativity: da,
                replacement: self.d_repl[g(8)],
                prefetch: self.d_prefetch[g(9)],
            },
            write_policy: self.d_write_policy[g(10)],
        })
    }

    /// Gene indices selecting exactly `config`, if every value is on a menu.
    pub fn encode(&self, config: &CacheConfig) -> Option<Vec<u32>> {
        fn pos<T: PartialEq>(v: &[T], x: &T) -> Option<u32> {
            v.iter().position(|y| y == x).map(|p| p as u32)
        }
        let (i, d) = (&config.icache, &config.dcache);
        Some(vec![
            pos(&self.i_size, &i.size_bytes)?,
            pos(&self.i_block, &i.block_bytes)?,
            pos(&self.i_assoc, &i.associativity)?,
            pos(&self.i_repl, &i.replacement)?,
            pos(&self.i_prefetch, &i.prefetch)?,
            pos(&self.d_size, &d.size_bytes)?,
            pos(&self.d_block, &d.block_bytes)?,
            pos(&self.d_assoc, &d.associativity)?,
            pos(&self.d_repl, &d.replacement)?,
            pos(&self.d_prefetch, &d.prefetch)?,
            pos(&self.d_write_policy, &config.write_policy)?,
        ])
    }

    /// Every decoded configuration, deduplicated, in genome order.
    pub fn enumerate(&self) -> Vec<CacheConfig> {
        let card = self.cardinalities();
        let mut genes = [0u32; NUM_GENES];
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        loop {
            let c = self.decode(&genes).expect("in-range genome");
            if seen.insert(c) {
                out.push(c);
            }
            let mut k = NUM_GENES;
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                genes[k] += 1;
                if genes[k] < card[k] {
                    break;
                }
                genes[k] = 0;
            }
        }
    }
}

fn repair(size: u64, block: u64, assoc: u64, blocks: &[u64], assocs: &[u64]) -> (u64, u64, u64) {
    if block * assoc <= size {
        return (size, block, assoc);
    }
    if let Some(&a) = assocs.iter().rev().find(|&&a| block * a <= size) {
        return (size, block, a);
    }
    let a = assocs[0];
    let b = *blocks
        .iter()
        .rev()
        .find(|&&b| b * a <= size)
        .unwrap_or(&blocks[0]);
    (size, b, a)
}

fn baseline_side(size_kb: u64, block: u64, assoc: u64, repl: Replacement, pf: Prefetch) -> CacheParams {
    CacheParams {
        size_bytes: size_kb * KB,
        block_bytes: block,
        associativity: assoc,
        replacement: repl,
        prefetch: pf,
    }
}

/// Reference configurations: a 16 KB 4-way handheld console L1 and the
/// 32 KB L1s of two mobile application cores.
pub fn baselines() -> Vec<(String, CacheConfig)> {
    let b = |kb, block, assoc, repl, pf| {
        let s = baseline_side(kb, block, assoc, repl, pf);
        CacheConfig {
            icache: s,
            dcache: s,
            write_policy: WritePolicy::CopyBack,
        }
    };
    vec![
        ("baseline1".into(), b(16, 32, 4, Replacement::Lru, Prefetch::OnDemand)),
        ("baseline2".into(), b(32, 64, 4, Replacement::Random, Prefetch::Always)),
        ("baseline3".into(), b(32, 64, 2, Replacement::Lru, Prefetch::Always)),
    ]
}

/// Objectives of one configuration: `(seconds, joules)`.
pub fn evaluate_config(
    config: &CacheConfig,
    trace: &[MemRef],
    model: &CacheModel,
    sim_seed: u64,
) -> Result<(f64, f64), CacheOptError> {
    let stats = simulate(trace, config, sim_seed)?;
    Ok((model.exec_time(&stats, config)?, model.energy(&stats, config)?))
}

pub fn evaluate(
    genes: &[u32],
    space: &DesignSpace,
    trace: &[MemRef],
    model: &CacheModel,
    sim_seed: u64,
) -> Result<(f64, f64), CacheOptError> {
    evaluate_config(&space.decode(genes)?, trace, model, sim_seed)
}

/// NSGA-II problem over a design space. Results are cached per decoded
/// configuration, since repair maps several genomes to one configuration.
pub struct CacheProblem<'a> {
    pub space: &'a DesignSpace,
    pub trace: &'a [MemRef],
    pub model: &'a CacheModel,
    pub sim_seed: u64,
    memo: RwLock<HashMap<CacheConfig, Option<(f64, f64)>>>,
}

impl<'a> CacheProblem<'a> {
    pub fn new(
        space: &'a DesignSpace,
        trace: &'a [MemRef],
        model: &'a CacheModel,
        sim_seed: u64,
    ) -> Self {
        Self {
            space,
            trace,
            model,
            sim_seed,
            memo: RwLock::new(HashMap::new()),
        }
    }

    pub fn objectives(&self, config: &CacheConfig) -> Option<(f64, f64)> {
        if let Some(v) = self.memo.read().expect("memo lock").get(config) {
            return *v;
        }
        let v = evaluate_config(config, self.trace, self.model, self.sim_seed).ok();
        self.memo.write().expect("memo lock").insert(*config, v);
        v
    }

    pub fn distinct_evaluations(&self) -> usize {
        self.memo.read().expect("memo lock").len()
    }
}

impl Problem for CacheProblem<'_> {
    fn num_objectives(&self) -> usize {
        2
    }

    fn random_genome(&self, rng: &mut EvoRng) -> Genome {
        Genome::random_integer(&self.space.cardinalities(), rng)
    }

    fn evaluate(&self, genome: &Genome) -> Option<Vec<f64>> {
        let config = self.space.decode(genome.as_integers()?).ok()?;
        self.objectives(&config).map(|(t, e)| vec![t, e])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontMember {
    pub config: CacheConfig,
    pub time_s: f64,
    pub energy_j: f64,
}

/// Runs NSGA-II and returns the nondominated configurations, one entry per
/// distinct configuration, sorted by time then energy.
pub fn optimize(
    trace: &[MemRef],
    space: &DesignSpace,
    model: &CacheModel,
    config: &EvolutionConfig,
    sim_seed: u64,
) -> Result<Vec<FrontMember>, CacheOptError> {
    space.validate()?;
    model.dram.validate()?;
    config.validate().map_err(CacheOptError::Evolution)?;
    for c in space.enumerate_keys() {
        model.tech.get(&c)?;
    }
    let problem = CacheProblem::new(space, trace, model, sim_seed);
    let front = nsga2_run(&problem, config);
    let mut seen = std::collections::HashSet::new();
    let mut out: Vec<FrontMember> = front
        .members
        .iter()
        .filter_map(|ind| {
            let cfg = space.decode(ind.genome.as_integers()?).ok()?;
            seen.insert(cfg).then_some(FrontMember {
                config: cfg,
                time_s: ind.objectives[0],
                energy_j: ind.objectives[1],
            })
        })
        .collect();
    sort_front(&mut out);
    Ok(out)
}

pub fn sort_front(front: &mut [FrontMember]) {
    front.sort_by(|a, b| {
        a.time_s
            .total_cmp(&b.time_s)
            .then(a.energy_j.total_cmp(&b.energy_j))
            .then(a.config.cmp(&b.config))
    });
}

impl DesignSpace {
    /// Technology keys the decoder can produce, per side.
    fn enumerate_keys(&self) -> Vec<crate::cache::TechKey> {
        let mut keys = std::collections::BTreeSet::new();
        for (sizes, blocks, assocs) in [
            (&self.i_size, &self.i_block, &self.i_assoc),
            (&self.d_size, &self.d_block, &self.d_assoc),
        ] {
            for &s in sizes {
                for &b in blocks {
                    for &a in assocs {
                        let (s, b, a) = repair(s, b, a, blocks, assocs);
                        keys.insert(crate::cache::TechKey {
                            size_bytes: s,
                            associativity: a,
                            block_bytes: b,
                        });
                    }
                }
            }
        }
        keys.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub member: usize,
    pub baseline: String,
    pub time_pct: f64,
    pub energy_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub baseline: String,
    pub time_s: f64,
    pub energy_j: f64,
    pub avg_time_pct: f64,
    pub avg_energy_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub rows: Vec<ImprovementRow>,
    pub summary: Vec<BaselineSummary>,
}

/// Percentage improvement of every front member over every baseline, with
/// per-baseline averages. Members worse than a baseline give negative values.
pub fn improvement_report(
    front: &[FrontMember],
    baselines: &[(String, CacheConfig)],
    trace: &[MemRef],
    model: &CacheModel,
    sim_seed: u64,
) -> Result<ImprovementReport, CacheOptError> {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (name, cfg) in baselines {
        let (bt, be) = evaluate_config(cfg, trace, model, sim_seed)?;
        if bt == 0.0 || be == 0.0 {
            return Err(CacheOptError::DegenerateBaseline(name.clone()));
        }
        let (mut st, mut se) = (0.0, 0.0);
        for (i, m) in front.iter().enumerate() {
            let tp = 100.0 * (bt - m.time_s) / bt;
            let ep = 100.0 * (be - m.energy_j) / be;
            st += tp;
            se += ep;
            rows.push(ImprovementRow {
                member: i,
                baseline: name.clone(),
                time_pct: tp,
                energy_pct: ep,
            });
        }
        let n = front.len().max(1) as f64;
        summary.push(BaselineSummary {
            baseline: name.clone(),
            time_s: bt,
            energy_j: be,
            avg_time_pct: st / n,
            avg_energy_pct: se / n,
        });
    }
    Ok(ImprovementReport { rows, summary })
}

pub const FRONT_CSV_HEADER: &str = "i_size,i_block,i_assoc,i_repl,i_prefetch,d_size,d_block,d_assoc,d_repl,d_prefetch,d_write_policy,time_s,energy_j";

pub fn front_to_csv(front: &[FrontMember]) -> String {
    let mut out = format!("{FRONT_CSV_HEADER}\n");
    for m in front {
        let (i, d) = (&m.config.icache, &m.config.dcache);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            i.size_bytes,
            i.block_bytes,
            i.associativity,
            i.replacement,
            i.prefetch,
            d.size_bytes,
            d.block_bytes,
            d.associativity,
            d.replacement,
            d.prefetch,
            m.config.write_policy,
            m.time_s,
            m.energy_j
        ));
    }
    out
}

pub fn report_to_csv(report: &ImprovementReport) -> String {
    let mut out = String::from("baseline,time_s,energy_j,avg_time_pct,avg_energy_pct\n");
    for s in &report.summary {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.baseline, s.time_s, s.energy_j, s.avg_time_pct, s.avg_energy_pct
        ));
    }
    out
}
